#include "drfuser/gradsuite.hpp"

#include <algorithm>

#include "drfuser/attention.hpp"
#include "drfuser/gradcheck.hpp"
#include "drfuser/model.hpp"
#include "drfuser/ops.hpp"
#include "drfuser/rng.hpp"
#include "drfuser/train.hpp"

namespace drfuser {

namespace {

TensorD rand_t(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return TensorD::from_data(shape, std::move(v), grad);
}

struct Case {
    std::string name;
    // Builds operands from rng and returns (loss thunk, params).
    std::function<std::pair<std::function<TensorD()>, std::vector<TensorD>>(Rng&)> build;
    std::size_t sample = 0;  // 0: all coordinates
};

std::vector<Case> cases() {
    using Built = std::pair<std::function<TensorD()>, std::vector<TensorD>>;
    std::vector<Case> c;
    auto unary = [](const char* name, std::function<TensorD(const TensorD&)> op, Shape shape) {
        return Case{name, [op, shape](Rng& rng) -> Built {
                        auto x = rand_t(shape, rng);
                        const auto w = rand_t(op(x.clone()).shape(), rng, -1, 1, false);
                        return {[=] { return sum(mul(op(x), w)); }, {x}};
                    }};
    };
    auto binary = [](const char* name, std::function<TensorD(const TensorD&, const TensorD&)> op, Shape a,
                     Shape b) {
        return Case{name, [op, a, b](Rng& rng) -> Built {
                        auto x = rand_t(a, rng), y = rand_t(b, rng);
                        const auto w = rand_t(op(x.clone(), y.clone()).shape(), rng, -1, 1, false);
                        return {[=] { return sum(mul(op(x, y), w)); }, {x, y}};
                    }};
    };
    c.push_back(binary("add", [](auto& a, auto& b) { return add(a, b); }, {2, 3, 4}, {2, 3, 4}));
    c.push_back(binary("sub", [](auto& a, auto& b) { return sub(a, b); }, {2, 3, 4}, {2, 3, 4}));
    c.push_back(binary("mul", [](auto& a, auto& b) { return mul(a, b); }, {2, 3, 4}, {2, 3, 4}));
    c.push_back(unary("scale", [](auto& a) { return scale(a, 1.7); }, {2, 5}));
    c.push_back(unary("relu", [](auto& a) { return relu(a); }, {3, 7}));
    c.push_back(unary("sigmoid", [](auto& a) { return sigmoid(a); }, {3, 7}));
    c.push_back(unary("sum", [](auto& a) { return sum(a); }, {3, 4}));
    c.push_back(unary("mean", [](auto& a) { return mean(a); }, {3, 4}));
    c.push_back(binary("matmul", [](auto& a, auto& b) { return matmul(a, b); }, {3, 4}, {4, 5}));
    c.push_back(Case{"linear", [](Rng& rng) -> Built {
                         auto x = rand_t({3, 6}, rng), w = rand_t({4, 6}, rng), b = rand_t({4}, rng);
                         const auto p = rand_t({3, 4}, rng, -1, 1, false);
                         return {[=] { return sum(mul(linear(x, w, b), p)); }, {x, w, b}};
                     }});
    c.push_back(Case{"conv2d", [](Rng& rng) -> Built {
                         auto x = rand_t({2, 3, 6, 5}, rng), w = rand_t({4, 3, 3, 3}, rng), b = rand_t({4}, rng);
                         const auto p = rand_t({2, 4, 3, 3}, rng, -1, 1, false);
                         return {[=] { return sum(mul(conv2d(x, w, b, {2, 1}), p)); }, {x, w, b}};
                     }});
    c.push_back(unary("max_pool2d", [](auto& a) { return max_pool2d(a, {3, 2, 1}); }, {2, 2, 6, 6}));
    c.push_back(Case{"batch_norm2d(train)", [](Rng& rng) -> Built {
                         auto x = rand_t({3, 2, 4, 4}, rng), g = rand_t({2}, rng, 0.5, 1.5), b = rand_t({2}, rng);
                         const auto p = rand_t({3, 2, 4, 4}, rng, -1, 1, false);
                         return {[=] {
                                     auto rm = TensorD::zeros({2}), rv = TensorD::full({2}, 1.0);
                                     return sum(mul(batch_norm2d(x, g, b, rm, rv, {Mode::train}), p));
                                 },
                                 {x, g, b}};
                     }});
    c.push_back(Case{"batch_norm2d(eval)", [](Rng& rng) -> Built {
                         auto x = rand_t({2, 2, 3, 3}, rng), g = rand_t({2}, rng, 0.5, 1.5), b = rand_t({2}, rng);
                         auto rm = rand_t({2}, rng, -0.5, 0.5, false), rv = rand_t({2}, rng, 0.5, 2.0, false);
                         const auto p = rand_t({2, 2, 3, 3}, rng, -1, 1, false);
                         return {[=]() mutable { return sum(mul(batch_norm2d(x, g, b, rm, rv, {Mode::eval}), p)); },
                                 {x, g, b}};
                     }});
    c.push_back(unary("softmax", [](auto& a) { return softmax(a); }, {3, 5}));
    c.push_back(unary("dropout", [](auto& a) { return dropout(a, 0.75, 99, Mode::train); }, {4, 6}));
    c.push_back(unary("reshape", [](auto& a) { return reshape(a, {6, 4}); }, {2, 3, 4}));
    c.push_back(binary("concat_channels", [](auto& a, auto& b) { return concat_channels<double>({a, b}); },
                       {2, 2, 3, 3}, {2, 3, 3, 3}));
    c.push_back(binary("gate_sites", [](auto& a, auto& b) { return gate_sites(a, b); }, {2, 3, 4, 4},
                       {2, 1, 4, 4}));
    c.push_back(Case{"local_self_attention", [](Rng& rng) -> Built {
                         auto x = rand_t({2, 4, 5, 5}, rng);
                         auto p = SelfAttentionParams<double>::init(4, 8, 2, 3, rng);
                         const auto w = rand_t({2, 8, 5, 5}, rng, -1, 1, false);
                         return {[=] { return sum(mul(local_self_attention(x, p), w)); },
                                 {x, p.wq, p.wk, p.wv, p.row_embed, p.col_embed}};
                     }});
    c.push_back(Case{"additive_attention_fuse", [](Rng& rng) -> Built {
                         auto r = rand_t({2, 4, 3, 3}, rng), e = rand_t({2, 4, 3, 3}, rng);
                         auto p = AdditiveAttentionParams<double>::init(4, rng);
                         const auto w = rand_t({2, 4, 3, 3}, rng, -1, 1, false);
                         return {[=] { return sum(mul(additive_attention_fuse(r, e, p), w)); },
                                 {r, e, p.w_rgb, p.w_evt, p.psi, p.b_psi}};
                     }});
    c.push_back(Case{"huber_loss", [](Rng& rng) -> Built {
                         // residuals spread across both branches of the loss
                         auto pred = rand_t({6, 1}, rng, -3, 3), target = rand_t({6, 1}, rng, -1, 1);
                         return {[=] { return huber_loss(pred, target, 1.0); }, {pred, target}};
                     }});
    c.push_back(Case{"drfuser_forward", [](Rng& rng) -> Built {
                         auto rgb = rand_t({2, 3, 64, 64}, rng, 0, 1, false);
                         auto evt = rand_t({2, 2, 64, 64}, rng, 0, 1, false);
                         auto model = std::make_shared<ModelD>(ModelConfig::desk(), rng.next_u64());
                         std::vector<TensorD> params;
                         for (const auto& p : model->parameters()) params.push_back(p.tensor);
                         return {[=] {
                                     ForwardOptions o;
                                     o.mode = Mode::train;
                                     o.dropout_seed = 5;
                                     const auto y = model->forward(rgb, evt, o);
                                     return sum(mul(y, y));
                                 },
                                 params};
                     },
                     10});
    return c;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::size_t seeds,
                                               const std::function<void(const GradSuiteEntry&)>& on_entry) {
    std::vector<GradSuiteEntry> out;
    for (const auto& cs : cases()) {
        GradSuiteEntry e{cs.name, 0.0, 0, seeds};
        for (std::size_t seed = 0; seed < seeds; ++seed) {
            Rng rng(mix_seed(0x6a7d, seed * 131 + out.size()));
            auto [f, params] = cs.build(rng);
            for (auto& p : params) p.zero_grad();
            f().backward();
            std::vector<Coordinate> coords;
            if (cs.sample == 0) {
                for (std::size_t t = 0; t < params.size(); ++t)
                    for (std::size_t i = 0; i < params[t].numel(); ++i) coords.push_back({t, i});
            } else {
                for (std::size_t k = 0; k < cs.sample; ++k) {
                    const auto t = static_cast<std::size_t>(rng.below(params.size()));
                    coords.push_back({t, static_cast<std::size_t>(rng.below(params[t].numel()))});
                }
            }
            NoGradGuard no_grad;
            const auto scalar = [&f] { return f().item(); };
            for (const auto& c : coords) {
                const double analytic = params[c.tensor].has_grad() ? params[c.tensor].grad()[c.index] : 0.0;
                const double numeric = kink_aware_difference(scalar, params[c.tensor], c.index);
                e.max_relative_error = std::max(e.max_relative_error, relative_error(analytic, numeric));
                ++e.coordinates;
            }
        }
        if (on_entry) on_entry(e);
        out.push_back(e);
    }
    return out;
}

}  // namespace drfuser
