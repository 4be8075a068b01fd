#include "drfuser/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "drfuser/errors.hpp"
#include "drfuser/init.hpp"

namespace drfuser {

using detail::make_result;
using detail::Node;

namespace {

struct Geom {
    std::size_t n, c, h, w, hw, heads, d, half, window, radius, kk;
};

template <typename Real>
Geom check_attention_inputs(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>* v,
                            const Tensor<Real>& row_embed, const Tensor<Real>& col_embed,
                            std::size_t heads, std::size_t window) {
    if (!q.defined() || q.rank() != 4)
        throw DimensionError("windowed_attention: query must be [N,C,H,W]");
    if (k.shape() != q.shape() || (v && v->shape() != q.shape()))
        throw DimensionError("windowed_attention: query/key/value shapes differ: " +
                             shape_str(q.shape()) + " vs " + shape_str(k.shape()));
    if (heads == 0 || q.dim(1) % heads != 0)
        throw ConfigError("windowed_attention: " + std::to_string(q.dim(1)) +
                          " channels not divisible by " + std::to_string(heads) + " heads");
    if (window % 2 == 0) throw ConfigError("windowed_attention: window extent must be odd");
    Geom g{};
    g.n = q.dim(0);
    g.c = q.dim(1);
    g.h = q.dim(2);
    g.w = q.dim(3);
    g.hw = g.h * g.w;
    g.heads = heads;
    g.d = g.c / heads;
    if (g.d % 2 != 0) throw ConfigError("windowed_attention: per-head width must be even");
    g.half = g.d / 2;
    g.window = window;
    g.radius = window / 2;
    g.kk = window * window;
    const Shape table{window, g.half};
    if (row_embed.shape() != table || col_embed.shape() != table)
        throw DimensionError("windowed_attention: embedding tables must be " + shape_str(table) +
                             ", got " + shape_str(row_embed.shape()) + " and " +
                             shape_str(col_embed.shape()));
    return g;
}

// [N,C,HW] -> [N,HW,C]
template <typename Real>
std::vector<Real> channels_last(const Geom& g, const std::vector<Real>& x) {
    std::vector<Real> out(x.size());
    for (std::size_t b = 0; b < g.n; ++b)
        for (std::size_t ch = 0; ch < g.c; ++ch)
            for (std::size_t i = 0; i < g.hw; ++i)
                out[(b * g.hw + i) * g.c + ch] = x[(b * g.c + ch) * g.hw + i];
    return out;
}

template <typename Real>
Real dot(const Real* a, const Real* b, std::size_t n) {
    Real s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

// Softmax weights for every (batch, head, site) into wts [N,heads,HW,kk].
template <typename Real>
void compute_weights(const Geom& g, const std::vector<Real>& qt, const std::vector<Real>& kt,
                     const std::vector<Real>& er, const std::vector<Real>& ec, std::vector<Real>& wts) {
    wts.assign(g.n * g.heads * g.hw * g.kk, Real(0));
    std::vector<Real> logits(g.kk);
    const auto r = static_cast<long>(g.radius);
    for (std::size_t b = 0; b < g.n; ++b)
        for (std::size_t hd = 0; hd < g.heads; ++hd)
            for (std::size_t i = 0; i < g.h; ++i)
                for (std::size_t j = 0; j < g.w; ++j) {
                    const std::size_t site = i * g.w + j;
                    const Real* qv = &qt[(b * g.hw + site) * g.c + hd * g.d];
                    Real* wrow = &wts[((b * g.heads + hd) * g.hw + site) * g.kk];
                    Real top = -std::numeric_limits<Real>::infinity();
                    for (long a = -r; a <= r; ++a) {
                        const long u = static_cast<long>(i) + a;
                        if (u < 0 || u >= static_cast<long>(g.h)) continue;
                        const Real pr = dot(qv, &er[static_cast<std::size_t>(a + r) * g.half], g.half);
                        for (long bo = -r; bo <= r; ++bo) {
                            const long vcol = static_cast<long>(j) + bo;
                            if (vcol < 0 || vcol >= static_cast<long>(g.w)) continue;
                            const std::size_t o = static_cast<std::size_t>((a + r) * (2 * r + 1) + (bo + r));
                            const std::size_t other = static_cast<std::size_t>(u) * g.w + static_cast<std::size_t>(vcol);
                            const Real* kv = &kt[(b * g.hw + other) * g.c + hd * g.d];
                            const Real logit =
                                dot(qv, kv, g.d) + pr +
                                dot(qv + g.half, &ec[static_cast<std::size_t>(bo + r) * g.half], g.half);
                            logits[o] = logit;
                            top = std::max(top, logit);
                        }
                    }
                    double total = 0.0;
                    for (long a = -r; a <= r; ++a) {
                        const long u = static_cast<long>(i) + a;
                        if (u < 0 || u >= static_cast<long>(g.h)) continue;
                        for (long bo = -r; bo <= r; ++bo) {
                            const long vcol = static_cast<long>(j) + bo;
                            if (vcol < 0 || vcol >= static_cast<long>(g.w)) continue;
                            const std::size_t o = static_cast<std::size_t>((a + r) * (2 * r + 1) + (bo + r));
                            wrow[o] = std::exp(logits[o] - top);
                            total += static_cast<double>(wrow[o]);
                        }
                    }
                    const Real inv = static_cast<Real>(1.0 / total);
                    for (std::size_t o = 0; o < g.kk; ++o) wrow[o] *= inv;
                }
}

// Calls fn(offset_index, neighbour_site, row_offset_index, col_offset_index) for
// every in-image window position around (i, j).
template <typename Fn>
void for_window(const Geom& g, std::size_t i, std::size_t j, Fn&& fn) {
    const auto r = static_cast<long>(g.radius);
    for (long a = -r; a <= r; ++a) {
        const long u = static_cast<long>(i) + a;
        if (u < 0 || u >= static_cast<long>(g.h)) continue;
        for (long bo = -r; bo <= r; ++bo) {
            const long vcol = static_cast<long>(j) + bo;
            if (vcol < 0 || vcol >= static_cast<long>(g.w)) continue;
            fn(static_cast<std::size_t>((a + r) * (2 * r + 1) + (bo + r)),
               static_cast<std::size_t>(u) * g.w + static_cast<std::size_t>(vcol),
               static_cast<std::size_t>(a + r), static_cast<std::size_t>(bo + r));
        }
    }
}

}  // namespace

template <typename Real>
std::vector<Real> windowed_attention_weights(const Tensor<Real>& q, const Tensor<Real>& k,
                                             const Tensor<Real>& row_embed,
                                             const Tensor<Real>& col_embed, std::size_t heads,
                                             std::size_t window) {
    const Geom g = check_attention_inputs<Real>(q, k, nullptr, row_embed, col_embed, heads, window);
    std::vector<Real> wts;
    compute_weights(g, channels_last(g, q.values()), channels_last(g, k.values()), row_embed.values(),
                    col_embed.values(), wts);
    return wts;
}

template <typename Real>
Tensor<Real> windowed_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                const Tensor<Real>& row_embed, const Tensor<Real>& col_embed,
                                std::size_t heads, std::size_t window) {
    const Geom g = check_attention_inputs<Real>(q, k, &v, row_embed, col_embed, heads, window);
    auto qt = std::make_shared<std::vector<Real>>(channels_last(g, q.values()));
    auto kt = std::make_shared<std::vector<Real>>(channels_last(g, k.values()));
    auto vt = std::make_shared<std::vector<Real>>(channels_last(g, v.values()));
    auto wts = std::make_shared<std::vector<Real>>();
    compute_weights(g, *qt, *kt, row_embed.values(), col_embed.values(), *wts);

    std::vector<Real> out(q.numel(), Real(0));
    std::vector<Real> acc(g.d);
    for (std::size_t b = 0; b < g.n; ++b)
        for (std::size_t hd = 0; hd < g.heads; ++hd)
            for (std::size_t i = 0; i < g.h; ++i)
                for (std::size_t j = 0; j < g.w; ++j) {
                    const std::size_t site = i * g.w + j;
                    const Real* wrow = &(*wts)[((b * g.heads + hd) * g.hw + site) * g.kk];
                    std::fill(acc.begin(), acc.end(), Real(0));
                    for_window(g, i, j, [&](std::size_t o, std::size_t other, std::size_t, std::size_t) {
                        const Real wv = wrow[o];
                        const Real* vv = &(*vt)[(b * g.hw + other) * g.c + hd * g.d];
                        for (std::size_t ch = 0; ch < g.d; ++ch) acc[ch] += wv * vv[ch];
                    });
                    for (std::size_t ch = 0; ch < g.d; ++ch)
                        out[(b * g.c + hd * g.d + ch) * g.hw + site] = acc[ch];
                }

    auto qn = q.node(), kn = k.node(), vn = v.node(), ern = row_embed.node(), ecn = col_embed.node();
    return make_result<Real>(
        q.shape(), std::move(out), "windowed_attention", {q, k, v, row_embed, col_embed},
        [g, qt, kt, vt, wts, qn, kn, vn, ern, ecn](Node<Real>& self) {
            const auto dy = channels_last(g, self.grad);
            std::vector<Real> dq(qt->size(), Real(0)), dk(kt->size(), Real(0)), dv(vt->size(), Real(0));
            std::vector<Real> der(ern->data.size(), Real(0)), dec(ecn->data.size(), Real(0));
            const auto& er = ern->data;
            const auto& ec = ecn->data;
            std::vector<Real> gw(g.kk);
            for (std::size_t b = 0; b < g.n; ++b)
                for (std::size_t hd = 0; hd < g.heads; ++hd)
                    for (std::size_t i = 0; i < g.h; ++i)
                        for (std::size_t j = 0; j < g.w; ++j) {
                            const std::size_t site = i * g.w + j;
                            const std::size_t qoff = (b * g.hw + site) * g.c + hd * g.d;
                            const Real* wrow = &(*wts)[((b * g.heads + hd) * g.hw + site) * g.kk];
                            const Real* gout = &dy[qoff];
                            const Real* qv = &(*qt)[qoff];
                            Real weighted = 0;
                            for_window(g, i, j, [&](std::size_t o, std::size_t other, std::size_t, std::size_t) {
                                const std::size_t koff = (b * g.hw + other) * g.c + hd * g.d;
                                gw[o] = dot(gout, &(*vt)[koff], g.d);
                                weighted += wrow[o] * gw[o];
                                Real* dvv = &dv[koff];
                                for (std::size_t ch = 0; ch < g.d; ++ch) dvv[ch] += wrow[o] * gout[ch];
                            });
                            Real* dqv = &dq[qoff];
                            for_window(g, i, j, [&](std::size_t o, std::size_t other, std::size_t ro, std::size_t co) {
                                const Real gl = wrow[o] * (gw[o] - weighted);
                                const std::size_t koff = (b * g.hw + other) * g.c + hd * g.d;
                                const Real* kv = &(*kt)[koff];
                                Real* dkv = &dk[koff];
                                for (std::size_t ch = 0; ch < g.d; ++ch) {
                                    dqv[ch] += gl * kv[ch];
                                    dkv[ch] += gl * qv[ch];
                                }
                                const Real* erv = &er[ro * g.half];
                                const Real* ecv = &ec[co * g.half];
                                Real* derv = &der[ro * g.half];
                                Real* decv = &dec[co * g.half];
                                for (std::size_t ch = 0; ch < g.half; ++ch) {
                                    dqv[ch] += gl * erv[ch];
                                    dqv[g.half + ch] += gl * ecv[ch];
                                    derv[ch] += gl * qv[ch];
                                    decv[ch] += gl * qv[g.half + ch];
                                }
                            });
                        }
            auto back = [&g](const std::vector<Real>& t) {
                std::vector<Real> out(t.size());
                for (std::size_t b = 0; b < g.n; ++b)
                    for (std::size_t ch = 0; ch < g.c; ++ch)
                        for (std::size_t i = 0; i < g.hw; ++i)
                            out[(b * g.c + ch) * g.hw + i] = t[(b * g.hw + i) * g.c + ch];
                return out;
            };
            if (qn->requires_grad) detail::accumulate_grad<Real>(*qn, back(dq));
            if (kn->requires_grad) detail::accumulate_grad<Real>(*kn, back(dk));
            if (vn->requires_grad) detail::accumulate_grad<Real>(*vn, back(dv));
            detail::accumulate_grad<Real>(*ern, der);
            detail::accumulate_grad<Real>(*ecn, dec);
        });
}

template <typename Real>
void SelfAttentionParams<Real>::validate() const {
    if (!wq.defined() || wq.rank() != 4 || wq.dim(2) != 1 || wq.dim(3) != 1)
        throw DimensionError("self-attention: W_Q must be [C_out, C_in, 1, 1]");
    if (wk.shape() != wq.shape() || wv.shape() != wq.shape())
        throw DimensionError("self-attention: W_Q, W_K, W_V shapes differ");
    if (heads == 0 || out_channels() % heads != 0)
        throw ConfigError("self-attention: C_out " + std::to_string(out_channels()) +
                          " not divisible by heads " + std::to_string(heads));
    if (head_dim() % 2 != 0) throw ConfigError("self-attention: per-head width must be even");
    if (window % 2 == 0) throw ConfigError("self-attention: window must be odd");
    const Shape table{window, head_dim() / 2};
    if (row_embed.shape() != table || col_embed.shape() != table)
        throw DimensionError("self-attention: embedding tables must be " + shape_str(table));
}

template <typename Real>
SelfAttentionParams<Real> SelfAttentionParams<Real>::init(std::size_t c_in, std::size_t c_out,
                                                          std::size_t heads, std::size_t window,
                                                          Rng& rng) {
    SelfAttentionParams p;
    p.heads = heads;
    p.window = window;
    if (heads == 0 || c_out % heads != 0 || (c_out / heads) % 2 != 0 || window % 2 == 0)
        throw ConfigError("self-attention: need C_out divisible by heads, even per-head width and odd window");
    p.wq = init::he_normal<Real>({c_out, c_in, 1, 1}, c_in, rng);
    p.wk = init::he_normal<Real>({c_out, c_in, 1, 1}, c_in, rng);
    p.wv = init::he_normal<Real>({c_out, c_in, 1, 1}, c_in, rng);
    p.row_embed = init::uniform<Real>({window, c_out / heads / 2}, 0.05, rng);
    p.col_embed = init::uniform<Real>({window, c_out / heads / 2}, 0.05, rng);
    return p;
}

template <typename Real>
void AdditiveAttentionParams<Real>::validate() const {
    if (!w_rgb.defined() || w_rgb.rank() != 4 || w_rgb.dim(2) != 1 || w_rgb.dim(3) != 1)
        throw DimensionError("additive gate: W_rgb must be [C_mid, C, 1, 1]");
    if (w_evt.shape() != w_rgb.shape())
        throw DimensionError("additive gate: W_rgb and W_evt shapes differ");
    if (psi.shape() != Shape{1, w_rgb.dim(0), 1, 1})
        throw DimensionError("additive gate: psi must be [1, C_mid, 1, 1]");
    if (b_psi.shape() != Shape{1}) throw DimensionError("additive gate: b_psi must be [1]");
}

template <typename Real>
AdditiveAttentionParams<Real> AdditiveAttentionParams<Real>::init(std::size_t channels, Rng& rng) {
    const std::size_t mid = std::max<std::size_t>(1, channels / 2);
    AdditiveAttentionParams p;
    p.w_rgb = init::he_normal<Real>({mid, channels, 1, 1}, channels, rng);
    p.w_evt = init::he_normal<Real>({mid, channels, 1, 1}, channels, rng);
    p.psi = init::he_normal<Real>({1, mid, 1, 1}, mid, rng);
    p.b_psi = init::constant<Real>({1}, Real(0));
    return p;
}

template <typename Real>
Tensor<Real> local_self_attention(const Tensor<Real>& features, const SelfAttentionParams<Real>& p) {
    p.validate();
    if (!features.defined() || features.rank() != 4)
        throw DimensionError("self-attention: input must be [N,C,H,W]");
    if (features.dim(1) != p.in_channels())
        throw DimensionError("self-attention: input has " + std::to_string(features.dim(1)) +
                             " channels, parameters expect " + std::to_string(p.in_channels()));
    const Tensor<Real> none;
    const auto q = conv2d(features, p.wq, none);
    const auto k = conv2d(features, p.wk, none);
    const auto v = conv2d(features, p.wv, none);
    return windowed_attention(q, k, v, p.row_embed, p.col_embed, p.heads, p.window);
}

template <typename Real>
Tensor<Real> fuse_elementwise(const Tensor<Real>& rgb, const Tensor<Real>& evt) {
    if (!rgb.defined() || !evt.defined() || rgb.shape() != evt.shape())
        throw DimensionError("fuse_elementwise: shape mismatch " +
                             (rgb.defined() ? shape_str(rgb.shape()) : std::string("[]")) + " vs " +
                             (evt.defined() ? shape_str(evt.shape()) : std::string("[]")));
    return add(rgb, evt);
}

template <typename Real>
Tensor<Real> additive_gate(const Tensor<Real>& rgb, const Tensor<Real>& evt,
                           const AdditiveAttentionParams<Real>& p) {
    p.validate();
    if (!rgb.defined() || !evt.defined() || rgb.shape() != evt.shape() || rgb.rank() != 4)
        throw DimensionError("additive gate: inputs must be equal [N,C,H,W] shapes");
    if (rgb.dim(1) != p.channels())
        throw DimensionError("additive gate: input has " + std::to_string(rgb.dim(1)) +
                             " channels, parameters expect " + std::to_string(p.channels()));
    const Tensor<Real> none;
    const auto joint = relu(add(conv2d(rgb, p.w_rgb, none), conv2d(evt, p.w_evt, none)));
    return sigmoid(conv2d(joint, p.psi, p.b_psi));
}

template <typename Real>
Tensor<Real> additive_attention_fuse(const Tensor<Real>& rgb, const Tensor<Real>& evt,
                                     const AdditiveAttentionParams<Real>& p) {
    return gate_sites(evt, additive_gate(rgb, evt, p));
}

#define DRFUSER_ATTENTION(Real)                                                                    \
    template struct SelfAttentionParams<Real>;                                                     \
    template struct AdditiveAttentionParams<Real>;                                                 \
    template Tensor<Real> windowed_attention(const Tensor<Real>&, const Tensor<Real>&,             \
                                             const Tensor<Real>&, const Tensor<Real>&,             \
                                             const Tensor<Real>&, std::size_t, std::size_t);       \
    template std::vector<Real> windowed_attention_weights(const Tensor<Real>&, const Tensor<Real>&, \
                                                          const Tensor<Real>&, const Tensor<Real>&, \
                                                          std::size_t, std::size_t);               \
    template Tensor<Real> local_self_attention(const Tensor<Real>&, const SelfAttentionParams<Real>&); \
    template Tensor<Real> fuse_elementwise(const Tensor<Real>&, const Tensor<Real>&);              \
    template Tensor<Real> additive_gate(const Tensor<Real>&, const Tensor<Real>&,                  \
                                        const AdditiveAttentionParams<Real>&);                     \
    template Tensor<Real> additive_attention_fuse(const Tensor<Real>&, const Tensor<Real>&,        \
                                                  const AdditiveAttentionParams<Real>&);

DRFUSER_ATTENTION(float)
DRFUSER_ATTENTION(double)

}  // namespace drfuser
