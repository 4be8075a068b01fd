#include "drfuser/gradcheck.hpp"

#include <algorithm>

namespace drfuser {

namespace {

double central_difference(const std::function<double()>& f, TensorD& t, std::size_t i,
                          double eps) {
    auto data = t.data();
    const double orig = data[i];
    data[i] = orig + eps;
    const double up = f();
    data[i] = orig - eps;
    const double down = f();
    data[i] = orig;
    return (up - down) / (2.0 * eps);
}

}  // namespace

double kink_aware_difference(const std::function<double()>& f, TensorD& param, std::size_t index,
                             double eps, double min_eps, double agreement) {
    auto data = param.data();
    const double orig = data[index];
    const double mid = f();
    double central = 0.0;
    for (double h = eps; h >= min_eps; h /= 10) {
        data[index] = orig + h;
        const double up = f();
        data[index] = orig - h;
        const double down = f();
        data[index] = orig;
        central = (up - down) / (2.0 * h);
        if (relative_error((up - mid) / h, (mid - down) / h) < agreement) break;
    }
    return central;
}

std::vector<std::vector<double>> finite_difference_grad(const std::function<double()>& f,
                                                        std::span<TensorD> params, double eps) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (auto& p : params) {
        std::vector<double> g(p.numel());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = central_difference(f, p, i, eps);
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<double> finite_difference_grad(const std::function<double()>& f,
                                           std::span<TensorD> params,
                                           std::span<const Coordinate> coords, double eps) {
    std::vector<double> out;
    out.reserve(coords.size());
    for (const auto& c : coords) out.push_back(central_difference(f, params[c.tensor], c.index, eps));
    return out;
}

GradCheckResult check_gradients(const std::function<TensorD()>& f, std::span<TensorD> params,
                                double eps) {
    for (auto& p : params) p.zero_grad();
    f().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) {
        std::vector<double> g(p.numel(), 0.0);
        if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), g.begin());
        analytic.push_back(std::move(g));
    }
    NoGradGuard no_grad;
    auto numeric = finite_difference_grad([&] { return f().item(); }, params, eps);
    GradCheckResult r;
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < analytic[t].size(); ++i) {
            r.max_relative_error =
                std::max(r.max_relative_error, relative_error(analytic[t][i], numeric[t][i]));
            ++r.coordinates;
        }
    return r;
}

}  // namespace drfuser
