#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "drfuser/tensor.hpp"

namespace drfuser {

// Central-difference estimate (f(p+eps) - f(p-eps)) / (2 eps) for every
// coordinate of every tensor in params. f must be deterministic; params are
// perturbed in place and restored exactly.
std::vector<std::vector<double>> finite_difference_grad(const std::function<double()>& f,
                                                        std::span<TensorD> params,
                                                        double eps = 1e-5);

struct Coordinate {
    std::size_t tensor = 0;
    std::size_t index = 0;
};

// Same estimate restricted to the listed coordinates.
std::vector<double> finite_difference_grad(const std::function<double()>& f,
                                           std::span<TensorD> params,
                                           std::span<const Coordinate> coords, double eps = 1e-5);

// Central difference at one coordinate for piecewise-smooth f (ReLU, max pool).
// The step starts at eps and shrinks tenfold, down to min_eps, until the right
// and left one-sided quotients agree within `agreement` relative error, so a
// stencil straddling a kink is not mistaken for the derivative.
double kink_aware_difference(const std::function<double()>& f, TensorD& param, std::size_t index,
                             double eps = 1e-5, double min_eps = 1e-9, double agreement = 1e-3);

// |a - n| / max(|a|, |n|, floor). The floor keeps vanishing gradients from
// turning round-off into a large ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
};

// Runs backward() on f's graph, compares every coordinate of params with the
// finite-difference estimate, and reports the worst relative error.
GradCheckResult check_gradients(const std::function<TensorD()>& f, std::span<TensorD> params,
                                double eps = 1e-5);

}  // namespace drfuser
