#pragma once

#include <cmath>

#include "drfuser/rng.hpp"
#include "drfuser/tensor.hpp"

namespace drfuser::init {

// Normal with standard deviation sqrt(2 / fan_in).
template <typename Real>
Tensor<Real> he_normal(const Shape& shape, std::size_t fan_in, Rng& rng) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<Real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<Real>(rng.normal(0.0, sd));
    return Tensor<Real>::from_data(shape, std::move(v), true);
}

template <typename Real>
Tensor<Real> uniform(const Shape& shape, double bound, Rng& rng) {
    std::vector<Real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<Real>(rng.uniform(-bound, bound));
    return Tensor<Real>::from_data(shape, std::move(v), true);
}

template <typename Real>
Tensor<Real> constant(const Shape& shape, Real value, bool requires_grad = true) {
    return Tensor<Real>::full(shape, value, requires_grad);
}

}  // namespace drfuser::init
