#pragma once

#include <cstdint>
#include <vector>

#include "drfuser/tensor.hpp"

namespace drfuser {

enum class Mode { train, eval };

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

struct Pool2dOptions {
    std::size_t kernel = 2;
    std::size_t stride = 2;
    std::size_t padding = 0;
};

struct BatchNormOptions {
    Mode mode = Mode::train;
    double eps = 1e-5;
    double momentum = 0.1;  // running = (1 - momentum) * running + momentum * batch
};

inline constexpr double kDefaultKeepProb = 0.75;

// Element-wise ops require identical shapes; there is no implicit broadcasting.
template <typename Real> Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> scale(const Tensor<Real>& a, Real s);

template <typename Real> Tensor<Real> relu(const Tensor<Real>& x);
template <typename Real> Tensor<Real> sigmoid(const Tensor<Real>& x);

// Scalar reductions over all elements, summed sequentially in storage order.
template <typename Real> Tensor<Real> sum(const Tensor<Real>& x);
template <typename Real> Tensor<Real> mean(const Tensor<Real>& x);

// [m,k] x [k,n] -> [m,n]
template <typename Real> Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

// x [N,in], weight [out,in], bias [out] (may be undefined) -> [N,out]
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);

// input [N,C,H,W], weight [K,C,kh,kw], bias [K] (may be undefined) -> [N,K,H',W']
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight,
                    const Tensor<Real>& bias, Conv2dOptions opts = {});

// Padding is treated as -inf. Ties resolve to the first maximum in scan order.
template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& input, Pool2dOptions opts);

// Per-channel normalisation. running_mean/running_var are updated in place in
// train mode (unbiased variance) and read in eval mode.
template <typename Real>
Tensor<Real> batch_norm2d(const Tensor<Real>& input, const Tensor<Real>& gamma,
                          const Tensor<Real>& beta, Tensor<Real>& running_mean,
                          Tensor<Real>& running_var, BatchNormOptions opts = {});

// Softmax over the last axis.
template <typename Real> Tensor<Real> softmax(const Tensor<Real>& x);

// Inverted dropout: kept entries are scaled by 1/keep_prob. Identity in eval mode.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double keep_prob, std::uint64_t seed, Mode mode);

template <typename Real> Tensor<Real> reshape(const Tensor<Real>& x, const Shape& shape);

// Concatenates along axis 1; all other extents must agree.
template <typename Real>
Tensor<Real> concat_channels(const std::vector<Tensor<Real>>& parts);

// x [N,C,H,W] scaled by a per-site gate g [N,1,H,W] shared by all channels.
template <typename Real>
Tensor<Real> gate_sites(const Tensor<Real>& x, const Tensor<Real>& gate);

namespace shapes {
std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);
}

}  // namespace drfuser
