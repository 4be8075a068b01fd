#pragma once

#include <cstddef>
#include <vector>

#include "drfuser/ops.hpp"
#include "drfuser/rng.hpp"
#include "drfuser/tensor.hpp"

namespace drfuser {

inline constexpr std::size_t kDefaultHeads = 4;
inline constexpr std::size_t kDefaultWindow = 7;

// Local multi-head self-attention over a k x k neighbourhood.
//
// wq, wk, wv are 1x1 convolution weights [C_out, C_in, 1, 1]. Each head owns
// d = C_out / M consecutive channels. The positional logit splits the query of
// a head in two halves: the first half is dotted with row_embed[u - i + k/2],
// the second with col_embed[v - j + k/2]. Both tables are [k, d/2] and shared by
// all heads, so d must be even.
template <typename Real>
struct SelfAttentionParams {
    Tensor<Real> wq, wk, wv;
    Tensor<Real> row_embed, col_embed;
    std::size_t heads = kDefaultHeads;
    std::size_t window = kDefaultWindow;

    std::size_t in_channels() const { return wq.dim(1); }
    std::size_t out_channels() const { return wq.dim(0); }
    std::size_t head_dim() const { return out_channels() / heads; }

    // Throws ConfigError or DimensionError describing the first violation.
    void validate() const;

    static SelfAttentionParams init(std::size_t c_in, std::size_t c_out, std::size_t heads,
                                    std::size_t window, Rng& rng);
};

// Gate projections: w_rgb, w_evt are [C_mid, C, 1, 1]; psi is [1, C_mid, 1, 1];
// b_psi is [1].
template <typename Real>
struct AdditiveAttentionParams {
    Tensor<Real> w_rgb, w_evt, psi, b_psi;

    std::size_t channels() const { return w_rgb.dim(1); }
    void validate() const;

    // C_mid = max(1, C / 2).
    static AdditiveAttentionParams init(std::size_t channels, Rng& rng);
};

// q, k, v: [N, C, H, W] with C = heads * d. Softmax runs over the in-image part
// of the window; out-of-image positions are masked out. Logits are not scaled.
template <typename Real>
Tensor<Real> windowed_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                const Tensor<Real>& row_embed, const Tensor<Real>& col_embed,
                                std::size_t heads, std::size_t window);

// Softmax weights [N, heads, H, W, k*k] laid out by window offset (row-major,
// offset (-k/2, -k/2) first). Masked positions hold 0. No graph is recorded.
template <typename Real>
std::vector<Real> windowed_attention_weights(const Tensor<Real>& q, const Tensor<Real>& k,
                                             const Tensor<Real>& row_embed,
                                             const Tensor<Real>& col_embed, std::size_t heads,
                                             std::size_t window);

// F [N, C_in, H, W] -> [N, C_out, H, W].
template <typename Real>
Tensor<Real> local_self_attention(const Tensor<Real>& features, const SelfAttentionParams<Real>& p);

template <typename Real>
Tensor<Real> fuse_elementwise(const Tensor<Real>& rgb, const Tensor<Real>& evt);

// alpha = sigmoid(psi * relu(W_rgb F_rgb + W_evt F_evt) + b_psi), one value per site: [N,1,H,W].
template <typename Real>
Tensor<Real> additive_gate(const Tensor<Real>& rgb, const Tensor<Real>& evt,
                           const AdditiveAttentionParams<Real>& p);

// F_evt scaled by the per-site gate.
template <typename Real>
Tensor<Real> additive_attention_fuse(const Tensor<Real>& rgb, const Tensor<Real>& evt,
                                     const AdditiveAttentionParams<Real>& p);

}  // namespace drfuser
