#pragma once

// Naive reference implementations used as test oracles. They are written
// independently of the library kernels (direct index arithmetic, no im2col,
// no loop reordering) and sum in the documented row-major order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <vector>

#include "drfuser/attention.hpp"
#include "drfuser/events.hpp"
#include "drfuser/tensor.hpp"

namespace drfuser::oracle {

// out[i][j] = sum_p a[i][p] * b[p][j], p ascending, starting from zero.
template <typename Real>
std::vector<Real> matmul(const std::vector<Real>& a, const std::vector<Real>& b, std::size_t m,
                         std::size_t k, std::size_t n) {
    std::vector<Real> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            Real acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            out[i * n + j] = acc;
        }
    return out;
}

// out[b][o] = (sum_i x[b][i] * w[o][i]) + bias[o]
template <typename Real>
std::vector<Real> linear(const std::vector<Real>& x, const std::vector<Real>& w,
                         const std::vector<Real>& bias, std::size_t batch, std::size_t in,
                         std::size_t out_f) {
    std::vector<Real> out(batch * out_f);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < out_f; ++o) {
            Real acc = 0;
            for (std::size_t i = 0; i < in; ++i) acc += x[b * in + i] * w[o * in + i];
            out[b * out_f + o] = acc + (bias.empty() ? Real(0) : bias[o]);
        }
    return out;
}

// Direct sliding-window convolution. Padded taps contribute w * 0.
template <typename Real>
std::vector<Real> conv2d(const std::vector<Real>& x, const std::vector<Real>& w,
                         const std::vector<Real>& bias, std::size_t n, std::size_t c,
                         std::size_t h, std::size_t wd, std::size_t k, std::size_t kh,
                         std::size_t kw, std::size_t stride, std::size_t pad) {
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
    std::vector<Real> out(n * k * oh * ow);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ko = 0; ko < k; ++ko)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    Real acc = 0;
                    for (std::size_t ci = 0; ci < c; ++ci)
                        for (std::size_t a = 0; a < kh; ++a)
                            for (std::size_t bb = 0; bb < kw; ++bb) {
                                const long iy = static_cast<long>(oy * stride + a) - static_cast<long>(pad);
                                const long ix = static_cast<long>(ox * stride + bb) - static_cast<long>(pad);
                                Real v = 0;
                                if (iy >= 0 && ix >= 0 && iy < static_cast<long>(h) &&
                                    ix < static_cast<long>(wd))
                                    v = x[((b * c + ci) * h + static_cast<std::size_t>(iy)) * wd +
                                          static_cast<std::size_t>(ix)];
                                acc += w[((ko * c + ci) * kh + a) * kw + bb] * v;
                            }
                    out[((b * k + ko) * oh + oy) * ow + ox] =
                        acc + (bias.empty() ? Real(0) : bias[ko]);
                }
    return out;
}

// [N,C,H,W] value at (b, c, i, j)
inline double at(const TensorD& t, std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
    return t.values()[((b * t.dim(1) + c) * t.dim(2) + i) * t.dim(3) + j];
}

// Projection by explicit loops: W [C_out, C_in, 1, 1] applied at every site.
inline std::vector<double> project_loops(const TensorD& f, const TensorD& w) {
    const std::size_t n = f.dim(0), ci = f.dim(1), h = f.dim(2), wd = f.dim(3), co = w.dim(0);
    std::vector<double> out(n * co * h * wd, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < wd; ++j) {
                    double s = 0;
                    for (std::size_t c = 0; c < ci; ++c) s += w.values()[o * ci + c] * at(f, b, c, i, j);
                    out[((b * co + o) * h + i) * wd + j] = s;
                }
    return out;
}

// Every query attends to every pixel of the map; the offset tables are
// indexed by (u - i + k/2) and (v - j + k/2).
inline std::vector<double> global_attention(const TensorD& f, const SelfAttentionParams<double>& p) {
    const std::size_t n = f.dim(0), h = f.dim(2), w = f.dim(3), co = p.out_channels();
    const std::size_t d = co / p.heads, half = d / 2, r = p.window / 2;
    const auto q = project_loops(f, p.wq), k = project_loops(f, p.wk), v = project_loops(f, p.wv);
    auto idx = [&](std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
        return ((b * co + c) * h + i) * w + j;
    };
    std::vector<double> out(n * co * h * w, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t hd = 0; hd < p.heads; ++hd)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    std::vector<double> logits;
                    for (std::size_t u = 0; u < h; ++u)
                        for (std::size_t vv = 0; vv < w; ++vv) {
                            double l = 0;
                            for (std::size_t c = 0; c < d; ++c)
                                l += q[idx(b, hd * d + c, i, j)] * k[idx(b, hd * d + c, u, vv)];
                            const std::size_t ro = u + r - i, cofs = vv + r - j;
                            for (std::size_t c = 0; c < half; ++c) {
                                l += q[idx(b, hd * d + c, i, j)] * p.row_embed.values()[ro * half + c];
                                l += q[idx(b, hd * d + half + c, i, j)] * p.col_embed.values()[cofs * half + c];
                            }
                            logits.push_back(l);
                        }
                    double mx = logits[0];
                    for (double l : logits) mx = std::max(mx, l);
                    double z = 0;
                    for (double& l : logits) z += (l = std::exp(l - mx));
                    for (std::size_t c = 0; c < d; ++c) {
                        double s = 0;
                        for (std::size_t u = 0; u < h; ++u)
                            for (std::size_t vv = 0; vv < w; ++vv)
                                s += logits[u * w + vv] / z * v[idx(b, hd * d + c, u, vv)];
                        out[idx(b, hd * d + c, i, j)] = s;
                    }
                }
    return out;
}

// Per-pixel polarity counts of events[begin, end): returns {positive, negative}
// as row-major H*W vectors, by scanning every pixel against every event.
inline std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> event_histogram(
    const std::vector<events::Event>& evs, std::size_t begin, std::size_t end, std::size_t w, std::size_t h) {
    std::vector<std::uint32_t> pos(w * h, 0), neg(w * h, 0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t i = begin; i < end; ++i)
                if (evs[i].x == x && evs[i].y == y) ++(evs[i].p > 0 ? pos : neg)[y * w + x];
    return {pos, neg};
}

// First index of the smallest |seq[k] - t|.
inline std::size_t nearest_index(std::span<const std::int64_t> seq, std::int64_t t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < seq.size(); ++k)
        if (std::llabs(seq[k] - t) < std::llabs(seq[best] - t)) best = k;
    return best;
}

}  // namespace drfuser::oracle
