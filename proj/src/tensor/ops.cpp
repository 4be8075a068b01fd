#include "drfuser/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "drfuser/rng.hpp"
#include "kernels.hpp"

namespace drfuser {

using detail::make_result;
using detail::Node;

namespace shapes {
std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (stride == 0) throw DimensionError("stride must be >= 1");
    if (kernel > in + 2 * padding)
        throw DimensionError("kernel extent " + std::to_string(kernel) +
                             " exceeds padded input extent " + std::to_string(in + 2 * padding));
    return (in + 2 * padding - kernel) / stride + 1;
}
}  // namespace shapes

namespace {

template <typename Real>
void require_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (!a.defined() || !b.defined()) throw DimensionError(std::string(op) + ": undefined operand");
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

template <typename Real>
void require_rank(const char* op, const char* what, const Tensor<Real>& t, std::size_t rank) {
    if (!t.defined() || t.rank() != rank)
        throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                             std::to_string(rank) + ", got " +
                             (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
}

}  // namespace

// ---------------------------------------------------------------------------
// element-wise

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape("add", a, b);
    std::vector<Real> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto an = a.node(), bn = b.node();
    return make_result<Real>(a.shape(), std::move(out), "add", {a, b}, [an, bn](Node<Real>& self) {
        detail::accumulate_grad<Real>(*an, self.grad);
        detail::accumulate_grad<Real>(*bn, self.grad);
    });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape("sub", a, b);
    std::vector<Real> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    auto an = a.node(), bn = b.node();
    return make_result<Real>(a.shape(), std::move(out), "sub", {a, b}, [an, bn](Node<Real>& self) {
        detail::accumulate_grad<Real>(*an, self.grad);
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape("mul", a, b);
    std::vector<Real> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    auto an = a.node(), bn = b.node();
    return make_result<Real>(a.shape(), std::move(out), "mul", {a, b}, [an, bn](Node<Real>& self) {
        // a and b may be the same node; read data before writing grads
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
        }
    });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
    std::vector<Real> out(a.values());
    for (auto& v : out) v *= s;
    auto an = a.node();
    return make_result<Real>(a.shape(), std::move(out), "scale", {a}, [an, s](Node<Real>& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
    std::vector<Real> out(x.values());
    for (auto& v : out) v = v > Real(0) ? v : Real(0);
    auto xn = x.node();
    return make_result<Real>(x.shape(), std::move(out), "relu", {x}, [xn](Node<Real>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xn->data[i] > Real(0)) g[i] += self.grad[i];
    });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
    std::vector<Real> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Real v = xv[i];
        // split by sign so exp never overflows
        if (v >= Real(0)) {
            out[i] = Real(1) / (Real(1) + std::exp(-v));
        } else {
            const Real e = std::exp(v);
            out[i] = e / (Real(1) + e);
        }
    }
    auto xn = x.node();
    return make_result<Real>(x.shape(), std::move(out), "sigmoid", {x}, [xn](Node<Real>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Real y = self.data[i];
            g[i] += self.grad[i] * y * (Real(1) - y);
        }
    });
}

// ---------------------------------------------------------------------------
// reductions

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
    Real acc = 0;
    for (auto v : x.values()) acc += v;
    auto xn = x.node();
    return make_result<Real>(Shape{}, {acc}, "sum", {x}, [xn](Node<Real>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
    if (x.numel() == 0) throw DimensionError("mean of empty tensor");
    Real acc = 0;
    for (auto v : x.values()) acc += v;
    const Real n = static_cast<Real>(x.numel());
    auto xn = x.node();
    return make_result<Real>(Shape{}, {acc / n}, "mean", {x}, [xn, n](Node<Real>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        const Real d = self.grad[0] / n;
        for (auto& v : g) v += d;
    });
}

// ---------------------------------------------------------------------------
// dense linear algebra

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_rank("matmul", "lhs", a, 2);
    require_rank("matmul", "rhs", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner extents differ (lhs axis 1 = " + std::to_string(k) +
                             ", rhs axis 0 = " + std::to_string(b.dim(0)) + ")");
    std::vector<Real> out(m * n, Real(0));
    kernels::gemm_acc(m, n, k, a.values().data(), b.values().data(), out.data());
    auto an = a.node(), bn = b.node();
    return make_result<Real>(Shape{m, n}, std::move(out), "matmul", {a, b},
                             [an, bn, m, n, k](Node<Real>& self) {
                                 if (an->requires_grad) {
                                     // dA = dC . B^T
                                     kernels::gemm_nt_acc(m, k, n, self.grad.data(),
                                                          bn->data.data(),
                                                          an->ensure_grad().data());
                                 }
                                 if (bn->requires_grad) {
                                     // dB = A^T . dC
                                     kernels::gemm_tn_acc(k, n, m, an->data.data(),
                                                          self.grad.data(),
                                                          bn->ensure_grad().data());
                                 }
                             });
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
    require_rank("linear", "input", x, 2);
    require_rank("linear", "weight", weight, 2);
    const std::size_t batch = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
    if (weight.dim(1) != in)
        throw DimensionError("linear: input features (axis 1) = " + std::to_string(in) +
                             " but weight expects " + std::to_string(weight.dim(1)));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f))
        throw DimensionError("linear: bias shape " + shape_str(bias.shape()) +
                             " does not match output features " + std::to_string(out_f));
    std::vector<Real> out(batch * out_f);
    const Real* xv = x.values().data();
    const Real* wv = weight.values().data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < out_f; ++o) {
            Real acc = 0;
            const Real* xr = xv + b * in;
            const Real* wr = wv + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            if (bias.defined()) acc += bias.values()[o];
            out[b * out_f + o] = acc;
        }
    }
    auto xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor<Real>> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result<Real>(
        Shape{batch, out_f}, std::move(out), "linear", parents,
        [xn, wn, bn, batch, in, out_f](Node<Real>& self) {
            const Real* dy = self.grad.data();
            if (xn->requires_grad)
                kernels::gemm_acc(batch, in, out_f, dy, wn->data.data(), xn->ensure_grad().data());
            if (wn->requires_grad)
                kernels::gemm_tn_acc(out_f, in, batch, dy, xn->data.data(),
                                     wn->ensure_grad().data());
            if (bn && bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t o = 0; o < out_f; ++o) g[o] += dy[b * out_f + o];
            }
        });
}

// ---------------------------------------------------------------------------
// convolution

namespace {

struct ConvGeom {
    std::size_t n, c, h, w, k, kh, kw, oh, ow, stride, pad;
    std::size_t ckk() const { return c * kh * kw; }
    std::size_t ohw() const { return oh * ow; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename Real>
void im2col(const ConvGeom& g, const Real* x, Real* cols) {
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t a = 0; a < g.kh; ++a)
            for (std::size_t b = 0; b < g.kw; ++b) {
                Real* row = cols + ((c * g.kh + a) * g.kw + b) * g.ohw();
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + a) - static_cast<long>(g.pad);
                    Real* dst = row + oy * g.ow;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(dst, dst + g.ow, Real(0));
                        continue;
                    }
                    const Real* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix =
                            static_cast<long>(ox * g.stride + b) - static_cast<long>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w))
                                      ? Real(0)
                                      : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
}

template <typename Real>
void col2im_acc(const ConvGeom& g, const Real* cols, Real* dx) {
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t a = 0; a < g.kh; ++a)
            for (std::size_t b = 0; b < g.kw; ++b) {
                const Real* row = cols + ((c * g.kh + a) * g.kw + b) * g.ohw();
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + a) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    Real* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const Real* src = row + oy * g.ow;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix =
                            static_cast<long>(ox * g.stride + b) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.w))
                            dst[static_cast<std::size_t>(ix)] += src[ox];
                    }
                }
            }
}

}  // namespace

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight,
                    const Tensor<Real>& bias, Conv2dOptions opts) {
    require_rank("conv2d", "input", input, 4);
    require_rank("conv2d", "weight", weight, 4);
    if (weight.dim(1) != input.dim(1))
        throw DimensionError("conv2d: input channels (axis 1) = " + std::to_string(input.dim(1)) +
                             " but weight axis 1 = " + std::to_string(weight.dim(1)));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) +
                             " does not match weight axis 0 = " + std::to_string(weight.dim(0)));
    ConvGeom g{};
    g.n = input.dim(0);
    g.c = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.k = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.stride = opts.stride;
    g.pad = opts.padding;
    if (g.stride == 0) throw DimensionError("conv2d: stride must be >= 1");
    if (g.kh > g.h + 2 * g.pad || g.kw > g.w + 2 * g.pad)
        throw DimensionError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                             " exceeds padded input (axes 2,3) " + std::to_string(g.h + 2 * g.pad) +
                             "x" + std::to_string(g.w + 2 * g.pad));
    g.oh = shapes::conv_out(g.h, g.kh, g.stride, g.pad);
    g.ow = shapes::conv_out(g.w, g.kw, g.stride, g.pad);

    const std::size_t in_sz = g.c * g.h * g.w;
    const std::size_t out_sz = g.k * g.ohw();
    std::vector<Real> out(g.n * out_sz, Real(0));
    const bool pw = g.pointwise();
    std::vector<Real> cols(pw ? 0 : g.n * g.ckk() * g.ohw());
    const Real* xv = input.values().data();
    const Real* wv = weight.values().data();
    for (std::size_t n = 0; n < g.n; ++n) {
        const Real* col = xv + n * in_sz;
        if (!pw) {
            Real* c = cols.data() + n * g.ckk() * g.ohw();
            im2col(g, xv + n * in_sz, c);
            col = c;
        }
        Real* o = out.data() + n * out_sz;
        kernels::gemm_acc(g.k, g.ohw(), g.ckk(), wv, col, o);
        if (bias.defined()) {
            const auto& bv = bias.values();
            for (std::size_t k = 0; k < g.k; ++k) {
                Real* row = o + k * g.ohw();
                for (std::size_t j = 0; j < g.ohw(); ++j) row[j] += bv[k];
            }
        }
    }

    auto xn = input.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor<Real>> parents{input, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result<Real>(
        Shape{g.n, g.k, g.oh, g.ow}, std::move(out), "conv2d", parents,
        [xn, wn, bn, g, in_sz, out_sz, pw, cols = std::move(cols)](Node<Real>& self) {
            const Real* dy = self.grad.data();
            const std::size_t ckk = g.ckk(), ohw = g.ohw();
            std::vector<Real> dcols;
            if (xn->requires_grad && !pw) dcols.resize(ckk * ohw);
            for (std::size_t n = 0; n < g.n; ++n) {
                const Real* dyn = dy + n * out_sz;
                const Real* col = pw ? xn->data.data() + n * in_sz : cols.data() + n * ckk * ohw;
                if (wn->requires_grad)
                    kernels::gemm_nt_acc(g.k, ckk, ohw, dyn, col, wn->ensure_grad().data());
                if (bn && bn->requires_grad) {
                    auto& gb = bn->ensure_grad();
                    for (std::size_t k = 0; k < g.k; ++k) {
                        Real acc = 0;
                        for (std::size_t j = 0; j < ohw; ++j) acc += dyn[k * ohw + j];
                        gb[k] += acc;
                    }
                }
                if (xn->requires_grad) {
                    Real* dx = xn->ensure_grad().data() + n * in_sz;
                    if (pw) {
                        kernels::gemm_tn_acc(ckk, ohw, g.k, wn->data.data(), dyn, dx);
                    } else {
                        std::fill(dcols.begin(), dcols.end(), Real(0));
                        kernels::gemm_tn_acc(ckk, ohw, g.k, wn->data.data(), dyn, dcols.data());
                        col2im_acc(g, dcols.data(), dx);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// pooling

template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& input, Pool2dOptions opts) {
    require_rank("max_pool2d", "input", input, 4);
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (opts.padding * 2 > opts.kernel)
        throw DimensionError("max_pool2d: padding must be at most half the kernel");
    const std::size_t oh = shapes::conv_out(h, opts.kernel, opts.stride, opts.padding);
    const std::size_t ow = shapes::conv_out(w, opts.kernel, opts.stride, opts.padding);
    std::vector<Real> out(n * c * oh * ow);
    std::vector<std::size_t> argmax(out.size());
    const Real* xv = input.values().data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const Real* src = xv + plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                Real best = -std::numeric_limits<Real>::infinity();
                std::size_t best_i = 0;
                bool found = false;
                for (std::size_t a = 0; a < opts.kernel; ++a) {
                    const long iy =
                        static_cast<long>(oy * opts.stride + a) - static_cast<long>(opts.padding);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t b = 0; b < opts.kernel; ++b) {
                        const long ix = static_cast<long>(ox * opts.stride + b) -
                                        static_cast<long>(opts.padding);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        const std::size_t idx =
                            static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                        if (!found || src[idx] > best) {
                            best = src[idx];
                            best_i = idx;
                            found = true;
                        }
                    }
                }
                const std::size_t o = (plane * oh + oy) * ow + ox;
                out[o] = best;
                argmax[o] = plane * h * w + best_i;
            }
    }
    auto xn = input.node();
    return make_result<Real>(Shape{n, c, oh, ow}, std::move(out), "max_pool2d", {input},
                             [xn, argmax = std::move(argmax)](Node<Real>& self) {
                                 if (!xn->requires_grad) return;
                                 auto& g = xn->ensure_grad();
                                 for (std::size_t i = 0; i < argmax.size(); ++i)
                                     g[argmax[i]] += self.grad[i];
                             });
}

// ---------------------------------------------------------------------------
// batch normalisation

template <typename Real>
Tensor<Real> batch_norm2d(const Tensor<Real>& input, const Tensor<Real>& gamma,
                          const Tensor<Real>& beta, Tensor<Real>& running_mean,
                          Tensor<Real>& running_var, BatchNormOptions opts) {
    require_rank("batch_norm2d", "input", input, 4);
    const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    for (const Tensor<Real>* t : {&gamma, &beta, static_cast<const Tensor<Real>*>(&running_mean),
                                  static_cast<const Tensor<Real>*>(&running_var)})
        if (!t->defined() || t->rank() != 1 || t->dim(0) != c)
            throw DimensionError("batch_norm2d: per-channel parameter shape " +
                                 (t->defined() ? shape_str(t->shape()) : std::string("<undefined>")) +
                                 " does not match input channels (axis 1) = " + std::to_string(c));
    const std::size_t count = n * hw;
    if (opts.mode == Mode::train && count < 2)
        throw ContractError("batch_norm2d: degenerate batch (N*H*W = " + std::to_string(count) +
                            " per channel) in train mode");

    const Real* xv = input.values().data();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<Real> out(input.numel());
    std::vector<Real> xhat(input.numel());
    std::vector<Real> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        Real mu, var;
        if (opts.mode == Mode::train) {
            double s = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const Real* p = xv + (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) s += p[i];
            }
            const double m = s / static_cast<double>(count);
            double ss = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const Real* p = xv + (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = p[i] - m;
                    ss += d * d;
                }
            }
            mu = static_cast<Real>(m);
            var = static_cast<Real>(ss / static_cast<double>(count));
            const double unbiased = ss / static_cast<double>(count - 1);
            auto rm = running_mean.data();
            auto rv = running_var.data();
            rm[ch] = static_cast<Real>((1.0 - opts.momentum) * rm[ch] + opts.momentum * m);
            rv[ch] = static_cast<Real>((1.0 - opts.momentum) * rv[ch] + opts.momentum * unbiased);
        } else {
            mu = running_mean.values()[ch];
            var = running_var.values()[ch];
        }
        const Real is = Real(1) / std::sqrt(var + static_cast<Real>(opts.eps));
        inv_std[ch] = is;
        for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const Real xh = (xv[off + i] - mu) * is;
                xhat[off + i] = xh;
                out[off + i] = gv[ch] * xh + bv[ch];
            }
        }
    }

    auto xn = input.node(), gn = gamma.node(), bn = beta.node();
    const bool train = opts.mode == Mode::train;
    return make_result<Real>(
        input.shape(), std::move(out), "batch_norm2d", {input, gamma, beta},
        [xn, gn, bn, n, c, hw, count, train, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Node<Real>& self) {
            const Real* dy = self.grad.data();
            for (std::size_t ch = 0; ch < c; ++ch) {
                Real sdy = 0, sdyx = 0;
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t off = (b * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        sdy += dy[off + i];
                        sdyx += dy[off + i] * xhat[off + i];
                    }
                }
                if (gn->requires_grad) gn->ensure_grad()[ch] += sdyx;
                if (bn->requires_grad) bn->ensure_grad()[ch] += sdy;
                if (!xn->requires_grad) continue;
                auto& dx = xn->ensure_grad();
                const Real gscale = gn->data[ch] * inv_std[ch];
                if (train) {
                    const Real m = static_cast<Real>(count);
                    for (std::size_t b = 0; b < n; ++b) {
                        const std::size_t off = (b * c + ch) * hw;
                        for (std::size_t i = 0; i < hw; ++i)
                            dx[off + i] += gscale / m *
                                           (m * dy[off + i] - sdy - xhat[off + i] * sdyx);
                    }
                } else {
                    for (std::size_t b = 0; b < n; ++b) {
                        const std::size_t off = (b * c + ch) * hw;
                        for (std::size_t i = 0; i < hw; ++i) dx[off + i] += gscale * dy[off + i];
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// softmax / dropout / shape ops

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x) {
    if (!x.defined() || x.rank() == 0) throw DimensionError("softmax: input needs rank >= 1");
    const std::size_t len = x.shape().back();
    if (len == 0) throw DimensionError("softmax: last axis is empty");
    const std::size_t rows = x.numel() / len;
    std::vector<Real> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* src = xv.data() + r * len;
        Real* dst = out.data() + r * len;
        const Real mx = *std::max_element(src, src + len);
        Real z = 0;
        for (std::size_t i = 0; i < len; ++i) {
            dst[i] = std::exp(src[i] - mx);
            z += dst[i];
        }
        for (std::size_t i = 0; i < len; ++i) dst[i] /= z;
    }
    auto xn = x.node();
    return make_result<Real>(x.shape(), std::move(out), "softmax", {x},
                             [xn, rows, len](Node<Real>& self) {
                                 if (!xn->requires_grad) return;
                                 auto& g = xn->ensure_grad();
                                 for (std::size_t r = 0; r < rows; ++r) {
                                     const Real* y = self.data.data() + r * len;
                                     const Real* dy = self.grad.data() + r * len;
                                     Real s = 0;
                                     for (std::size_t i = 0; i < len; ++i) s += y[i] * dy[i];
                                     for (std::size_t i = 0; i < len; ++i)
                                         g[r * len + i] += y[i] * (dy[i] - s);
                                 }
                             });
}

template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double keep_prob, std::uint64_t seed, Mode mode) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0))
        throw ConfigError("dropout: keep_prob must lie in (0, 1], got " + std::to_string(keep_prob));
    if (mode == Mode::eval || keep_prob == 1.0) return x;
    Rng rng(seed);
    std::vector<Real> mask(x.numel());
    const Real s = static_cast<Real>(1.0 / keep_prob);
    for (auto& m : mask) m = rng.bernoulli(keep_prob) ? s : Real(0);
    std::vector<Real> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    auto xn = x.node();
    return make_result<Real>(x.shape(), std::move(out), "dropout", {x},
                             [xn, mask = std::move(mask)](Node<Real>& self) {
                                 if (!xn->requires_grad) return;
                                 auto& g = xn->ensure_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                     g[i] += self.grad[i] * mask[i];
                             });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    auto xn = x.node();
    return make_result<Real>(shape, x.values(), "reshape", {x}, [xn](Node<Real>& self) {
        detail::accumulate_grad<Real>(*xn, self.grad);
    });
}

template <typename Real>
Tensor<Real> concat_channels(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw DimensionError("concat_channels: no inputs");
    const Shape& ref = parts[0].shape();
    if (ref.size() < 2) throw DimensionError("concat_channels: inputs need rank >= 2");
    std::size_t total_c = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == ref.size() && s[0] == ref[0];
        for (std::size_t a = 2; ok && a < s.size(); ++a) ok = s[a] == ref[a];
        if (!ok)
            throw DimensionError("concat_channels: " + shape_str(s) + " incompatible with " +
                                 shape_str(ref) + " outside axis 1");
        total_c += s[1];
    }
    const std::size_t outer = ref[0];
    std::size_t inner = 1;
    for (std::size_t a = 2; a < ref.size(); ++a) inner *= ref[a];
    Shape out_shape = ref;
    out_shape[1] = total_c;
    std::vector<Real> out(outer * total_c * inner);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t pc = p.dim(1);
        const auto& pv = p.values();
        for (std::size_t b = 0; b < outer; ++b)
            std::copy(pv.begin() + b * pc * inner, pv.begin() + (b + 1) * pc * inner,
                      out.begin() + (b * total_c + off) * inner);
        off += pc;
    }
    std::vector<std::shared_ptr<Node<Real>>> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.dim(1));
    }
    return make_result<Real>(out_shape, std::move(out), "concat_channels", parts,
                             [nodes, widths, offsets, outer, inner, total_c](Node<Real>& self) {
                                 for (std::size_t k = 0; k < nodes.size(); ++k) {
                                     if (!nodes[k]->requires_grad) continue;
                                     auto& g = nodes[k]->ensure_grad();
                                     const std::size_t pc = widths[k];
                                     for (std::size_t b = 0; b < outer; ++b) {
                                         const Real* src =
                                             self.grad.data() + (b * total_c + offsets[k]) * inner;
                                         Real* dst = g.data() + b * pc * inner;
                                         for (std::size_t i = 0; i < pc * inner; ++i)
                                             dst[i] += src[i];
                                     }
                                 }
                             });
}

template <typename Real>
Tensor<Real> gate_sites(const Tensor<Real>& x, const Tensor<Real>& gate) {
    require_rank("gate_sites", "input", x, 4);
    require_rank("gate_sites", "gate", gate, 4);
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (gate.dim(0) != n || gate.dim(1) != 1 || gate.dim(2) != x.dim(2) || gate.dim(3) != x.dim(3))
        throw DimensionError("gate_sites: gate shape " + shape_str(gate.shape()) +
                             " must be [N,1,H,W] for input " + shape_str(x.shape()));
    std::vector<Real> out(x.numel());
    const auto& xv = x.values();
    const auto& gv = gate.values();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i)
                out[(b * c + ch) * hw + i] = xv[(b * c + ch) * hw + i] * gv[b * hw + i];
    auto xn = x.node(), gn = gate.node();
    return make_result<Real>(x.shape(), std::move(out), "gate_sites", {x, gate},
                             [xn, gn, n, c, hw](Node<Real>& self) {
                                 const Real* dy = self.grad.data();
                                 if (xn->requires_grad) {
                                     auto& g = xn->ensure_grad();
                                     for (std::size_t b = 0; b < n; ++b)
                                         for (std::size_t ch = 0; ch < c; ++ch)
                                             for (std::size_t i = 0; i < hw; ++i)
                                                 g[(b * c + ch) * hw + i] +=
                                                     dy[(b * c + ch) * hw + i] * gn->data[b * hw + i];
                                 }
                                 if (gn->requires_grad) {
                                     auto& g = gn->ensure_grad();
                                     for (std::size_t b = 0; b < n; ++b)
                                         for (std::size_t ch = 0; ch < c; ++ch)
                                             for (std::size_t i = 0; i < hw; ++i)
                                                 g[b * hw + i] += dy[(b * c + ch) * hw + i] *
                                                                  xn->data[(b * c + ch) * hw + i];
                                 }
                             });
}

#define DRFUSER_OPS(Real)                                                                        \
    template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                         \
    template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                         \
    template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                         \
    template Tensor<Real> scale(const Tensor<Real>&, Real);                                      \
    template Tensor<Real> relu(const Tensor<Real>&);                                             \
    template Tensor<Real> sigmoid(const Tensor<Real>&);                                          \
    template Tensor<Real> sum(const Tensor<Real>&);                                              \
    template Tensor<Real> mean(const Tensor<Real>&);                                             \
    template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                      \
    template Tensor<Real> linear(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&); \
    template Tensor<Real> conv2d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,  \
                                 Conv2dOptions);                                                 \
    template Tensor<Real> max_pool2d(const Tensor<Real>&, Pool2dOptions);                        \
    template Tensor<Real> batch_norm2d(const Tensor<Real>&, const Tensor<Real>&,                 \
                                       const Tensor<Real>&, Tensor<Real>&, Tensor<Real>&,        \
                                       BatchNormOptions);                                        \
    template Tensor<Real> softmax(const Tensor<Real>&);                                          \
    template Tensor<Real> dropout(const Tensor<Real>&, double, std::uint64_t, Mode);             \
    template Tensor<Real> reshape(const Tensor<Real>&, const Shape&);                            \
    template Tensor<Real> concat_channels(const std::vector<Tensor<Real>>&);                     \
    template Tensor<Real> gate_sites(const Tensor<Real>&, const Tensor<Real>&);

DRFUSER_OPS(float)
DRFUSER_OPS(double)

}  // namespace drfuser
