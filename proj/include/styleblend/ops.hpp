#ifndef STYLEBLEND_OPS_HPP
#define STYLEBLEND_OPS_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "styleblend/tensor.hpp"

namespace styleblend {

namespace detail {

// C[m,n] += A[m,k] * B[k,n], ikj order so the inner loop is a contiguous axpy.
inline void mm_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; i++) {
        double* cr = C + static_cast<size_t>(i) * n;
        const double* ar = A + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; p++) {
            double av = ar[p];
            const double* br = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; j++) cr[j] += av * br[j];
        }
    }
}

inline void transpose_into(const double* src, int rows, int cols, double* dst) {
    for (int i = 0; i < rows; i++)
        for (int j = 0; j < cols; j++) dst[static_cast<size_t>(j) * rows + i] = src[static_cast<size_t>(i) * cols + j];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a.numel());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < v.size(); i++) v[i] = av[i] + bv[i];
    return detail::make_op_node(a.shape(), std::move(v), {a, b}, [](TensorNode& out) {
        if (out.inputs[0]->requires_grad) detail::accumulate(*out.inputs[0], out.grad);
        if (out.inputs[1]->requires_grad) detail::accumulate(*out.inputs[1], out.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> v(a.numel());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < v.size(); i++) v[i] = av[i] - bv[i];
    return detail::make_op_node(a.shape(), std::move(v), {a, b}, [](TensorNode& out) {
        if (out.inputs[0]->requires_grad) detail::accumulate(*out.inputs[0], out.grad);
        if (out.inputs[1]->requires_grad) {
            TensorNode& bN = *out.inputs[1];
            bN.ensure_grad();
            for (size_t i = 0; i < out.grad.size(); i++) bN.grad[i] -= out.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a.numel());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < v.size(); i++) v[i] = av[i] * bv[i];
    return detail::make_op_node(a.shape(), std::move(v), {a, b}, [](TensorNode& out) {
        TensorNode& aN = *out.inputs[0];
        TensorNode& bN = *out.inputs[1];
        if (aN.requires_grad) {
            aN.ensure_grad();
            for (size_t i = 0; i < out.grad.size(); i++) aN.grad[i] += out.grad[i] * bN.value[i];
        }
        if (bN.requires_grad) {
            bN.ensure_grad();
            for (size_t i = 0; i < out.grad.size(); i++) bN.grad[i] += out.grad[i] * aN.value[i];
        }
    });
}

inline Tensor scale(const Tensor& x, double c) {
    std::vector<double> v(x.numel());
    const auto& xv = x.data();
    for (size_t i = 0; i < v.size(); i++) v[i] = c * xv[i];
    return detail::make_op_node(x.shape(), std::move(v), {x}, [c](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (!xN.requires_grad) return;
        xN.ensure_grad();
        for (size_t i = 0; i < out.grad.size(); i++) xN.grad[i] += c * out.grad[i];
    });
}

inline Tensor silu(const Tensor& x) {
    std::vector<double> v(x.numel());
    const auto& xv = x.data();
    for (size_t i = 0; i < v.size(); i++) {
        double s = 1.0 / (1.0 + std::exp(-xv[i]));
        v[i] = xv[i] * s;
    }
    return detail::make_op_node(x.shape(), std::move(v), {x}, [](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (!xN.requires_grad) return;
        xN.ensure_grad();
        for (size_t i = 0; i < out.grad.size(); i++) {
            double s = 1.0 / (1.0 + std::exp(-xN.value[i]));
            xN.grad[i] += out.grad[i] * s * (1.0 + xN.value[i] * (1.0 - s));
        }
    });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> v(x.numel());
    const auto& xv = x.data();
    for (size_t i = 0; i < v.size(); i++) v[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return detail::make_op_node(x.shape(), std::move(v), {x}, [](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (!xN.requires_grad) return;
        xN.ensure_grad();
        for (size_t i = 0; i < out.grad.size(); i++)
            if (xN.value[i] > 0.0) xN.grad[i] += out.grad[i];
    });
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
    detail::mm_acc(a.data().data(), b.data().data(), v.data(), m, k, n);
    return detail::make_op_node({m, n}, std::move(v), {a, b}, [m, k, n](TensorNode& out) {
        TensorNode& aN = *out.inputs[0];
        TensorNode& bN = *out.inputs[1];
        if (aN.requires_grad) {
            // dA = g * B^T
            aN.ensure_grad();
            std::vector<double> bT(static_cast<size_t>(k) * n);
            detail::transpose_into(bN.value.data(), k, n, bT.data());
            detail::mm_acc(out.grad.data(), bT.data(), aN.grad.data(), m, n, k);
        }
        if (bN.requires_grad) {
            // dB = A^T * g
            bN.ensure_grad();
            for (int i = 0; i < m; i++) {
                const double* ar = aN.value.data() + static_cast<size_t>(i) * k;
                const double* gr = out.grad.data() + static_cast<size_t>(i) * n;
                for (int p = 0; p < k; p++) {
                    double av = ar[p];
                    double* dbr = bN.grad.data() + static_cast<size_t>(p) * n;
                    for (int j = 0; j < n; j++) dbr[j] += av * gr[j];
                }
            }
        }
    });
}

// a[m,k] * b[n,k]^T -> [m,n]; the usual layout for y = x * W^T projections.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()) + "^T");
    int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<double> bT(static_cast<size_t>(k) * n);
    detail::transpose_into(b.data().data(), n, k, bT.data());
    std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
    detail::mm_acc(a.data().data(), bT.data(), v.data(), m, k, n);
    return detail::make_op_node({m, n}, std::move(v), {a, b}, [m, k, n](TensorNode& out) {
        TensorNode& aN = *out.inputs[0];
        TensorNode& bN = *out.inputs[1];
        if (aN.requires_grad) {
            // dA = g * B
            aN.ensure_grad();
            detail::mm_acc(out.grad.data(), bN.value.data(), aN.grad.data(), m, n, k);
        }
        if (bN.requires_grad) {
            // dB = g^T * A
            bN.ensure_grad();
            for (int i = 0; i < m; i++) {
                const double* gr = out.grad.data() + static_cast<size_t>(i) * n;
                const double* ar = aN.value.data() + static_cast<size_t>(i) * k;
                for (int j = 0; j < n; j++) {
                    double gv = gr[j];
                    double* dbr = bN.grad.data() + static_cast<size_t>(j) * k;
                    for (int p = 0; p < k; p++) dbr[p] += gv * ar[p];
                }
            }
        }
    });
}

inline Tensor transpose(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("transpose: expected 2-d tensor, got " + shape_str(x.shape()));
    int m = x.dim(0), n = x.dim(1);
    std::vector<double> v(x.numel());
    detail::transpose_into(x.data().data(), m, n, v.data());
    return detail::make_op_node({n, m}, std::move(v), {x}, [m, n](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (!xN.requires_grad) return;
        xN.ensure_grad();
        for (int i = 0; i < n; i++)
            for (int j = 0; j < m; j++)
                xN.grad[static_cast<size_t>(j) * n + i] += out.grad[static_cast<size_t>(i) * m + j];
    });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

// Row-wise softmax with max subtraction; rows sum to 1 within 1e-9.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("softmax_rows: expected 2-d tensor, got " + shape_str(x.shape()));
    int rows = x.dim(0), cols = x.dim(1);
    std::vector<double> v(x.numel());
    const auto& xv = x.data();
    for (int i = 0; i < rows; i++) {
        const double* xr = xv.data() + static_cast<size_t>(i) * cols;
        double* yr = v.data() + static_cast<size_t>(i) * cols;
        double mx = xr[0];
        for (int j = 1; j < cols; j++) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (int j = 0; j < cols; j++) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        double inv = 1.0 / s;
        for (int j = 0; j < cols; j++) yr[j] *= inv;
    }
    return detail::make_op_node({rows, cols}, std::move(v), {x}, [rows, cols](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (!xN.requires_grad) return;
        xN.ensure_grad();
        for (int i = 0; i < rows; i++) {
            const double* yr = out.value.data() + static_cast<size_t>(i) * cols;
            const double* gr = out.grad.data() + static_cast<size_t>(i) * cols;
            double dot = 0.0;
            for (int j = 0; j < cols; j++) dot += yr[j] * gr[j];
            double* dxr = xN.grad.data() + static_cast<size_t>(i) * cols;
            for (int j = 0; j < cols; j++) dxr[j] += yr[j] * (gr[j] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// convolution (fixed 3x3, stride 1, pad 1)
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& kernel) {
    if (x.ndim() != 3 || kernel.ndim() != 4 || kernel.dim(2) != 3 || kernel.dim(3) != 3)
        throw std::invalid_argument("conv2d: expected x[c,h,w], kernel[co,ci,3,3]; got " + shape_str(x.shape()) +
                                    ", " + shape_str(kernel.shape()));
    if (kernel.dim(1) != x.dim(0))
        throw std::invalid_argument("conv2d: channel mismatch, x has " + std::to_string(x.dim(0)) +
                                    " channels but kernel expects " + std::to_string(kernel.dim(1)));
    int ci = x.dim(0), h = x.dim(1), w = x.dim(2), co = kernel.dim(0);
    if (h < 1 || w < 1) throw std::invalid_argument("conv2d: spatial dims must be >= 1");
    std::vector<double> v(static_cast<size_t>(co) * h * w, 0.0);
    const double* xv = x.data().data();
    const double* kv = kernel.data().data();
    for (int oc = 0; oc < co; oc++) {
        double* yo = v.data() + static_cast<size_t>(oc) * h * w;
        for (int ic = 0; ic < ci; ic++) {
            const double* xi = xv + static_cast<size_t>(ic) * h * w;
            const double* kk = kv + (static_cast<size_t>(oc) * ci + ic) * 9;
            for (int dy = -1; dy <= 1; dy++) {
                int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int dx = -1; dx <= 1; dx++) {
                    double kw = kk[(dy + 1) * 3 + (dx + 1)];
                    int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int yy = y0; yy < y1; yy++) {
                        const double* xr = xi + static_cast<size_t>(yy + dy) * w + dx;
                        double* yr = yo + static_cast<size_t>(yy) * w;
                        for (int xx = x0; xx < x1; xx++) yr[xx] += kw * xr[xx];
                    }
                }
            }
        }
    }
    return detail::make_op_node({co, h, w}, std::move(v), {x, kernel}, [ci, h, w, co](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        TensorNode& kN = *out.inputs[1];
        const double* gv = out.grad.data();
        if (xN.requires_grad) {
            xN.ensure_grad();
            for (int oc = 0; oc < co; oc++) {
                const double* go = gv + static_cast<size_t>(oc) * h * w;
                for (int ic = 0; ic < ci; ic++) {
                    double* dxi = xN.grad.data() + static_cast<size_t>(ic) * h * w;
                    const double* kk = kN.value.data() + (static_cast<size_t>(oc) * ci + ic) * 9;
                    for (int dy = -1; dy <= 1; dy++) {
                        int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                        for (int dx = -1; dx <= 1; dx++) {
                            double kw = kk[(dy + 1) * 3 + (dx + 1)];
                            int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                            for (int yy = y0; yy < y1; yy++) {
                                double* dxr = dxi + static_cast<size_t>(yy + dy) * w + dx;
                                const double* gr = go + static_cast<size_t>(yy) * w;
                                for (int xx = x0; xx < x1; xx++) dxr[xx] += kw * gr[xx];
                            }
                        }
                    }
                }
            }
        }
        if (kN.requires_grad) {
            kN.ensure_grad();
            for (int oc = 0; oc < co; oc++) {
                const double* go = gv + static_cast<size_t>(oc) * h * w;
                for (int ic = 0; ic < ci; ic++) {
                    const double* xi = xN.value.data() + static_cast<size_t>(ic) * h * w;
                    double* dkk = kN.grad.data() + (static_cast<size_t>(oc) * ci + ic) * 9;
                    for (int dy = -1; dy <= 1; dy++) {
                        int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                        for (int dx = -1; dx <= 1; dx++) {
                            int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                            // four independent accumulators keep the reduction off the FP latency chain
                            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                            for (int yy = y0; yy < y1; yy++) {
                                const double* xr = xi + static_cast<size_t>(yy + dy) * w + dx;
                                const double* gr = go + static_cast<size_t>(yy) * w;
                                int xx = x0;
                                for (; xx + 4 <= x1; xx += 4) {
                                    a0 += xr[xx] * gr[xx];
                                    a1 += xr[xx + 1] * gr[xx + 1];
                                    a2 += xr[xx + 2] * gr[xx + 2];
                                    a3 += xr[xx + 3] * gr[xx + 3];
                                }
                                for (; xx < x1; xx++) a0 += xr[xx] * gr[xx];
                            }
                            dkk[(dy + 1) * 3 + (dx + 1)] += (a0 + a1) + (a2 + a3);
                        }
                    }
                }
            }
        }
    });
}

inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 3 || b.ndim() != 1 || b.dim(0) != x.dim(0))
        throw std::invalid_argument("add_channel_bias: got x " + shape_str(x.shape()) + ", b " + shape_str(b.shape()));
    int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<double> v(x.numel());
    const auto& xv = x.data();
    const auto& bv = b.data();
    for (int ch = 0; ch < c; ch++) {
        double add_v = bv[ch];
        const double* xr = xv.data() + static_cast<size_t>(ch) * hw;
        double* yr = v.data() + static_cast<size_t>(ch) * hw;
        for (int i = 0; i < hw; i++) yr[i] = xr[i] + add_v;
    }
    return detail::make_op_node(x.shape(), std::move(v), {x, b}, [c, hw](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        TensorNode& bN = *out.inputs[1];
        if (xN.requires_grad) detail::accumulate(xN, out.grad);
        if (bN.requires_grad) {
            bN.ensure_grad();
            for (int ch = 0; ch < c; ch++) {
                const double* gr = out.grad.data() + static_cast<size_t>(ch) * hw;
                double acc = 0.0;
                for (int i = 0; i < hw; i++) acc += gr[i];
                bN.grad[ch] += acc;
            }
        }
    });
}

inline Tensor add_row_bias(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || b.dim(0) != x.dim(1))
        throw std::invalid_argument("add_row_bias: got x " + shape_str(x.shape()) + ", b " + shape_str(b.shape()));
    int rows = x.dim(0), cols = x.dim(1);
    std::vector<double> v(x.numel());
    const auto& xv = x.data();
    const auto& bv = b.data();
    for (int i = 0; i < rows; i++)
        for (int j = 0; j < cols; j++) v[static_cast<size_t>(i) * cols + j] = xv[static_cast<size_t>(i) * cols + j] + bv[j];
    return detail::make_op_node(x.shape(), std::move(v), {x, b}, [rows, cols](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        TensorNode& bN = *out.inputs[1];
        if (xN.requires_grad) detail::accumulate(xN, out.grad);
        if (bN.requires_grad) {
            bN.ensure_grad();
            for (int i = 0; i < rows; i++) {
                const double* gr = out.grad.data() + static_cast<size_t>(i) * cols;
                for (int j = 0; j < cols; j++) bN.grad[j] += gr[j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

// GroupNorm over [c,h,w]; per-group mean/var over (c/groups, h, w), eps guards
// zero variance so constant input maps to beta exactly.
inline Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    if (x.ndim() != 3) throw std::invalid_argument("group_norm: expected [c,h,w], got " + shape_str(x.shape()));
    int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    if (groups <= 0 || c % groups != 0)
        throw std::invalid_argument("group_norm: channels " + std::to_string(c) + " not divisible by groups " +
                                    std::to_string(groups));
    if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c)
        throw std::invalid_argument("group_norm: gamma/beta must be [c]");
    int cs = c / groups;
    size_t gn = static_cast<size_t>(cs) * hw;
    std::vector<double> v(x.numel());
    std::vector<double> mean(groups), inv_std(groups);
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    for (int g = 0; g < groups; g++) {
        const double* xg = xv.data() + static_cast<size_t>(g) * gn;
        double mu = 0.0;
        for (size_t i = 0; i < gn; i++) mu += xg[i];
        mu /= static_cast<double>(gn);
        double var = 0.0;
        for (size_t i = 0; i < gn; i++) {
            double d = xg[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(gn);
        mean[g] = mu;
        inv_std[g] = 1.0 / std::sqrt(var + eps);
    }
    for (int ch = 0; ch < c; ch++) {
        int g = ch / cs;
        double mu = mean[g], is = inv_std[g], ga = gv[ch], be = bv[ch];
        const double* xr = xv.data() + static_cast<size_t>(ch) * hw;
        double* yr = v.data() + static_cast<size_t>(ch) * hw;
        for (int i = 0; i < hw; i++) yr[i] = ga * ((xr[i] - mu) * is) + be;
    }
    return detail::make_op_node(x.shape(), std::move(v), {x, gamma, beta},
                                [c, hw, groups, cs, gn, mean, inv_std](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        TensorNode& gaN = *out.inputs[1];
        TensorNode& beN = *out.inputs[2];
        std::vector<double> xhat(out.value.size());
        for (int ch = 0; ch < c; ch++) {
            int g = ch / cs;
            const double* xr = xN.value.data() + static_cast<size_t>(ch) * hw;
            double* hr = xhat.data() + static_cast<size_t>(ch) * hw;
            for (int i = 0; i < hw; i++) hr[i] = (xr[i] - mean[g]) * inv_std[g];
        }
        if (gaN.requires_grad) {
            gaN.ensure_grad();
            for (int ch = 0; ch < c; ch++) {
                const double* gr = out.grad.data() + static_cast<size_t>(ch) * hw;
                const double* hr = xhat.data() + static_cast<size_t>(ch) * hw;
                double acc = 0.0;
                for (int i = 0; i < hw; i++) acc += gr[i] * hr[i];
                gaN.grad[ch] += acc;
            }
        }
        if (beN.requires_grad) {
            beN.ensure_grad();
            for (int ch = 0; ch < c; ch++) {
                const double* gr = out.grad.data() + static_cast<size_t>(ch) * hw;
                double acc = 0.0;
                for (int i = 0; i < hw; i++) acc += gr[i];
                beN.grad[ch] += acc;
            }
        }
        if (xN.requires_grad) {
            xN.ensure_grad();
            for (int g = 0; g < groups; g++) {
                // dxhat = g * gamma; dx = inv_std * (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                double t1 = 0.0, t2 = 0.0;
                for (int cc = 0; cc < cs; cc++) {
                    int ch = g * cs + cc;
                    double ga = gaN.value[ch];
                    const double* gr = out.grad.data() + static_cast<size_t>(ch) * hw;
                    const double* hr = xhat.data() + static_cast<size_t>(ch) * hw;
                    for (int i = 0; i < hw; i++) {
                        double dxh = gr[i] * ga;
                        t1 += dxh;
                        t2 += dxh * hr[i];
                    }
                }
                double n_inv = 1.0 / static_cast<double>(gn);
                t1 *= n_inv;
                t2 *= n_inv;
                for (int cc = 0; cc < cs; cc++) {
                    int ch = g * cs + cc;
                    double ga = gaN.value[ch];
                    const double* gr = out.grad.data() + static_cast<size_t>(ch) * hw;
                    const double* hr = xhat.data() + static_cast<size_t>(ch) * hw;
                    double* dxr = xN.grad.data() + static_cast<size_t>(ch) * hw;
                    for (int i = 0; i < hw; i++) dxr[i] += inv_std[g] * (gr[i] * ga - t1 - hr[i] * t2);
                }
            }
        }
    });
}

// Per-row LayerNorm over [s,d] with affine gamma/beta of size [d].
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    if (x.ndim() != 2) throw std::invalid_argument("layer_norm_rows: expected [s,d], got " + shape_str(x.shape()));
    int s = x.dim(0), d = x.dim(1);
    if (gamma.dim(0) != d || beta.dim(0) != d) throw std::invalid_argument("layer_norm_rows: gamma/beta must be [d]");
    std::vector<double> v(x.numel());
    std::vector<double> mean(s), inv_std(s);
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    for (int i = 0; i < s; i++) {
        const double* xr = xv.data() + static_cast<size_t>(i) * d;
        double mu = 0.0;
        for (int j = 0; j < d; j++) mu += xr[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; j++) {
            double t = xr[j] - mu;
            var += t * t;
        }
        var /= d;
        mean[i] = mu;
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        double* yr = v.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; j++) yr[j] = gv[j] * ((xr[j] - mu) * inv_std[i]) + bv[j];
    }
    return detail::make_op_node(x.shape(), std::move(v), {x, gamma, beta}, [s, d, mean, inv_std](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        TensorNode& gaN = *out.inputs[1];
        TensorNode& beN = *out.inputs[2];
        if (gaN.requires_grad) gaN.ensure_grad();
        if (beN.requires_grad) beN.ensure_grad();
        if (xN.requires_grad) xN.ensure_grad();
        for (int i = 0; i < s; i++) {
            const double* xr = xN.value.data() + static_cast<size_t>(i) * d;
            const double* gr = out.grad.data() + static_cast<size_t>(i) * d;
            double t1 = 0.0, t2 = 0.0;
            for (int j = 0; j < d; j++) {
                double xh = (xr[j] - mean[i]) * inv_std[i];
                double dxh = gr[j] * gaN.value[j];
                t1 += dxh;
                t2 += dxh * xh;
                if (gaN.requires_grad) gaN.grad[j] += gr[j] * xh;
                if (beN.requires_grad) beN.grad[j] += gr[j];
            }
            if (xN.requires_grad) {
                t1 /= d;
                t2 /= d;
                double* dxr = xN.grad.data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; j++) {
                    double xh = (xr[j] - mean[i]) * inv_std[i];
                    dxr[j] += inv_std[i] * (gr[j] * gaN.value[j] - t1 - xh * t2);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// embeddings
// ---------------------------------------------------------------------------

// Rows of `table` selected by token id; rows whose id appears in `overrides`
// are taken from the supplied vector instead (how learned style embeddings
// enter the prompt without touching the table).
inline Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids,
                             const std::map<int, Tensor>& overrides = {}) {
    if (table.ndim() != 2) throw std::invalid_argument("embedding_rows: table must be [V,d]");
    int V = table.dim(0), d = table.dim(1);
    int L = static_cast<int>(ids.size());
    std::vector<double> v(static_cast<size_t>(L) * d);
    std::vector<Tensor> inputs = {table};
    // per position: -1 = from table, otherwise index into `inputs`
    std::vector<int> src(ids.size(), -1);
    std::map<int, int> ovr_slot;
    for (const auto& [id, t] : overrides) {
        if (t.ndim() != 1 || t.dim(0) != d)
            throw std::invalid_argument("embedding_rows: override must be [d], got " + shape_str(t.shape()));
        ovr_slot[id] = static_cast<int>(inputs.size());
        inputs.push_back(t);
    }
    for (int p = 0; p < L; p++) {
        int id = ids[p];
        if (id < 0 || id >= V)
            throw std::invalid_argument("embedding_rows: id " + std::to_string(id) + " out of range [0," +
                                        std::to_string(V) + ")");
        auto it = ovr_slot.find(id);
        const double* row;
        if (it != ovr_slot.end()) {
            src[p] = it->second;
            row = inputs[static_cast<size_t>(it->second)].data().data();
        } else {
            row = table.data().data() + static_cast<size_t>(id) * d;
        }
        std::copy(row, row + d, v.data() + static_cast<size_t>(p) * d);
    }
    return detail::make_op_node({L, d}, std::move(v), std::move(inputs), [ids, src, d](TensorNode& out) {
        for (size_t p = 0; p < ids.size(); p++) {
            const double* gr = out.grad.data() + p * d;
            if (src[p] < 0) {
                TensorNode& tab = *out.inputs[0];
                if (!tab.requires_grad) continue;
                tab.ensure_grad();
                double* dst = tab.grad.data() + static_cast<size_t>(ids[p]) * d;
                for (int j = 0; j < d; j++) dst[j] += gr[j];
            } else {
                TensorNode& ovr = *out.inputs[static_cast<size_t>(src[p])];
                if (!ovr.requires_grad) continue;
                ovr.ensure_grad();
                for (int j = 0; j < d; j++) ovr.grad[j] += gr[j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    return detail::make_op_node(std::move(shape), x.data(), {x}, [](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (xN.requires_grad) detail::accumulate(xN, out.grad);
    });
}

inline Tensor concat_ch(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
        throw std::invalid_argument("concat_ch: spatial mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    int ca = a.dim(0), cb = b.dim(0), h = a.dim(1), w = a.dim(2);
    std::vector<double> v;
    v.reserve(a.numel() + b.numel());
    v.insert(v.end(), a.data().begin(), a.data().end());
    v.insert(v.end(), b.data().begin(), b.data().end());
    return detail::make_op_node({ca + cb, h, w}, std::move(v), {a, b}, [ca, cb, h, w](TensorNode& out) {
        size_t na = static_cast<size_t>(ca) * h * w;
        size_t nb = static_cast<size_t>(cb) * h * w;
        TensorNode& aN = *out.inputs[0];
        TensorNode& bN = *out.inputs[1];
        if (aN.requires_grad) {
            aN.ensure_grad();
            for (size_t i = 0; i < na; i++) aN.grad[i] += out.grad[i];
        }
        if (bN.requires_grad) {
            bN.ensure_grad();
            for (size_t i = 0; i < nb; i++) bN.grad[i] += out.grad[na + i];
        }
    });
}

inline Tensor avg_pool2(const Tensor& x) {
    if (x.ndim() != 3 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
        throw std::invalid_argument("avg_pool2: expected [c,2h,2w], got " + shape_str(x.shape()));
    int c = x.dim(0), h = x.dim(1) / 2, w = x.dim(2) / 2;
    std::vector<double> v(static_cast<size_t>(c) * h * w);
    const auto& xv = x.data();
    for (int ch = 0; ch < c; ch++)
        for (int i = 0; i < h; i++)
            for (int j = 0; j < w; j++) {
                const double* p = xv.data() + (static_cast<size_t>(ch) * 2 * h + 2 * i) * (2 * w) + 2 * j;
                v[(static_cast<size_t>(ch) * h + i) * w + j] = 0.25 * (p[0] + p[1] + p[2 * w] + p[2 * w + 1]);
            }
    return detail::make_op_node({c, h, w}, std::move(v), {x}, [c, h, w](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (!xN.requires_grad) return;
        xN.ensure_grad();
        for (int ch = 0; ch < c; ch++)
            for (int i = 0; i < h; i++)
                for (int j = 0; j < w; j++) {
                    double g = 0.25 * out.grad[(static_cast<size_t>(ch) * h + i) * w + j];
                    double* p = xN.grad.data() + (static_cast<size_t>(ch) * 2 * h + 2 * i) * (2 * w) + 2 * j;
                    p[0] += g;
                    p[1] += g;
                    p[2 * w] += g;
                    p[2 * w + 1] += g;
                }
    });
}

inline Tensor upsample_nearest2(const Tensor& x) {
    if (x.ndim() != 3) throw std::invalid_argument("upsample_nearest2: expected [c,h,w]");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<double> v(static_cast<size_t>(c) * 4 * h * w);
    const auto& xv = x.data();
    for (int ch = 0; ch < c; ch++)
        for (int i = 0; i < h; i++)
            for (int j = 0; j < w; j++) {
                double val = xv[(static_cast<size_t>(ch) * h + i) * w + j];
                double* p = v.data() + (static_cast<size_t>(ch) * 2 * h + 2 * i) * (2 * w) + 2 * j;
                p[0] = val;
                p[1] = val;
                p[2 * w] = val;
                p[2 * w + 1] = val;
            }
    return detail::make_op_node({c, 2 * h, 2 * w}, std::move(v), {x}, [c, h, w](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (!xN.requires_grad) return;
        xN.ensure_grad();
        for (int ch = 0; ch < c; ch++)
            for (int i = 0; i < h; i++)
                for (int j = 0; j < w; j++) {
                    const double* p = out.grad.data() + (static_cast<size_t>(ch) * 2 * h + 2 * i) * (2 * w) + 2 * j;
                    xN.grad[(static_cast<size_t>(ch) * h + i) * w + j] += p[0] + p[1] + p[2 * w] + p[2 * w + 1];
                }
    });
}

// mean over rows of [s,d] -> [d]
inline Tensor rows_mean(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("rows_mean: expected [s,d]");
    int s = x.dim(0), d = x.dim(1);
    std::vector<double> v(static_cast<size_t>(d), 0.0);
    const auto& xv = x.data();
    for (int i = 0; i < s; i++)
        for (int j = 0; j < d; j++) v[static_cast<size_t>(j)] += xv[static_cast<size_t>(i) * d + j];
    for (auto& val : v) val /= s;
    return detail::make_op_node({d}, std::move(v), {x}, [s, d](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (!xN.requires_grad) return;
        xN.ensure_grad();
        for (int i = 0; i < s; i++)
            for (int j = 0; j < d; j++) xN.grad[static_cast<size_t>(i) * d + j] += out.grad[static_cast<size_t>(j)] / s;
    });
}

inline Tensor spatial_mean(const Tensor& x) {
    if (x.ndim() != 3) throw std::invalid_argument("spatial_mean: expected [c,h,w]");
    int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<double> v(static_cast<size_t>(c));
    const auto& xv = x.data();
    for (int ch = 0; ch < c; ch++) {
        double acc = 0.0;
        const double* xr = xv.data() + static_cast<size_t>(ch) * hw;
        for (int i = 0; i < hw; i++) acc += xr[i];
        v[static_cast<size_t>(ch)] = acc / hw;
    }
    return detail::make_op_node({c}, std::move(v), {x}, [c, hw](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (!xN.requires_grad) return;
        xN.ensure_grad();
        for (int ch = 0; ch < c; ch++) {
            double g = out.grad[static_cast<size_t>(ch)] / hw;
            double* dxr = xN.grad.data() + static_cast<size_t>(ch) * hw;
            for (int i = 0; i < hw; i++) dxr[i] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return detail::make_op_node({1}, {acc}, {x}, [](TensorNode& out) {
        TensorNode& xN = *out.inputs[0];
        if (!xN.requires_grad) return;
        xN.ensure_grad();
        double g = out.grad[0];
        for (auto& gv : xN.grad) gv += g;
    });
}

inline Tensor mse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse");
    const auto& av = a.data();
    const auto& bv = b.data();
    double acc = 0.0;
    for (size_t i = 0; i < av.size(); i++) {
        double d = av[i] - bv[i];
        acc += d * d;
    }
    double n = static_cast<double>(av.size());
    return detail::make_op_node({1}, {acc / n}, {a, b}, [n](TensorNode& out) {
        TensorNode& aN = *out.inputs[0];
        TensorNode& bN = *out.inputs[1];
        double g = out.grad[0] * 2.0 / n;
        if (aN.requires_grad) {
            aN.ensure_grad();
            for (size_t i = 0; i < aN.value.size(); i++) aN.grad[i] += g * (aN.value[i] - bN.value[i]);
        }
        if (bN.requires_grad) {
            bN.ensure_grad();
            for (size_t i = 0; i < bN.value.size(); i++) bN.grad[i] -= g * (aN.value[i] - bN.value[i]);
        }
    });
}

// -log softmax(logits)[label]; logits is a flat [C] vector.
inline Tensor cross_entropy_logits(const Tensor& logits, int label) {
    if (logits.ndim() != 1) throw std::invalid_argument("cross_entropy_logits: logits must be [C]");
    int C = logits.dim(0);
    if (label < 0 || label >= C) throw std::invalid_argument("cross_entropy_logits: label out of range");
    const auto& lv = logits.data();
    double mx = lv[0];
    for (int j = 1; j < C; j++) mx = std::max(mx, lv[j]);
    double s = 0.0;
    for (int j = 0; j < C; j++) s += std::exp(lv[j] - mx);
    double loss = -(lv[static_cast<size_t>(label)] - mx - std::log(s));
    return detail::make_op_node({1}, {loss}, {logits}, [C, label, mx, s](TensorNode& out) {
        TensorNode& lN = *out.inputs[0];
        if (!lN.requires_grad) return;
        lN.ensure_grad();
        double g = out.grad[0];
        for (int j = 0; j < C; j++) {
            double p = std::exp(lN.value[j] - mx) / s;
            lN.grad[j] += g * (p - (j == label ? 1.0 : 0.0));
        }
    });
}

inline std::vector<double> softmax_vec(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (size_t i = 0; i < logits.size(); i++) {
        p[i] = std::exp(logits[i] - mx);
        s += p[i];
    }
    for (auto& v : p) v /= s;
    return p;
}

// y = x * W^T + b for W[d_out,d_in], the projection layout used everywhere.
inline Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
    return add_row_bias(matmul_nt(x, W), b);
}

}  // namespace styleblend

#endif
