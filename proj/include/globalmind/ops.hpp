#pragma once
// The differentiable operator set: elementwise math, batched matmul,
// same-padded convolution, softmax, layer norm, axial reshuffles, concat, and
// the masked binary cross-entropy. Reductions accumulate in double so results
// are stable in float graphs; all loops are sequential with fixed order, so
// forward and backward are run-to-run deterministic.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "globalmind/gas.hpp"
#include "globalmind/graph.hpp"

namespace globalmind {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
}

}  // namespace detail

// ---- elementwise ------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    Graph<T>& g = *a.graph;
    Tensor<T> out = a.val();
    const Tensor<T>& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return g.append(std::move(out), {a.id, b.id},
                    [](Graph<T>& g, typename Graph<T>::Node& n) {
                        auto& ga = g.node(n.ins[0]).grad;
                        auto& gb = g.node(n.ins[1]).grad;
                        for (int64_t i = 0; i < n.grad.numel(); ++i) {
                            ga[i] += n.grad[i];
                            gb[i] += n.grad[i];
                        }
                    },
                    "add");
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    detail::require_same_shape(a.shape(), b.shape(), "sub");
    Graph<T>& g = *a.graph;
    Tensor<T> out = a.val();
    const Tensor<T>& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return g.append(std::move(out), {a.id, b.id},
                    [](Graph<T>& g, typename Graph<T>::Node& n) {
                        auto& ga = g.node(n.ins[0]).grad;
                        auto& gb = g.node(n.ins[1]).grad;
                        for (int64_t i = 0; i < n.grad.numel(); ++i) {
                            ga[i] += n.grad[i];
                            gb[i] -= n.grad[i];
                        }
                    },
                    "sub");
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    Graph<T>& g = *a.graph;
    Tensor<T> out = a.val();
    const Tensor<T>& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return g.append(std::move(out), {a.id, b.id},
                    [](Graph<T>& g, typename Graph<T>::Node& n) {
                        auto& na = g.node(n.ins[0]);
                        auto& nb = g.node(n.ins[1]);
                        for (int64_t i = 0; i < n.grad.numel(); ++i) {
                            na.grad[i] += n.grad[i] * nb.value[i];
                            nb.grad[i] += n.grad[i] * na.value[i];
                        }
                    },
                    "mul");
}

template <class T>
Var<T> scale(Var<T> a, double c) {
    Graph<T>& g = *a.graph;
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = static_cast<T>(v * c);
    return g.append(std::move(out), {a.id},
                    [c](Graph<T>& g, typename Graph<T>::Node& n) {
                        auto& ga = g.node(n.ins[0]).grad;
                        for (int64_t i = 0; i < n.grad.numel(); ++i)
                            ga[i] += static_cast<T>(n.grad[i] * c);
                    },
                    "scale");
}

// |x| with subgradient 0 at exactly 0.
template <class T>
Var<T> abs_val(Var<T> a) {
    Graph<T>& g = *a.graph;
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = std::abs(v);
    return g.append(std::move(out), {a.id},
                    [](Graph<T>& g, typename Graph<T>::Node& n) {
                        auto& na = g.node(n.ins[0]);
                        for (int64_t i = 0; i < n.grad.numel(); ++i) {
                            const T x = na.value[i];
                            const T s = (x > T(0)) ? T(1) : (x < T(0) ? T(-1) : T(0));
                            na.grad[i] += n.grad[i] * s;
                        }
                    },
                    "abs");
}

template <class T>
Var<T> relu(Var<T> a) {
    Graph<T>& g = *a.graph;
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return g.append(std::move(out), {a.id},
                    [](Graph<T>& g, typename Graph<T>::Node& n) {
                        auto& na = g.node(n.ins[0]);
                        for (int64_t i = 0; i < n.grad.numel(); ++i)
                            if (na.value[i] > T(0)) na.grad[i] += n.grad[i];
                    },
                    "relu");
}

// Exact erf-based GELU.
template <class T>
Var<T> gelu(Var<T> a) {
    constexpr double kInvSqrt2 = 0.7071067811865476;
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    Graph<T>& g = *a.graph;
    Tensor<T> out = a.val();
    for (auto& v : out.data) {
        const double x = static_cast<double>(v);
        v = static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
    }
    return g.append(std::move(out), {a.id},
                    [](Graph<T>& g, typename Graph<T>::Node& n) {
                        auto& na = g.node(n.ins[0]);
                        for (int64_t i = 0; i < n.grad.numel(); ++i) {
                            const double x = static_cast<double>(na.value[i]);
                            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                            na.grad[i] += static_cast<T>(static_cast<double>(n.grad[i]) *
                                                         (cdf + x * pdf));
                        }
                    },
                    "gelu");
}

// ---- reductions -------------------------------------------------------------

template <class T>
Var<T> sum_all(Var<T> a) {
    Graph<T>& g = *a.graph;
    double acc = 0.0;
    for (T v : a.val().data) acc += static_cast<double>(v);
    return g.append(Tensor<T>::scalar(static_cast<T>(acc)), {a.id},
                    [](Graph<T>& g, typename Graph<T>::Node& n) {
                        auto& ga = g.node(n.ins[0]).grad;
                        const T gy = n.grad[0];
                        for (auto& v : ga.data) v += gy;
                    },
                    "sum");
}

// ---- matmul and transpose ---------------------------------------------------

// Batched matrix product. Leading batch dims must match exactly, or one
// operand may be rank-2 and is then shared across the other's batch.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2)
        throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(as) + " x " +
                         shape_str(bs));
    const int m = as[as.size() - 2], k = as[as.size() - 1];
    const int kb = bs[bs.size() - 2], n = bs[bs.size() - 1];
    Shape abatch(as.begin(), as.end() - 2), bbatch(bs.begin(), bs.end() - 2);
    if (k != kb || (!abatch.empty() && !bbatch.empty() && abatch != bbatch))
        throw ShapeError("matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
    const Shape& batch = abatch.empty() ? bbatch : abatch;
    const int64_t nb = shape_numel(batch);
    const bool a_shared = abatch.empty() && !bbatch.empty();
    const bool b_shared = bbatch.empty() && !abatch.empty();

    Shape oshape = batch;
    oshape.push_back(m);
    oshape.push_back(n);
    Tensor<T> out(oshape);
    const T* ad = a.val().data.data();
    const T* bd = b.val().data.data();
    T* od = out.data.data();
    for (int64_t t = 0; t < nb; ++t) {
        const T* A = ad + (a_shared ? 0 : t * static_cast<int64_t>(m) * k);
        const T* B = bd + (b_shared ? 0 : t * static_cast<int64_t>(k) * n);
        T* C = od + t * static_cast<int64_t>(m) * n;
        for (int i = 0; i < m; ++i) {
            T* crow = C + static_cast<int64_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const T av = A[static_cast<int64_t>(i) * k + kk];
                const T* brow = B + static_cast<int64_t>(kk) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }

    Graph<T>& g = *a.graph;
    return g.append(
        std::move(out), {a.id, b.id},
        [m, k, n, nb, a_shared, b_shared](Graph<T>& g, typename Graph<T>::Node& nd) {
            auto& na = g.node(nd.ins[0]);
            auto& nb2 = g.node(nd.ins[1]);
            const T* ad = na.value.data.data();
            const T* bd = nb2.value.data.data();
            T* dad = na.grad.data.data();
            T* dbd = nb2.grad.data.data();
            const T* gy = nd.grad.data.data();
            for (int64_t t = 0; t < nb; ++t) {
                const T* A = ad + (a_shared ? 0 : t * static_cast<int64_t>(m) * k);
                const T* B = bd + (b_shared ? 0 : t * static_cast<int64_t>(k) * n);
                T* dA = dad + (a_shared ? 0 : t * static_cast<int64_t>(m) * k);
                T* dB = dbd + (b_shared ? 0 : t * static_cast<int64_t>(k) * n);
                const T* G = gy + t * static_cast<int64_t>(m) * n;
                for (int i = 0; i < m; ++i) {
                    const T* grow = G + static_cast<int64_t>(i) * n;
                    // dA[i,kk] += sum_j G[i,j] * B[kk,j]
                    for (int kk = 0; kk < k; ++kk) {
                        const T* brow = B + static_cast<int64_t>(kk) * n;
                        T acc = T(0);
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        dA[static_cast<int64_t>(i) * k + kk] += acc;
                    }
                    // dB[kk,j] += A[i,kk] * G[i,j]
                    for (int kk = 0; kk < k; ++kk) {
                        const T av = A[static_cast<int64_t>(i) * k + kk];
                        T* dbrow = dB + static_cast<int64_t>(kk) * n;
                        for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                    }
                }
            }
        },
        "matmul");
}

template <class T>
Var<T> transpose_last2(Var<T> a) {
    const Shape& as = a.shape();
    if (as.size() < 2)
        throw ShapeError("transpose_last2 needs rank >= 2, got " + shape_str(as));
    const int m = as[as.size() - 2], n = as[as.size() - 1];
    Shape oshape = as;
    std::swap(oshape[oshape.size() - 2], oshape[oshape.size() - 1]);
    const int64_t nb = shape_numel(Shape(as.begin(), as.end() - 2));
    Tensor<T> out(oshape);
    const T* src = a.val().data.data();
    T* dst = out.data.data();
    for (int64_t t = 0; t < nb; ++t, src += static_cast<int64_t>(m) * n, dst += static_cast<int64_t>(m) * n)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) dst[static_cast<int64_t>(j) * m + i] = src[static_cast<int64_t>(i) * n + j];
    Graph<T>& g = *a.graph;
    return g.append(std::move(out), {a.id},
                    [m, n, nb](Graph<T>& g, typename Graph<T>::Node& nd) {
                        T* da = g.node(nd.ins[0]).grad.data.data();
                        const T* gy = nd.grad.data.data();
                        for (int64_t t = 0; t < nb; ++t, da += static_cast<int64_t>(m) * n,
                                     gy += static_cast<int64_t>(m) * n)
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < n; ++j)
                                    da[static_cast<int64_t>(i) * n + j] +=
                                        gy[static_cast<int64_t>(j) * m + i];
                    },
                    "transpose");
}

// ---- convolution ------------------------------------------------------------

// Same-padded 2-d convolution: x[H,W,Cin] * w[k,k,Cin,Cout] + b[Cout].
template <class T>
Var<T> conv2d_same(Var<T> x, Var<T> w, Var<T> b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 3 || ws.size() != 4)
        throw ConfigError("conv2d_same expects x[H,W,Cin], w[k,k,Cin,Cout]; got x=" +
                          shape_str(xs) + " w=" + shape_str(ws));
    const int H = xs[0], W = xs[1], cin = xs[2];
    const int k = ws[0], cout = ws[3];
    if (ws[1] != k || k % 2 == 0)
        throw ConfigError("conv2d_same kernel must be square and odd, got " + shape_str(ws));
    if (ws[2] != cin)
        throw ConfigError("conv2d_same channel mismatch: input has " + std::to_string(cin) +
                          " channels, kernel expects " + std::to_string(ws[2]));
    if (b.shape() != Shape{cout})
        throw ConfigError("conv2d_same bias must be [Cout]=" + std::to_string(cout) + ", got " +
                          shape_str(b.shape()));
    const int pad = (k - 1) / 2;

    Tensor<T> out({H, W, cout});
    {
        const T* xd = x.val().data.data();
        const T* wd = w.val().data.data();
        const T* bd = b.val().data.data();
        T* od = out.data.data();
        for (int h = 0; h < H; ++h)
            for (int c = 0; c < W; ++c) {
                T* orow = od + (static_cast<int64_t>(h) * W + c) * cout;
                for (int co = 0; co < cout; ++co) orow[co] = bd[co];
                for (int kh = 0; kh < k; ++kh) {
                    const int hy = h + kh - pad;
                    if (hy < 0 || hy >= H) continue;
                    for (int kw = 0; kw < k; ++kw) {
                        const int cx = c + kw - pad;
                        if (cx < 0 || cx >= W) continue;
                        const T* xrow = xd + (static_cast<int64_t>(hy) * W + cx) * cin;
                        const T* wslab = wd + (static_cast<int64_t>(kh) * k + kw) * cin * cout;
                        for (int ci = 0; ci < cin; ++ci) {
                            const T xv = xrow[ci];
                            const T* wrow = wslab + static_cast<int64_t>(ci) * cout;
                            for (int co = 0; co < cout; ++co) orow[co] += xv * wrow[co];
                        }
                    }
                }
            }
    }

    Graph<T>& g = *x.graph;
    return g.append(
        std::move(out), {x.id, w.id, b.id},
        [H, W, cin, k, cout, pad](Graph<T>& g, typename Graph<T>::Node& nd) {
            auto& nx = g.node(nd.ins[0]);
            auto& nw = g.node(nd.ins[1]);
            auto& nbias = g.node(nd.ins[2]);
            const T* xd = nx.value.data.data();
            const T* wd = nw.value.data.data();
            T* dx = nx.grad.data.data();
            T* dw = nw.grad.data.data();
            T* db = nbias.grad.data.data();
            const T* gy = nd.grad.data.data();
            for (int h = 0; h < H; ++h)
                for (int c = 0; c < W; ++c) {
                    const T* grow = gy + (static_cast<int64_t>(h) * W + c) * cout;
                    for (int co = 0; co < cout; ++co) db[co] += grow[co];
                    for (int kh = 0; kh < k; ++kh) {
                        const int hy = h + kh - pad;
                        if (hy < 0 || hy >= H) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            const int cx = c + kw - pad;
                            if (cx < 0 || cx >= W) continue;
                            const int64_t xoff = (static_cast<int64_t>(hy) * W + cx) * cin;
                            const int64_t woff = (static_cast<int64_t>(kh) * k + kw) * cin * cout;
                            for (int ci = 0; ci < cin; ++ci) {
                                const T xv = xd[xoff + ci];
                                const T* wrow = wd + woff + static_cast<int64_t>(ci) * cout;
                                T* dwrow = dw + woff + static_cast<int64_t>(ci) * cout;
                                T acc = T(0);
                                for (int co = 0; co < cout; ++co) {
                                    dwrow[co] += xv * grow[co];
                                    acc += wrow[co] * grow[co];
                                }
                                dx[xoff + ci] += acc;
                            }
                        }
                    }
                }
        },
        "conv2d_same");
}

template <class T>
Var<T> conv2d_same(Var<T> x, Parameter<T>& w, Parameter<T>& b) {
    Graph<T>& g = *x.graph;
    return conv2d_same(x, g.param(w), g.param(b));
}

// ---- softmax ----------------------------------------------------------------

template <class T>
Var<T> softmax_lastdim(Var<T> a) {
    const Shape& as = a.shape();
    if (as.empty() || as.back() < 1)
        throw ShapeError("softmax_lastdim needs a non-empty last dim, got " + shape_str(as));
    const int n = as.back();
    const int64_t rows = a.val().numel() / n;
    Tensor<T> out(as);
    const T* src = a.val().data.data();
    T* dst = out.data.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* in = src + r * n;
        T* o = dst + r * n;
        T mx = in[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            const double e = std::exp(static_cast<double>(in[j] - mx));
            o[j] = static_cast<T>(e);
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int j = 0; j < n; ++j) o[j] = static_cast<T>(o[j] * inv);
    }
    Graph<T>& g = *a.graph;
    return g.append(std::move(out), {a.id},
                    [n, rows](Graph<T>& g, typename Graph<T>::Node& nd) {
                        T* da = g.node(nd.ins[0]).grad.data.data();
                        const T* y = nd.value.data.data();
                        const T* gy = nd.grad.data.data();
                        for (int64_t r = 0; r < rows; ++r) {
                            const T* yr = y + r * n;
                            const T* gr = gy + r * n;
                            T* dr = da + r * n;
                            double dot = 0.0;
                            for (int j = 0; j < n; ++j)
                                dot += static_cast<double>(gr[j]) * yr[j];
                            for (int j = 0; j < n; ++j)
                                dr[j] += static_cast<T>((static_cast<double>(gr[j]) - dot) * yr[j]);
                        }
                    },
                    "softmax");
}

// ---- layer norm -------------------------------------------------------------

// Normalizes over the last (channel) dim with population statistics, then
// applies the gamma/beta affine.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5) {
    const Shape& xs = x.shape();
    if (xs.empty()) throw ShapeError("layer_norm needs rank >= 1 input");
    const int C = xs.back();
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw ShapeError("layer_norm affine must be [C]=" + std::to_string(C) + ", got gamma=" +
                         shape_str(gamma.shape()) + " beta=" + shape_str(beta.shape()));
    const int64_t rows = x.val().numel() / C;

    Tensor<T> out(xs);
    std::vector<double> inv_std(static_cast<size_t>(rows));
    std::vector<double> means(static_cast<size_t>(rows));
    {
        const T* xd = x.val().data.data();
        const T* gm = gamma.val().data.data();
        const T* bt = beta.val().data.data();
        T* od = out.data.data();
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = xd + r * C;
            double mean = 0.0;
            for (int c = 0; c < C; ++c) mean += static_cast<double>(xr[c]);
            mean /= C;
            double var = 0.0;
            for (int c = 0; c < C; ++c) {
                const double d = static_cast<double>(xr[c]) - mean;
                var += d * d;
            }
            var /= C;
            const double inv = 1.0 / std::sqrt(var + eps);
            means[static_cast<size_t>(r)] = mean;
            inv_std[static_cast<size_t>(r)] = inv;
            T* orow = od + r * C;
            for (int c = 0; c < C; ++c)
                orow[c] = static_cast<T>((static_cast<double>(xr[c]) - mean) * inv *
                                             static_cast<double>(gm[c]) +
                                         static_cast<double>(bt[c]));
        }
    }

    Graph<T>& g = *x.graph;
    return g.append(
        std::move(out), {x.id, gamma.id, beta.id},
        [C, rows, means = std::move(means), inv_std = std::move(inv_std)](
            Graph<T>& g, typename Graph<T>::Node& nd) {
            auto& nx = g.node(nd.ins[0]);
            auto& ng = g.node(nd.ins[1]);
            auto& nbt = g.node(nd.ins[2]);
            const T* xd = nx.value.data.data();
            const T* gm = ng.value.data.data();
            T* dx = nx.grad.data.data();
            T* dgm = ng.grad.data.data();
            T* dbt = nbt.grad.data.data();
            const T* gy = nd.grad.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* xr = xd + r * C;
                const T* gr = gy + r * C;
                T* dxr = dx + r * C;
                const double mean = means[static_cast<size_t>(r)];
                const double inv = inv_std[static_cast<size_t>(r)];
                double m1 = 0.0, m2 = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double xhat = (static_cast<double>(xr[c]) - mean) * inv;
                    const double u = static_cast<double>(gr[c]) * gm[c];
                    dgm[c] += static_cast<T>(static_cast<double>(gr[c]) * xhat);
                    dbt[c] += gr[c];
                    m1 += u;
                    m2 += u * xhat;
                }
                m1 /= C;
                m2 /= C;
                for (int c = 0; c < C; ++c) {
                    const double xhat = (static_cast<double>(xr[c]) - mean) * inv;
                    const double u = static_cast<double>(gr[c]) * gm[c];
                    dxr[c] += static_cast<T>((u - m1 - xhat * m2) * inv);
                }
            }
        },
        "layer_norm");
}

template <class T>
Var<T> layer_norm(Var<T> x, Parameter<T>& gamma, Parameter<T>& beta, double eps = 1e-5) {
    Graph<T>& g = *x.graph;
    return layer_norm(x, g.param(gamma), g.param(beta), eps);
}

// ---- shape ops --------------------------------------------------------------

template <class T>
Var<T> reshape(Var<T> a, Shape s) {
    Graph<T>& g = *a.graph;
    Tensor<T> out = a.val().reshaped(std::move(s));
    return g.append(std::move(out), {a.id},
                    [](Graph<T>& g, typename Graph<T>::Node& nd) {
                        auto& ga = g.node(nd.ins[0]).grad;
                        for (int64_t i = 0; i < nd.grad.numel(); ++i) ga[i] += nd.grad[i];
                    },
                    "reshape");
}

template <class T>
Var<T> concat_lastdim(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw UsageError("concat_lastdim needs at least one input");
    Graph<T>& g = *parts[0].graph;
    const Shape& s0 = parts[0].shape();
    Shape oshape = s0;
    int total = 0;
    std::vector<int> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size() ||
            !std::equal(s.begin(), s.end() - 1, s0.begin(), s0.end() - 1))
            throw ShapeError("concat_lastdim: incompatible shapes " + shape_str(s0) + " vs " +
                             shape_str(s));
        widths.push_back(s.back());
        total += s.back();
    }
    oshape.back() = total;
    const int64_t rows = shape_numel(Shape(s0.begin(), s0.end() - 1));
    Tensor<T> out(oshape);
    {
        T* od = out.data.data();
        for (int64_t r = 0; r < rows; ++r) {
            T* orow = od + r * total;
            int off = 0;
            for (size_t p = 0; p < parts.size(); ++p) {
                const T* src = parts[p].val().data.data() + r * widths[p];
                std::memcpy(orow + off, src, sizeof(T) * static_cast<size_t>(widths[p]));
                off += widths[p];
            }
        }
    }
    std::vector<int> ids;
    for (const auto& p : parts) ids.push_back(p.id);
    return g.append(std::move(out), std::move(ids),
                    [rows, total, widths](Graph<T>& g, typename Graph<T>::Node& nd) {
                        const T* gy = nd.grad.data.data();
                        for (int64_t r = 0; r < rows; ++r) {
                            const T* grow = gy + r * total;
                            int off = 0;
                            for (size_t p = 0; p < nd.ins.size(); ++p) {
                                T* dst = g.node(nd.ins[p]).grad.data.data() + r * widths[p];
                                for (int j = 0; j < widths[p]; ++j) dst[j] += grow[off + j];
                                off += widths[p];
                            }
                        }
                    },
                    "concat");
}

// ---- axial reshuffles -------------------------------------------------------

// [H,W,C] -> [heads=C, L, d_k]: the head-batched arrangement attention wants.
template <class T>
Var<T> to_axial_heads(Var<T> x, AxialLayout layout) {
    const Shape& xs = x.shape();
    if (xs.size() != 3)
        throw ShapeError("to_axial_heads expects [H,W,C], got " + shape_str(xs));
    const int H = xs[0], W = xs[1], C = xs[2];
    const AxialDims d = axial_dims(layout, H, W, C);
    Tensor<T> out({d.heads, d.seq_len, d.head_dim});
    const T* src = x.val().data.data();
    T* dst = out.data.data();
    int64_t o = 0;
    for (int i = 0; i < d.heads; ++i)
        for (int l = 0; l < d.seq_len; ++l)
            for (int j = 0; j < d.head_dim; ++j)
                dst[o++] = src[axial_source_index(layout, H, W, C, l, i, j)];
    Graph<T>& g = *x.graph;
    return g.append(std::move(out), {x.id},
                    [layout, H, W, C, d](Graph<T>& g, typename Graph<T>::Node& nd) {
                        T* dx = g.node(nd.ins[0]).grad.data.data();
                        const T* gy = nd.grad.data.data();
                        int64_t o = 0;
                        for (int i = 0; i < d.heads; ++i)
                            for (int l = 0; l < d.seq_len; ++l)
                                for (int j = 0; j < d.head_dim; ++j)
                                    dx[axial_source_index(layout, H, W, C, l, i, j)] += gy[o++];
                    },
                    "to_axial_heads");
}

// Inverse of to_axial_heads: [C, L, d_k] -> [H,W,C].
template <class T>
Var<T> from_axial_heads(Var<T> s, AxialLayout layout, int H, int W) {
    const Shape& ss = s.shape();
    if (ss.size() != 3)
        throw ShapeError("from_axial_heads expects [heads,L,d_k], got " + shape_str(ss));
    const int C = ss[0];
    const AxialDims d = axial_dims(layout, H, W, C);
    if (ss != Shape{d.heads, d.seq_len, d.head_dim})
        throw ShapeError("from_axial_heads: " + shape_str(ss) + " does not match layout dims for " +
                         std::to_string(H) + "x" + std::to_string(W) + "x" + std::to_string(C));
    Tensor<T> out({H, W, C});
    const T* src = s.val().data.data();
    T* dst = out.data.data();
    int64_t o = 0;
    for (int i = 0; i < d.heads; ++i)
        for (int l = 0; l < d.seq_len; ++l)
            for (int j = 0; j < d.head_dim; ++j)
                dst[axial_source_index(layout, H, W, C, l, i, j)] = src[o++];
    Graph<T>& g = *s.graph;
    return g.append(std::move(out), {s.id},
                    [layout, H, W, C, d](Graph<T>& g, typename Graph<T>::Node& nd) {
                        T* ds = g.node(nd.ins[0]).grad.data.data();
                        const T* gy = nd.grad.data.data();
                        int64_t o = 0;
                        for (int i = 0; i < d.heads; ++i)
                            for (int l = 0; l < d.seq_len; ++l)
                                for (int j = 0; j < d.head_dim; ++j)
                                    ds[o++] += gy[axial_source_index(layout, H, W, C, l, i, j)];
                    },
                    "from_axial_heads");
}

// ---- masked binary cross-entropy ---------------------------------------------

// Mean over selected pixels of -[y log p + (1-y) log(1-p)] where p is the
// changed-class probability (channel 1 of a [H,W,2] map), clamped to
// [eps, 1-eps] before the log. Clamped coordinates get zero gradient.
template <class T>
Var<T> masked_bce(Var<T> probs, std::vector<uint8_t> selected, std::vector<uint8_t> labels,
                  double eps = 1e-7) {
    const Shape& ps = probs.shape();
    if (ps.size() != 3 || ps[2] != 2)
        throw ShapeError("masked_bce expects probabilities [H,W,2], got " + shape_str(ps));
    const int64_t npix = static_cast<int64_t>(ps[0]) * ps[1];
    if (static_cast<int64_t>(selected.size()) != npix ||
        static_cast<int64_t>(labels.size()) != npix)
        throw ShapeError("masked_bce mask/labels must have H*W entries");
    int64_t count = 0;
    for (uint8_t s : selected) count += s ? 1 : 0;
    if (count == 0) throw UsageError("masked_bce: empty sample mask");

    const T* pd = probs.val().data.data();
    double acc = 0.0;
    for (int64_t i = 0; i < npix; ++i) {
        if (!selected[static_cast<size_t>(i)]) continue;
        double p = static_cast<double>(pd[i * 2 + 1]);
        p = std::min(std::max(p, eps), 1.0 - eps);
        const bool y = labels[static_cast<size_t>(i)] != 0;
        acc -= y ? std::log(p) : std::log(1.0 - p);
    }
    const double loss = acc / static_cast<double>(count);

    Graph<T>& g = *probs.graph;
    return g.append(
        Tensor<T>::scalar(static_cast<T>(loss)), {probs.id},
        [npix, count, eps, selected = std::move(selected), labels = std::move(labels)](
            Graph<T>& g, typename Graph<T>::Node& nd) {
            auto& np = g.node(nd.ins[0]);
            const T* pd = np.value.data.data();
            T* dp = np.grad.data.data();
            const double gy = static_cast<double>(nd.grad[0]);
            const double invn = 1.0 / static_cast<double>(count);
            for (int64_t i = 0; i < npix; ++i) {
                if (!selected[static_cast<size_t>(i)]) continue;
                const double p = static_cast<double>(pd[i * 2 + 1]);
                if (p < eps || p > 1.0 - eps) continue;  // clamped: flat
                const bool y = labels[static_cast<size_t>(i)] != 0;
                const double d = y ? -1.0 / p : 1.0 / (1.0 - p);
                dp[i * 2 + 1] += static_cast<T>(gy * d * invn);
            }
        },
        "masked_bce");
}

}  // namespace globalmind
