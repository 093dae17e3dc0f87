#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "axialfuse/common.hpp"

namespace axialfuse {

// Dense n-d tensor with reverse-mode autodiff. A TensorT is a cheap handle
// to a shared immutable node; ops build an implicit DAG of parent handles
// that TapeT walks in reverse topological order.
//
// Every kernel uses one fixed sequential accumulation order, so two forward
// passes over identical inputs are bit-identical.
template <typename T>
struct TensorT {
    struct Impl {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // empty until backward touches this node
        bool requires_grad = false;
        const char* op = "leaf";
        std::vector<TensorT> parents;
        std::function<void(Impl&)> backward_fn;

        size_t numel() const { return data.size(); }
    };

    std::shared_ptr<Impl> impl;

    TensorT() = default;

    static TensorT leaf(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (numel_of(shape) != values.size())
            throw DimensionError("leaf: shape " + shape_str(shape) + " holds " +
                                 std::to_string(numel_of(shape)) + " elements, got " +
                                 std::to_string(values.size()));
        for (T v : values)
            if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite value in leaf tensor");
        TensorT t;
        t.impl = std::make_shared<Impl>();
        t.impl->shape = std::move(shape);
        t.impl->data = std::move(values);
        t.impl->requires_grad = requires_grad;
        return t;
    }

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        size_t n = numel_of(shape);
        return leaf(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static TensorT full(Shape shape, T v, bool requires_grad = false) {
        size_t n = numel_of(shape);
        return leaf(std::move(shape), std::vector<T>(n, v), requires_grad);
    }

    static TensorT scalar(T v) { return leaf({1}, {v}); }

    const Shape& shape() const { return impl->shape; }
    int rank() const { return static_cast<int>(impl->shape.size()); }
    size_t numel() const { return impl->data.size(); }
    bool requires_grad() const { return impl->requires_grad; }
    const std::vector<T>& data() const { return impl->data; }
    std::vector<T>& mutable_data() { return impl->data; }

    // Gradient accumulated by the last backward sweep; empty vector if this
    // node never received one.
    const std::vector<T>& grad() const { return impl->grad; }
    void zero_grad() { std::fill(impl->grad.begin(), impl->grad.end(), T(0)); }

    T at(const std::vector<int>& idx) const {
        size_t off = 0, stride = 1;
        for (int d = rank() - 1; d >= 0; --d) {
            off += static_cast<size_t>(idx[static_cast<size_t>(d)]) * stride;
            stride *= static_cast<size_t>(impl->shape[static_cast<size_t>(d)]);
        }
        return impl->data[off];
    }
};

using Tensor = TensorT<float>;

namespace detail {

inline std::vector<size_t> contiguous_strides(const Shape& s) {
    std::vector<size_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * static_cast<size_t>(s[static_cast<size_t>(i) + 1]);
    return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                 " are not broadcast-compatible");
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` aligned against (already broadcast) `out`; broadcast axes
// get stride 0 so one offset map serves forward and grad scatter alike.
inline std::vector<size_t> bcast_strides(const Shape& in, const Shape& out) {
    auto ist = contiguous_strides(in);
    std::vector<size_t> st(out.size(), 0);
    size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i)
        st[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : ist[i];
    return st;
}

inline size_t map_offset(size_t lin, const Shape& out, const std::vector<size_t>& out_st,
                         const std::vector<size_t>& in_st) {
    size_t off = 0;
    for (size_t d = 0; d < out.size(); ++d) {
        size_t idx = (lin / out_st[d]) % static_cast<size_t>(out[d]);
        off += idx * in_st[d];
    }
    return off;
}

template <typename T>
inline void check_finite(const std::vector<T>& v, const char* op) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
}

template <typename T>
inline void ensure_grad(typename TensorT<T>::Impl& impl) {
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T(0));
}

template <typename T>
inline TensorT<T> make_op(Shape shape, std::vector<T> values, const char* op,
                          std::vector<TensorT<T>> parents,
                          std::function<void(typename TensorT<T>::Impl&)> backward_fn) {
    check_finite(values, op);
    TensorT<T> t;
    t.impl = std::make_shared<typename TensorT<T>::Impl>();
    t.impl->shape = std::move(shape);
    t.impl->data = std::move(values);
    t.impl->op = op;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        t.impl->requires_grad = true;
        t.impl->parents = std::move(parents);
        t.impl->backward_fn = std::move(backward_fn);
    }
    return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops (broadcasting binary, pointwise unary)
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
TensorT<T> ewise_binary(const TensorT<T>& a, const TensorT<T>& b, const char* op, Fwd fwd, Bwd bwd) {
    Shape out_shape = detail::broadcast_shape(a.shape(), b.shape(), op);
    auto out_st = detail::contiguous_strides(out_shape);
    auto a_st = detail::bcast_strides(a.shape(), out_shape);
    auto b_st = detail::bcast_strides(b.shape(), out_shape);
    size_t n = numel_of(out_shape);
    std::vector<T> vals(n);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < n; ++i) {
        size_t ia = detail::map_offset(i, out_shape, out_st, a_st);
        size_t ib = detail::map_offset(i, out_shape, out_st, b_st);
        vals[i] = fwd(ad[ia], bd[ib]);
    }
    auto backward = [out_shape, out_st, a_st, b_st, n, bwd](typename TensorT<T>::Impl& o) {
        auto& pa = *o.parents[0].impl;
        auto& pb = *o.parents[1].impl;
        if (pa.requires_grad) detail::ensure_grad<T>(pa);
        if (pb.requires_grad) detail::ensure_grad<T>(pb);
        for (size_t i = 0; i < n; ++i) {
            size_t ia = detail::map_offset(i, out_shape, out_st, a_st);
            size_t ib = detail::map_offset(i, out_shape, out_st, b_st);
            T ga, gb;
            bwd(pa.data[ia], pb.data[ib], o.grad[i], ga, gb);
            if (pa.requires_grad) pa.grad[ia] += ga;
            if (pb.requires_grad) pb.grad[ib] += gb;
        }
    };
    return detail::make_op<T>(std::move(out_shape), std::move(vals), op, {a, b}, backward);
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return ewise_binary<T>(a, b, "add", [](T x, T y) { return x + y; },
                           [](T, T, T g, T& ga, T& gb) { ga = g; gb = g; });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return ewise_binary<T>(a, b, "sub", [](T x, T y) { return x - y; },
                           [](T, T, T g, T& ga, T& gb) { ga = g; gb = -g; });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return ewise_binary<T>(a, b, "mul", [](T x, T y) { return x * y; },
                           [](T x, T y, T g, T& ga, T& gb) { ga = g * y; gb = g * x; });
}

template <typename T, typename Fwd, typename Bwd>
TensorT<T> ewise_unary(const TensorT<T>& x, const char* op, Fwd fwd, Bwd bwd) {
    size_t n = x.numel();
    std::vector<T> vals(n);
    const auto& xd = x.data();
    for (size_t i = 0; i < n; ++i) vals[i] = fwd(xd[i]);
    auto backward = [n, bwd](typename TensorT<T>::Impl& o) {
        auto& p = *o.parents[0].impl;
        if (!p.requires_grad) return;
        detail::ensure_grad<T>(p);
        for (size_t i = 0; i < n; ++i) p.grad[i] += o.grad[i] * bwd(p.data[i], o.data[i]);
    };
    return detail::make_op<T>(x.shape(), std::move(vals), op, {x}, backward);
}

template <typename T>
TensorT<T> tanh_op(const TensorT<T>& x) {
    return ewise_unary<T>(x, "tanh", [](T v) { return std::tanh(v); },
                          [](T, T y) { return T(1) - y * y; });
}

template <typename T>
TensorT<T> sigmoid_op(const TensorT<T>& x) {
    return ewise_unary<T>(x, "sigmoid",
                          [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                                     : std::exp(v) / (T(1) + std::exp(v)); },
                          [](T, T y) { return y * (T(1) - y); });
}

// Exact erf-based GELU.
template <typename T>
TensorT<T> gelu_op(const TensorT<T>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return ewise_unary<T>(
        x, "gelu",
        [](T v) {
            double d = static_cast<double>(v);
            return static_cast<T>(d * 0.5 * (1.0 + std::erf(d * inv_sqrt2)));
        },
        [](T v, T) {
            double d = static_cast<double>(v);
            double phi = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * d * d);
            return static_cast<T>(phi + d * pdf);
        });
}

template <typename T>
TensorT<T> relu_op(const TensorT<T>& x) {
    return ewise_unary<T>(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
                          [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T c) {
    return ewise_unary<T>(x, "scale", [c](T v) { return v * c; }, [c](T, T) { return c; });
}

// ---------------------------------------------------------------------------
// matmul: a [..,m,k] x b [..,k,n] -> [..,m,n], batch dims broadcast
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    int m = a.shape()[a.rank() - 2], k = a.shape()[a.rank() - 1];
    int kb = b.shape()[b.rank() - 2], n = b.shape()[b.rank() - 1];
    if (k != kb)
        throw DimensionError("matmul: inner extents disagree for shapes " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    Shape batch = detail::broadcast_shape(a_batch, b_batch, "matmul");
    auto batch_st = detail::contiguous_strides(batch);
    auto a_bst = detail::bcast_strides(a_batch, batch);
    auto b_bst = detail::bcast_strides(b_batch, batch);
    size_t nb = numel_of(batch);
    size_t a_mat = static_cast<size_t>(m) * k, b_mat = static_cast<size_t>(k) * n,
           o_mat = static_cast<size_t>(m) * n;

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<T> vals(nb * o_mat, T(0));
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t bi = 0; bi < nb; ++bi) {
        const T* A = ad.data() + detail::map_offset(bi, batch, batch_st, a_bst) * a_mat;
        const T* B = bd.data() + detail::map_offset(bi, batch, batch_st, b_bst) * b_mat;
        T* C = vals.data() + bi * o_mat;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                T acc = T(0);
                for (int t = 0; t < k; ++t) acc += A[i * k + t] * B[t * n + j];
                C[i * n + j] = acc;
            }
    }

    auto backward = [batch, batch_st, a_bst, b_bst, nb, m, n, k, a_mat, b_mat,
                     o_mat](typename TensorT<T>::Impl& o) {
        auto& pa = *o.parents[0].impl;
        auto& pb = *o.parents[1].impl;
        if (pa.requires_grad) detail::ensure_grad<T>(pa);
        if (pb.requires_grad) detail::ensure_grad<T>(pb);
        for (size_t bi = 0; bi < nb; ++bi) {
            size_t ao = detail::map_offset(bi, batch, batch_st, a_bst) * a_mat;
            size_t bo = detail::map_offset(bi, batch, batch_st, b_bst) * b_mat;
            const T* G = o.grad.data() + bi * o_mat;
            if (pa.requires_grad) {
                const T* B = pb.data.data() + bo;
                T* dA = pa.grad.data() + ao;
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        T acc = T(0);
                        for (int j = 0; j < n; ++j) acc += G[i * n + j] * B[t * n + j];
                        dA[i * k + t] += acc;
                    }
            }
            if (pb.requires_grad) {
                const T* A = pa.data.data() + ao;
                T* dB = pb.grad.data() + bo;
                for (int t = 0; t < k; ++t)
                    for (int j = 0; j < n; ++j) {
                        T acc = T(0);
                        for (int i = 0; i < m; ++i) acc += A[i * k + t] * G[i * n + j];
                        dB[t * n + j] += acc;
                    }
            }
        }
    };
    return detail::make_op<T>(std::move(out_shape), std::move(vals), "matmul", {a, b}, backward);
}

// ---------------------------------------------------------------------------
// softmax along one axis, max-subtracted
// ---------------------------------------------------------------------------

namespace detail {
inline void check_axis(const Shape& s, int axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " invalid for shape " + shape_str(s));
}

// Decompose a shape around `axis` into (outer, len, inner) so any axis walk
// becomes two nested loops plus a strided scan.
struct AxisSpan {
    size_t outer, len, inner;
};
inline AxisSpan axis_span(const Shape& s, int axis) {
    AxisSpan sp{1, static_cast<size_t>(s[static_cast<size_t>(axis)]), 1};
    for (int i = 0; i < axis; ++i) sp.outer *= static_cast<size_t>(s[static_cast<size_t>(i)]);
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= static_cast<size_t>(s[i]);
    return sp;
}
}  // namespace detail

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
    detail::check_axis(x.shape(), axis, "softmax");
    auto sp = detail::axis_span(x.shape(), axis);
    std::vector<T> vals(x.numel());
    const auto& xd = x.data();
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
            size_t base = o * sp.len * sp.inner + in;
            T mx = xd[base];
            for (size_t t = 1; t < sp.len; ++t) mx = std::max(mx, xd[base + t * sp.inner]);
            T sum = T(0);
            for (size_t t = 0; t < sp.len; ++t) {
                T e = std::exp(xd[base + t * sp.inner] - mx);
                vals[base + t * sp.inner] = e;
                sum += e;
            }
            for (size_t t = 0; t < sp.len; ++t) vals[base + t * sp.inner] /= sum;
        }
    auto backward = [sp](typename TensorT<T>::Impl& o) {
        auto& p = *o.parents[0].impl;
        if (!p.requires_grad) return;
        detail::ensure_grad<T>(p);
        for (size_t ou = 0; ou < sp.outer; ++ou)
            for (size_t in = 0; in < sp.inner; ++in) {
                size_t base = ou * sp.len * sp.inner + in;
                T dot = T(0);
                for (size_t t = 0; t < sp.len; ++t) dot += o.grad[base + t * sp.inner] * o.data[base + t * sp.inner];
                for (size_t t = 0; t < sp.len; ++t) {
                    size_t i = base + t * sp.inner;
                    p.grad[i] += o.data[i] * (o.grad[i] - dot);
                }
            }
    };
    return detail::make_op<T>(x.shape(), std::move(vals), "softmax", {x}, backward);
}

// ---------------------------------------------------------------------------
// layernorm over the last axis: biased variance, then affine
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> layernorm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta, T eps) {
    int f = x.shape().back();
    if (gamma.numel() != static_cast<size_t>(f) || beta.numel() != static_cast<size_t>(f))
        throw DimensionError("layernorm: gamma/beta extents must equal last-axis extent " +
                             std::to_string(f) + ", got " + shape_str(gamma.shape()) + " and " +
                             shape_str(beta.shape()));
    size_t rows = x.numel() / static_cast<size_t>(f);
    std::vector<T> vals(x.numel());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    const auto& xd = x.data();
    const auto& gd = gamma.data();
    const auto& bd = beta.data();
    for (size_t r = 0; r < rows; ++r) {
        const T* row = xd.data() + r * static_cast<size_t>(f);
        T mean = T(0);
        for (int i = 0; i < f; ++i) mean += row[i];
        mean /= static_cast<T>(f);
        T var = T(0);
        for (int i = 0; i < f; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= static_cast<T>(f);
        T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (int i = 0; i < f; ++i) {
            T xh = (row[i] - mean) * is;
            (*xhat)[r * static_cast<size_t>(f) + static_cast<size_t>(i)] = xh;
            vals[r * static_cast<size_t>(f) + static_cast<size_t>(i)] = gd[static_cast<size_t>(i)] * xh + bd[static_cast<size_t>(i)];
        }
    }
    auto backward = [rows, f, xhat, inv_std](typename TensorT<T>::Impl& o) {
        auto& px = *o.parents[0].impl;
        auto& pg = *o.parents[1].impl;
        auto& pb = *o.parents[2].impl;
        if (px.requires_grad) detail::ensure_grad<T>(px);
        if (pg.requires_grad) detail::ensure_grad<T>(pg);
        if (pb.requires_grad) detail::ensure_grad<T>(pb);
        for (size_t r = 0; r < rows; ++r) {
            size_t base = r * static_cast<size_t>(f);
            T sum_dxh = T(0), sum_dxh_xh = T(0);
            for (int i = 0; i < f; ++i) {
                T dxh = o.grad[base + static_cast<size_t>(i)] * pg.data[static_cast<size_t>(i)];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * (*xhat)[base + static_cast<size_t>(i)];
            }
            for (int i = 0; i < f; ++i) {
                size_t idx = base + static_cast<size_t>(i);
                T dxh = o.grad[idx] * pg.data[static_cast<size_t>(i)];
                if (px.requires_grad)
                    px.grad[idx] += (*inv_std)[r] *
                                    (dxh - sum_dxh / static_cast<T>(f) -
                                     (*xhat)[idx] * sum_dxh_xh / static_cast<T>(f));
                if (pg.requires_grad) pg.grad[static_cast<size_t>(i)] += o.grad[idx] * (*xhat)[idx];
                if (pb.requires_grad) pb.grad[static_cast<size_t>(i)] += o.grad[idx];
            }
        }
    };
    return detail::make_op<T>(x.shape(), std::move(vals), "layernorm", {x, gamma, beta}, backward);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

enum class Reduce { mean, sum, max };

template <typename T>
TensorT<T> reduce(const TensorT<T>& x, Reduce kind, int axis) {
    detail::check_axis(x.shape(), axis, "reduce");
    auto sp = detail::axis_span(x.shape(), axis);
    Shape out_shape;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.shape()[static_cast<size_t>(i)]);
    if (out_shape.empty()) out_shape = {1};
    std::vector<T> vals(sp.outer * sp.inner);
    auto argmax = std::make_shared<std::vector<size_t>>();
    if (kind == Reduce::max) argmax->resize(sp.outer * sp.inner);
    const auto& xd = x.data();
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
            size_t base = o * sp.len * sp.inner + in;
            size_t oi = o * sp.inner + in;
            if (kind == Reduce::max) {
                T best = xd[base];
                size_t bt = 0;
                for (size_t t = 1; t < sp.len; ++t)
                    if (xd[base + t * sp.inner] > best) {  // ties keep the lowest index
                        best = xd[base + t * sp.inner];
                        bt = t;
                    }
                vals[oi] = best;
                (*argmax)[oi] = bt;
            } else {
                T acc = T(0);
                for (size_t t = 0; t < sp.len; ++t) acc += xd[base + t * sp.inner];
                vals[oi] = kind == Reduce::mean ? acc / static_cast<T>(sp.len) : acc;
            }
        }
    const char* name = kind == Reduce::mean ? "reduce_mean" : kind == Reduce::sum ? "reduce_sum" : "reduce_max";
    auto backward = [sp, kind, argmax](typename TensorT<T>::Impl& o) {
        auto& p = *o.parents[0].impl;
        if (!p.requires_grad) return;
        detail::ensure_grad<T>(p);
        for (size_t ou = 0; ou < sp.outer; ++ou)
            for (size_t in = 0; in < sp.inner; ++in) {
                size_t base = ou * sp.len * sp.inner + in;
                size_t oi = ou * sp.inner + in;
                if (kind == Reduce::max) {
                    p.grad[base + (*argmax)[oi] * sp.inner] += o.grad[oi];
                } else {
                    T g = kind == Reduce::mean ? o.grad[oi] / static_cast<T>(sp.len) : o.grad[oi];
                    for (size_t t = 0; t < sp.len; ++t) p.grad[base + t * sp.inner] += g;
                }
            }
    };
    return detail::make_op<T>(std::move(out_shape), std::move(vals), name, {x}, backward);
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    size_t n = x.numel();
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) acc += x.data()[i];
    auto backward = [n](typename TensorT<T>::Impl& o) {
        auto& p = *o.parents[0].impl;
        if (!p.requires_grad) return;
        detail::ensure_grad<T>(p);
        for (size_t i = 0; i < n; ++i) p.grad[i] += o.grad[0];
    };
    return detail::make_op<T>({1}, {acc}, "sum_all", {x}, backward);
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// reshape / permute / concat / slice
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
    if (numel_of(new_shape) != x.numel())
        throw DimensionError("reshape: element count mismatch, " + shape_str(x.shape()) + " -> " +
                             shape_str(new_shape));
    auto backward = [](typename TensorT<T>::Impl& o) {
        auto& p = *o.parents[0].impl;
        if (!p.requires_grad) return;
        detail::ensure_grad<T>(p);
        for (size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
    };
    return detail::make_op<T>(std::move(new_shape), x.data(), "reshape", {x}, backward);
}

template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& axes) {
    int r = x.rank();
    if (static_cast<int>(axes.size()) != r)
        throw DimensionError("permute: axes count " + std::to_string(axes.size()) +
                             " does not match rank of " + shape_str(x.shape()));
    std::vector<bool> seen(static_cast<size_t>(r), false);
    for (int a : axes) {
        if (a < 0 || a >= r || seen[static_cast<size_t>(a)])
            throw DimensionError("permute: axes are not a permutation for shape " + shape_str(x.shape()));
        seen[static_cast<size_t>(a)] = true;
    }
    Shape out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    auto in_st = detail::contiguous_strides(x.shape());
    auto out_st = detail::contiguous_strides(out_shape);
    // src stride per out axis
    std::vector<size_t> src_st(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) src_st[static_cast<size_t>(i)] = in_st[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    size_t n = x.numel();
    std::vector<T> vals(n);
    const auto& xd = x.data();
    for (size_t i = 0; i < n; ++i)
        vals[i] = xd[detail::map_offset(i, out_shape, out_st, src_st)];
    auto backward = [out_shape, out_st, src_st, n](typename TensorT<T>::Impl& o) {
        auto& p = *o.parents[0].impl;
        if (!p.requires_grad) return;
        detail::ensure_grad<T>(p);
        for (size_t i = 0; i < n; ++i)
            p.grad[detail::map_offset(i, out_shape, out_st, src_st)] += o.grad[i];
    };
    return detail::make_op<T>(std::move(out_shape), std::move(vals), "permute", {x}, backward);
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int axis) {
    if (xs.empty()) throw DimensionError("concat: no inputs");
    const Shape& s0 = xs[0].shape();
    detail::check_axis(s0, axis, "concat");
    int total = 0;
    for (const auto& x : xs) {
        if (x.rank() != static_cast<int>(s0.size()))
            throw DimensionError("concat: rank mismatch, " + shape_str(s0) + " vs " + shape_str(x.shape()));
        for (int i = 0; i < x.rank(); ++i)
            if (i != axis && x.shape()[static_cast<size_t>(i)] != s0[static_cast<size_t>(i)])
                throw DimensionError("concat: extent mismatch off-axis, " + shape_str(s0) + " vs " +
                                     shape_str(x.shape()));
        total += x.shape()[static_cast<size_t>(axis)];
    }
    Shape out_shape = s0;
    out_shape[static_cast<size_t>(axis)] = total;
    auto sp = detail::axis_span(out_shape, axis);
    std::vector<T> vals(numel_of(out_shape));
    std::vector<size_t> lens, offs;
    size_t off = 0;
    for (const auto& x : xs) {
        lens.push_back(static_cast<size_t>(x.shape()[static_cast<size_t>(axis)]));
        offs.push_back(off);
        off += lens.back();
    }
    for (size_t k = 0; k < xs.size(); ++k) {
        const auto& xd = xs[k].data();
        for (size_t o = 0; o < sp.outer; ++o)
            for (size_t t = 0; t < lens[k]; ++t)
                for (size_t in = 0; in < sp.inner; ++in)
                    vals[(o * sp.len + offs[k] + t) * sp.inner + in] = xd[(o * lens[k] + t) * sp.inner + in];
    }
    auto backward = [sp, lens, offs](typename TensorT<T>::Impl& o) {
        for (size_t k = 0; k < o.parents.size(); ++k) {
            auto& p = *o.parents[k].impl;
            if (!p.requires_grad) continue;
            detail::ensure_grad<T>(p);
            for (size_t ou = 0; ou < sp.outer; ++ou)
                for (size_t t = 0; t < lens[k]; ++t)
                    for (size_t in = 0; in < sp.inner; ++in)
                        p.grad[(ou * lens[k] + t) * sp.inner + in] +=
                            o.grad[(ou * sp.len + offs[k] + t) * sp.inner + in];
        }
    };
    return detail::make_op<T>(std::move(out_shape), std::move(vals), "concat", xs, backward);
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int start, int len) {
    detail::check_axis(x.shape(), axis, "slice");
    int extent = x.shape()[static_cast<size_t>(axis)];
    if (start < 0 || len <= 0 || start + len > extent)
        throw DimensionError("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") invalid for extent " +
                             std::to_string(extent));
    auto sp = detail::axis_span(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    std::vector<T> vals(numel_of(out_shape));
    const auto& xd = x.data();
    for (size_t o = 0; o < sp.outer; ++o)
        for (int t = 0; t < len; ++t)
            for (size_t in = 0; in < sp.inner; ++in)
                vals[(o * static_cast<size_t>(len) + static_cast<size_t>(t)) * sp.inner + in] =
                    xd[(o * sp.len + static_cast<size_t>(start + t)) * sp.inner + in];
    auto backward = [sp, start, len](typename TensorT<T>::Impl& o) {
        auto& p = *o.parents[0].impl;
        if (!p.requires_grad) return;
        detail::ensure_grad<T>(p);
        for (size_t ou = 0; ou < sp.outer; ++ou)
            for (int t = 0; t < len; ++t)
                for (size_t in = 0; in < sp.inner; ++in)
                    p.grad[(ou * sp.len + static_cast<size_t>(start + t)) * sp.inner + in] +=
                        o.grad[(ou * static_cast<size_t>(len) + static_cast<size_t>(t)) * sp.inner + in];
    };
    return detail::make_op<T>(std::move(out_shape), std::move(vals), "slice", {x}, backward);
}

// ---------------------------------------------------------------------------
// conv1d, same padding, odd kernel. Used by the depth-gate path of RICA.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv1d_same(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    if (x.rank() != 1 || w.rank() != 1 || b.numel() != 1)
        throw DimensionError("conv1d_same: expects x rank 1, w rank 1, scalar bias; got " +
                             shape_str(x.shape()) + ", " + shape_str(w.shape()));
    int L = x.shape()[0], K = w.shape()[0];
    if (K % 2 == 0) throw DimensionError("conv1d_same: kernel length must be odd, got " + std::to_string(K));
    int half = K / 2;
    std::vector<T> vals(static_cast<size_t>(L));
    const auto& xd = x.data();
    const auto& wd = w.data();
    for (int i = 0; i < L; ++i) {
        T acc = b.data()[0];
        for (int t = 0; t < K; ++t) {
            int j = i + t - half;
            if (j >= 0 && j < L) acc += wd[static_cast<size_t>(t)] * xd[static_cast<size_t>(j)];
        }
        vals[static_cast<size_t>(i)] = acc;
    }
    auto backward = [L, K, half](typename TensorT<T>::Impl& o) {
        auto& px = *o.parents[0].impl;
        auto& pw = *o.parents[1].impl;
        auto& pb = *o.parents[2].impl;
        if (px.requires_grad) detail::ensure_grad<T>(px);
        if (pw.requires_grad) detail::ensure_grad<T>(pw);
        if (pb.requires_grad) detail::ensure_grad<T>(pb);
        for (int i = 0; i < L; ++i) {
            T g = o.grad[static_cast<size_t>(i)];
            if (pb.requires_grad) pb.grad[0] += g;
            for (int t = 0; t < K; ++t) {
                int j = i + t - half;
                if (j < 0 || j >= L) continue;
                if (px.requires_grad) px.grad[static_cast<size_t>(j)] += g * pw.data[static_cast<size_t>(t)];
                if (pw.requires_grad) pw.grad[static_cast<size_t>(t)] += g * px.data[static_cast<size_t>(j)];
            }
        }
    };
    return detail::make_op<T>(x.shape(), std::move(vals), "conv1d_same", {x, w, b}, backward);
}

// ---------------------------------------------------------------------------
// Tape: explicit reverse-topological op record over a scalar root
// ---------------------------------------------------------------------------

template <typename T>
struct TapeT {
    std::vector<std::shared_ptr<typename TensorT<T>::Impl>> order;  // leaves first

    static TapeT trace(const TensorT<T>& root) {
        TapeT tape;
        std::unordered_set<typename TensorT<T>::Impl*> visited;
        // iterative post-order: (node, child cursor)
        std::vector<std::pair<std::shared_ptr<typename TensorT<T>::Impl>, size_t>> stack;
        if (root.impl && root.impl->requires_grad) stack.emplace_back(root.impl, 0);
        while (!stack.empty()) {
            auto& [node, cursor] = stack.back();
            if (cursor == 0 && visited.count(node.get())) {
                stack.pop_back();
                continue;
            }
            if (cursor < node->parents.size()) {
                auto child = node->parents[cursor].impl;
                ++cursor;
                if (child->requires_grad && !visited.count(child.get())) stack.emplace_back(child, 0);
            } else {
                visited.insert(node.get());
                tape.order.push_back(node);
                stack.pop_back();
            }
        }
        return tape;
    }

    void run_backward() {
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            auto& node = **it;
            if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
        }
    }
};

// Seeds d(loss)/d(loss) = 1 and sweeps the tape. Populates grad on every
// reachable tensor with requires_grad; frozen/ungraded leaves stay empty.
template <typename T>
void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw ContractError("backward: loss does not depend on any trainable tensor");
    auto tape = TapeT<T>::trace(loss);
    detail::ensure_grad<T>(*loss.impl);
    loss.impl->grad[0] += T(1);
    tape.run_backward();
}

}  // namespace axialfuse
