#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "meltpool/tensor.hpp"

namespace meltpool {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
ConstMatMap<T> as_matrix(const std::vector<T>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    return ConstMatMap<T>(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> as_matrix(std::vector<T>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    return MatMap<T>(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
    if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

inline std::size_t normalize_axis(const char* op, long axis, std::size_t rank) {
    const long r = static_cast<long>(rank);
    if (axis < -r || axis >= r) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    }
    return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
    std::vector<T> out(x.size());
    const auto& in = x.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
    return finish<T>(op, Tensor<T>(x.shape(), std::move(out)), {x}, [x, deriv](TensorNode<T>& o) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        const auto& xv = x.node()->value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * deriv(xv[i], o.value[i]);
    });
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const char* op, BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
    // Only scalar-with-tensor broadcasting is allowed.
    const bool a_scalar = a.size() == 1 && b.size() != 1;
    const bool b_scalar = b.size() == 1 && a.size() != 1;
    if (!a_scalar && !b_scalar) require_same_shape(op, a.shape(), b.shape());
    const Shape shape = a_scalar ? b.shape() : a.shape();
    const std::size_t n = numel(shape);
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    auto at = [&](const std::vector<T>& v, bool sc, std::size_t i) { return sc ? v[0] : v[i]; };
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T x = at(av, a_scalar, i), y = at(bv, b_scalar, i);
        out[i] = kind == BinaryKind::add ? x + y : kind == BinaryKind::sub ? x - y : x * y;
    }
    return finish<T>(op, Tensor<T>(shape, std::move(out)), {a, b}, [a, b, kind, a_scalar, b_scalar](TensorNode<T>& o) {
        const auto& av = a.node()->value;
        const auto& bv = b.node()->value;
        auto push = [&](const Tensor<T>& t, bool sc, bool is_a) {
            if (!t.requires_grad()) return;
            auto& g = t.node()->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                T d;
                if (kind == BinaryKind::add) d = T(1);
                else if (kind == BinaryKind::sub) d = is_a ? T(1) : T(-1);
                else d = is_a ? (b_scalar ? bv[0] : bv[i]) : (a_scalar ? av[0] : av[i]);
                g[sc ? 0 : i] += o.grad[i] * d;
            }
        };
        push(a, a_scalar, true);
        push(b, b_scalar, false);
    });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary("add", detail::BinaryKind::add, a, b);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary("sub", detail::BinaryKind::sub, a, b);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary("mul", detail::BinaryKind::mul, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return detail::unary(
        "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(
        "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return detail::unary(
        "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary(
        "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary(
        "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// [M,K] x [K,N] -> [M,N]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    detail::as_matrix(out, m, n).noalias() =
        detail::as_matrix(a.node()->value, m, k) * detail::as_matrix(b.node()->value, k, n);
    return detail::finish<T>("matmul", Tensor<T>({m, n}, std::move(out)), {a, b}, [a, b, m, k, n](TensorNode<T>& o) {
        auto go = detail::as_matrix(std::as_const(o.grad), m, n);
        if (a.requires_grad()) {
            detail::as_matrix(a.node()->ensure_grad(), m, k).noalias() +=
                go * detail::as_matrix(b.node()->value, k, n).transpose();
        }
        if (b.requires_grad()) {
            detail::as_matrix(b.node()->ensure_grad(), k, n).noalias() +=
                detail::as_matrix(a.node()->value, m, k).transpose() * go;
        }
    });
}

/// [N,M,K] x [N,K,P] -> [N,M,P]
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw ShapeError("batched_matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
    }
    const std::size_t nb = a.dim(0), m = a.dim(1), k = a.dim(2), p = b.dim(2);
    std::vector<T> out(nb * m * p);
    for (std::size_t i = 0; i < nb; ++i) {
        detail::as_matrix(out, m, p, i * m * p).noalias() =
            detail::as_matrix(a.node()->value, m, k, i * m * k) * detail::as_matrix(b.node()->value, k, p, i * k * p);
    }
    return detail::finish<T>(
        "batched_matmul", Tensor<T>({nb, m, p}, std::move(out)), {a, b}, [a, b, nb, m, k, p](TensorNode<T>& o) {
            for (std::size_t i = 0; i < nb; ++i) {
                auto go = detail::as_matrix(std::as_const(o.grad), m, p, i * m * p);
                if (a.requires_grad()) {
                    detail::as_matrix(a.node()->ensure_grad(), m, k, i * m * k).noalias() +=
                        go * detail::as_matrix(b.node()->value, k, p, i * k * p).transpose();
                }
                if (b.requires_grad()) {
                    detail::as_matrix(b.node()->ensure_grad(), k, p, i * k * p).noalias() +=
                        detail::as_matrix(a.node()->value, m, k, i * m * k).transpose() * go;
                }
            }
        });
}

/// Adds `bias` (shape [C]) along the last axis of `x`.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.dim(0)) {
        throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match last axis of " +
                         to_string(x.shape()));
    }
    const std::size_t c = bias.dim(0), rows = x.size() / c;
    std::vector<T> out(x.node()->value);
    const auto& bv = bias.node()->value;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bv[j];
    }
    return detail::finish<T>("add_bias", Tensor<T>(x.shape(), std::move(out)), {x, bias}, [x, bias, rows, c](TensorNode<T>& o) {
        if (x.requires_grad()) {
            auto& g = x.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (bias.requires_grad()) {
            auto& g = bias.node()->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < c; ++j) g[j] += o.grad[r * c + j];
            }
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = T(0);
    for (const T& v : x.values()) total += v;
    return detail::finish<T>("sum", Tensor<T>::scalar(total), {x}, [x](TensorNode<T>& o) {
        if (!x.requires_grad()) return;
        for (auto& g : x.node()->ensure_grad()) g += o.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const T inv = T(1) / static_cast<T>(x.size());
    T total = T(0);
    for (const T& v : x.values()) total += v;
    return detail::finish<T>("mean", Tensor<T>::scalar(total * inv), {x}, [x, inv](TensorNode<T>& o) {
        if (!x.requires_grad()) return;
        for (auto& g : x.node()->ensure_grad()) g += o.grad[0] * inv;
    });
}

/// Mean over one axis; the axis is removed from the result shape.
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, long axis) {
    const std::size_t ax = detail::normalize_axis("mean_axis", axis, x.rank());
    const auto s = detail::split_axis(x.shape(), ax);
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<long>(ax));
    if (shape.empty()) shape = {1};
    std::vector<T> out(s.outer * s.inner, T(0));
    const auto& xv = x.node()->value;
    const T inv = T(1) / static_cast<T>(s.extent);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t e = 0; e < s.extent; ++e) {
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.extent + e) * s.inner + i];
        }
    }
    for (auto& v : out) v *= inv;
    return detail::finish<T>("mean_axis", Tensor<T>(shape, std::move(out)), {x}, [x, s, inv](TensorNode<T>& o) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t a = 0; a < s.outer; ++a) {
            for (std::size_t e = 0; e < s.extent; ++e) {
                for (std::size_t i = 0; i < s.inner; ++i) g[(a * s.extent + e) * s.inner + i] += o.grad[a * s.inner + i] * inv;
            }
        }
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    return detail::finish<T>("reshape", Tensor<T>(std::move(shape), x.node()->value), {x}, [x](TensorNode<T>& o) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

/// Concatenates along `axis`; all other dimensions must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t ax = detail::normalize_axis("concat", axis, parts[0].rank());
    Shape shape = parts[0].shape();
    shape[ax] = 0;
    for (const auto& p : parts) {
        Shape a = p.shape(), b = parts[0].shape();
        if (a.size() != b.size()) {
            throw ShapeError("concat: rank mismatch " + to_string(b) + " vs " + to_string(a));
        }
        a[ax] = b[ax] = 0;
        if (a != b) {
            throw ShapeError("concat: shapes " + to_string(parts[0].shape()) + " and " + to_string(p.shape()) +
                             " differ off axis " + std::to_string(ax));
        }
        shape[ax] += p.dim(ax);
    }
    const auto s = detail::split_axis(shape, ax);
    std::vector<T> out(numel(shape));
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t ext = p.dim(ax);
        const auto& pv = p.node()->value;
        for (std::size_t o = 0; o < s.outer; ++o) {
            std::copy_n(pv.begin() + static_cast<long>(o * ext * s.inner), ext * s.inner,
                        out.begin() + static_cast<long>((o * s.extent + offset) * s.inner));
        }
        offset += ext;
    }
    return detail::finish<T>("concat", Tensor<T>(shape, std::move(out)), parts, [parts, ax, s](TensorNode<T>& o) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t ext = p.dim(ax);
            if (p.requires_grad()) {
                auto& g = p.node()->ensure_grad();
                for (std::size_t a = 0; a < s.outer; ++a) {
                    for (std::size_t j = 0; j < ext * s.inner; ++j) {
                        g[a * ext * s.inner + j] += o.grad[(a * s.extent + offset) * s.inner + j];
                    }
                }
            }
            offset += ext;
        }
    });
}

/// Elements [start, start+length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, long axis, std::size_t start, std::size_t length) {
    const std::size_t ax = detail::normalize_axis("slice", axis, x.rank());
    if (length == 0 || start + length > x.dim(ax)) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of bounds for axis " + std::to_string(ax) + " of " + to_string(x.shape()));
    }
    const auto s = detail::split_axis(x.shape(), ax);
    Shape shape = x.shape();
    shape[ax] = length;
    std::vector<T> out(numel(shape));
    const auto& xv = x.node()->value;
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(xv.begin() + static_cast<long>((o * s.extent + start) * s.inner), length * s.inner,
                    out.begin() + static_cast<long>(o * length * s.inner));
    }
    return detail::finish<T>("slice", Tensor<T>(shape, std::move(out)), {x}, [x, s, start, length](TensorNode<T>& o) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t a = 0; a < s.outer; ++a) {
            for (std::size_t j = 0; j < length * s.inner; ++j) {
                g[(a * s.extent + start) * s.inner + j] += o.grad[a * length * s.inner + j];
            }
        }
    });
}

/// Axis permutation: result axis i is input axis perm[i].
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    std::vector<bool> seen(r, false);
    if (perm.size() != r) throw ShapeError("transpose: permutation rank differs from " + to_string(x.shape()));
    for (auto p : perm) {
        if (p >= r || seen[p]) throw ShapeError("transpose: invalid permutation for " + to_string(x.shape()));
        seen[p] = true;
    }
    Shape shape(r);
    for (std::size_t i = 0; i < r; ++i) shape[i] = x.dim(perm[i]);
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
    // stride in the input for each output axis
    std::vector<std::size_t> src(r);
    for (std::size_t i = 0; i < r; ++i) src[i] = in_stride[perm[i]];
    const std::size_t n = x.size();
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t lin = 0; lin < n; ++lin) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * src[i];
        map[lin] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < shape[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<T> out(n);
    const auto& xv = x.node()->value;
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[map[i]];
    return detail::finish<T>("transpose", Tensor<T>(shape, std::move(out)), {x}, [x, map = std::move(map)](TensorNode<T>& o) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += o.grad[i];
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + to_string(x.shape()));
    return transpose(x, {1, 0});
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, long axis = -1) {
    if (x.rank() == 0) throw ShapeError("softmax over an empty axis");
    const std::size_t ax = detail::normalize_axis("softmax", axis, x.rank());
    const auto s = detail::split_axis(x.shape(), ax);
    if (s.extent == 0) throw ShapeError("softmax over an empty axis");
    std::vector<T> out(x.size());
    const auto& xv = x.node()->value;
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            auto at = [&](std::size_t e) { return (o * s.extent + e) * s.inner + i; };
            T mx = xv[at(0)];
            for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, xv[at(e)]);
            T total = T(0);
            for (std::size_t e = 0; e < s.extent; ++e) total += (out[at(e)] = std::exp(xv[at(e)] - mx));
            for (std::size_t e = 0; e < s.extent; ++e) out[at(e)] /= total;
        }
    }
    return detail::finish<T>("softmax", Tensor<T>(x.shape(), std::move(out)), {x}, [x, s](TensorNode<T>& o) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t a = 0; a < s.outer; ++a) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                auto at = [&](std::size_t e) { return (a * s.extent + e) * s.inner + i; };
                T dot = T(0);
                for (std::size_t e = 0; e < s.extent; ++e) dot += o.grad[at(e)] * o.value[at(e)];
                for (std::size_t e = 0; e < s.extent; ++e) g[at(e)] += o.value[at(e)] * (o.grad[at(e)] - dot);
            }
        }
    });
}

/// Mean squared error over all elements; the target is treated as constant.
template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same_shape("mse", pred.shape(), target.shape());
    const auto& p = pred.node()->value;
    const auto& t = target.node()->value;
    T total = T(0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const T d = p[i] - t[i];
        total += d * d;
    }
    const T n = static_cast<T>(p.size());
    return detail::finish<T>("mse", Tensor<T>::scalar(total / n), {pred}, [pred, target, n](TensorNode<T>& o) {
        if (!pred.requires_grad()) return;
        auto& g = pred.node()->ensure_grad();
        const auto& p = pred.node()->value;
        const auto& t = target.node()->value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0] * T(2) * (p[i] - t[i]) / n;
    });
}

}  // namespace meltpool
