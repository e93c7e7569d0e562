#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "meltpool/ops.hpp"

namespace meltpool {

enum class Mode { train, eval };

enum class Activation { linear, relu };

/// Same-padded, stride-1 cross-correlation.
/// input [B,H,W,Cin], weights [k,k,Cin,Cout], bias [Cout] -> [B,H,W,Cout]
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
    if (input.rank() != 4) throw ShapeError("conv2d: input must be [B,H,W,C], got " + to_string(input.shape()));
    if (weights.rank() != 4 || weights.dim(0) != weights.dim(1) || weights.dim(0) % 2 == 0) {
        throw ShapeError("conv2d: weights must be [k,k,Cin,Cout] with odd k, got " + to_string(weights.shape()));
    }
    const std::size_t nb = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
    const std::size_t k = weights.dim(0), cout = weights.dim(3);
    if (weights.dim(2) != cin) {
        throw ShapeError("conv2d: channel mismatch, input " + to_string(input.shape()) + " vs weights " +
                         to_string(weights.shape()));
    }
    if (bias.rank() != 1 || bias.dim(0) != cout) {
        throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match weights " +
                         to_string(weights.shape()));
    }
    if (h < k || w < k) throw ShapeError("conv2d: spatial dims of " + to_string(input.shape()) + " smaller than kernel");

    const std::size_t pad = k / 2, rows = nb * h * w, kk = k * k * cin;
    auto cols = std::make_shared<std::vector<T>>(rows * kk, T(0));
    const auto& xv = input.node()->value;
    for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                T* row = cols->data() + ((b * h + y) * w + x) * kk;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const long ix = static_cast<long>(x + kx) - static_cast<long>(pad);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        const T* src = xv.data() + ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * cin;
                        std::copy_n(src, cin, row + (ky * k + kx) * cin);
                    }
                }
            }
        }
    }

    std::vector<T> out(rows * cout);
    auto out_m = detail::as_matrix(out, rows, cout);
    out_m.noalias() = detail::as_matrix(*cols, rows, kk) * detail::as_matrix(weights.node()->value, kk, cout);
    const auto& bv = bias.node()->value;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cout; ++c) out[r * cout + c] += bv[c];
    }

    return detail::finish<T>(
        "conv2d", Tensor<T>({nb, h, w, cout}, std::move(out)), {input, weights, bias},
        [input, weights, bias, cols, nb, h, w, cin, k, cout, pad, rows, kk](TensorNode<T>& o) {
            auto go = detail::as_matrix(std::as_const(o.grad), rows, cout);
            if (weights.requires_grad()) {
                detail::as_matrix(weights.node()->ensure_grad(), kk, cout).noalias() +=
                    detail::as_matrix(std::as_const(*cols), rows, kk).transpose() * go;
            }
            if (bias.requires_grad()) {
                auto& gb = bias.node()->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cout; ++c) gb[c] += o.grad[r * cout + c];
                }
            }
            if (input.requires_grad()) {
                std::vector<T> dcols(rows * kk);
                detail::as_matrix(dcols, rows, kk).noalias() =
                    go * detail::as_matrix(weights.node()->value, kk, cout).transpose();
                auto& gx = input.node()->ensure_grad();
                for (std::size_t b = 0; b < nb; ++b) {
                    for (std::size_t y = 0; y < h; ++y) {
                        for (std::size_t x = 0; x < w; ++x) {
                            const T* row = dcols.data() + ((b * h + y) * w + x) * kk;
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
                                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    const long ix = static_cast<long>(x + kx) - static_cast<long>(pad);
                                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                    T* dst = gx.data() +
                                             ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * cin;
                                    const T* src = row + (ky * k + kx) * cin;
                                    for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
                                }
                            }
                        }
                    }
                }
            }
        });
}

/// Non-overlapping 2x2 max pooling. Gradient goes to the first maximum in
/// row-major window order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input) {
    if (input.rank() != 4) throw ShapeError("maxpool2: input must be [B,H,W,C], got " + to_string(input.shape()));
    const std::size_t nb = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    if (h % 2 || w % 2) throw ShapeError("maxpool2: odd spatial dimension in " + to_string(input.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    std::vector<T> out(nb * oh * ow * c);
    std::vector<std::size_t> argmax(out.size());
    const auto& xv = input.node()->value;
    for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t oi = ((b * oh + y) * ow + x) * c + ch;
                    std::size_t best = ((b * h + 2 * y) * w + 2 * x) * c + ch;
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t ii = ((b * h + 2 * y + dy) * w + 2 * x + dx) * c + ch;
                            if (xv[ii] > xv[best]) best = ii;
                        }
                    }
                    out[oi] = xv[best];
                    argmax[oi] = best;
                }
            }
        }
    }
    return detail::finish<T>("maxpool2", Tensor<T>({nb, oh, ow, c}, std::move(out)), {input},
                             [input, argmax = std::move(argmax)](TensorNode<T>& o) {
                                 if (!input.requires_grad()) return;
                                 auto& g = input.node()->ensure_grad();
                                 for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
                             });
}

/// Batch normalization over every axis except the last (channel) axis.
/// Train mode uses biased batch statistics and folds them into the running
/// estimates: running = momentum * running + (1 - momentum) * batch.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                    Tensor<T>& running_var, Mode mode, T momentum = T(0.9), T epsilon = T(1e-5)) {
    if (input.rank() < 2) throw ShapeError("batchnorm: input needs a batch axis, got " + to_string(input.shape()));
    const std::size_t c = input.shape().back();
    for (const Tensor<T>* p : std::array<const Tensor<T>*, 4>{&gamma, &beta, &running_mean, &running_var}) {
        if (p->rank() != 1 || p->dim(0) != c) {
            throw ShapeError("batchnorm: parameter " + to_string(p->shape()) + " does not match channels of " +
                             to_string(input.shape()));
        }
    }
    const std::size_t rows = input.size() / c;
    const auto& xv = input.node()->value;
    const auto& gv = gamma.node()->value;
    const auto& bv = beta.node()->value;
    std::vector<T> mean_v(c, T(0)), inv_std(c);

    if (mode == Mode::train) {
        if (input.dim(0) < 2) throw ShapeError("batchnorm: train mode needs a batch of at least 2");
        std::vector<T> var_v(c, T(0));
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < c; ++j) mean_v[j] += xv[r * c + j];
        }
        for (auto& m : mean_v) m /= static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < c; ++j) {
                const T d = xv[r * c + j] - mean_v[j];
                var_v[j] += d * d;
            }
        }
        auto rm = running_mean.mutable_values();
        auto rv = running_var.mutable_values();
        for (std::size_t j = 0; j < c; ++j) {
            var_v[j] /= static_cast<T>(rows);
            inv_std[j] = T(1) / std::sqrt(var_v[j] + epsilon);
            rm[j] = momentum * rm[j] + (T(1) - momentum) * mean_v[j];
            rv[j] = momentum * rv[j] + (T(1) - momentum) * var_v[j];
        }
    } else {
        const auto& rm = running_mean.node()->value;
        const auto& rv = running_var.node()->value;
        for (std::size_t j = 0; j < c; ++j) {
            mean_v[j] = rm[j];
            inv_std[j] = T(1) / std::sqrt(rv[j] + epsilon);
        }
    }

    std::vector<T> xhat(input.size()), out(input.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            xhat[i] = (xv[i] - mean_v[j]) * inv_std[j];
            out[i] = gv[j] * xhat[i] + bv[j];
        }
    }

    return detail::finish<T>(
        "batchnorm", Tensor<T>(input.shape(), std::move(out)), {input, gamma, beta},
        [input, gamma, beta, mode, rows, c, inv_std, xhat = std::move(xhat)](TensorNode<T>& o) {
            std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < c; ++j) {
                    sum_dy[j] += o.grad[r * c + j];
                    sum_dy_xhat[j] += o.grad[r * c + j] * xhat[r * c + j];
                }
            }
            if (gamma.requires_grad()) {
                auto& g = gamma.node()->ensure_grad();
                for (std::size_t j = 0; j < c; ++j) g[j] += sum_dy_xhat[j];
            }
            if (beta.requires_grad()) {
                auto& g = beta.node()->ensure_grad();
                for (std::size_t j = 0; j < c; ++j) g[j] += sum_dy[j];
            }
            if (!input.requires_grad()) return;
            auto& gx = input.node()->ensure_grad();
            const auto& gv = gamma.node()->value;
            const T n = static_cast<T>(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < c; ++j) {
                    const std::size_t i = r * c + j;
                    if (mode == Mode::train) {
                        gx[i] += gv[j] * inv_std[j] / n *
                                 (n * o.grad[i] - sum_dy[j] - xhat[i] * sum_dy_xhat[j]);
                    } else {
                        gx[i] += gv[j] * inv_std[j] * o.grad[i];
                    }
                }
            }
        });
}

/// [B,H,W,C] -> [B,C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    if (input.rank() != 4) throw ShapeError("global_avg_pool: input must be [B,H,W,C], got " + to_string(input.shape()));
    const std::size_t nb = input.dim(0), hw = input.dim(1) * input.dim(2), c = input.dim(3);
    std::vector<T> out(nb * c, T(0));
    const auto& xv = input.node()->value;
    for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
            for (std::size_t j = 0; j < c; ++j) out[b * c + j] += xv[(b * hw + p) * c + j];
        }
    }
    const T inv = T(1) / static_cast<T>(hw);
    for (auto& v : out) v *= inv;
    return detail::finish<T>("global_avg_pool", Tensor<T>({nb, c}, std::move(out)), {input},
                             [input, nb, hw, c, inv](TensorNode<T>& o) {
                                 if (!input.requires_grad()) return;
                                 auto& g = input.node()->ensure_grad();
                                 for (std::size_t b = 0; b < nb; ++b) {
                                     for (std::size_t p = 0; p < hw; ++p) {
                                         for (std::size_t j = 0; j < c; ++j) g[(b * hw + p) * c + j] += o.grad[b * c + j] * inv;
                                     }
                                 }
                             });
}

/// [B,Din] x [Din,Dout] + [Dout], optionally rectified.
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, Activation act) {
    auto y = add_bias(matmul(input, weights), bias);
    return act == Activation::relu ? relu(y) : y;
}

/// Inverted dropout. Eval mode (and rate 0) returns the input unchanged.
template <typename T, typename Rng>
Tensor<T> dropout(const Tensor<T>& input, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
    if (mode == Mode::eval || rate == 0.0) return input;
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(input.size());
    for (auto& m : mask) m = uniform(rng) < rate ? T(0) : keep_scale;
    std::vector<T> out(input.size());
    const auto& xv = input.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    return detail::finish<T>("dropout", Tensor<T>(input.shape(), std::move(out)), {input},
                             [input, mask = std::move(mask)](TensorNode<T>& o) {
                                 if (!input.requires_grad()) return;
                                 auto& g = input.node()->ensure_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * mask[i];
                             });
}

/// Gate order along the 4H axis: input, forget, candidate, output.
template <typename T>
struct LstmWeights {
    Tensor<T> kernel;     // [F, 4H]
    Tensor<T> recurrent;  // [H, 4H]
    Tensor<T> bias;       // [4H]
};

namespace detail {

// Runs one direction; returns h_t indexed by original time step.
template <typename T>
std::vector<Tensor<T>> lstm_direction(const Tensor<T>& input, const LstmWeights<T>& wts, bool reverse) {
    const std::size_t nb = input.dim(0), steps = input.dim(1), feat = input.dim(2);
    const std::size_t hidden = wts.recurrent.dim(0);
    if (wts.kernel.rank() != 2 || wts.kernel.dim(0) != feat || wts.kernel.dim(1) != 4 * hidden ||
        wts.recurrent.rank() != 2 || wts.recurrent.dim(1) != 4 * hidden || wts.bias.rank() != 1 ||
        wts.bias.dim(0) != 4 * hidden) {
        throw ShapeError("lstm: weights " + to_string(wts.kernel.shape()) + ", " + to_string(wts.recurrent.shape()) +
                         ", " + to_string(wts.bias.shape()) + " do not fit input " + to_string(input.shape()));
    }
    auto projected = reshape(matmul(reshape(input, {nb * steps, feat}), wts.kernel), {nb, steps, 4 * hidden});
    auto h = Tensor<T>::zeros({nb, hidden});
    auto c = Tensor<T>::zeros({nb, hidden});
    std::vector<Tensor<T>> outputs(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        const std::size_t t = reverse ? steps - 1 - s : s;
        auto xt = reshape(slice(projected, 1, t, 1), {nb, 4 * hidden});
        auto gates = add_bias(add(xt, matmul(h, wts.recurrent)), wts.bias);
        auto i = sigmoid(slice(gates, 1, 0, hidden));
        auto f = sigmoid(slice(gates, 1, hidden, hidden));
        auto g = meltpool::tanh(slice(gates, 1, 2 * hidden, hidden));
        auto o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
        c = add(mul(f, c), mul(i, g));
        h = mul(o, meltpool::tanh(c));
        outputs[t] = h;
    }
    return outputs;
}

template <typename T>
Tensor<T> stack_time(const std::vector<Tensor<T>>& hs) {
    std::vector<Tensor<T>> parts;
    parts.reserve(hs.size());
    for (const auto& h : hs) parts.push_back(reshape(h, {h.dim(0), 1, h.dim(1)}));
    return concat(parts, 1);
}

}  // namespace detail

/// LSTM over [B,T,F] with zero initial state. With `backward_weights` the
/// layer is bidirectional and concatenates [forward, backward] features.
/// Sequence output is [B,T,H or 2H]; last output is [B,H or 2H], where the
/// backward direction's "last" state is the one at t = 0.
template <typename T>
Tensor<T> lstm(const Tensor<T>& input, const LstmWeights<T>& forward_weights,
               const std::type_identity_t<LstmWeights<T>>* backward_weights,
               bool return_sequences) {
    if (input.rank() != 3) throw ShapeError("lstm: input must be [B,T,F], got " + to_string(input.shape()));
    const std::size_t steps = input.dim(1);
    auto fwd = detail::lstm_direction(input, forward_weights, false);
    if (!backward_weights) return return_sequences ? detail::stack_time(fwd) : fwd[steps - 1];
    auto bwd = detail::lstm_direction(input, *backward_weights, true);
    if (return_sequences) return concat<T>({detail::stack_time(fwd), detail::stack_time(bwd)}, 2);
    return concat<T>({fwd[steps - 1], bwd[0]}, 1);
}

template <typename T>
struct AttentionWeights {
    Tensor<T> query, query_bias;  // [D, heads*key_dim], [heads*key_dim]
    Tensor<T> key, key_bias;
    Tensor<T> value, value_bias;
    Tensor<T> output, output_bias;  // [heads*key_dim, D], [D]
};

/// Multi-head scaled dot-product self-attention over [B,T,D]. Value width per
/// head equals key_dim; heads are concatenated and projected back to D.
/// When `attention` is given it receives the weights as [B,heads,T,T].
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& input, const AttentionWeights<T>& wts, std::size_t heads,
                               std::size_t key_dim, Tensor<T>* attention = nullptr) {
    if (input.rank() != 3) throw ShapeError("attention: input must be [B,T,D], got " + to_string(input.shape()));
    const std::size_t nb = input.dim(0), steps = input.dim(1), d = input.dim(2), hk = heads * key_dim;
    if (wts.query.rank() != 2 || wts.query.dim(0) != d || wts.query.dim(1) != hk || wts.output.rank() != 2 ||
        wts.output.dim(0) != hk) {
        throw ShapeError("attention: projections " + to_string(wts.query.shape()) + " / " +
                         to_string(wts.output.shape()) + " do not fit input " + to_string(input.shape()));
    }
    auto flat = reshape(input, {nb * steps, d});
    auto split_heads = [&](const Tensor<T>& w, const Tensor<T>& b) {
        auto p = reshape(add_bias(matmul(flat, w), b), {nb, steps, heads, key_dim});
        return reshape(transpose(p, {0, 2, 1, 3}), {nb * heads, steps, key_dim});
    };
    auto q = split_heads(wts.query, wts.query_bias);
    auto k = split_heads(wts.key, wts.key_bias);
    auto v = split_heads(wts.value, wts.value_bias);
    auto scores = scale(batched_matmul(q, transpose(k, {0, 2, 1})), T(1) / std::sqrt(static_cast<T>(key_dim)));
    auto weights = softmax(scores, -1);
    if (attention) *attention = reshape(weights, {nb, heads, steps, steps});
    auto ctx = reshape(batched_matmul(weights, v), {nb, heads, steps, key_dim});
    ctx = reshape(transpose(ctx, {0, 2, 1, 3}), {nb * steps, hk});
    return reshape(add_bias(matmul(ctx, wts.output), wts.output_bias), {nb, steps, wts.output.dim(1)});
}

}  // namespace meltpool
