#pragma once

// Gradient and oracle cases for every layer, shared by the unit tests and the
// acceptance binary. Each case is a function of (seed) so suites can sweep.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "meltpool/layers.hpp"
#include "meltpool/metrics.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace meltpool::testing {

template <typename T>
using GradCase = std::function<GradCheckResult(unsigned seed)>;

template <typename T>
struct NamedGradCase {
    std::string name;
    GradCase<T> run;
};

template <typename T>
LstmWeights<T> random_lstm(std::size_t feat, std::size_t hidden, std::mt19937_64& rng) {
    return {random_tensor<T>({feat, 4 * hidden}, rng, -0.6, 0.6), random_tensor<T>({hidden, 4 * hidden}, rng, -0.6, 0.6),
            random_tensor<T>({4 * hidden}, rng, -0.3, 0.3)};
}

template <typename T>
AttentionWeights<T> random_attention(std::size_t d, std::size_t heads, std::size_t key_dim, std::mt19937_64& rng) {
    const std::size_t hk = heads * key_dim;
    return {random_tensor<T>({d, hk}, rng, -0.7, 0.7),  random_tensor<T>({hk}, rng, -0.2, 0.2),
            random_tensor<T>({d, hk}, rng, -0.7, 0.7),  random_tensor<T>({hk}, rng, -0.2, 0.2),
            random_tensor<T>({d, hk}, rng, -0.7, 0.7),  random_tensor<T>({hk}, rng, -0.2, 0.2),
            random_tensor<T>({hk, d}, rng, -0.7, 0.7),  random_tensor<T>({d}, rng, -0.2, 0.2)};
}

template <typename T>
std::vector<NamedGradCase<T>> layer_gradient_cases() {
    std::vector<NamedGradCase<T>> cases;

    cases.push_back({"conv2d", [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::vector<Tensor<T>> leaves{random_tensor<T>({1, 4, 4, 2}, rng),
                                                       random_tensor<T>({3, 3, 2, 2}, rng, -0.5, 0.5),
                                                       random_tensor<T>({2}, rng)};
                         return gradient_check<T>(leaves, [](auto& l) { return conv2d(l[0], l[1], l[2]); }, seed);
                     }});

    cases.push_back({"maxpool2", [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::vector<Tensor<T>> leaves{distinct_tensor<T>({2, 4, 4, 2}, rng)};
                         return gradient_check<T>(leaves, [](auto& l) { return maxpool2(l[0]); }, seed);
                     }});

    cases.push_back({"batchnorm", [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::vector<Tensor<T>> leaves{random_tensor<T>({2, 3, 3, 2}, rng),
                                                       random_tensor<T>({2}, rng, 0.5, 1.5), random_tensor<T>({2}, rng)};
                         auto rm = Tensor<T>::zeros({2});
                         auto rv = Tensor<T>::full({2}, T(1));
                         return gradient_check<T>(
                             leaves,
                             [rm, rv](auto& l) mutable { return batchnorm(l[0], l[1], l[2], rm, rv, Mode::train); },
                             seed);
                     }});

    cases.push_back({"batchnorm_eval", [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::vector<Tensor<T>> leaves{random_tensor<T>({3, 4}, rng), random_tensor<T>({4}, rng, 0.5, 1.5),
                                                       random_tensor<T>({4}, rng)};
                         auto rm = random_tensor<T>({4}, rng);
                         auto rv = random_tensor<T>({4}, rng, 0.5, 2.0);
                         return gradient_check<T>(
                             leaves,
                             [rm, rv](auto& l) mutable { return batchnorm(l[0], l[1], l[2], rm, rv, Mode::eval); },
                             seed);
                     }});

    cases.push_back({"global_avg_pool", [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::vector<Tensor<T>> leaves{random_tensor<T>({2, 3, 3, 2}, rng)};
                         return gradient_check<T>(leaves, [](auto& l) { return global_avg_pool(l[0]); }, seed);
                     }});

    cases.push_back({"dense_linear", [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::vector<Tensor<T>> leaves{random_tensor<T>({3, 4}, rng), random_tensor<T>({4, 3}, rng),
                                                       random_tensor<T>({3}, rng)};
                         return gradient_check<T>(
                             leaves, [](auto& l) { return dense(l[0], l[1], l[2], Activation::linear); }, seed);
                     }});

    cases.push_back({"dense_relu", [](unsigned seed) {
                         // redraw until no pre-activation sits within a probe step of the kink
                         std::mt19937_64 rng(seed);
                         std::vector<Tensor<T>> leaves;
                         for (;;) {
                             leaves = {random_tensor<T>({3, 4}, rng), random_tensor<T>({4, 3}, rng),
                                       random_tensor<T>({3}, rng)};
                             auto pre = dense(leaves[0], leaves[1], leaves[2], Activation::linear);
                             bool clear = true;
                             for (std::size_t i = 0; i < pre.size(); ++i) clear = clear && std::abs(pre[i]) > 0.05;
                             if (clear) break;
                         }
                         return gradient_check<T>(
                             leaves, [](auto& l) { return dense(l[0], l[1], l[2], Activation::relu); }, seed);
                     }});

    cases.push_back({"dropout_eval", [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::vector<Tensor<T>> leaves{random_tensor<T>({3, 5}, rng)};
                         return gradient_check<T>(
                             leaves,
                             [](auto& l) {
                                 std::mt19937_64 r(1);
                                 return dropout(l[0], 0.3, Mode::eval, r);
                             },
                             seed);
                     }});

    cases.push_back({"dropout_train", [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::vector<Tensor<T>> leaves{random_tensor<T>({3, 5}, rng)};
                         return gradient_check<T>(
                             leaves,
                             [seed](auto& l) {
                                 std::mt19937_64 r(seed);  // same mask on every call
                                 return dropout(l[0], 0.3, Mode::train, r);
                             },
                             seed);
                     }});

    for (bool seq : {true, false}) {
        cases.push_back({seq ? "lstm_sequence" : "lstm_last", [seq](unsigned seed) {
                             std::mt19937_64 rng(seed);
                             auto w = random_lstm<T>(2, 3, rng);
                             std::vector<Tensor<T>> leaves{random_tensor<T>({2, 3, 2}, rng), w.kernel, w.recurrent, w.bias};
                             return gradient_check<T>(
                                 leaves,
                                 [seq](auto& l) { return lstm(l[0], LstmWeights<T>{l[1], l[2], l[3]}, nullptr, seq); },
                                 seed);
                         }});
    }

    for (bool seq : {true, false}) {
        cases.push_back({seq ? "bilstm_sequence" : "bilstm_last", [seq](unsigned seed) {
                             std::mt19937_64 rng(seed);
                             auto f = random_lstm<T>(2, 3, rng);
                             auto b = random_lstm<T>(2, 3, rng);
                             std::vector<Tensor<T>> leaves{random_tensor<T>({2, 3, 2}, rng), f.kernel, f.recurrent, f.bias,
                                                           b.kernel, b.recurrent, b.bias};
                             return gradient_check<T>(
                                 leaves,
                                 [seq](auto& l) {
                                     LstmWeights<T> bw{l[4], l[5], l[6]};
                                     return lstm(l[0], LstmWeights<T>{l[1], l[2], l[3]}, &bw, seq);
                                 },
                                 seed);
                         }});
    }

    cases.push_back({"multi_head_attention", [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         auto w = random_attention<T>(4, 2, 3, rng);
                         std::vector<Tensor<T>> leaves{random_tensor<T>({2, 3, 4}, rng), w.query, w.query_bias, w.key,
                                                       w.key_bias, w.value, w.value_bias, w.output, w.output_bias};
                         return gradient_check<T>(
                             leaves,
                             [](auto& l) {
                                 AttentionWeights<T> aw{l[1], l[2], l[3], l[4], l[5], l[6], l[7], l[8]};
                                 return multi_head_attention(l[0], aw, 2, 3);
                             },
                             seed);
                     }});

    return cases;
}

// ---------------------------------------------------------------------------
// Oracle cases: each returns the max abs deviation from the loop oracle for one
// random instance.
// ---------------------------------------------------------------------------

struct NamedOracleCase {
    std::string name;
    double tolerance;
    std::function<double(unsigned seed)> run;
};

inline std::vector<double> to_double(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

inline std::vector<NamedOracleCase> oracle_cases() {
    std::vector<NamedOracleCase> cases;

    cases.push_back({"conv2d", 1e-5, [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::uniform_int_distribution<std::size_t> dim(3, 9), ch(1, 4);
                         const std::size_t nb = 1 + seed % 2, h = dim(rng), w = dim(rng), cin = ch(rng), cout = ch(rng);
                         auto x = random_tensor<float>({nb, h, w, cin}, rng);
                         auto k = random_tensor<float>({3, 3, cin, cout}, rng);
                         auto b = random_tensor<float>({cout}, rng);
                         auto expect = oracle::conv2d(to_double(x), to_double(k), to_double(b), nb, h, w, cin, 3, cout);
                         return max_abs_diff(to_double(conv2d(x, k, b)), expect);
                     }});

    cases.push_back({"maxpool2", 1e-5, [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::uniform_int_distribution<std::size_t> half(1, 4), ch(1, 3);
                         const std::size_t nb = 1 + seed % 3, h = 2 * half(rng), w = 2 * half(rng), c = ch(rng);
                         auto x = random_tensor<float>({nb, h, w, c}, rng);
                         return max_abs_diff(to_double(maxpool2(x)), oracle::maxpool2(to_double(x), nb, h, w, c));
                     }});

    cases.push_back({"batchnorm", 1e-5, [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::uniform_int_distribution<std::size_t> dim(2, 6), ch(1, 5);
                         const std::size_t nb = dim(rng), c = ch(rng);
                         Shape shape = seed % 2 ? Shape{nb, dim(rng), dim(rng), c} : Shape{nb, c};
                         auto x = random_tensor<float>(shape, rng, -2.0, 2.0);
                         auto g = random_tensor<float>({c}, rng, 0.5, 1.5);
                         auto b = random_tensor<float>({c}, rng);
                         auto rm = Tensor<float>::zeros({c});
                         auto rv = Tensor<float>::full({c}, 1.0f);
                         auto y = batchnorm(x, g, b, rm, rv, Mode::train);
                         return max_abs_diff(to_double(y),
                                             oracle::batchnorm_train(to_double(x), to_double(g), to_double(b), c, 1e-5));
                     }});

    cases.push_back({"attention", 1e-5, [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::uniform_int_distribution<std::size_t> steps(1, 5), heads(1, 4), kd(1, 4);
                         const std::size_t nb = 1 + seed % 2, t = steps(rng), d = 8, nh = heads(rng), k = kd(rng);
                         auto w = random_attention<float>(d, nh, k, rng);
                         auto x = random_tensor<float>({nb, t, d}, rng);
                         Tensor<float> weights;
                         auto y = multi_head_attention(x, w, nh, k, &weights);
                         auto r = oracle::attention(to_double(x), to_double(w.query), to_double(w.query_bias),
                                                    to_double(w.key), to_double(w.key_bias), to_double(w.value),
                                                    to_double(w.value_bias), to_double(w.output), to_double(w.output_bias),
                                                    nb, t, d, nh, k);
                         return std::max(max_abs_diff(to_double(y), r.output), max_abs_diff(to_double(weights), r.weights));
                     }});

    cases.push_back({"lstm", 1e-5, [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::uniform_int_distribution<std::size_t> steps(1, 6), hid(1, 6), ft(1, 3);
                         const std::size_t nb = 1 + seed % 3, t = steps(rng), f = ft(rng), h = hid(rng);
                         auto fw = random_lstm<float>(f, h, rng);
                         auto bw = random_lstm<float>(f, h, rng);
                         auto x = random_tensor<float>({nb, t, f}, rng);
                         auto fwd = oracle::lstm(to_double(x), to_double(fw.kernel), to_double(fw.recurrent),
                                                 to_double(fw.bias), nb, t, f, h, false);
                         auto bwd = oracle::lstm(to_double(x), to_double(bw.kernel), to_double(bw.recurrent),
                                                 to_double(bw.bias), nb, t, f, h, true);
                         // bidirectional sequence layout: [B,T,(fwd H | bwd H)]
                         std::vector<double> expect(nb * t * 2 * h);
                         for (std::size_t i = 0; i < nb * t; ++i) {
                             for (std::size_t u = 0; u < h; ++u) {
                                 expect[i * 2 * h + u] = fwd[i * h + u];
                                 expect[i * 2 * h + h + u] = bwd[i * h + u];
                             }
                         }
                         double worst = max_abs_diff(to_double(lstm(x, fw, &bw, true)), expect);
                         std::vector<double> last(nb * h);
                         for (std::size_t b = 0; b < nb; ++b)
                             for (std::size_t u = 0; u < h; ++u) last[b * h + u] = fwd[(b * t + t - 1) * h + u];
                         return std::max(worst, max_abs_diff(to_double(lstm(x, fw, nullptr, false)), last));
                     }});

    cases.push_back({"mae", 1e-9, [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::normal_distribution<double> normal(0.0, 3.0);
                         std::vector<double> p(20), y(20);
                         for (std::size_t i = 0; i < 20; ++i) p[i] = normal(rng), y[i] = normal(rng);
                         return std::abs(mean_absolute_error(p, y) - oracle::mae(p, y));
                     }});

    cases.push_back({"r2", 1e-9, [](unsigned seed) {
                         std::mt19937_64 rng(seed);
                         std::normal_distribution<double> normal(0.0, 3.0);
                         std::vector<double> p(20), y(20);
                         for (std::size_t i = 0; i < 20; ++i) y[i] = normal(rng), p[i] = y[i] + 0.5 * normal(rng);
                         return std::abs(*r2_score(p, y) - oracle::r2(p, y));
                     }});

    return cases;
}

}  // namespace meltpool::testing
