#pragma once

#include <chrono>
#include <cstdio>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "meltpool/metrics.hpp"
#include "meltpool/models.hpp"
#include "meltpool/optim.hpp"

namespace meltpool {

struct TrainConfig {
    std::size_t epochs_max = 100;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::optional<std::size_t> early_stop_patience;
    std::optional<double> plateau_factor;
    std::optional<std::size_t> plateau_patience;
    double lr_min = 1e-6;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
    bool shuffle = false;
    // ends training once eval-mode MSE over the whole training set drops below this
    std::optional<double> stop_below;

    bool uses_validation() const { return early_stop_patience.has_value() || plateau_patience.has_value(); }

    void validate() const {
        if (epochs_max == 0) throw ConfigError("epochs must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(lr_min >= 0.0) || lr_min > lr) throw ConfigError("lr_min must lie in [0, lr]");
        if (uses_validation() && !(val_fraction > 0.0 && val_fraction < 1.0)) {
            throw ConfigError("val_fraction must lie in (0, 1) when early stopping or plateau decay is on");
        }
        if (plateau_patience.has_value() != plateau_factor.has_value()) {
            throw ConfigError("plateau decay needs both a factor and a patience");
        }
        if (plateau_factor && !(*plateau_factor > 0.0 && *plateau_factor < 1.0)) {
            throw ConfigError("plateau factor must lie in (0, 1)");
        }
    }
};

/// Default recipe per architecture; every value can be overridden.
inline TrainConfig recipe_for(const std::string& kind) {
    TrainConfig c;
    if (kind == "cnn") {
        c.epochs_max = 10000;
        c.batch_size = 8;
        c.lr = 1e-3;
    } else if (kind == "rnn") {
        c.epochs_max = 10000;
        c.batch_size = 32;
        c.lr = 1e-4;
        c.early_stop_patience = 80;
        c.plateau_factor = 0.5;
        c.plateau_patience = 30;
    } else if (kind == "fused") {
        c.epochs_max = 5000;
        c.batch_size = 32;
        c.lr = 1e-3;
    } else if (kind == "student") {
        c.epochs_max = 10000;
        c.batch_size = 8;
        c.lr = 1e-3;
    } else {
        throw ConfigError("unknown model '" + kind + "'");
    }
    return c;
}

/// Inputs per port ([N, ...] each) with one target per row.
struct TrainingData {
    PortMap<float> inputs;
    std::vector<double> targets;

    std::size_t size() const { return targets.size(); }

    TrainingData subset(const std::vector<std::size_t>& rows) const {
        TrainingData out;
        for (const auto& [port, t] : inputs) {
            const std::size_t row = t.size() / t.dim(0);
            std::vector<float> v(rows.size() * row);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                std::copy_n(t.values().begin() + static_cast<long>(rows[i] * row), row, v.begin() + static_cast<long>(i * row));
            }
            Shape s = t.shape();
            s[0] = rows.size();
            out.inputs[port] = Tensor<float>(s, std::move(v));
        }
        for (auto r : rows) out.targets.push_back(targets[r]);
        return out;
    }

    TrainingData range(std::size_t begin, std::size_t end) const {
        std::vector<std::size_t> rows(end - begin);
        std::iota(rows.begin(), rows.end(), begin);
        return subset(rows);
    }

    Tensor<float> target_tensor() const {
        std::vector<float> v(targets.begin(), targets.end());
        return Tensor<float>({targets.size(), 1}, std::move(v));
    }
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    std::optional<double> val_loss;
    double lr = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::optional<std::size_t> best_epoch;
    bool stopped_early = false;
    double wall_seconds = 0.0;
};

/// Strict-improvement early stopping with best-epoch tracking.
class EarlyStopping {
   public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

    /// Returns true when `loss` is a new best.
    bool update(double loss, std::size_t epoch) {
        if (loss < best_) {
            best_ = loss;
            best_epoch_ = epoch;
            wait_ = 0;
            return true;
        }
        ++wait_;
        return false;
    }
    bool should_stop() const { return wait_ >= patience_; }
    double best() const { return best_; }
    std::optional<std::size_t> best_epoch() const { return best_epoch_; }

   private:
    std::size_t patience_;
    std::size_t wait_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> best_epoch_;
};

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// strict improvement, never going below `lr_min`; the wait resets on decay.
class PlateauScheduler {
   public:
    PlateauScheduler(double factor, std::size_t patience, double lr_min)
        : factor_(factor), patience_(patience), lr_min_(lr_min) {}

    double step(double loss, double lr) {
        if (loss < best_) {
            best_ = loss;
            wait_ = 0;
            return lr;
        }
        if (++wait_ >= patience_ && lr > lr_min_) {
            wait_ = 0;
            return std::max(lr * factor_, lr_min_);
        }
        return lr;
    }

   private:
    double factor_;
    std::size_t patience_;
    double lr_min_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t wait_ = 0;
};

/// Eval-mode predictions one row at a time. GEMM blocking depends on the row
/// count, so batching would make a row's output depend on its neighbours.
inline std::vector<double> predict(Model<float>& model, const TrainingData& data) {
    std::vector<double> out;
    out.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.push_back(model.predict(data.range(i, i + 1).inputs).values()[0]);
    return out;
}

inline double mse_of(const std::vector<double>& pred, const std::vector<double>& truth) {
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return s / static_cast<double>(pred.size());
}

namespace detail {

inline std::string format_lr(double lr) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", lr);
    return buf;
}

// Chronological (or shuffled) batches; a trailing batch of one row is folded
// into its predecessor because batch norm cannot train on a single row.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, bool shuffle, std::mt19937_64& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < n; b += batch) out.emplace_back(order.begin() + static_cast<long>(b), order.begin() + static_cast<long>(std::min(n, b + batch)));
    if (out.size() > 1 && out.back().size() == 1) {
        out[out.size() - 2].push_back(out.back()[0]);
        out.pop_back();
    }
    return out;
}

}  // namespace detail

/// Mini-batch Adam on MSE. With early stopping or plateau decay configured,
/// the last `val_fraction` of the rows is held out for validation and the
/// best-validation weights are restored at the end.
inline TrainLog train(Model<float>& model, const TrainingData& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.size() == 0) throw DataError("training set is empty");
    const auto t0 = std::chrono::steady_clock::now();

    TrainingData fit = data;
    std::optional<TrainingData> val;
    if (cfg.uses_validation()) {
        const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(data.size()))));
        if (n_val >= data.size()) throw DataError("training set too small to hold out a validation split");
        fit = data.range(0, data.size() - n_val);
        val = data.range(data.size() - n_val, data.size());
    }

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    auto params = model.parameters().trainable();
    AdamState<float> adam;
    double lr = cfg.lr;
    std::optional<EarlyStopping> stopper;
    if (cfg.early_stop_patience) stopper.emplace(*cfg.early_stop_patience);
    std::optional<PlateauScheduler> plateau;
    if (cfg.plateau_patience) plateau.emplace(*cfg.plateau_factor, *cfg.plateau_patience, cfg.lr_min);
    std::vector<std::vector<float>> best_weights;

    TrainLog log;
    for (std::size_t epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
        double loss_sum = 0.0;
        const auto batches = detail::make_batches(fit.size(), cfg.batch_size, cfg.shuffle, rng);
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto batch = fit.subset(batches[bi]);
            auto where = [&] {
                return " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi + 1) + " (lr " + detail::format_lr(lr) + ")";
            };
            double value = 0.0;
            try {
                Tape<float> tape;
                auto loss = mse(model.forward(batch.inputs, Mode::train, rng), batch.target_tensor());
                value = loss.item();
                if (!std::isfinite(value)) throw NumericalError("non-finite training loss");
                tape.backward(loss);
                adam_step<float>(params, adam, static_cast<float>(lr));
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + where());
            }
            loss_sum += value * static_cast<double>(batches[bi].size());
        }

        EpochRecord rec{epoch, loss_sum / static_cast<double>(fit.size()), std::nullopt, lr};
        if (val) rec.val_loss = mse_of(predict(model, *val), val->targets);
        log.epochs.push_back(rec);

        const double monitored = rec.val_loss.value_or(rec.train_loss);
        bool stop = false;
        if (stopper) {
            if (stopper->update(monitored, epoch)) best_weights = model.parameters().snapshot();
            stop = stopper->should_stop();
        }
        if (plateau) lr = plateau->step(monitored, lr);
        if (cfg.stop_below && mse_of(predict(model, data), data.targets) < *cfg.stop_below) break;
        if (stop) {
            log.stopped_early = true;
            break;
        }
    }
    if (stopper && !best_weights.empty()) {
        model.parameters().restore(best_weights);
        log.best_epoch = stopper->best_epoch();
    }
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return log;
}

struct MetricsReport {
    std::string model;
    std::string target;
    double mae = 0.0;
    std::optional<double> r2;
    std::size_t n = 0;
};

inline MetricsReport score(const std::vector<double>& pred, const std::vector<double>& truth, std::string model,
                           std::string target) {
    if (pred.empty()) throw DataError("cannot evaluate on an empty set");
    return {std::move(model), std::move(target), mean_absolute_error(pred, truth), r2_score(pred, truth), pred.size()};
}

struct Evaluation {
    MetricsReport report;
    std::vector<double> predictions;
};

inline Evaluation evaluate(Model<float>& model, const TrainingData& test, const std::string& target) {
    auto pred = predict(model, test);
    return {score(pred, test.targets, model.name(), target), std::move(pred)};
}

}  // namespace meltpool
