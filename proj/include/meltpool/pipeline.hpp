#pragma once

// Dataset -> model inputs. The scaler is fitted in the constructor from the
// train partition only (or restored from a checkpoint); nothing downstream can
// refit it.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "meltpool/dataset.hpp"
#include "meltpool/training.hpp"

namespace meltpool {

struct PrepareOptions {
    Target target = Target::mp_ratio;
    double train_fraction = 0.8;
    SplitMode split = SplitMode::chronological;
    std::uint64_t split_seed = 0;
    double angle_deg = 7.0;
    std::size_t image_size = 128;
    bool with_frames = true;
    std::optional<RangeScaler> scaler;  // fitted on the train partition when absent
};

/// Samples with a defined target, in time order, split into partitions.
class PreparedData {
   public:
    PreparedData(const Dataset& ds, const PrepareOptions& opt) : opt_(opt) {
        for (const auto& s : ds.samples) {
            auto y = target_value(s.labels, opt.target);
            if (!y) {
                ++dropped_;
                continue;
            }
            time_index_.push_back(s.time_index);
            targets_.push_back(*y);
            raw_absorptivity_.push_back(s.absorptivity);
            if (opt.with_frames) {
                auto f = preprocess_frame(s.frame, opt.angle_deg, opt.image_size);
                frames_.insert(frames_.end(), f.values().begin(), f.values().end());
            }
        }
        split_ = split_indices(targets_.size(), opt.train_fraction, opt.split, opt.split_seed);
        if (opt.scaler) {
            scaler_ = *opt.scaler;
        } else {
            std::vector<double> fit_values;
            for (auto p : split_.train) fit_values.push_back(raw_absorptivity_[p]);
            scaler_ = RangeScaler::fit(fit_values);
        }
        for (double a : raw_absorptivity_) scaled_absorptivity_.push_back(scaler_.transform(a));
    }

    std::size_t size() const { return targets_.size(); }
    std::size_t dropped() const { return dropped_; }
    const PrepareOptions& options() const { return opt_; }
    const SplitIndices& split() const { return split_; }
    const RangeScaler& scaler() const { return scaler_; }
    const std::vector<double>& targets() const { return targets_; }
    const std::vector<std::size_t>& time_index() const { return time_index_; }
    const std::vector<double>& raw_absorptivity() const { return raw_absorptivity_; }
    const std::vector<double>& scaled_absorptivity() const { return scaled_absorptivity_; }
    bool has_frames() const { return opt_.with_frames; }

    /// Rows for `positions` shaped for `spec`'s ports. Positions whose window
    /// would start before the series are skipped; `used` receives the rest.
    TrainingData assemble(const ModelSpec& spec, const std::vector<std::size_t>& positions,
                          const std::vector<double>* targets = nullptr, std::vector<std::size_t>* used = nullptr) const {
        std::size_t window = 1;
        for (const auto& b : spec.branches) {
            if (b.port == kAbsorptivityPort && b.input_shape.size() == 2) window = std::max(window, b.input_shape[0]);
        }
        std::vector<std::size_t> rows;
        for (auto p : positions)
            if (p + 1 >= window) rows.push_back(p);

        const auto& y = targets ? *targets : targets_;
        if (y.size() != size()) throw std::logic_error("assemble: target vector does not cover the dataset");
        TrainingData out;
        for (auto p : rows) out.targets.push_back(y[p]);
        for (const auto& b : spec.branches) {
            Shape shape = b.input_shape;
            shape.insert(shape.begin(), rows.size());
            std::vector<float> v;
            v.reserve(numel(shape));
            if (b.port == kImagePort) {
                if (!has_frames()) throw ConfigError("model '" + spec.name + "' needs image frames, but none were loaded");
                const std::size_t side = opt_.image_size, px = side * side;
                if (b.input_shape != Shape{side, side, 1}) {
                    throw ShapeError("port 'image' expects " + to_string(b.input_shape) + " but frames are " +
                                     std::to_string(side) + "x" + std::to_string(side));
                }
                for (auto p : rows) v.insert(v.end(), frames_.begin() + static_cast<long>(p * px), frames_.begin() + static_cast<long>((p + 1) * px));
            } else if (b.port == kAbsorptivityPort) {
                const std::size_t t = b.input_shape.size() == 2 ? b.input_shape[0] : 1;
                for (auto p : rows)
                    for (std::size_t k = 0; k < t; ++k) v.push_back(static_cast<float>(scaled_absorptivity_[p + 1 - t + k]));
            } else {
                throw ConfigError("model port '" + b.port + "' has no data source");
            }
            if (rows.empty()) throw DataError("no rows left for model '" + spec.name + "' after windowing");
            out.inputs[b.port] = Tensor<float>(shape, std::move(v));
        }
        if (used) *used = rows;
        return out;
    }

   private:
    PrepareOptions opt_;
    std::size_t dropped_ = 0;
    std::vector<std::size_t> time_index_;
    std::vector<double> targets_;
    std::vector<double> raw_absorptivity_;
    std::vector<double> scaled_absorptivity_;
    std::vector<float> frames_;
    SplitIndices split_;
    RangeScaler scaler_;
};

inline std::vector<std::size_t> all_positions(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    return p;
}

struct RunResult {
    TrainLog log;
    Evaluation test;
    std::vector<std::size_t> test_positions;
};

/// Trains `model` on the train partition and scores it on the test partition.
inline RunResult fit_and_evaluate(Model<float>& model, const PreparedData& data, const TrainConfig& cfg) {
    RunResult r;
    const auto train_set = data.assemble(model.spec(), data.split().train);
    r.log = train(model, train_set, cfg);
    const auto test_set = data.assemble(model.spec(), data.split().test, nullptr, &r.test_positions);
    r.test = evaluate(model, test_set, to_string(data.options().target));
    return r;
}

// ---------------------------------------------------------------------------
// Distillation
// ---------------------------------------------------------------------------

/// Teacher output for every position of the dataset (NaN where the teacher's
/// own window does not fit).
inline std::vector<double> teacher_predictions(Model<float>& teacher, const PreparedData& data) {
    for (const auto& port : teacher.input_ports()) {
        if (port == kImagePort && !data.has_frames()) {
            throw ConfigError("teacher '" + teacher.name() + "' needs image frames, but the dataset was loaded without them");
        }
        if (port != kImagePort && port != kAbsorptivityPort) throw ConfigError("teacher port '" + port + "' has no data source");
    }
    std::vector<std::size_t> used;
    const auto set = data.assemble(teacher.spec(), all_positions(data.size()), nullptr, &used);
    const auto pred = predict(teacher, set);
    std::vector<double> out(data.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < used.size(); ++i) out[used[i]] = pred[i];
    return out;
}

struct DistillResult {
    Model<float> student;
    TrainLog log;
    MetricsReport vs_teacher;
    MetricsReport vs_labels;
    std::vector<std::size_t> test_positions;
    std::vector<double> predictions;
    std::vector<double> teacher_on_test;
};

/// Trains a student on absorptivity windows over the whole dataset whose only
/// targets are the teacher's predictions. Labels are read solely to report the
/// second set of test-partition metrics.
inline DistillResult distill_from_predictions(const std::vector<double>& teacher_pred, const PreparedData& data,
                                              const TrainConfig& cfg, const StudentOptions& opt = {}) {
    if (teacher_pred.size() != data.size()) throw std::logic_error("teacher predictions do not cover the dataset");
    DistillResult r{Model<float>(student_spec(opt), cfg.seed), {}, {}, {}, {}, {}, {}};
    std::vector<std::size_t> covered;
    for (std::size_t p = 0; p < data.size(); ++p)
        if (std::isfinite(teacher_pred[p])) covered.push_back(p);
    const auto train_set = data.assemble(r.student.spec(), covered, &teacher_pred);
    r.log = train(r.student, train_set, cfg);

    const auto test_vs_teacher = data.assemble(r.student.spec(), data.split().test, &teacher_pred, &r.test_positions);
    r.predictions = predict(r.student, test_vs_teacher);
    r.teacher_on_test = test_vs_teacher.targets;
    const std::string target = to_string(data.options().target);
    r.vs_teacher = score(r.predictions, r.teacher_on_test, "student", target);
    std::vector<double> labels;
    for (auto p : r.test_positions) labels.push_back(data.targets()[p]);
    r.vs_labels = score(r.predictions, labels, "student", target);
    return r;
}

inline DistillResult distill(Model<float>& teacher, const PreparedData& data, const TrainConfig& cfg,
                             const StudentOptions& opt = {}) {
    return distill_from_predictions(teacher_predictions(teacher, data), data, cfg, opt);
}

}  // namespace meltpool
