#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "meltpool/pipeline.hpp"
#include "meltpool/synth.hpp"

using namespace meltpool;

namespace {

PreparedData small_series(std::uint64_t seed = 0, std::size_t frames = 60) {
    SynthConfig cfg;
    cfg.n_frames = frames;
    cfg.laser_on = 3;
    cfg.laser_off = frames - 5;
    cfg.seed = seed;
    cfg.image_size = 16;
    cfg.interface_row = 5;
    cfg.mp_width = 7;
    PrepareOptions opt;
    opt.with_frames = false;
    return PreparedData(synth_generate(cfg), opt);
}

TrainConfig quick(std::size_t epochs, std::uint64_t seed = 0) {
    TrainConfig c;
    c.epochs_max = epochs;
    c.batch_size = 8;
    c.lr = 1e-2;
    c.seed = seed;
    return c;
}

std::vector<std::vector<float>> weights(const Model<float>& m) { return m.parameters().snapshot(); }

}  // namespace

// ---------------------------------------------------------------------------
// Schedulers
// ---------------------------------------------------------------------------

TEST(EarlyStoppingTest, FlatLossStopsAtEpochFourAndKeepsEpochOne) {
    EarlyStopping es(3);
    std::size_t stopped = 0;
    for (std::size_t epoch = 1; epoch <= 10; ++epoch) {
        es.update(1.0, epoch);
        if (es.should_stop()) {
            stopped = epoch;
            break;
        }
    }
    EXPECT_EQ(stopped, 4u);
    EXPECT_EQ(es.best_epoch(), 1u);
}

TEST(EarlyStoppingTest, ImprovementResetsWait) {
    EarlyStopping es(2);
    EXPECT_TRUE(es.update(1.0, 1));
    EXPECT_FALSE(es.update(1.0, 2));
    EXPECT_TRUE(es.update(0.5, 3));
    EXPECT_FALSE(es.update(0.6, 4));
    EXPECT_FALSE(es.should_stop());
    EXPECT_FALSE(es.update(0.5, 5));
    EXPECT_TRUE(es.should_stop());
    EXPECT_EQ(es.best_epoch(), 3u);
}

TEST(PlateauTest, ThirtyOneStagnantEpochsHalveTheRate) {
    PlateauScheduler p(0.5, 30, 1e-6);
    double lr = 1e-4;
    for (int i = 0; i < 30; ++i) lr = p.step(1.0, lr);
    EXPECT_DOUBLE_EQ(lr, 1e-4);
    lr = p.step(1.0, lr);
    EXPECT_DOUBLE_EQ(lr, 5e-5);
}

TEST(PlateauTest, NeverGoesBelowFloor) {
    PlateauScheduler p(0.5, 1, 1e-6);
    double lr = 1e-5;
    for (int i = 0; i < 50; ++i) {
        const double next = p.step(1.0, lr);
        EXPECT_LE(next, lr);
        lr = next;
    }
    EXPECT_DOUBLE_EQ(lr, 1e-6);
}

TEST(TrainConfigTest, RecipesAndValidation) {
    const auto rnn = recipe_for("rnn");
    EXPECT_EQ(rnn.batch_size, 32u);
    EXPECT_DOUBLE_EQ(rnn.lr, 1e-4);
    EXPECT_EQ(rnn.early_stop_patience, 80u);
    EXPECT_EQ(rnn.plateau_patience, 30u);
    EXPECT_DOUBLE_EQ(*rnn.plateau_factor, 0.5);
    EXPECT_EQ(recipe_for("cnn").batch_size, 8u);
    EXPECT_EQ(recipe_for("cnn").epochs_max, 10000u);
    EXPECT_EQ(recipe_for("fused").epochs_max, 5000u);
    EXPECT_EQ(recipe_for("student").batch_size, 8u);
    EXPECT_FALSE(recipe_for("student").uses_validation());
    EXPECT_FALSE(recipe_for("cnn").uses_validation());
    EXPECT_THROW(recipe_for("mlp"), ConfigError);

    TrainConfig c;
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lr_min = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.early_stop_patience = 5;
    c.val_fraction = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(BatchingTest, TrailingSingletonIsMerged) {
    std::mt19937_64 rng(0);
    auto b = detail::make_batches(17, 8, false, rng);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b.back().size(), 9u);
    EXPECT_EQ(detail::make_batches(18, 8, false, rng).size(), 3u);
    EXPECT_EQ(detail::make_batches(1, 8, false, rng).size(), 1u);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TEST(TrainTest, NanTargetAbortsWithDiagnostic) {
    auto data = small_series();
    auto model = build_student(0);
    auto set = data.assemble(model.spec(), data.split().train);
    set.targets[3] = std::numeric_limits<double>::quiet_NaN();
    try {
        train(model, set, quick(5));
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("batch 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("lr 0.01"), std::string::npos) << msg;
    }
}

TEST(TrainTest, LossDecreasesOnLearnableSeries) {
    auto data = small_series();
    auto model = build_student(1);
    const auto set = data.assemble(model.spec(), data.split().train);
    const double before = mse_of(predict(model, set), set.targets);
    train(model, set, quick(60));
    EXPECT_LT(mse_of(predict(model, set), set.targets), 0.1 * before);
}

TEST(TrainTest, LogInvariantsWithEarlyStoppingAndPlateau) {
    auto data = small_series(2);
    auto model = build_student(2);
    const auto set = data.assemble(model.spec(), data.split().train);
    auto cfg = quick(400);
    cfg.early_stop_patience = 15;
    cfg.plateau_factor = 0.5;
    cfg.plateau_patience = 5;
    const auto log = train(model, set, cfg);
    ASSERT_TRUE(log.best_epoch.has_value());
    for (std::size_t i = 1; i < log.epochs.size(); ++i) EXPECT_LE(log.epochs[i].lr, log.epochs[i - 1].lr);
    const auto best = *log.epochs[*log.best_epoch - 1].val_loss;
    for (std::size_t i = *log.best_epoch; i < log.epochs.size(); ++i) EXPECT_GE(*log.epochs[i].val_loss, best);
    if (log.stopped_early) {
        EXPECT_EQ(log.epochs.size(), *log.best_epoch + 15);
    }

    // the restored weights reproduce the best validation loss
    const std::size_t n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(set.size())));
    const auto val = set.range(set.size() - n_val, set.size());
    EXPECT_NEAR(mse_of(predict(model, val), val.targets), best, 1e-9);
}

TEST(TrainTest, SameSeedGivesBitwiseIdenticalWeights) {
    auto data = small_series(3);
    auto run = [&](bool shuffle) {
        auto model = build_student(7);
        auto cfg = quick(20, 7);
        cfg.shuffle = shuffle;
        train(model, data.assemble(model.spec(), data.split().train), cfg);
        return weights(model);
    };
    EXPECT_EQ(run(false), run(false));
    EXPECT_EQ(run(true), run(true));
}

TEST(TrainTest, StopBelowEndsEarly) {
    auto data = small_series(4);
    auto model = build_student(4);
    const auto set = data.assemble(model.spec(), data.split().train);
    auto cfg = quick(2000);
    cfg.stop_below = 0.05;
    const auto log = train(model, set, cfg);
    EXPECT_LT(log.epochs.size(), 2000u);
    EXPECT_LT(mse_of(predict(model, set), set.targets), 0.05);
}

TEST(PredictTest, IndependentOfBatchComposition) {
    auto data = small_series(5);
    auto model = build_rnn_absorptivity(5);
    const auto set = data.assemble(model.spec(), all_positions(data.size()));
    const auto all = predict(model, set);
    std::vector<std::size_t> rows{10, 11, 12};
    const auto part = predict(model, set.subset(rows));
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_NEAR(part[i], all[rows[i]], 1e-5);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

TEST(EvaluateTest, Examples) {
    const std::vector<double> y{1.0, 2.0, 4.0, 5.0};
    auto exact = score(y, y, "m", "mp_ratio");
    EXPECT_DOUBLE_EQ(exact.mae, 0.0);
    EXPECT_DOUBLE_EQ(*exact.r2, 1.0);
    EXPECT_EQ(exact.n, 4u);
    const std::vector<double> mean(4, 3.0);
    EXPECT_NEAR(*score(mean, y, "m", "mp_ratio").r2, 0.0, 1e-15);
    const std::vector<double> flat(4, 2.0);
    auto degenerate = score(y, flat, "m", "mp_ratio");
    EXPECT_FALSE(degenerate.r2.has_value());
    EXPECT_DOUBLE_EQ(degenerate.mae, 1.5);
    EXPECT_THROW(score({}, {}, "m", "mp_ratio"), DataError);
}

TEST(EvaluateTest, MetricsArePermutationInvariantAndBounded) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(20), y(20);
        for (std::size_t i = 0; i < 20; ++i) {
            y[i] = n(rng);
            p[i] = y[i] + 0.5 * n(rng);
        }
        const auto a = score(p, y, "m", "t");
        std::vector<std::size_t> perm(20);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> pp, yy;
        for (auto i : perm) {
            pp.push_back(p[i]);
            yy.push_back(y[i]);
        }
        const auto b = score(pp, yy, "m", "t");
        EXPECT_NEAR(a.mae, b.mae, 1e-12);
        EXPECT_NEAR(*a.r2, *b.r2, 1e-12);
        EXPECT_GE(a.mae, 0.0);
        EXPECT_LT(*a.r2, 1.0);
    }
}

// ---------------------------------------------------------------------------
// Distillation
// ---------------------------------------------------------------------------

TEST(DistillTest, ConstantTeacherIsMatched) {
    auto data = small_series(6);
    const std::vector<double> teacher(data.size(), 1.7);
    auto cfg = quick(3000, 6);
    cfg.lr = 1e-3;
    cfg.stop_below = 1e-6;
    auto r = distill_from_predictions(teacher, data, cfg);
    EXPECT_LT(mse_of(r.predictions, r.teacher_on_test), 1e-4);
}

TEST(DistillTest, OracleTeacherMetricsCoincide) {
    auto data = small_series(7);
    auto r = distill_from_predictions(data.targets(), data, quick(30, 7));
    EXPECT_NEAR(r.vs_teacher.mae, r.vs_labels.mae, 1e-6);
    EXPECT_NEAR(*r.vs_teacher.r2, *r.vs_labels.r2, 1e-6);
    EXPECT_EQ(r.vs_teacher.n, r.vs_labels.n);
}

TEST(DistillTest, StudentNeverSeesLabels) {
    SynthConfig cfg;
    cfg.n_frames = 50;
    cfg.laser_on = 0;
    cfg.laser_off = 45;
    cfg.image_size = 16;
    cfg.interface_row = 5;
    cfg.mp_width = 7;
    auto ds = synth_generate(cfg);
    PrepareOptions opt;
    opt.with_frames = false;
    PreparedData clean(ds, opt);
    std::vector<double> teacher(clean.size());
    for (std::size_t i = 0; i < teacher.size(); ++i) teacher[i] = 2.0 + std::sin(0.3 * static_cast<double>(i));

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (auto& s : ds.samples) s.labels.mp_width *= u(rng);
    PreparedData corrupted(ds, opt);

    auto a = distill_from_predictions(teacher, clean, quick(15, 3));
    auto b = distill_from_predictions(teacher, corrupted, quick(15, 3));
    EXPECT_EQ(weights(a.student), weights(b.student));
    EXPECT_EQ(a.predictions, b.predictions);
    EXPECT_NE(a.vs_labels.mae, b.vs_labels.mae);
}

TEST(DistillTest, StudentTrainsOnTeacherOutputsForEveryWindow) {
    auto data = small_series(10);
    std::vector<double> teacher(data.size(), 2.0);
    auto a = distill_from_predictions(teacher, data, quick(5, 1));
    teacher[data.split().test.back()] = 3.0;
    auto b = distill_from_predictions(teacher, data, quick(5, 1));
    EXPECT_NE(weights(a.student), weights(b.student));

    // a teacher with a longer window leaves the first positions uncovered
    std::vector<double> partial(data.size(), 2.0);
    for (std::size_t i = 0; i < 7; ++i) partial[i] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_NO_THROW(distill_from_predictions(partial, data, quick(2, 1)));
}

TEST(DistillTest, ImageTeacherNeedsFrames) {
    auto data = small_series(8);
    auto teacher = build_cnn_xray(0, {.image_size = 16, .filters = {4}, .head_units = 4});
    EXPECT_THROW(teacher_predictions(teacher, data), ConfigError);
}

TEST(DistillTest, TeacherPredictionsCoverWindowablePositions) {
    auto data = small_series(9);
    auto teacher = build_student(0, {.seq_len = 3});
    const auto pred = teacher_predictions(teacher, data);
    ASSERT_EQ(pred.size(), data.size());
    EXPECT_TRUE(std::isnan(pred[0]));
    EXPECT_TRUE(std::isnan(pred[1]));
    for (std::size_t i = 2; i < pred.size(); ++i) EXPECT_TRUE(std::isfinite(pred[i]));
}
