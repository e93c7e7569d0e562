#pragma once

// Run orchestration shared by the command-line tool: configuration
// resolution, dataset acquisition and the artifact layout of a run directory.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "meltpool/checkpoint.hpp"
#include "meltpool/pipeline.hpp"
#include "meltpool/synth.hpp"

namespace meltpool {

/// Keeps large freed blocks in the heap instead of returning them to the OS;
/// every training step allocates and frees the same tens of megabytes.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string model = "fused";
    Target target = Target::mp_ratio;
    std::uint64_t seed = 0;
    bool deterministic = true;
    std::string output = "run";
    std::string teacher;
    std::size_t seq_len = 0;  // 0: the model's own default

    std::string data;  // dataset directory; synthesized from `synth` when empty
    SplitMode split = SplitMode::chronological;
    double train_fraction = 0.8;
    double angle_deg = 7.0;

    SynthConfig synth;
    TrainConfig train = recipe_for("fused");
};

/// Ordered "section.key" = value pairs; later entries win.
using Settings = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename U>
U parse_config_number(const std::string& key, const std::string& v) {
    U out{};
    const char* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError(key + ": '" + v + "' is not a valid number");
    return out;
}

inline std::string fmt(double v) { return format_number(v); }

template <typename U>
std::string fmt_opt(const std::optional<U>& v) {
    if (!v) return "none";
    if constexpr (std::is_floating_point_v<U>) return format_number(*v);
    else return std::to_string(*v);
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

inline std::map<std::string, Setter> config_setters() {
    std::map<std::string, Setter> s;
    auto size = [](std::size_t RunConfig::*m) {
        return [m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_config_number<std::size_t>(k, v); };
    };
    auto synth_size = [](std::size_t SynthConfig::*m) {
        return [m](RunConfig& c, const std::string& k, const std::string& v) { c.synth.*m = parse_config_number<std::size_t>(k, v); };
    };
    auto synth_real = [](double SynthConfig::*m) {
        return [m](RunConfig& c, const std::string& k, const std::string& v) { c.synth.*m = parse_config_number<double>(k, v); };
    };
    auto opt_size = [](std::optional<std::size_t> TrainConfig::*m) {
        return [m](RunConfig& c, const std::string& k, const std::string& v) {
            if (v == "none") c.train.*m = std::nullopt;
            else c.train.*m = parse_config_number<std::size_t>(k, v);
        };
    };

    s["run.model"] = [](RunConfig& c, const std::string&, const std::string& v) { c.model = v; };
    s["run.target"] = [](RunConfig& c, const std::string&, const std::string& v) { c.target = target_from_string(v); };
    s["run.seed"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_config_number<std::uint64_t>(k, v); };
    s["run.deterministic"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.deterministic = parse_bool(k, v); };
    s["run.output"] = [](RunConfig& c, const std::string&, const std::string& v) { c.output = v; };
    s["run.teacher"] = [](RunConfig& c, const std::string&, const std::string& v) { c.teacher = v; };
    s["run.seq_len"] = size(&RunConfig::seq_len);

    s["data.path"] = [](RunConfig& c, const std::string&, const std::string& v) { c.data = v; };
    s["data.split"] = [](RunConfig& c, const std::string&, const std::string& v) { c.split = split_mode_from_string(v); };
    s["data.train_fraction"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.train_fraction = parse_config_number<double>(k, v); };
    s["data.angle_deg"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.angle_deg = parse_config_number<double>(k, v); };

    s["synth.n_frames"] = synth_size(&SynthConfig::n_frames);
    s["synth.seed"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.seed = parse_config_number<std::uint64_t>(k, v); };
    s["synth.laser_on"] = synth_size(&SynthConfig::laser_on);
    s["synth.laser_off"] = synth_size(&SynthConfig::laser_off);
    s["synth.image_size"] = synth_size(&SynthConfig::image_size);
    for (auto [name, m] : std::initializer_list<std::pair<const char*, double SynthConfig::*>>{
             {"mp_ratio", &SynthConfig::mp_ratio},
             {"transient_amplitude", &SynthConfig::transient_amplitude},
             {"transient_decay", &SynthConfig::transient_decay},
             {"transient_period", &SynthConfig::transient_period},
             {"fluctuation_std", &SynthConfig::fluctuation_std},
             {"fluctuation_corr", &SynthConfig::fluctuation_corr},
             {"mp_noise_std", &SynthConfig::mp_noise_std},
             {"off_rise", &SynthConfig::off_rise},
             {"off_decay", &SynthConfig::off_decay},
             {"kh_aspect", &SynthConfig::kh_aspect},
             {"kh_coupling", &SynthConfig::kh_coupling},
             {"kh_noise_std", &SynthConfig::kh_noise_std},
             {"kh_width_fraction", &SynthConfig::kh_width_fraction},
             {"absorptivity_alpha", &SynthConfig::absorptivity_alpha},
             {"absorptivity_beta", &SynthConfig::absorptivity_beta},
             {"absorptivity_noise", &SynthConfig::absorptivity_noise},
             {"tilt_deg", &SynthConfig::tilt_deg},
             {"interface_row", &SynthConfig::interface_row},
             {"mp_width", &SynthConfig::mp_width},
             {"mp_width_std", &SynthConfig::mp_width_std},
             {"background_level", &SynthConfig::background_level},
             {"substrate_level", &SynthConfig::substrate_level},
             {"melt_level", &SynthConfig::melt_level},
             {"keyhole_level", &SynthConfig::keyhole_level},
             {"image_noise", &SynthConfig::image_noise}}) {
        s[std::string("synth.") + name] = synth_real(m);
    }

    s["train.epochs"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs_max = parse_config_number<std::size_t>(k, v); };
    s["train.batch_size"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_config_number<std::size_t>(k, v); };
    s["train.lr"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr = parse_config_number<double>(k, v); };
    s["train.lr_min"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr_min = parse_config_number<double>(k, v); };
    s["train.val_fraction"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.train.val_fraction = parse_config_number<double>(k, v); };
    s["train.early_stop_patience"] = opt_size(&TrainConfig::early_stop_patience);
    s["train.plateau_patience"] = opt_size(&TrainConfig::plateau_patience);
    s["train.plateau_factor"] = [](RunConfig& c, const std::string& k, const std::string& v) {
        if (v == "none") c.train.plateau_factor = std::nullopt;
        else c.train.plateau_factor = parse_config_number<double>(k, v);
    };
    return s;
}

}  // namespace detail

/// Reads an INI document into settings. Keys outside a section are rejected,
/// as are unknown keys (checked in resolve_config).
inline Settings parse_config_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigINI().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    Settings out;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;  // section markers
        const std::string key = item.fullname();
        if (item.parents.size() != 1) throw ConfigError(origin + ": key '" + key + "' must sit inside a [section]");
        if (item.inputs.size() > 1) throw ConfigError(origin + ": key '" + key + "' takes a single value");
        out.emplace_back(key, item.inputs.empty() ? std::string() : item.inputs.front());
    }
    return out;
}

inline Settings read_config_file(const std::filesystem::path& path) {
    return parse_config_text(read_file(path), path.string());
}

/// Defaults, then the model's recipe, then `settings` in order.
inline RunConfig resolve_config(const Settings& settings) {
    const auto setters = detail::config_setters();
    for (const auto& [key, value] : settings) {
        if (!setters.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    RunConfig cfg;
    for (const auto& [key, value] : settings)
        if (key == "run.model") cfg.model = value;
    if (cfg.model != "cnn" && cfg.model != "rnn" && cfg.model != "fused" && cfg.model != "student") {
        throw ConfigError("unknown model '" + cfg.model + "' (expected cnn, rnn, fused or student)");
    }
    cfg.train = recipe_for(cfg.model);

    bool synth_seed_given = false;
    for (const auto& [key, value] : settings) {
        setters.at(key)(cfg, key, value);
        synth_seed_given = synth_seed_given || key == "synth.seed";
    }
    if (!synth_seed_given) cfg.synth.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.train.shuffle = !cfg.deterministic;
    cfg.train.validate();
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) throw ConfigError("data.train_fraction must lie in (0, 1)");
    return cfg;
}

/// Fully resolved configuration as INI. The output directory is left out of
/// the hashed form so that identical runs in different places hash alike.
inline std::string to_ini(const RunConfig& c, bool with_output = true) {
    using detail::fmt;
    using detail::fmt_opt;
    const auto& s = c.synth;
    const auto& t = c.train;
    std::ostringstream o;
    o << "[run]\n"
      << "model = " << c.model << "\n"
      << "target = " << to_string(c.target) << "\n"
      << "seed = " << c.seed << "\n"
      << "deterministic = " << (c.deterministic ? "true" : "false") << "\n";
    if (with_output) o << "output = " << c.output << "\n";
    o << "teacher = " << c.teacher << "\n"
      << "seq_len = " << c.seq_len << "\n\n"
      << "[data]\n"
      << "path = " << c.data << "\n"
      << "split = " << (c.split == SplitMode::chronological ? "chronological" : "random") << "\n"
      << "train_fraction = " << fmt(c.train_fraction) << "\n"
      << "angle_deg = " << fmt(c.angle_deg) << "\n\n"
      << "[synth]\n";
    const auto synth_json = to_json_value(s);
    for (const auto& [key, value] : synth_json.items()) {
        o << key << " = " << (value.is_number_float() ? fmt(value.get<double>()) : value.dump()) << "\n";
    }
    o << "\n[train]\n"
      << "epochs = " << t.epochs_max << "\n"
      << "batch_size = " << t.batch_size << "\n"
      << "lr = " << fmt(t.lr) << "\n"
      << "early_stop_patience = " << fmt_opt(t.early_stop_patience) << "\n"
      << "plateau_factor = " << fmt_opt(t.plateau_factor) << "\n"
      << "plateau_patience = " << fmt_opt(t.plateau_patience) << "\n"
      << "lr_min = " << fmt(t.lr_min) << "\n"
      << "val_fraction = " << fmt(t.val_fraction) << "\n";
    return o.str();
}

inline std::string config_hash(const RunConfig& c) {
    const std::string text = to_ini(c, false);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", detail::crc32_of(text.data(), text.size()));
    return buf;
}

inline std::string describe_recipe(const std::string& model, const TrainConfig& t) {
    using detail::fmt_opt;
    return model + " recipe: epochs " + std::to_string(t.epochs_max) + ", batch " + std::to_string(t.batch_size) + ", lr " +
           detail::format_lr(t.lr) + ", early stop " + fmt_opt(t.early_stop_patience) + ", plateau " +
           fmt_opt(t.plateau_factor) + "/" + fmt_opt(t.plateau_patience) + ", lr_min " + detail::format_lr(t.lr_min);
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

inline void prepare_output_dir(const std::filesystem::path& dir, bool force) {
    namespace fs = std::filesystem;
    if (fs::exists(dir) && !fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
    if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
        throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

inline Dataset obtain_dataset(const RunConfig& c) {
    if (!c.data.empty()) return load_dataset(c.data);
    return synth_generate(c.synth);
}

inline bool needs_frames(const ModelSpec& spec) {
    return std::any_of(spec.branches.begin(), spec.branches.end(), [](const BranchSpec& b) { return b.port == kImagePort; });
}

inline std::size_t image_side(const ModelSpec& spec) {
    for (const auto& b : spec.branches)
        if (b.port == kImagePort) return b.input_shape[0];
    return 128;
}

inline std::size_t window_of(const ModelSpec& spec) {
    for (const auto& b : spec.branches)
        if (b.port == kAbsorptivityPort && b.input_shape.size() == 2) return b.input_shape[0];
    return 1;
}

inline PrepareOptions prepare_options(const RunConfig& c, const ModelSpec& spec) {
    PrepareOptions o;
    o.target = c.target;
    o.train_fraction = c.train_fraction;
    o.split = c.split;
    o.split_seed = c.seed;
    o.angle_deg = c.angle_deg;
    o.image_size = image_side(spec);
    o.with_frames = needs_frames(spec);
    return o;
}

/// Everything predict/evaluate need to rebuild the inputs of a checkpoint.
inline nlohmann::json checkpoint_metadata(const RunConfig& c, const PreparedData& data, const ModelSpec& spec) {
    const auto& o = data.options();
    return {{"kind", c.model},
            {"target", to_string(o.target)},
            {"scaler", data.scaler().to_json()},
            {"seq_len", window_of(spec)},
            {"split", o.split == SplitMode::chronological ? "chronological" : "random"},
            {"split_seed", o.split_seed},
            {"train_fraction", o.train_fraction},
            {"angle_deg", o.angle_deg},
            {"image_size", o.image_size},
            {"seed", c.seed},
            {"config_hash", config_hash(c)}};
}

inline PrepareOptions prepare_options_from(const nlohmann::json& meta, bool with_frames) {
    PrepareOptions o;
    try {
        o.target = target_from_string(meta.at("target").get<std::string>());
        o.scaler = RangeScaler::from_json(meta.at("scaler"));
        o.split = split_mode_from_string(meta.at("split").get<std::string>());
        o.split_seed = meta.at("split_seed").get<std::uint64_t>();
        o.train_fraction = meta.at("train_fraction").get<double>();
        o.angle_deg = meta.at("angle_deg").get<double>();
        o.image_size = meta.at("image_size").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint metadata incomplete: ") + e.what());
    }
    o.with_frames = with_frames;
    return o;
}

inline nlohmann::json metrics_json(const MetricsReport& m) {
    nlohmann::json j{{"model", m.model}, {"target", m.target}, {"mae", m.mae}, {"n", m.n}};
    j["r2"] = m.r2 ? nlohmann::json(*m.r2) : nlohmann::json(nullptr);
    return j;
}

inline std::string trainlog_csv(const TrainLog& log) {
    std::string out = "epoch,train_loss,val_loss,lr\n";
    for (const auto& e : log.epochs) {
        out += std::to_string(e.epoch) + "," + format_number(e.train_loss) + "," +
               (e.val_loss ? format_number(*e.val_loss) : std::string()) + "," + format_number(e.lr) + "\n";
    }
    return out;
}

struct PredictionRows {
    std::vector<std::size_t> index;
    std::vector<double> y_true;
    std::vector<double> y_pred;
    std::vector<double> y_teacher;  // empty unless distilled
};

inline std::string predictions_csv(const PredictionRows& r) {
    const bool teacher = !r.y_teacher.empty();
    const bool truth = !r.y_true.empty();
    std::string out = "index";
    if (truth) out += ",y_true";
    out += ",y_pred";
    if (teacher) out += ",y_teacher";
    out += "\n";
    for (std::size_t i = 0; i < r.index.size(); ++i) {
        out += std::to_string(r.index[i]);
        if (truth) out += "," + format_number(r.y_true[i]);
        out += "," + format_number(r.y_pred[i]);
        if (teacher) out += "," + format_number(r.y_teacher[i]);
        out += "\n";
    }
    return out;
}

struct RunSummary {
    MetricsReport metrics;  // against the labels
    std::optional<MetricsReport> vs_teacher;
    TrainLog log;
};

namespace detail {

inline void write_run(const std::filesystem::path& dir, const RunConfig& c, const Model<float>& model,
                      const nlohmann::json& meta, nlohmann::json metrics, const PredictionRows& rows, const TrainLog& log) {
    metrics["seed"] = c.seed;
    metrics["config_hash"] = config_hash(c);
    save_checkpoint(model, dir / "model.ckpt", meta);
    write_file_atomic(dir / "metrics.json", metrics.dump(2) + "\n");
    write_file_atomic(dir / "predictions.csv", predictions_csv(rows));
    write_file_atomic(dir / "trainlog.csv", trainlog_csv(log));
    write_file_atomic(dir / "config.resolved.ini", to_ini(c));
}

}  // namespace detail

/// Trains `c.model` on the train partition and writes a run directory.
inline RunSummary run_train(const RunConfig& c, const Dataset& ds, const std::filesystem::path& dir) {
    const ModelSpec spec = spec_for(c.model, c.seq_len);
    PreparedData data(ds, prepare_options(c, spec));
    Model<float> model(spec, c.seed);
    auto r = fit_and_evaluate(model, data, c.train);

    PredictionRows rows;
    for (std::size_t i = 0; i < r.test_positions.size(); ++i) {
        rows.index.push_back(data.time_index()[r.test_positions[i]]);
        rows.y_true.push_back(data.targets()[r.test_positions[i]]);
    }
    rows.y_pred = r.test.predictions;
    detail::write_run(dir, c, model, checkpoint_metadata(c, data, spec), metrics_json(r.test.report), rows, r.log);
    return {r.test.report, std::nullopt, r.log};
}

/// Distills a student (`c.model` must be "student") from a teacher checkpoint
/// and writes a run directory. Teacher outputs over the whole dataset are kept
/// in teacher_predictions.csv.
inline RunSummary run_distill(const RunConfig& c, Checkpoint& teacher, const Dataset& ds, const std::filesystem::path& dir) {
    if (c.model != "student") throw ConfigError("distill trains a student, not '" + c.model + "'");
    const auto teacher_target = teacher.metadata.value("target", std::string());
    if (!teacher_target.empty() && teacher_target != to_string(c.target)) {
        throw ConfigError("teacher was trained on " + teacher_target + " but the run targets " + to_string(c.target));
    }
    const ModelSpec spec = spec_for("student", c.seq_len);
    PreparedData data(ds, prepare_options(c, teacher.model.spec()));
    const auto teacher_pred = teacher_predictions(teacher.model, data);
    PredictionRows all;
    for (std::size_t p = 0; p < data.size(); ++p) {
        if (!std::isfinite(teacher_pred[p])) continue;
        all.index.push_back(data.time_index()[p]);
        all.y_pred.push_back(teacher_pred[p]);
    }
    write_file_atomic(dir / "teacher_predictions.csv", predictions_csv(all));

    auto r = distill_from_predictions(teacher_pred, data, c.train, StudentOptions{.seq_len = window_of(spec)});
    PredictionRows rows;
    for (auto p : r.test_positions) {
        rows.index.push_back(data.time_index()[p]);
        rows.y_true.push_back(data.targets()[p]);
    }
    rows.y_pred = r.predictions;
    rows.y_teacher = r.teacher_on_test;
    auto metrics = metrics_json(r.vs_labels);
    metrics["vs_teacher"] = metrics_json(r.vs_teacher);
    metrics["teacher"] = teacher.model.name();
    detail::write_run(dir, c, r.student, checkpoint_metadata(c, data, spec), metrics, rows, r.log);
    return {r.vs_labels, r.vs_teacher, r.log};
}

/// Test-partition metrics of a checkpoint on a dataset, using the split and
/// scaler stored with it.
inline std::pair<MetricsReport, PredictionRows> run_evaluate(Checkpoint& ckpt, const Dataset& ds) {
    PreparedData data(ds, prepare_options_from(ckpt.metadata, needs_frames(ckpt.model.spec())));
    std::vector<std::size_t> used;
    const auto test = data.assemble(ckpt.model.spec(), data.split().test, nullptr, &used);
    auto e = evaluate(ckpt.model, test, to_string(data.options().target));
    PredictionRows rows;
    for (auto p : used) {
        rows.index.push_back(data.time_index()[p]);
        rows.y_true.push_back(data.targets()[p]);
    }
    rows.y_pred = e.predictions;
    return {e.report, rows};
}

enum class Partition { all, train, test };

inline Partition partition_from_string(const std::string& s) {
    if (s == "all") return Partition::all;
    if (s == "train") return Partition::train;
    if (s == "test") return Partition::test;
    throw ConfigError("unknown partition '" + s + "' (expected all, train or test)");
}

/// Predictions for the windowable samples of a dataset directory (optionally
/// restricted to one partition of the stored split), or of a bare absorptivity
/// CSV when the model reads absorptivity only.
inline PredictionRows run_predict(Checkpoint& ckpt, const std::filesystem::path& input, Partition part = Partition::all) {
    const ModelSpec& spec = ckpt.model.spec();
    if (std::filesystem::is_directory(input)) {
        PreparedData data(load_dataset(input), prepare_options_from(ckpt.metadata, needs_frames(spec)));
        const auto positions = part == Partition::all     ? all_positions(data.size())
                               : part == Partition::train ? data.split().train
                                                          : data.split().test;
        std::vector<std::size_t> used;
        const auto set = data.assemble(spec, positions, nullptr, &used);
        PredictionRows rows;
        for (auto p : used) {
            rows.index.push_back(data.time_index()[p]);
            rows.y_true.push_back(data.targets()[p]);
        }
        rows.y_pred = predict(ckpt.model, set);
        return rows;
    }

    for (const auto& b : spec.branches) {
        if (b.port != kAbsorptivityPort) {
            std::string ports;
            for (const auto& p : ckpt.model.input_ports()) ports += (ports.empty() ? "" : ", ") + p;
            throw ConfigError("model '" + spec.name + "' needs input ports [" + ports + "] but " + input.filename().string() +
                              " provides only absorptivity; pass a dataset directory with frames instead");
        }
    }
    if (part != Partition::all) throw ConfigError("partitions need a dataset directory, not a bare absorptivity CSV");
    const auto series = load_absorptivity_csv(input);
    const auto opt = prepare_options_from(ckpt.metadata, false);
    const std::size_t t = window_of(spec);
    if (series.size() < t) {
        throw DataError(input.string() + " has " + std::to_string(series.size()) + " rows, fewer than the window " + std::to_string(t));
    }
    std::vector<float> x;
    PredictionRows rows;
    for (std::size_t end = t - 1; end < series.size(); ++end) {
        for (std::size_t k = end + 1 - t; k <= end; ++k) x.push_back(static_cast<float>(opt.scaler->transform(series[k].second)));
        rows.index.push_back(series[end].first);
    }
    Shape shape = spec.branches.front().input_shape;
    shape.insert(shape.begin(), rows.index.size());
    TrainingData set;
    set.inputs[kAbsorptivityPort] = Tensor<float>(shape, std::move(x));
    set.targets.assign(rows.index.size(), 0.0);
    rows.y_pred = predict(ckpt.model, set);
    return rows;
}

struct CompareRow {
    std::string run;
    std::string model;
    std::string target;
    double mae = 0.0;
    std::optional<double> r2;
    std::size_t n = 0;
};

/// Reads metrics.json from each run; sorted by R² descending (undefined R²
/// last), ties by model name then run path.
inline std::vector<CompareRow> compare_runs(const std::vector<std::filesystem::path>& runs) {
    if (runs.size() < 2) throw ConfigError("compare needs at least two run directories");
    std::vector<CompareRow> rows;
    for (const auto& dir : runs) {
        const auto path = dir / "metrics.json";
        if (!std::filesystem::exists(path)) throw DataError(dir.string() + " has no metrics.json");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(path));
            CompareRow r{dir.string(), j.at("model").get<std::string>(), j.at("target").get<std::string>(),
                         j.at("mae").get<double>(), std::nullopt, j.at("n").get<std::size_t>()};
            if (!j.at("r2").is_null()) r.r2 = j.at("r2").get<double>();
            rows.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ": " + e.what());
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const CompareRow& a, const CompareRow& b) {
        const double ra = a.r2.value_or(-std::numeric_limits<double>::infinity());
        const double rb = b.r2.value_or(-std::numeric_limits<double>::infinity());
        if (ra != rb) return ra > rb;
        if (a.model != b.model) return a.model < b.model;
        return a.run < b.run;
    });
    return rows;
}

inline std::string compare_csv(const std::vector<CompareRow>& rows) {
    std::string out = "model,target,mae,r2,n,run\n";
    for (const auto& r : rows) {
        out += r.model + "," + r.target + "," + format_number(r.mae) + "," + (r.r2 ? format_number(*r.r2) : "") + "," +
               std::to_string(r.n) + "," + r.run + "\n";
    }
    return out;
}

inline std::string compare_table(const std::vector<CompareRow>& rows) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %-9s %10s %10s %5s\n", "model", "target", "MAE", "R2", "n");
    out += line;
    for (const auto& r : rows) {
        const std::string r2 = r.r2 ? std::to_string(*r.r2) : "undefined";
        std::snprintf(line, sizeof line, "%-10s %-9s %10.4f %10s %5zu\n", r.model.c_str(), r.target.c_str(), r.mae,
                      r2.substr(0, 10).c_str(), r.n);
        out += line;
    }
    return out;
}

}  // namespace meltpool
