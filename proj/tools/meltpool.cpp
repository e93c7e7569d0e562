// meltpool: synthesize data, train/distill the four models, evaluate, compare
// and predict. Exit codes: 0 ok, 2 config, 3 data, 4 numerical, 5 I/O.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meltpool/run.hpp"

namespace fs = std::filesystem;
using namespace meltpool;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    std::optional<bool> deterministic;
    std::vector<std::string> set;

    std::string model, target, data, split, teacher, checkpoint, input, partition = "all", csv;
    std::optional<std::size_t> epochs, batch_size, seq_len;
    std::optional<double> lr, train_fraction;
    std::string patience;
    std::vector<std::string> runs;
};

Settings collect_settings(const Options& o) {
    Settings s;
    if (!o.config.empty()) s = read_config_file(o.config);
    auto put = [&](const char* key, const std::string& v) {
        if (!v.empty()) s.emplace_back(key, v);
    };
    if (o.seed) put("run.seed", std::to_string(*o.seed));
    if (o.deterministic) put("run.deterministic", *o.deterministic ? "true" : "false");
    put("run.output", o.out);
    put("run.model", o.model);
    put("run.target", o.target);
    put("data.path", o.data);
    put("data.split", o.split);
    if (o.train_fraction) put("data.train_fraction", format_number(*o.train_fraction));
    if (o.seq_len) put("run.seq_len", std::to_string(*o.seq_len));
    if (o.epochs) put("train.epochs", std::to_string(*o.epochs));
    if (o.batch_size) put("train.batch_size", std::to_string(*o.batch_size));
    if (o.lr) put("train.lr", format_number(*o.lr));
    put("train.early_stop_patience", o.patience);
    for (const auto& kv : o.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
        s.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return s;
}

void announce(const RunConfig& c) {
    std::cerr << describe_recipe(c.model, c.train) << "\n";
    std::cerr << "seed " << c.seed << ", target " << to_string(c.target) << ", "
              << (c.deterministic ? "chronological batches" : "shuffled batches") << "\n";
}

Dataset dataset_for(const RunConfig& c) {
    if (c.data.empty()) std::cerr << "no data.path given; synthesizing " << c.synth.n_frames << " frames (seed " << c.synth.seed << ")\n";
    return obtain_dataset(c);
}

int cmd_synth(const Options& o) {
    Settings s = collect_settings(o);
    const RunConfig c = resolve_config(s);
    prepare_output_dir(c.output, o.force);
    const Dataset ds = synth_generate(c.synth);
    const std::size_t labelled = c.synth.n_frames > c.synth.laser_on ? c.synth.n_frames - c.synth.laser_on : 0;
    if (labelled < 5) {
        std::cerr << "warning: only " << labelled << " frames carry a melt pool; splitting and windowing will fail downstream\n";
    }
    save_dataset(ds, c.output);
    std::cout << c.output << "\n";
    return 0;
}

int cmd_train(const Options& o) {
    const RunConfig c = resolve_config(collect_settings(o));
    announce(c);
    const Dataset ds = dataset_for(c);
    prepare_output_dir(c.output, o.force);
    const auto r = run_train(c, ds, c.output);
    std::cerr << "test MAE " << r.metrics.mae << ", R2 " << (r.metrics.r2 ? std::to_string(*r.metrics.r2) : "undefined") << "\n";
    std::cout << c.output << "\n";
    return 0;
}

int cmd_distill(const Options& o) {
    Settings s = collect_settings(o);
    for (const auto& [k, v] : s) {
        if (k == "run.model" && v != "student") throw ConfigError("distill trains a student; run.model '" + v + "' does not fit");
    }
    s.insert(s.begin(), {"run.model", "student"});
    RunConfig c = resolve_config(s);
    if (!o.teacher.empty()) c.teacher = o.teacher;
    if (c.teacher.empty()) throw ConfigError("distill needs a teacher checkpoint (--teacher or run.teacher)");
    auto teacher = load_checkpoint(c.teacher);
    std::cerr << "teacher " << teacher.model.name() << " from " << c.teacher << "\n";
    announce(c);
    const Dataset ds = dataset_for(c);
    prepare_output_dir(c.output, o.force);
    const auto r = run_distill(c, teacher, ds, c.output);
    std::cerr << "vs labels: MAE " << r.metrics.mae << ", R2 " << (r.metrics.r2 ? std::to_string(*r.metrics.r2) : "undefined")
              << "; vs teacher: MAE " << r.vs_teacher->mae << "\n";
    std::cout << c.output << "\n";
    return 0;
}

int cmd_evaluate(const Options& o) {
    auto ckpt = load_checkpoint(o.checkpoint);
    const auto [report, rows] = run_evaluate(ckpt, load_dataset(o.data));
    auto metrics = metrics_json(report);
    if (!o.out.empty()) {
        prepare_output_dir(o.out, o.force);
        write_file_atomic(fs::path(o.out) / "metrics.json", metrics.dump(2) + "\n");
        write_file_atomic(fs::path(o.out) / "predictions.csv", predictions_csv(rows));
        std::cout << o.out << "\n";
    } else {
        std::cout << metrics.dump(2) << "\n";
    }
    return 0;
}

int cmd_compare(const Options& o) {
    std::vector<fs::path> dirs(o.runs.begin(), o.runs.end());
    const auto rows = compare_runs(dirs);
    std::cout << compare_table(rows);
    if (!o.csv.empty()) {
        write_file_atomic(o.csv, compare_csv(rows));
        std::cerr << "wrote " << o.csv << "\n";
    }
    return 0;
}

int cmd_predict(const Options& o) {
    auto ckpt = load_checkpoint(o.checkpoint);
    const auto rows = run_predict(ckpt, o.input, partition_from_string(o.partition));
    if (o.out.empty()) {
        std::cout << predictions_csv(rows);
        return 0;
    }
    prepare_output_dir(o.out, o.force);
    const fs::path path = fs::path(o.out) / "predictions.csv";
    write_file_atomic(path, predictions_csv(rows));
    std::cout << path.string() << "\n";
    return 0;
}

void add_train_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--data", o.data, "dataset directory (synthesized from [synth] when absent)");
    cmd->add_option("--target", o.target, "mp_ratio or kh_ratio");
    cmd->add_option("--split", o.split, "chronological or random");
    cmd->add_option("--train-fraction", o.train_fraction);
    cmd->add_option("--seq-len", o.seq_len, "absorptivity window length");
    cmd->add_option("--epochs", o.epochs);
    cmd->add_option("--batch-size", o.batch_size);
    cmd->add_option("--lr", o.lr, "initial learning rate");
    cmd->add_option("--patience", o.patience, "early-stopping patience, or none");
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    Options o;
    CLI::App app{"Melt-pool geometry from X-ray frames and absorptivity"};
    app.require_subcommand(1);
    app.add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed);
    app.add_option("--out", o.out, "output directory");
    app.add_flag("--force", o.force, "overwrite a non-empty output directory");
    app.add_flag("--deterministic,!--no-deterministic", o.deterministic, "chronological batches (default) or seeded shuffling");
    app.add_option("--set", o.set, "override any config key: section.key=value");

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
    auto* train = app.add_subcommand("train", "train one model and evaluate it on the test split");
    train->add_option("--model", o.model, "cnn, rnn, fused or student");
    add_train_flags(train, o);
    auto* distill = app.add_subcommand("distill", "train an absorptivity-only student on a teacher's outputs");
    distill->add_option("--teacher", o.teacher, "teacher checkpoint")->check(CLI::ExistingFile);
    add_train_flags(distill, o);
    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the test split of a dataset");
    evaluate->add_option("--checkpoint", o.checkpoint)->required();
    evaluate->add_option("--data", o.data)->required();
    auto* compare = app.add_subcommand("compare", "tabulate the metrics of several runs");
    compare->add_option("runs", o.runs, "run directories")->required();
    compare->add_option("--csv", o.csv, "also write the table as CSV");
    auto* predict = app.add_subcommand("predict", "predictions for a dataset directory or an absorptivity CSV");
    predict->add_option("--checkpoint", o.checkpoint)->required();
    predict->add_option("--input", o.input)->required()->check(CLI::ExistingPath);
    predict->add_option("--partition", o.partition, "all, train or test (dataset directories only)");

    for (auto* sub : {synth, train, distill, evaluate, compare, predict}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) return cmd_synth(o);
        if (*train) return cmd_train(o);
        if (*distill) return cmd_distill(o);
        if (*evaluate) return cmd_evaluate(o);
        if (*compare) return cmd_compare(o);
        if (*predict) return cmd_predict(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointShapeError& e) {
        std::cerr << "checkpoint does not match its model: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 5;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
