#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "meltpool/image.hpp"

namespace meltpool {

struct MeltPoolFeatures {
    double mp_width = 0.0;
    double mp_depth = 0.0;
    double kh_width = 0.0;
    double kh_depth = 0.0;

    std::optional<double> mp_ratio() const {
        if (mp_depth > 0.0) return mp_width / mp_depth;
        return std::nullopt;
    }
    std::optional<double> kh_ratio() const {
        if (kh_depth > 0.0) return kh_width / kh_depth;
        return std::nullopt;
    }
    bool operator==(const MeltPoolFeatures&) const = default;
};

enum class Target { mp_ratio, kh_ratio };

inline std::string to_string(Target t) { return t == Target::mp_ratio ? "mp_ratio" : "kh_ratio"; }

inline Target target_from_string(const std::string& s) {
    if (s == "mp_ratio") return Target::mp_ratio;
    if (s == "kh_ratio") return Target::kh_ratio;
    throw ConfigError("unknown target '" + s + "' (expected mp_ratio or kh_ratio)");
}

inline std::optional<double> target_value(const MeltPoolFeatures& f, Target t) {
    return t == Target::mp_ratio ? f.mp_ratio() : f.kh_ratio();
}

struct Sample {
    std::size_t time_index = 0;
    GrayImage frame;
    double absorptivity = 0.0;
    MeltPoolFeatures labels;

    bool operator==(const Sample&) const = default;
};

struct Dataset {
    std::vector<Sample> samples;
    nlohmann::json manifest = nlohmann::json::object();
    std::size_t skipped = 0;  // indices present in some source but not all
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;

    std::size_t column(const std::string& name, const std::string& origin) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError(origin + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline CsvTable parse_csv(const std::string& text, const std::string& origin) {
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            const auto comma = line.find(',', start);
            cells.emplace_back(trim(std::string_view(line).substr(start, comma - start)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (table.header.empty()) {
            table.header = std::move(cells);
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw DataError(origin + ":" + std::to_string(lineno) + ": expected " + std::to_string(table.header.size()) +
                            " cells, found " + std::to_string(cells.size()));
        }
        table.rows.push_back(std::move(cells));
        table.line_numbers.push_back(lineno);
    }
    if (table.header.empty()) throw DataError(origin + ": empty CSV file");
    return table;
}

inline double parse_number(std::string_view cell, const std::string& where) {
    double v = 0.0;
    const char* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(cell.data(), end, v);
    if (ec != std::errc() || ptr != end || cell.empty() || !std::isfinite(v)) {
        throw DataError(where + ": non-numeric cell '" + std::string(cell) + "'");
    }
    return v;
}

inline std::size_t parse_index(std::string_view cell, const std::string& where) {
    std::size_t v = 0;
    const char* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(cell.data(), end, v);
    if (ec != std::errc() || ptr != end || cell.empty()) throw DataError(where + ": bad index '" + std::string(cell) + "'");
    return v;
}

/// Shortest text that parses back to exactly `v`.
inline std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline std::map<std::size_t, std::vector<double>> read_indexed_csv(const std::filesystem::path& path,
                                                                   const std::vector<std::string>& columns) {
    const std::string origin = path.filename().string();
    const CsvTable t = parse_csv(read_file(path), origin);
    const std::size_t idx = t.column("index", origin);
    std::vector<std::size_t> cols;
    for (const auto& c : columns) cols.push_back(t.column(c, origin));
    std::map<std::size_t, std::vector<double>> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string where = origin + ":" + std::to_string(t.line_numbers[r]);
        const std::size_t key = parse_index(t.rows[r][idx], where);
        std::vector<double> vals;
        for (auto c : cols) vals.push_back(parse_number(t.rows[r][c], where));
        if (!out.emplace(key, std::move(vals)).second) throw DataError(where + ": duplicate index " + std::to_string(key));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Directory format
// ---------------------------------------------------------------------------

inline std::string frame_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu.pgm", index);
    return buf;
}

/// Joins frames/<index>.pgm, absorptivity.csv and labels.csv on index.
/// Indices missing from any source are skipped and counted.
inline Dataset load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
    const fs::path frames_dir = dir / "frames";
    for (const char* f : {"absorptivity.csv", "labels.csv"}) {
        if (!fs::exists(dir / f)) throw DataError("dataset " + dir.string() + " has no " + f);
    }
    const auto absorb = read_indexed_csv(dir / "absorptivity.csv", {"absorptivity"});
    const auto labels = read_indexed_csv(dir / "labels.csv", {"mp_width", "mp_depth", "kh_width", "kh_depth"});

    std::map<std::size_t, fs::path> frames;
    if (fs::is_directory(frames_dir)) {
        for (const auto& entry : fs::directory_iterator(frames_dir)) {
            if (entry.path().extension() != ".pgm") continue;
            const std::string stem = entry.path().stem().string();
            std::size_t idx = 0;
            auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), idx);
            if (ec != std::errc() || ptr != stem.data() + stem.size()) continue;
            frames[idx] = entry.path();
        }
    }

    std::set<std::size_t> all;
    for (const auto& [k, _] : absorb) all.insert(k);
    for (const auto& [k, _] : labels) all.insert(k);
    for (const auto& [k, _] : frames) all.insert(k);

    Dataset ds;
    for (std::size_t idx : all) {
        auto a = absorb.find(idx);
        auto l = labels.find(idx);
        auto f = frames.find(idx);
        if (a == absorb.end() || l == labels.end() || f == frames.end()) {
            ++ds.skipped;
            continue;
        }
        Sample s;
        s.time_index = idx;
        s.frame = read_pgm(f->second);
        s.absorptivity = a->second[0];
        s.labels = {l->second[0], l->second[1], l->second[2], l->second[3]};
        for (double v : l->second)
            if (v < 0.0) throw DataError("labels.csv: negative length for index " + std::to_string(idx));
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw DataError("dataset " + dir.string() + ": no index has a frame, an absorptivity and a label");
    if (fs::exists(dir / "dataset.json")) {
        try {
            ds.manifest = nlohmann::json::parse(read_file(dir / "dataset.json"));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("dataset.json: " + std::string(e.what()));
        }
    }
    return ds;
}

/// Absorptivity-only series (index, absorptivity), as used for deployment-time
/// prediction without frames.
inline std::vector<std::pair<std::size_t, double>> load_absorptivity_csv(const std::filesystem::path& path) {
    std::vector<std::pair<std::size_t, double>> out;
    for (const auto& [k, v] : read_indexed_csv(path, {"absorptivity"})) out.emplace_back(k, v[0]);
    if (out.empty()) throw DataError(path.string() + ": no rows");
    return out;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "frames");
    std::string absorb = "index,absorptivity\n";
    std::string labels = "index,mp_width,mp_depth,kh_width,kh_depth\n";
    for (const auto& s : ds.samples) {
        write_pgm(s.frame, dir / "frames" / frame_name(s.time_index));
        absorb += std::to_string(s.time_index) + "," + format_number(s.absorptivity) + "\n";
        labels += std::to_string(s.time_index) + "," + format_number(s.labels.mp_width) + "," +
                  format_number(s.labels.mp_depth) + "," + format_number(s.labels.kh_width) + "," +
                  format_number(s.labels.kh_depth) + "\n";
    }
    write_file_atomic(dir / "absorptivity.csv", absorb);
    write_file_atomic(dir / "labels.csv", labels);
    write_file_atomic(dir / "dataset.json", ds.manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Scaling, windowing, splitting
// ---------------------------------------------------------------------------

/// Min-max map onto [0,1] over the fit range; no clipping outside it.
class RangeScaler {
   public:
    RangeScaler() = default;
    RangeScaler(double lo, double hi) : min_(lo), max_(hi) {
        if (!(hi > lo)) throw DataError("scaler range must satisfy max > min");
    }

    static RangeScaler fit(std::span<const double> values) {
        if (values.size() < 2) throw DataError("scaler fit needs at least two values");
        auto [lo, hi] = std::minmax_element(values.begin(), values.end());
        if (!(*hi > *lo)) throw DataError("scaler fit on constant values");
        return RangeScaler(*lo, *hi);
    }

    double transform(double v) const { return (v - min_) / (max_ - min_); }
    double inverse_transform(double v) const { return v * (max_ - min_) + min_; }
    double min() const { return min_; }
    double max() const { return max_; }

    nlohmann::json to_json() const { return {{"min", min_}, {"max", max_}}; }
    static RangeScaler from_json(const nlohmann::json& j) { return RangeScaler(j.at("min").get<double>(), j.at("max").get<double>()); }

   private:
    double min_ = 0.0;
    double max_ = 1.0;
};

/// Stride-1 causal windows: window i covers [i, i+T) and targets index i+T-1.
struct SequenceBatch {
    Tensor<float> inputs;         // [N, T, 1]
    std::vector<double> targets;  // N
    std::size_t window = 1;
};

inline SequenceBatch make_sequences(std::span<const double> series, std::span<const double> targets, std::size_t window) {
    if (window == 0) throw DataError("sequence length must be positive");
    if (series.size() != targets.size()) throw DataError("series and targets must have equal length");
    if (series.size() < window) {
        throw DataError("series of length " + std::to_string(series.size()) + " is shorter than the window " +
                        std::to_string(window));
    }
    const std::size_t n = series.size() - window + 1;
    std::vector<float> x(n * window);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < window; ++t) x[i * window + t] = static_cast<float>(series[i + t]);
        y[i] = targets[i + window - 1];
    }
    return {Tensor<float>({n, window, 1}, std::move(x)), std::move(y), window};
}

enum class SplitMode { chronological, random };

inline SplitMode split_mode_from_string(const std::string& s) {
    if (s == "chronological") return SplitMode::chronological;
    if (s == "random") return SplitMode::random;
    throw ConfigError("unknown split mode '" + s + "' (expected chronological or random)");
}

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Positions into a time-ordered list of n samples; the train share is
/// ceil(fraction * n). Random mode shuffles with `seed`, then sorts each side.
inline SplitIndices split_indices(std::size_t n, double fraction = 0.8, SplitMode mode = SplitMode::chronological,
                                  std::uint64_t seed = 0) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
    if (n < 5) throw DataError("need at least 5 samples to split, got " + std::to_string(n));
    // the epsilon keeps 0.8 * 10 from rounding up to 9
    auto n_train = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (mode == SplitMode::random) {
        std::mt19937_64 rng(seed);
        std::shuffle(order.begin(), order.end(), rng);
    }
    SplitIndices s{{order.begin(), order.begin() + static_cast<long>(n_train)}, {order.begin() + static_cast<long>(n_train), order.end()}};
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_dataset(const std::vector<T>& samples, double fraction = 0.8,
                                                        SplitMode mode = SplitMode::chronological, std::uint64_t seed = 0) {
    const auto idx = split_indices(samples.size(), fraction, mode, seed);
    std::pair<std::vector<T>, std::vector<T>> out;
    for (auto i : idx.train) out.first.push_back(samples[i]);
    for (auto i : idx.test) out.second.push_back(samples[i]);
    return out;
}

}  // namespace meltpool
