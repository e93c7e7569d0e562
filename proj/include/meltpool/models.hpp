#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "meltpool/layers.hpp"

namespace meltpool {

// ---------------------------------------------------------------------------
// Declarative layer descriptions
// ---------------------------------------------------------------------------

struct Conv2DSpec {
    std::size_t filters = 32;
    std::size_t kernel = 3;
    Activation activation = Activation::relu;
};
struct MaxPool2Spec {};
struct BatchNormSpec {
    double momentum = 0.9;
    double epsilon = 1e-5;
};
struct GlobalAvgPoolSpec {};
struct FlattenSpec {};
struct DenseSpec {
    std::size_t units = 1;
    Activation activation = Activation::linear;
};
struct DropoutSpec {
    double rate = 0.0;
};
struct LstmSpec {
    std::size_t units = 32;
    bool bidirectional = false;
    bool return_sequences = false;
};
struct AttentionSpec {
    std::size_t heads = 4;
    std::size_t key_dim = 16;
};
// Mean over the time axis: [T,D] -> [D].
struct TimeMeanSpec {};

using LayerSpec = std::variant<Conv2DSpec, MaxPool2Spec, BatchNormSpec, GlobalAvgPoolSpec, FlattenSpec, DenseSpec,
                               DropoutSpec, LstmSpec, AttentionSpec, TimeMeanSpec>;

/// One input port and the layers applied to it. Shapes exclude the batch axis.
struct BranchSpec {
    std::string port;
    Shape input_shape;
    std::vector<LayerSpec> layers;
};

/// Branch outputs are concatenated (when there is more than one) and fed to
/// the head, which must end in a single output unit.
struct ModelSpec {
    std::string name;
    std::vector<BranchSpec> branches;
    std::vector<LayerSpec> head;
};

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "linear") return Activation::linear;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

inline nlohmann::json to_json_value(const LayerSpec& spec) {
    using nlohmann::json;
    return std::visit(
        [](const auto& s) -> json {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Conv2DSpec>)
                return {{"type", "conv2d"}, {"filters", s.filters}, {"kernel", s.kernel}, {"activation", to_string(s.activation)}};
            else if constexpr (std::is_same_v<S, MaxPool2Spec>)
                return {{"type", "maxpool2"}};
            else if constexpr (std::is_same_v<S, BatchNormSpec>)
                return {{"type", "batchnorm"}, {"momentum", s.momentum}, {"epsilon", s.epsilon}};
            else if constexpr (std::is_same_v<S, GlobalAvgPoolSpec>)
                return {{"type", "global_avg_pool"}};
            else if constexpr (std::is_same_v<S, FlattenSpec>)
                return {{"type", "flatten"}};
            else if constexpr (std::is_same_v<S, DenseSpec>)
                return {{"type", "dense"}, {"units", s.units}, {"activation", to_string(s.activation)}};
            else if constexpr (std::is_same_v<S, DropoutSpec>)
                return {{"type", "dropout"}, {"rate", s.rate}};
            else if constexpr (std::is_same_v<S, LstmSpec>)
                return {{"type", "lstm"}, {"units", s.units}, {"bidirectional", s.bidirectional}, {"return_sequences", s.return_sequences}};
            else if constexpr (std::is_same_v<S, AttentionSpec>)
                return {{"type", "attention"}, {"heads", s.heads}, {"key_dim", s.key_dim}};
            else
                return {{"type", "time_mean"}};
        },
        spec);
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv2d")
        return Conv2DSpec{j.at("filters").get<std::size_t>(), j.at("kernel").get<std::size_t>(),
                          activation_from_string(j.at("activation").get<std::string>())};
    if (type == "maxpool2") return MaxPool2Spec{};
    if (type == "batchnorm") return BatchNormSpec{j.at("momentum").get<double>(), j.at("epsilon").get<double>()};
    if (type == "global_avg_pool") return GlobalAvgPoolSpec{};
    if (type == "flatten") return FlattenSpec{};
    if (type == "dense")
        return DenseSpec{j.at("units").get<std::size_t>(), activation_from_string(j.at("activation").get<std::string>())};
    if (type == "dropout") return DropoutSpec{j.at("rate").get<double>()};
    if (type == "lstm")
        return LstmSpec{j.at("units").get<std::size_t>(), j.at("bidirectional").get<bool>(),
                        j.at("return_sequences").get<bool>()};
    if (type == "attention") return AttentionSpec{j.at("heads").get<std::size_t>(), j.at("key_dim").get<std::size_t>()};
    if (type == "time_mean") return TimeMeanSpec{};
    throw std::invalid_argument("unknown layer type '" + type + "'");
}

inline nlohmann::json to_json_value(const ModelSpec& spec) {
    nlohmann::json branches = nlohmann::json::array();
    for (const auto& b : spec.branches) {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& l : b.layers) layers.push_back(to_json_value(l));
        branches.push_back({{"port", b.port}, {"input_shape", b.input_shape}, {"layers", layers}});
    }
    nlohmann::json head = nlohmann::json::array();
    for (const auto& l : spec.head) head.push_back(to_json_value(l));
    return {{"name", spec.name}, {"branches", branches}, {"head", head}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    spec.name = j.at("name").get<std::string>();
    for (const auto& b : j.at("branches")) {
        BranchSpec branch{b.at("port").get<std::string>(), b.at("input_shape").get<Shape>(), {}};
        for (const auto& l : b.at("layers")) branch.layers.push_back(layer_spec_from_json(l));
        spec.branches.push_back(std::move(branch));
    }
    for (const auto& l : j.at("head")) spec.head.push_back(layer_spec_from_json(l));
    return spec;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

enum class Init { he_normal, glorot_uniform, zeros, ones, lstm_bias };

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
    Init init = Init::zeros;
};

/// Ordered, name-unique registry. Non-trainable entries (batch-norm running
/// statistics) are saved with the model but never handed to the optimizer.
template <typename T>
class ParameterSet {
   public:
    Tensor<T> add(const std::string& name, Shape shape, Init init, bool trainable = true) {
        if (index_.count(name)) throw std::logic_error("parameter '" + name + "' registered twice");
        auto t = Tensor<T>::zeros(std::move(shape), trainable);
        t.set_name(name);
        index_[name] = items_.size();
        items_.push_back({name, t, trainable, init});
        return t;
    }

    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (auto& p : items_) {
            auto v = p.tensor.mutable_values();
            const Shape& s = p.tensor.shape();
            const std::size_t fan_out = s.back();
            const std::size_t fan_in = s.size() > 1 ? numel(s) / fan_out : fan_out;
            switch (p.init) {
                case Init::he_normal: {
                    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
                    for (auto& x : v) x = static_cast<T>(normal(rng));
                    break;
                }
                case Init::glorot_uniform: {
                    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
                    std::uniform_real_distribution<double> uni(-limit, limit);
                    for (auto& x : v) x = static_cast<T>(uni(rng));
                    break;
                }
                case Init::zeros:
                    std::fill(v.begin(), v.end(), T(0));
                    break;
                case Init::ones:
                    std::fill(v.begin(), v.end(), T(1));
                    break;
                case Init::lstm_bias: {
                    // forget-gate segment starts at +1
                    const std::size_t h = v.size() / 4;
                    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i >= h && i < 2 * h) ? T(1) : T(0);
                    break;
                }
            }
        }
    }

    const std::vector<Parameter<T>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    const Parameter<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
        return items_[it->second];
    }

    std::vector<Tensor<T>> trainable() const {
        std::vector<Tensor<T>> out;
        for (const auto& p : items_)
            if (p.trainable) out.push_back(p.tensor);
        return out;
    }

    std::size_t count(bool trainable_only = true) const {
        std::size_t n = 0;
        for (const auto& p : items_)
            if (p.trainable || !trainable_only) n += p.tensor.size();
        return n;
    }

    std::vector<std::vector<T>> snapshot() const {
        std::vector<std::vector<T>> out;
        for (const auto& p : items_) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
        return out;
    }

    void restore(const std::vector<std::vector<T>>& values) {
        if (values.size() != items_.size()) throw std::logic_error("restore: snapshot has a different parameter count");
        for (std::size_t i = 0; i < items_.size(); ++i) {
            auto dst = items_[i].tensor.mutable_values();
            if (values[i].size() != dst.size()) throw std::logic_error("restore: size mismatch for " + items_[i].name);
            std::copy(values[i].begin(), values[i].end(), dst.begin());
        }
    }

   private:
    std::vector<Parameter<T>> items_;
    std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct ForwardContext {
    Mode mode = Mode::eval;
    std::mt19937_64* rng = nullptr;
};

template <typename T>
class Layer {
   public:
    virtual ~Layer() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) = 0;
};

namespace detail {

inline void expect_rank(const char* layer, const Shape& in, std::size_t rank) {
    if (in.size() != rank) {
        throw ShapeError(std::string(layer) + ": expected a rank-" + std::to_string(rank) +
                         " input (excluding batch), got " + to_string(in));
    }
}

template <typename T>
class Conv2DLayer : public Layer<T> {
   public:
    Conv2DLayer(const Conv2DSpec& s, const Shape& in, Shape& out, ParameterSet<T>& ps, const std::string& p)
        : act_(s.activation) {
        expect_rank("conv2d", in, 3);
        if (in[0] < s.kernel || in[1] < s.kernel) throw ShapeError("conv2d: input " + to_string(in) + " smaller than kernel");
        kernel_ = ps.add(p + "/kernel", {s.kernel, s.kernel, in[2], s.filters}, Init::he_normal);
        bias_ = ps.add(p + "/bias", {s.filters}, Init::zeros);
        out = {in[0], in[1], s.filters};
    }
    Tensor<T> forward(const Tensor<T>& x, ForwardContext&) override {
        auto y = conv2d(x, kernel_, bias_);
        return act_ == Activation::relu ? relu(y) : y;
    }

   private:
    Activation act_;
    Tensor<T> kernel_, bias_;
};

template <typename T>
class MaxPool2Layer : public Layer<T> {
   public:
    MaxPool2Layer(const Shape& in, Shape& out) {
        expect_rank("maxpool2", in, 3);
        if (in[0] % 2 || in[1] % 2) throw ShapeError("maxpool2: odd spatial dimension in " + to_string(in));
        out = {in[0] / 2, in[1] / 2, in[2]};
    }
    Tensor<T> forward(const Tensor<T>& x, ForwardContext&) override { return maxpool2(x); }
};

template <typename T>
class BatchNormLayer : public Layer<T> {
   public:
    BatchNormLayer(const BatchNormSpec& s, const Shape& in, Shape& out, ParameterSet<T>& ps, const std::string& p)
        : momentum_(static_cast<T>(s.momentum)), epsilon_(static_cast<T>(s.epsilon)) {
        const std::size_t c = in.back();
        gamma_ = ps.add(p + "/gamma", {c}, Init::ones);
        beta_ = ps.add(p + "/beta", {c}, Init::zeros);
        mean_ = ps.add(p + "/moving_mean", {c}, Init::zeros, false);
        var_ = ps.add(p + "/moving_variance", {c}, Init::ones, false);
        out = in;
    }
    Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
        return batchnorm(x, gamma_, beta_, mean_, var_, ctx.mode, momentum_, epsilon_);
    }

   private:
    T momentum_, epsilon_;
    Tensor<T> gamma_, beta_, mean_, var_;
};

template <typename T>
class GlobalAvgPoolLayer : public Layer<T> {
   public:
    GlobalAvgPoolLayer(const Shape& in, Shape& out) {
        expect_rank("global_avg_pool", in, 3);
        out = {in[2]};
    }
    Tensor<T> forward(const Tensor<T>& x, ForwardContext&) override { return global_avg_pool(x); }
};

template <typename T>
class FlattenLayer : public Layer<T> {
   public:
    FlattenLayer(const Shape& in, Shape& out) : width_(numel(in)) { out = {width_}; }
    Tensor<T> forward(const Tensor<T>& x, ForwardContext&) override { return reshape(x, {x.dim(0), width_}); }

   private:
    std::size_t width_;
};

template <typename T>
class DenseLayer : public Layer<T> {
   public:
    DenseLayer(const DenseSpec& s, const Shape& in, Shape& out, ParameterSet<T>& ps, const std::string& p)
        : act_(s.activation) {
        expect_rank("dense", in, 1);
        kernel_ = ps.add(p + "/kernel", {in[0], s.units}, Init::he_normal);
        bias_ = ps.add(p + "/bias", {s.units}, Init::zeros);
        out = {s.units};
    }
    Tensor<T> forward(const Tensor<T>& x, ForwardContext&) override { return dense(x, kernel_, bias_, act_); }

   private:
    Activation act_;
    Tensor<T> kernel_, bias_;
};

template <typename T>
class DropoutLayer : public Layer<T> {
   public:
    DropoutLayer(const DropoutSpec& s, const Shape& in, Shape& out) : rate_(s.rate) {
        if (!(rate_ >= 0.0 && rate_ < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
        out = in;
    }
    Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
        if (ctx.mode == Mode::train && rate_ > 0.0 && !ctx.rng) throw std::logic_error("dropout: train mode needs an rng");
        if (ctx.mode == Mode::eval) return x;
        return dropout(x, rate_, ctx.mode, *ctx.rng);
    }

   private:
    double rate_;
};

template <typename T>
class LstmLayer : public Layer<T> {
   public:
    LstmLayer(const LstmSpec& s, const Shape& in, Shape& out, ParameterSet<T>& ps, const std::string& p)
        : return_sequences_(s.return_sequences) {
        expect_rank("lstm", in, 2);
        auto make = [&](const std::string& d) {
            return LstmWeights<T>{ps.add(p + d + "/kernel", {in[1], 4 * s.units}, Init::he_normal),
                                  ps.add(p + d + "/recurrent_kernel", {s.units, 4 * s.units}, Init::he_normal),
                                  ps.add(p + d + "/bias", {4 * s.units}, Init::lstm_bias)};
        };
        forward_ = make(s.bidirectional ? "/forward" : "");
        if (s.bidirectional) backward_ = make("/backward");
        const std::size_t width = s.units * (s.bidirectional ? 2 : 1);
        out = return_sequences_ ? Shape{in[0], width} : Shape{width};
    }
    Tensor<T> forward(const Tensor<T>& x, ForwardContext&) override {
        return lstm(x, forward_, backward_ ? &*backward_ : nullptr, return_sequences_);
    }

   private:
    bool return_sequences_;
    LstmWeights<T> forward_;
    std::optional<LstmWeights<T>> backward_;
};

template <typename T>
class AttentionLayer : public Layer<T> {
   public:
    AttentionLayer(const AttentionSpec& s, const Shape& in, Shape& out, ParameterSet<T>& ps, const std::string& p)
        : heads_(s.heads), key_dim_(s.key_dim) {
        expect_rank("attention", in, 2);
        const std::size_t d = in[1], hk = s.heads * s.key_dim;
        w_.query = ps.add(p + "/query/kernel", {d, hk}, Init::glorot_uniform);
        w_.query_bias = ps.add(p + "/query/bias", {hk}, Init::zeros);
        w_.key = ps.add(p + "/key/kernel", {d, hk}, Init::glorot_uniform);
        w_.key_bias = ps.add(p + "/key/bias", {hk}, Init::zeros);
        w_.value = ps.add(p + "/value/kernel", {d, hk}, Init::glorot_uniform);
        w_.value_bias = ps.add(p + "/value/bias", {hk}, Init::zeros);
        w_.output = ps.add(p + "/output/kernel", {hk, d}, Init::glorot_uniform);
        w_.output_bias = ps.add(p + "/output/bias", {d}, Init::zeros);
        out = in;
    }
    Tensor<T> forward(const Tensor<T>& x, ForwardContext&) override {
        return multi_head_attention(x, w_, heads_, key_dim_);
    }

   private:
    std::size_t heads_, key_dim_;
    AttentionWeights<T> w_;
};

template <typename T>
class TimeMeanLayer : public Layer<T> {
   public:
    TimeMeanLayer(const Shape& in, Shape& out) {
        expect_rank("time_mean", in, 2);
        out = {in[1]};
    }
    Tensor<T> forward(const Tensor<T>& x, ForwardContext&) override { return mean_axis(x, 1); }
};

inline std::string layer_kind(const LayerSpec& spec) { return to_json_value(spec).at("type").get<std::string>(); }

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const Shape& in, Shape& out, ParameterSet<T>& ps,
                                     const std::string& prefix) {
    return std::visit(
        [&](const auto& s) -> std::unique_ptr<Layer<T>> {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Conv2DSpec>) return std::make_unique<Conv2DLayer<T>>(s, in, out, ps, prefix);
            else if constexpr (std::is_same_v<S, MaxPool2Spec>) return std::make_unique<MaxPool2Layer<T>>(in, out);
            else if constexpr (std::is_same_v<S, BatchNormSpec>) return std::make_unique<BatchNormLayer<T>>(s, in, out, ps, prefix);
            else if constexpr (std::is_same_v<S, GlobalAvgPoolSpec>) return std::make_unique<GlobalAvgPoolLayer<T>>(in, out);
            else if constexpr (std::is_same_v<S, FlattenSpec>) return std::make_unique<FlattenLayer<T>>(in, out);
            else if constexpr (std::is_same_v<S, DenseSpec>) return std::make_unique<DenseLayer<T>>(s, in, out, ps, prefix);
            else if constexpr (std::is_same_v<S, DropoutSpec>) return std::make_unique<DropoutLayer<T>>(s, in, out);
            else if constexpr (std::is_same_v<S, LstmSpec>) return std::make_unique<LstmLayer<T>>(s, in, out, ps, prefix);
            else if constexpr (std::is_same_v<S, AttentionSpec>) return std::make_unique<AttentionLayer<T>>(s, in, out, ps, prefix);
            else return std::make_unique<TimeMeanLayer<T>>(in, out);
        },
        spec);
}

}  // namespace detail

/// Output shape (batch axis excluded) of one built layer.
struct LayerTrace {
    std::string name;
    Shape output;
};

template <typename T>
using PortMap = std::map<std::string, Tensor<T>>;

/// A built ModelSpec: layer objects plus their parameters. Shapes are
/// validated while building, so a constructed Model always conforms.
template <typename T>
class Model {
   public:
    explicit Model(ModelSpec spec, std::uint64_t seed = 0) : spec_(std::move(spec)) {
        if (spec_.branches.empty()) throw ShapeError("model '" + spec_.name + "' has no input branch");
        std::set<std::string> ports;
        std::vector<Shape> branch_out;
        for (const auto& b : spec_.branches) {
            if (!ports.insert(b.port).second) throw ShapeError("duplicate input port '" + b.port + "'");
            Shape shape = b.input_shape;
            branches_.push_back(build_stack(b.layers, shape, b.port));
            branch_out.push_back(shape);
        }
        Shape shape = branch_out[0];
        if (branch_out.size() > 1) {
            std::size_t width = 0;
            for (const auto& s : branch_out) {
                if (s.size() != 1) throw ShapeError("branch outputs must be flat to concatenate, got " + to_string(s));
                width += s[0];
            }
            shape = {width};
            trace_.push_back({"concat", shape});
        }
        head_ = build_stack(spec_.head, shape, "head");
        if (shape != Shape{1}) throw ShapeError("model '" + spec_.name + "' must end in one output unit, got " + to_string(shape));
        params_.initialize(seed);
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelSpec& spec() const { return spec_; }
    const std::string& name() const { return spec_.name; }
    ParameterSet<T>& parameters() { return params_; }
    const ParameterSet<T>& parameters() const { return params_; }
    const std::vector<LayerTrace>& trace() const { return trace_; }

    std::vector<std::string> input_ports() const {
        std::vector<std::string> out;
        for (const auto& b : spec_.branches) out.push_back(b.port);
        return out;
    }

    const Shape& port_shape(const std::string& port) const {
        for (const auto& b : spec_.branches)
            if (b.port == port) return b.input_shape;
        throw ShapeError("model '" + spec_.name + "' has no port '" + port + "'");
    }

    /// [B,1] predictions. Every port must be present with shape [B, port shape...].
    Tensor<T> forward(const PortMap<T>& inputs, ForwardContext& ctx) {
        std::vector<Tensor<T>> outs;
        std::size_t batch = 0;
        for (std::size_t i = 0; i < spec_.branches.size(); ++i) {
            const auto& b = spec_.branches[i];
            auto it = inputs.find(b.port);
            if (it == inputs.end()) throw ShapeError("model '" + spec_.name + "' needs input port '" + b.port + "'");
            const Tensor<T>& x = it->second;
            Shape expect = b.input_shape;
            expect.insert(expect.begin(), x.rank() ? x.dim(0) : 0);
            if (x.shape() != expect || (batch && x.dim(0) != batch)) {
                throw ShapeError("port '" + b.port + "': expected " + to_string(expect) + ", got " + to_string(x.shape()));
            }
            batch = x.dim(0);
            Tensor<T> h = x;
            for (auto& layer : branches_[i]) h = layer->forward(h, ctx);
            outs.push_back(h);
        }
        Tensor<T> h = outs.size() > 1 ? concat(outs, 1) : outs[0];
        for (auto& layer : head_) h = layer->forward(h, ctx);
        return h;
    }

    Tensor<T> forward(const PortMap<T>& inputs, Mode mode, std::mt19937_64& rng) {
        ForwardContext ctx{mode, &rng};
        return forward(inputs, ctx);
    }

    Tensor<T> predict(const PortMap<T>& inputs) {
        ForwardContext ctx{Mode::eval, nullptr};
        return forward(inputs, ctx);
    }

   private:
    std::vector<std::unique_ptr<Layer<T>>> build_stack(const std::vector<LayerSpec>& specs, Shape& shape,
                                                       const std::string& scope) {
        std::vector<std::unique_ptr<Layer<T>>> layers;
        for (std::size_t i = 0; i < specs.size(); ++i) {
            const std::string name = scope + "/" + std::to_string(i) + "_" + detail::layer_kind(specs[i]);
            Shape out;
            layers.push_back(detail::make_layer<T>(specs[i], shape, out, params_, name));
            trace_.push_back({name, out});
            shape = out;
        }
        return layers;
    }

    ModelSpec spec_;
    ParameterSet<T> params_;
    std::vector<std::vector<std::unique_ptr<Layer<T>>>> branches_;
    std::vector<std::unique_ptr<Layer<T>>> head_;
    std::vector<LayerTrace> trace_;
};

// ---------------------------------------------------------------------------
// The four architectures
// ---------------------------------------------------------------------------

inline constexpr const char* kImagePort = "image";
inline constexpr const char* kAbsorptivityPort = "absorptivity";

struct CnnOptions {
    std::size_t image_size = 128;
    std::vector<std::size_t> filters{32, 64, 128, 256};
    std::size_t head_units = 512;
    double dropout = 0.2;
};

/// X-ray CNN: four conv(3x3)+ReLU -> batchnorm -> maxpool blocks, global
/// average pooling, dense(512, ReLU), dropout(0.2), linear output.
inline ModelSpec cnn_xray_spec(const CnnOptions& o = {}) {
    BranchSpec image{kImagePort, {o.image_size, o.image_size, 1}, {}};
    for (auto f : o.filters) {
        image.layers.push_back(Conv2DSpec{f, 3, Activation::relu});
        image.layers.push_back(BatchNormSpec{});
        image.layers.push_back(MaxPool2Spec{});
    }
    image.layers.push_back(GlobalAvgPoolSpec{});
    return {"cnn",
            {image},
            {DenseSpec{o.head_units, Activation::relu}, DropoutSpec{o.dropout}, DenseSpec{1, Activation::linear}}};
}

struct RnnOptions {
    std::size_t seq_len = 1;
    std::size_t lstm_units = 128;
    std::size_t lstm_layers = 2;
    std::size_t heads = 4;
    std::size_t key_dim = 16;
    std::size_t dense_units = 128;
    std::size_t dense_layers = 4;
    double dropout = 0.05;
};

/// Absorptivity Bi-LSTM: two Bi-LSTM(128) layers each followed by batchnorm
/// and dropout, 4-head self-attention, mean over time, four dense(128, ReLU)
/// + dropout blocks and a linear output.
inline ModelSpec rnn_absorptivity_spec(const RnnOptions& o = {}) {
    BranchSpec seq{kAbsorptivityPort, {o.seq_len, 1}, {}};
    for (std::size_t i = 0; i < o.lstm_layers; ++i) {
        seq.layers.push_back(LstmSpec{o.lstm_units, true, true});
        seq.layers.push_back(BatchNormSpec{});
        seq.layers.push_back(DropoutSpec{o.dropout});
    }
    seq.layers.push_back(AttentionSpec{o.heads, o.key_dim});
    seq.layers.push_back(TimeMeanSpec{});
    std::vector<LayerSpec> head;
    for (std::size_t i = 0; i < o.dense_layers; ++i) {
        head.push_back(DenseSpec{o.dense_units, Activation::relu});
        head.push_back(DropoutSpec{o.dropout});
    }
    head.push_back(DenseSpec{1, Activation::linear});
    return {"rnn", {seq}, head};
}

struct FusedOptions {
    std::size_t image_size = 128;
    std::size_t conv_filters = 32;
    std::size_t conv_blocks = 2;
    std::size_t image_units = 64;
    std::size_t absorptivity_units = 32;
    std::size_t fused_units = 64;
};

/// Early fusion: image branch (two conv(32)+ReLU -> maxpool blocks, flatten,
/// dense 64) and absorptivity branch (dense 32) concatenated into a dense(64)
/// head with a linear output.
inline ModelSpec fused_spec(const FusedOptions& o = {}) {
    BranchSpec image{kImagePort, {o.image_size, o.image_size, 1}, {}};
    for (std::size_t i = 0; i < o.conv_blocks; ++i) {
        image.layers.push_back(Conv2DSpec{o.conv_filters, 3, Activation::relu});
        image.layers.push_back(MaxPool2Spec{});
    }
    image.layers.push_back(FlattenSpec{});
    image.layers.push_back(DenseSpec{o.image_units, Activation::relu});
    BranchSpec absorptivity{kAbsorptivityPort, {1}, {DenseSpec{o.absorptivity_units, Activation::relu}}};
    return {"fused",
            {image, absorptivity},
            {DenseSpec{o.fused_units, Activation::relu}, DenseSpec{1, Activation::linear}}};
}

struct StudentOptions {
    std::size_t seq_len = 5;
    std::size_t lstm_units = 32;
    std::size_t dense_units = 64;
};

/// Distillation student: LSTM(32, last state) -> dense(64, ReLU) -> linear.
inline ModelSpec student_spec(const StudentOptions& o = {}) {
    BranchSpec seq{kAbsorptivityPort, {o.seq_len, 1}, {LstmSpec{o.lstm_units, false, false}}};
    return {"student", {seq}, {DenseSpec{o.dense_units, Activation::relu}, DenseSpec{1, Activation::linear}}};
}

inline Model<float> build_cnn_xray(std::uint64_t seed = 0, const CnnOptions& o = {}) {
    return Model<float>(cnn_xray_spec(o), seed);
}
inline Model<float> build_rnn_absorptivity(std::uint64_t seed = 0, const RnnOptions& o = {}) {
    return Model<float>(rnn_absorptivity_spec(o), seed);
}
inline Model<float> build_fused(std::uint64_t seed = 0, const FusedOptions& o = {}) {
    return Model<float>(fused_spec(o), seed);
}
inline Model<float> build_student(std::uint64_t seed = 0, const StudentOptions& o = {}) {
    return Model<float>(student_spec(o), seed);
}

inline ModelSpec spec_for(const std::string& kind, std::size_t seq_len = 0) {
    if (kind == "cnn") return cnn_xray_spec();
    if (kind == "rnn") return rnn_absorptivity_spec(RnnOptions{.seq_len = seq_len ? seq_len : 1});
    if (kind == "fused") return fused_spec();
    if (kind == "student") return student_spec(StudentOptions{.seq_len = seq_len ? seq_len : 5});
    throw std::invalid_argument("unknown model '" + kind + "' (expected cnn, rnn, fused or student)");
}

}  // namespace meltpool
