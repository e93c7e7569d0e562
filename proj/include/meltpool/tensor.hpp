#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "meltpool/errors.hpp"

namespace meltpool {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty means "no gradient populated"
    bool requires_grad = false;
    bool leaf = true;
    std::string name;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

/// Handle to a dense row-major tensor. Copies share storage; use `clone()` for
/// an independent value.
template <typename T>
class Tensor {
   public:
    using Node = TensorNode<T>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        for (auto d : shape) {
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
        }
        if (numel(shape) != values.size()) {
            throw ShapeError("tensor of shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                             " values, got " + std::to_string(values.size()));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, fill), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    std::span<T> mutable_values() { return node_->value; }
    const T& operator[](std::size_t i) const { return node_->value[i]; }

    T item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar tensor of shape " + to_string(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool is_leaf() const { return node_->leaf; }

    const std::string& name() const { return node_->name; }
    void set_name(std::string name) { node_->name = std::move(name); }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const {
        if (!has_grad()) throw std::logic_error("tensor '" + name() + "' has no gradient");
        return node_->grad;
    }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.assign(size(), T(0)); }
    void clear_grad() { node_->grad.clear(); }

    bool all_finite() const {
        for (const T& v : node_->value) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    Tensor clone() const {
        Tensor copy(shape(), node_->value, requires_grad());
        copy.set_name(name());
        return copy;
    }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape(), std::vector<U>(node_->value.begin(), node_->value.end()), requires_grad());
    }

    const std::shared_ptr<Node>& node() const { return node_; }

   private:
    std::shared_ptr<Node> node_;
};

namespace detail {
inline thread_local bool finite_checks_enabled = false;
}

/// While alive, every recorded op verifies that its output is finite and
/// throws NumericalError naming the op otherwise.
class FiniteCheckScope {
   public:
    explicit FiniteCheckScope(bool enabled = true) : previous_(detail::finite_checks_enabled) {
        detail::finite_checks_enabled = enabled;
    }
    ~FiniteCheckScope() { detail::finite_checks_enabled = previous_; }
    FiniteCheckScope(const FiniteCheckScope&) = delete;
    FiniteCheckScope& operator=(const FiniteCheckScope&) = delete;

   private:
    bool previous_;
};

/// Records differentiable operations executed on this thread while alive.
/// Tapes nest; the innermost one is active. A tape must not cross threads.
template <typename T>
class Tape {
   public:
    using Node = TensorNode<T>;
    using NodePtr = std::shared_ptr<Node>;

    Tape() : previous_(active_) { active_ = this; }
    ~Tape() { active_ = previous_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::string op, std::vector<NodePtr> inputs, NodePtr output, std::function<void()> backward) {
        entries_.push_back({std::move(op), std::move(inputs), std::move(output), std::move(backward)});
    }

    std::size_t size() const { return entries_.size(); }
    const std::string& op_name(std::size_t i) const { return entries_.at(i).op; }

    /// Reverse sweep from a scalar loss. Leaves that were inputs to any recorded
    /// op but are unreachable from the loss end with a zero gradient.
    void backward(const Tensor<T>& loss) {
        if (loss.size() != 1) {
            throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
        }
        if (!loss.requires_grad()) throw std::logic_error("backward: loss was not recorded on a tape");
        for (auto& e : entries_) {
            for (auto& in : e.inputs) {
                if (in->leaf && in->requires_grad) in->ensure_grad();
            }
        }
        loss.node()->ensure_grad()[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (!it->output->grad.empty()) it->backward();
        }
    }

   private:
    struct Entry {
        std::string op;
        std::vector<NodePtr> inputs;
        NodePtr output;
        std::function<void()> backward;
    };

    std::vector<Entry> entries_;
    Tape* previous_;
    static inline thread_local Tape* active_ = nullptr;
};

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
    for (auto* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
void check_finite(const char* op, const Tensor<T>& out) {
    if (finite_checks_enabled && !out.all_finite()) {
        throw NumericalError(std::string(op) + " produced a non-finite value");
    }
}

/// Wraps an op result and, when a tape is active and any input needs a
/// gradient, records `backward` for it. `backward` receives the output node.
template <typename T, typename Backward>
Tensor<T> finish(const char* op, Tensor<T> out, std::vector<Tensor<T>> inputs, Backward&& backward) {
    check_finite(op, out);
    auto* tape = Tape<T>::active();
    if (!tape) return out;
    bool needs = false;
    for (auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    out.node()->leaf = false;
    out.node()->requires_grad = true;
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    nodes.reserve(inputs.size());
    for (auto& in : inputs) nodes.push_back(in.node());
    tape->record(op, std::move(nodes), out.node(),
                 [out_node = out.node(), fn = std::forward<Backward>(backward)]() { fn(*out_node); });
    return out;
}

}  // namespace detail
}  // namespace meltpool
