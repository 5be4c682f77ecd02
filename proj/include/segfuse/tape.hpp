#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segfuse/errors.hpp"
#include "segfuse/simd/kernels.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

/// Trainable tensor with its gradient buffer. `grad` stays empty until a
/// backward pass reaches the parameter.
template <typename T>
struct Parameter {
    std::string name;
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool frozen = false;

    void zero_grad() {
        if (!grad.empty()) grad.fill(T(0));
    }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid until the tape
/// is cleared or destroyed.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    const BasicTensor<T>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const { return tape_->requires_grad(id_); }
    std::size_t id() const { return id_; }
    Tape<T>* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Ordered record of executed operations. Each record keeps its output value
/// and a backward rule closing over whatever forward intermediates it needs.
/// Backward replays records in reverse, visiting each exactly once.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var<T> constant(BasicTensor<T> value) { return push(Node{std::move(value), {}, false, {}, {}, nullptr}); }

    /// Leaf whose gradient is kept and readable through grad() after backward.
    Var<T> variable(BasicTensor<T> value) {
        return push(Node{std::move(value), {}, grad_enabled_, {}, {}, nullptr});
    }

    /// Leaf that reads the parameter in place and accumulates into p.grad.
    Var<T> parameter(Parameter<T>& p) {
        Node n{{}, {}, grad_enabled_ && !p.frozen, {}, {}, &p};
        return push(std::move(n));
    }

    Var<T> record(BasicTensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
        return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
    }

    Var<T> record(BasicTensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
        Node n{std::move(value), {}, false, {}, {}, nullptr};
        for (const auto& in : inputs) {
            if (in.tape() != this) throw Error("operand recorded on a different tape");
            n.inputs.push_back(in.id());
            n.requires_grad = n.requires_grad || requires_grad(in.id());
        }
        // Records that cannot carry a gradient drop their closure (and with it
        // any cached intermediates).
        if (n.requires_grad) n.backward = std::move(fn);
        return push(std::move(n));
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates in reverse record order.
    /// Parameter gradients accumulate across calls; intermediate gradients are
    /// rebuilt on every call.
    void backward(Var<T> loss) {
        if (nodes_.empty()) throw Error("backward on an empty tape");
        if (loss.tape() != this) throw Error("loss recorded on a different tape");
        if (value(loss.id()).size() != 1) throw ShapeError("backward requires a scalar loss");
        for (auto& n : nodes_) n.grad = BasicTensor<T>();
        if (!nodes_[loss.id()].requires_grad) return;
        grad_buffer(loss.id()).fill(T(1));
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
            n.backward(*this, i);
        }
        const auto& k = simd::kernels<T>();
        for (auto& n : nodes_) {
            if (n.param == nullptr || n.grad.empty() || !n.requires_grad) continue;
            Parameter<T>& p = *n.param;
            if (p.grad.shape() != p.value.shape()) p.grad = BasicTensor<T>(p.value.shape());
            k.axpy(n.grad.size(), T(1), n.grad.data(), p.grad.data());
        }
    }

    /// Drops every record and cached intermediate.
    void clear() { nodes_.clear(); }

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    const BasicTensor<T>& value(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.param != nullptr ? n.param->value : n.value;
    }

    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Gradient of the last backward pass with respect to `v` (empty if none
    /// reached it).
    const BasicTensor<T>& grad(Var<T> v) const { return nodes_.at(v.id()).grad; }

    /// Zero-initialized on first access; used by backward rules.
    BasicTensor<T>& grad_buffer(std::size_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.empty()) n.grad = BasicTensor<T>(value(id).shape());
        return n.grad;
    }

    std::size_t input(std::size_t id, std::size_t k) const { return nodes_.at(id).inputs.at(k); }

private:
    struct Node {
        BasicTensor<T> value;
        BasicTensor<T> grad;
        bool requires_grad = false;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter<T>* param = nullptr;
    };

    Var<T> push(Node n) {
        nodes_.push_back(std::move(n));
        return Var<T>(this, nodes_.size() - 1);
    }

    bool grad_enabled_;
    std::vector<Node> nodes_;
};

}  // namespace segfuse
