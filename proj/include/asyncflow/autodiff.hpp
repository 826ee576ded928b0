#pragma once

// Tape-based reverse-mode automatic differentiation over Tensor<T>.
//
// A Tape is built fresh for every forward pass. Each recorded node keeps its
// forward value and, when any input requires a gradient, a closure that
// pushes the output gradient back to its inputs. Parameters live outside the
// tape in a ParamSet and are referenced (not copied) by leaf nodes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "asyncflow/tensor.hpp"

namespace asyncflow {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

/// Ordered, named collection of trainable tensors. The index of a parameter
/// is its id for gradient lookup and optimizer state.
template <class T>
class ParamSet {
public:
    std::size_t add(std::string name, Tensor<T> value);

    std::size_t size() const { return params_.size(); }
    Parameter<T>& operator[](std::size_t id) { return params_[id]; }
    const Parameter<T>& operator[](std::size_t id) const { return params_[id]; }

    /// Throws ContractViolation when no parameter has this name.
    std::size_t index_of(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t scalar_count() const;
    std::vector<T> flatten() const;
    void assign_flat(std::span<const T> flat);

    template <class U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
        return out;
    }

    bool operator==(const ParamSet& other) const {
        if (params_.size() != other.params_.size()) return false;
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (params_[i].name != other.params_[i].name ||
                !(params_[i].value == other.params_[i].value))
                return false;
        return true;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<Parameter<T>> params_;
};

/// Gradients indexed by parameter id; unused parameters get zero tensors.
template <class T>
using Gradients = std::vector<Tensor<T>>;

template <class T>
class Tape;

/// Handle to a node on a tape.
template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self, const Tensor<T>& grad_out)>;

    /// With grad_enabled=false parameters are recorded as constants and no
    /// backward closures are kept (inference mode).
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var<T> constant(Tensor<T> value);
    Var<T> leaf(Tensor<T> value, bool requires_grad);
    Var<T> param(const ParamSet<T>& params, std::size_t id);
    Var<T> param(const ParamSet<T>& params, std::string_view name) {
        return param(params, params.index_of(name));
    }

    /// Records an op. `backward` may be empty, in which case any attempt to
    /// propagate a gradient through this node raises UnsupportedOp.
    Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs,
                  std::string_view op, Backward backward);

    const Tensor<T>& value(std::size_t id) const;
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t node_count() const { return nodes_.size(); }

    /// Adds `g` into the pending gradient of node `id` (no-op if the node
    /// does not require a gradient).
    void accumulate(std::size_t id, const Tensor<T>& g);
    void accumulate(std::size_t id, Tensor<T>&& g);

    /// Reverse sweep from a scalar loss; returns gradients for every
    /// parameter of a ParamSet of size `param_count` (accumulated over all
    /// usages of that parameter on this tape).
    Gradients<T> grad(Var<T> loss, std::size_t param_count);

    /// Reverse sweep returning gradients of arbitrary leaves (zero tensors
    /// for leaves the loss does not depend on).
    std::vector<Tensor<T>> grad_wrt(Var<T> loss, const std::vector<Var<T>>& leaves);

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* external = nullptr;
        std::vector<std::size_t> inputs;
        Backward backward;
        std::string op;
        long param_id = -1;
        bool requires_grad = false;
    };

    void run_backward(Var<T> loss);

    bool grad_enabled_;
    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
    std::vector<bool> has_grad_;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(id);
}

// -- elementwise --------------------------------------------------------
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T c);
template <class T> Var<T> add_scalar(Var<T> a, T c);
template <class T> Var<T> exp(Var<T> a);
template <class T> Var<T> log(Var<T> a);
template <class T> Var<T> tanh(Var<T> a);
template <class T> Var<T> silu(Var<T> a);
/// tanh approximation of GELU.
template <class T> Var<T> gelu(Var<T> a);
template <class T> Var<T> clamp(Var<T> a, T lo, T hi);
/// Replaces entries where mask[i] != 0 by `value`; no gradient flows to them.
template <class T> Var<T> masked_fill(Var<T> a, const std::vector<std::uint8_t>& mask, T value);

// -- shape --------------------------------------------------------------
/// Numpy-style right-aligned broadcast.
template <class T> Var<T> broadcast_to(Var<T> a, const Shape& shape);
template <class T> Var<T> reshape(Var<T> a, const Shape& shape);
/// Swaps the last two axes.
template <class T> Var<T> transpose(Var<T> a);
template <class T> Var<T> concat(const std::vector<Var<T>>& parts, int axis);
template <class T> Var<T> slice(Var<T> a, int axis, std::size_t begin, std::size_t end);

// -- linear algebra -----------------------------------------------------
/// [..., M, K] x [K, N] -> [..., M, N], or batched [B, M, K] x [B, K, N].
template <class T> Var<T> matmul(Var<T> a, Var<T> b);

// -- reductions ---------------------------------------------------------
template <class T> Var<T> sum(Var<T> a);
/// Sums over the last axis, dropping it.
template <class T> Var<T> sum_last(Var<T> a);
template <class T> Var<T> mean(Var<T> a);

// -- normalisation ------------------------------------------------------
template <class T> Var<T> softmax(Var<T> a);
template <class T> Var<T> log_softmax(Var<T> a);
/// Normalises the last axis to zero mean, unit variance (no affine part).
template <class T> Var<T> layer_norm(Var<T> a, T eps = T(1e-6));

template <class T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <class T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <class T> Var<T> operator-(Var<T> a) { return scale(a, T(-1)); }

/// x W + b with W [in, out] and b [out].
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
    auto y = matmul(x, weight);
    return add(y, broadcast_to(bias, y.shape()));
}

}  // namespace asyncflow
