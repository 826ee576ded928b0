#pragma once

// Small helpers shared by the VAE and the transformer: parameter creation
// and dense layers that look weights up by name.

#include <cmath>
#include <random>
#include <string>

#include "asyncflow/autodiff.hpp"

namespace asyncflow::nn {

/// Adds `prefix.w` [in, out] and `prefix.b` [out]. Weights are Glorot-uniform
/// unless `zero` is set; biases start at zero.
template <class T>
void add_linear(ParamSet<T>& params, const std::string& prefix, std::size_t in, std::size_t out,
                std::mt19937_64& rng, bool zero = false) {
    Tensor<T> w(Shape{in, out});
    if (!zero) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (auto& v : w.vec()) v = static_cast<T>(u(rng));
    }
    params.add(prefix + ".w", std::move(w));
    params.add(prefix + ".b", Tensor<T>(Shape{out}));
}

template <class T>
Var<T> dense(Tape<T>& tape, const ParamSet<T>& params, const std::string& prefix, Var<T> x) {
    return linear(x, tape.param(params, prefix + ".w"), tape.param(params, prefix + ".b"));
}

}  // namespace asyncflow::nn
