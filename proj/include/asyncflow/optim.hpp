#pragma once

#include <cstdint>
#include <vector>

#include "asyncflow/autodiff.hpp"

namespace asyncflow {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct OptimState {
    std::vector<Tensor<T>> first_moment;
    std::vector<Tensor<T>> second_moment;
    std::uint64_t step_count = 0;

    static OptimState zeros_like(const ParamSet<T>& params) {
        OptimState s;
        for (const auto& p : params) {
            s.first_moment.emplace_back(p.value.shape(), T(0));
            s.second_moment.emplace_back(p.value.shape(), T(0));
        }
        return s;
    }
};

/// One bias-corrected Adam update applied in place.
template <class T>
void adam_step(ParamSet<T>& params, const Gradients<T>& grads, OptimState<T>& state,
               const AdamConfig& cfg = {});

}  // namespace asyncflow
