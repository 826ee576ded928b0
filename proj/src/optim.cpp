#include "asyncflow/optim.hpp"

#include <cmath>

namespace asyncflow {

template <class T>
void adam_step(ParamSet<T>& params, const Gradients<T>& grads, OptimState<T>& state,
               const AdamConfig& cfg) {
    ASYNCFLOW_EXPECT(cfg.lr > 0, "adam: lr must be positive");
    ASYNCFLOW_EXPECT(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1,
                     "adam: betas must lie in [0, 1)");
    ASYNCFLOW_EXPECT(grads.size() == params.size() && state.first_moment.size() == params.size() &&
                         state.second_moment.size() == params.size(),
                     "adam: parameter/gradient/state count mismatch");
    for (std::size_t p = 0; p < params.size(); ++p) {
        ASYNCFLOW_EXPECT(grads[p].shape() == params[p].value.shape() &&
                             state.first_moment[p].shape() == params[p].value.shape() &&
                             state.second_moment[p].shape() == params[p].value.shape(),
                         "adam: shape mismatch for parameter " + params[p].name);
    }
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p].value.vec();
        auto& m = state.first_moment[p].vec();
        auto& v = state.second_moment[p].vec();
        const auto& g = grads[p].vec();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            w[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

template void adam_step(ParamSet<float>&, const Gradients<float>&, OptimState<float>&,
                        const AdamConfig&);
template void adam_step(ParamSet<double>&, const Gradients<double>&, OptimState<double>&,
                        const AdamConfig&);

}  // namespace asyncflow
