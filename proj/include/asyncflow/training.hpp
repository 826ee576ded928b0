#pragma once

// Conditional flow matching for the denoiser. One flow time s per sequence;
// rows are weighted by a'_i(s)^2 and padded rows are left out.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "asyncflow/dit.hpp"
#include "asyncflow/optim.hpp"
#include "asyncflow/schedule.hpp"
#include "asyncflow/vae.hpp"

namespace asyncflow {

/// A batch of padded latent sequences.
template <class T>
struct LatentBatch {
    Tensor<T> x0;                     // [B, N, d], padded rows zero
    std::vector<std::uint8_t> mask;   // [B * N]

    std::size_t batch() const { return x0.dim(0); }
    std::size_t length() const { return x0.dim(1); }
};

template <class T>
LatentBatch<T> make_batch(const std::vector<LatentSequence<T>>& seqs,
                          const std::vector<std::size_t>& indices);

/// Everything random about one loss evaluation.
template <class T>
struct CfmDraw {
    std::vector<double> s;   // [B], each in (0, 1]
    Tensor<T> eps;           // [B, N, d]
    Tensor<T> x_s;           // [B, N, d]
    Tensor<T> a;             // [B, N]
    Tensor<T> a_prime;       // [B, N]
};

template <class T>
CfmDraw<T> draw_cfm(const LatentBatch<T>& batch, const NoiseSchedule& schedule,
                    std::mt19937_64& rng);

/// Deterministic part: builds x_s, a, a' for given s and eps.
template <class T>
CfmDraw<T> make_cfm_draw(const LatentBatch<T>& batch, const NoiseSchedule& schedule,
                         std::vector<double> s, Tensor<T> eps);

/// sum over active rows of a'_i^2 ||(x0 - eps)_i - v_i||^2, divided by the
/// number of active rows. With `mask_padding` false every row counts.
template <class T>
Var<T> cfm_objective(Tape<T>& tape, const LatentBatch<T>& batch, const CfmDraw<T>& draw,
                     Var<T> v_pred, bool mask_padding = true);

/// Velocity model signature: (tape, x_s [B,N,d], a [B,N], key_mask) -> [B,N,d].
template <class T>
using VelocityFn = std::function<Var<T>(Tape<T>&, Var<T>, const Tensor<T>&,
                                        const std::vector<std::uint8_t>&)>;

template <class T>
VelocityFn<T> dit_velocity(const DitModel<T>& model);

/// Draws s and eps, evaluates the model and returns the objective. Throws
/// NumericError naming the batch index and s if the loss is not finite.
template <class T>
Var<T> cfm_loss(Tape<T>& tape, const VelocityFn<T>& model, const LatentBatch<T>& batch,
                const NoiseSchedule& schedule, std::mt19937_64& rng, bool mask_padding = true);

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t total_steps = 20000;
    AdamConfig adam{};
    std::uint64_t seed = 0;
    ScheduleKind schedule = ScheduleKind::Async;
    bool mask_padding = true;
    std::size_t checkpoint_every = 0;   // 0 disables the callback

    void validate() const;
};

struct TrainStep {
    std::size_t step;
    double loss;
};

template <class T>
struct TrainHooks {
    std::function<void(const TrainStep&)> on_step;
    std::function<void(const DitModel<T>&, std::size_t step)> on_checkpoint;
};

template <class T>
struct TrainDmResult {
    DitModel<T> model;
    std::vector<double> losses;   // one per step
};

/// Posterior-mean latents of every sequence, padded to dataset.max_len.
template <class T>
std::vector<LatentSequence<T>> encode_dataset(const VaeModel<T>& vae, const Dataset& dataset);

/// Adam on cfm_loss with minibatches drawn uniformly with replacement.
template <class T>
TrainDmResult<T> train_dm(const std::vector<LatentSequence<T>>& data, const DitConfig& model_config,
                          const TrainConfig& config, const TrainHooks<T>& hooks = {});

template <class T>
TrainDmResult<T> train_dm(const Dataset& dataset, const VaeModel<T>& vae,
                          const DitConfig& model_config, const TrainConfig& config,
                          const TrainHooks<T>& hooks = {});

/// Mean of the trailing `window` entries ending at `end` (exclusive).
double moving_average(const std::vector<double>& xs, std::size_t end, std::size_t window);

}  // namespace asyncflow
