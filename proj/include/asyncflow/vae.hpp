#pragma once

// Per-event beta-VAE. The encoder maps (standardised tau, one-hot type) to a
// Gaussian posterior over a d-dimensional latent; the decoder maps a latent
// back to a tau estimate and type logits. Both are two tanh hidden layers
// with zero-initialised output heads.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "asyncflow/autodiff.hpp"
#include "asyncflow/data.hpp"

namespace asyncflow {

struct VaeConfig {
    int num_types = 2;
    std::size_t d_latent = 32;
    std::size_t hidden = 64;
    double beta_min = 1e-5;
    double beta_max = 1e-2;
    std::size_t steps = 2000;
    std::size_t batch = 256;
    double lr = 1e-3;

    void validate() const;
};

template <class T>
struct VaeModel {
    VaeConfig config;
    ParamSet<T> params;
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

template <class T>
VaeModel<T> init_vae(const VaeConfig& config, std::mt19937_64& rng);

template <class T>
struct Posterior {
    std::vector<T> mu;
    std::vector<T> logvar;
};

template <class T>
struct Decoded {
    T tau = 0;
    std::vector<T> logits;
    int type = 0;
};

/// Posterior of one event whose tau is already standardised.
template <class T>
Posterior<T> encode(const VaeModel<T>& vae, const Event& event);

/// mu + exp(logvar / 2) * z with z standard normal; logvar is clamped first.
template <class T>
std::vector<T> reparameterize(std::span<const T> mu, std::span<const T> logvar,
                              std::mt19937_64& rng);

/// Same with an explicit standard-normal draw `noise`.
template <class T>
std::vector<T> reparameterize(std::span<const T> mu, std::span<const T> logvar,
                              std::span<const double> noise);

template <class T>
Decoded<T> decode(const VaeModel<T>& vae, std::span<const T> latent);

/// Lowest index of the largest logit.
template <class T>
int argmax(std::span<const T> logits);

/// (tau - tau_hat)^2 + CE(type, logits) + beta KL(N(mu, e^logvar) || N(0, I)).
double vae_loss(const Event& event, double tau_hat, std::span<const double> logits,
                std::span<const double> mu, std::span<const double> logvar, double beta);

double gaussian_kl(std::span<const double> mu, std::span<const double> logvar);

/// Linear ramp from beta_min to beta_max over the first half of training.
double beta_schedule(std::size_t step, std::size_t total_steps, double beta_min, double beta_max);

// ---- graph-level pieces used by training

/// Rows of [tau, onehot(type)] for a batch of events.
template <class T>
Tensor<T> event_features(const std::vector<Event>& events, int num_types);

template <class T>
struct EncoderOut {
    Var<T> mu;      // [B, d]
    Var<T> logvar;  // [B, d], clamped
};

template <class T>
EncoderOut<T> encoder_graph(Tape<T>& tape, const VaeModel<T>& vae, Var<T> features);

/// Returns [B, 1 + K]: column 0 is tau_hat, the rest are logits.
template <class T>
Var<T> decoder_graph(Tape<T>& tape, const VaeModel<T>& vae, Var<T> latents);

/// Mean over the batch of the per-event VAE loss.
template <class T>
Var<T> vae_batch_loss(Tape<T>& tape, const VaeModel<T>& vae, const std::vector<Event>& events,
                      const Tensor<T>& noise, double beta);

struct VaeTrainLog {
    std::size_t step;
    double loss;
    double beta;
};

template <class T>
struct VaeTrainResult {
    VaeModel<T> model;
    double initial_loss = 0.0;  // full-data loss (beta_max, posterior means) before training
    double final_loss = 0.0;
};

/// Adam on minibatches of events drawn uniformly from a standardised dataset.
template <class T>
VaeTrainResult<T> train_vae(const Dataset& dataset, const VaeConfig& config, std::mt19937_64& rng,
                            const std::function<void(const VaeTrainLog&)>& log = {});

/// Deterministic full-data loss using posterior means (no sampling noise).
template <class T>
double vae_eval_loss(const VaeModel<T>& vae, const std::vector<Event>& events, double beta);

/// Latent matrix of a padded sequence; rows past the sequence are zero.
template <class T>
struct LatentSequence {
    Tensor<T> latents;                // [N, d]
    std::vector<std::uint8_t> mask;   // [N]
};

/// Encodes the events of `seq` (standardised taus) to posterior means.
template <class T>
LatentSequence<T> encode_sequence(const VaeModel<T>& vae, const EventSequence& seq,
                                  std::size_t max_len);

}  // namespace asyncflow
