#pragma once

// Denoiser v_theta(x_s, A(s)): a small transformer over the latent rows of a
// sequence. Each position is conditioned on its own schedule value a_i via a
// sinusoidal embedding that drives adaptive layer-norm shift/scale/gate in
// every block. Attention ignores keys outside the validity mask.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "asyncflow/autodiff.hpp"

namespace asyncflow {

struct DitConfig {
    std::size_t max_len = 16;
    std::size_t d_latent = 32;
    std::size_t d_model = 128;
    std::size_t num_layers = 4;
    std::size_t num_heads = 4;
    std::size_t mlp_ratio = 4;
    double max_period = 10000.0;
    std::size_t h_emb = 128;

    void validate() const;
};

template <class T>
struct DitModel {
    DitConfig config;
    ParamSet<T> params;
};

/// Output head and every modulation layer start at zero, so a fresh model
/// returns zeros.
template <class T>
DitModel<T> init_dit(const DitConfig& config, std::mt19937_64& rng);

/// Row i is [cos(a_i w_1..w_h), sin(a_i w_1..w_h)] with w_j = T_m^{-(j-1)/h}.
template <class T>
Tensor<T> schedule_embedding(std::span<const double> a, double max_period, std::size_t h_emb);

/// Scaled dot-product attention for q, k, v of shape [B, N, dh] (or [N, dh]).
/// `key_mask` has B*N (or N) entries; keys with mask 0 get -inf scores.
template <class T>
Var<T> masked_attention(Var<T> q, Var<T> k, Var<T> v, const std::vector<std::uint8_t>& key_mask);

/// x_s [B, N, d_latent], a [B, N] schedule diagonal per sequence, key_mask
/// [B*N]. Returns [B, N, d_latent].
template <class T>
Var<T> dit_forward(Tape<T>& tape, const DitModel<T>& model, Var<T> x_s, const Tensor<T>& a,
                   const std::vector<std::uint8_t>& key_mask);

/// Single-sequence inference: x_s [N, d_latent], a and key_mask of length N.
template <class T>
Tensor<T> dit_apply(const DitModel<T>& model, const Tensor<T>& x_s, std::span<const double> a,
                    const std::vector<std::uint8_t>& key_mask);

}  // namespace asyncflow
