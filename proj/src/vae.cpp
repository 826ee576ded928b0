#include "asyncflow/vae.hpp"

#include <algorithm>
#include <cmath>

#include "asyncflow/nn.hpp"
#include "asyncflow/optim.hpp"

namespace asyncflow {

void VaeConfig::validate() const {
    ASYNCFLOW_EXPECT(num_types >= 1, "vae: num_types must be >= 1");
    ASYNCFLOW_EXPECT(d_latent >= 1 && hidden >= 1, "vae: widths must be >= 1");
    ASYNCFLOW_EXPECT(beta_min > 0.0 && beta_min <= beta_max, "vae: need 0 < beta_min <= beta_max");
    ASYNCFLOW_EXPECT(steps >= 1 && batch >= 1, "vae: steps and batch must be >= 1");
    ASYNCFLOW_EXPECT(lr > 0.0, "vae: lr must be positive");
}

template <class T>
VaeModel<T> init_vae(const VaeConfig& config, std::mt19937_64& rng) {
    config.validate();
    const auto k = static_cast<std::size_t>(config.num_types);
    const std::size_t d = config.d_latent, h = config.hidden;
    VaeModel<T> vae{config, {}};
    nn::add_linear(vae.params, "enc.l1", 1 + k, h, rng);
    nn::add_linear(vae.params, "enc.l2", h, h, rng);
    nn::add_linear(vae.params, "enc.head", h, 2 * d, rng, true);
    nn::add_linear(vae.params, "dec.l1", d, h, rng);
    nn::add_linear(vae.params, "dec.l2", h, h, rng);
    nn::add_linear(vae.params, "dec.head", h, 1 + k, rng, true);
    return vae;
}

template <class T>
Tensor<T> event_features(const std::vector<Event>& events, int num_types) {
    ASYNCFLOW_EXPECT(!events.empty(), "event_features: no events");
    const auto k = static_cast<std::size_t>(num_types);
    Tensor<T> f(Shape{events.size(), 1 + k});
    for (std::size_t b = 0; b < events.size(); ++b) {
        const auto& e = events[b];
        ASYNCFLOW_EXPECT(e.type >= 0 && e.type < num_types, "event type out of range");
        f.at(b, 0) = static_cast<T>(e.tau);
        f.at(b, 1 + static_cast<std::size_t>(e.type)) = T(1);
    }
    return f;
}

template <class T>
EncoderOut<T> encoder_graph(Tape<T>& tape, const VaeModel<T>& vae, Var<T> features) {
    const std::size_t d = vae.config.d_latent;
    auto h = tanh(nn::dense(tape, vae.params, "enc.l1", features));
    h = tanh(nn::dense(tape, vae.params, "enc.l2", h));
    auto out = nn::dense(tape, vae.params, "enc.head", h);
    auto mu = slice(out, -1, 0, d);
    auto logvar = clamp(slice(out, -1, d, 2 * d), T(kLogvarMin), T(kLogvarMax));
    return {mu, logvar};
}

template <class T>
Var<T> decoder_graph(Tape<T>& tape, const VaeModel<T>& vae, Var<T> latents) {
    auto h = tanh(nn::dense(tape, vae.params, "dec.l1", latents));
    h = tanh(nn::dense(tape, vae.params, "dec.l2", h));
    return nn::dense(tape, vae.params, "dec.head", h);
}

template <class T>
Posterior<T> encode(const VaeModel<T>& vae, const Event& event) {
    Tape<T> tape(false);
    auto enc = encoder_graph(tape, vae, tape.constant(event_features<T>({event}, vae.config.num_types)));
    return {enc.mu.value().vec(), enc.logvar.value().vec()};
}

template <class T>
std::vector<T> reparameterize(std::span<const T> mu, std::span<const T> logvar,
                              std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    std::vector<double> noise(mu.size());
    for (auto& v : noise) v = normal(rng);
    return reparameterize(mu, logvar, std::span<const double>(noise));
}

template <class T>
std::vector<T> reparameterize(std::span<const T> mu, std::span<const T> logvar,
                              std::span<const double> noise) {
    ASYNCFLOW_EXPECT(mu.size() == logvar.size() && mu.size() == noise.size(),
                     "reparameterize: length mismatch");
    std::vector<T> z(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double lv = std::clamp(static_cast<double>(logvar[i]), kLogvarMin, kLogvarMax);
        z[i] = static_cast<T>(static_cast<double>(mu[i]) + std::exp(0.5 * lv) * noise[i]);
    }
    return z;
}

template <class T>
int argmax(std::span<const T> logits) {
    ASYNCFLOW_EXPECT(!logits.empty(), "argmax of an empty vector");
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

template <class T>
Decoded<T> decode(const VaeModel<T>& vae, std::span<const T> latent) {
    const std::size_t d = vae.config.d_latent;
    ASYNCFLOW_EXPECT(latent.size() == d, "decode: latent has dimension " +
                                             std::to_string(latent.size()) + ", expected " +
                                             std::to_string(d));
    Tape<T> tape(false);
    auto out = decoder_graph(tape, vae,
                             tape.constant(Tensor<T>(Shape{1, d}, std::vector<T>(latent.begin(), latent.end()))));
    const auto& v = out.value().vec();
    Decoded<T> dec;
    dec.tau = v[0];
    dec.logits.assign(v.begin() + 1, v.end());
    dec.type = argmax<T>(dec.logits);
    return dec;
}

double gaussian_kl(std::span<const double> mu, std::span<const double> logvar) {
    ASYNCFLOW_EXPECT(mu.size() == logvar.size(), "gaussian_kl: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i)
        kl += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
    return 0.5 * kl;
}

double vae_loss(const Event& event, double tau_hat, std::span<const double> logits,
                std::span<const double> mu, std::span<const double> logvar, double beta) {
    ASYNCFLOW_EXPECT(beta >= 0.0, "vae_loss: beta must be >= 0");
    ASYNCFLOW_EXPECT(event.type >= 0 && static_cast<std::size_t>(event.type) < logits.size(),
                     "vae_loss: type outside logits");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    const double ce = mx + std::log(z) - logits[static_cast<std::size_t>(event.type)];
    const double r = event.tau - tau_hat;
    return r * r + ce + beta * gaussian_kl(mu, logvar);
}

double beta_schedule(std::size_t step, std::size_t total_steps, double beta_min, double beta_max) {
    ASYNCFLOW_EXPECT(step <= total_steps, "beta_schedule: step beyond total_steps");
    ASYNCFLOW_EXPECT(beta_min > 0.0 && beta_min <= beta_max, "beta_schedule: need 0 < min <= max");
    const double half = 0.5 * static_cast<double>(total_steps);
    if (half <= 0.0 || static_cast<double>(step) >= half) return beta_max;
    return beta_min + (beta_max - beta_min) * static_cast<double>(step) / half;
}

template <class T>
Var<T> vae_batch_loss(Tape<T>& tape, const VaeModel<T>& vae, const std::vector<Event>& events,
                      const Tensor<T>& noise, double beta) {
    const auto k = static_cast<std::size_t>(vae.config.num_types);
    const std::size_t b = events.size(), d = vae.config.d_latent;
    ASYNCFLOW_EXPECT(noise.shape() == (Shape{b, d}), "vae_batch_loss: noise shape mismatch");
    const Tensor<T> feats = event_features<T>(events, vae.config.num_types);

    auto enc = encoder_graph(tape, vae, tape.constant(feats));
    auto z = enc.mu + mul(exp(scale(enc.logvar, T(0.5))), tape.constant(noise));
    auto out = decoder_graph(tape, vae, z);

    Tensor<T> tau(Shape{b, 1}), onehot(Shape{b, k});
    for (std::size_t i = 0; i < b; ++i) {
        tau[i] = feats.at(i, 0);
        for (std::size_t j = 0; j < k; ++j) onehot.at(i, j) = feats.at(i, 1 + j);
    }
    auto r = slice(out, -1, 0, 1) - tape.constant(tau);
    auto recon = sum(r * r);
    auto ce = -sum(log_softmax(slice(out, -1, 1, 1 + k)) * tape.constant(onehot));
    auto kl = sum(add_scalar(enc.mu * enc.mu + exp(enc.logvar) - enc.logvar, T(-1)));
    auto total = recon + ce + scale(kl, static_cast<T>(0.5 * beta));
    return scale(total, static_cast<T>(1.0 / static_cast<double>(b)));
}

template <class T>
double vae_eval_loss(const VaeModel<T>& vae, const std::vector<Event>& events, double beta) {
    Tape<T> tape(false);
    const Tensor<T> zero(Shape{events.size(), vae.config.d_latent});
    // Zero noise decodes the posterior mean; the KL term still uses logvar.
    return static_cast<double>(vae_batch_loss(tape, vae, events, zero, beta).value().item());
}

template <class T>
VaeTrainResult<T> train_vae(const Dataset& dataset, const VaeConfig& config, std::mt19937_64& rng,
                            const std::function<void(const VaeTrainLog&)>& log) {
    config.validate();
    ASYNCFLOW_EXPECT(config.num_types == dataset.num_types,
                     "train_vae: config num_types does not match the dataset");
    std::vector<Event> events;
    for (const auto& s : dataset.sequences) events.insert(events.end(), s.events.begin(), s.events.end());
    ASYNCFLOW_EXPECT(!events.empty(), "train_vae: dataset has no events");

    VaeTrainResult<T> res{init_vae<T>(config, rng)};
    auto& vae = res.model;
    res.initial_loss = vae_eval_loss(vae, events, config.beta_max);

    auto state = OptimState<T>::zeros_like(vae.params);
    const AdamConfig adam{.lr = config.lr};
    std::uniform_int_distribution<std::size_t> pick(0, events.size() - 1);
    std::normal_distribution<double> normal;
    std::vector<Event> batch(config.batch);
    Tensor<T> noise(Shape{config.batch, config.d_latent});
    for (std::size_t step = 0; step < config.steps; ++step) {
        for (auto& e : batch) e = events[pick(rng)];
        for (auto& v : noise.vec()) v = static_cast<T>(normal(rng));
        const double beta = beta_schedule(step, config.steps, config.beta_min, config.beta_max);
        Tape<T> tape;
        auto loss = vae_batch_loss(tape, vae, batch, noise, beta);
        const double lv = static_cast<double>(loss.value().item());
        if (!std::isfinite(lv))
            throw NumericError("vae training diverged at step " + std::to_string(step) +
                               " (beta=" + std::to_string(beta) + ")");
        auto grads = tape.grad(loss, vae.params.size());
        adam_step(vae.params, grads, state, adam);
        if (log) log({step, lv, beta});
    }
    res.final_loss = vae_eval_loss(vae, events, config.beta_max);
    return res;
}

template <class T>
LatentSequence<T> encode_sequence(const VaeModel<T>& vae, const EventSequence& seq,
                                  std::size_t max_len) {
    ASYNCFLOW_EXPECT(!seq.empty(), "encode_sequence: empty sequence");
    ASYNCFLOW_EXPECT(seq.size() <= max_len, "encode_sequence: sequence longer than max_len");
    const std::size_t d = vae.config.d_latent;
    LatentSequence<T> out{Tensor<T>(Shape{max_len, d}), std::vector<std::uint8_t>(max_len, 0)};
    Tape<T> tape(false);
    auto enc = encoder_graph(tape, vae, tape.constant(event_features<T>(seq.events, vae.config.num_types)));
    const auto& mu = enc.mu.value().vec();
    std::copy(mu.begin(), mu.end(), out.latents.vec().begin());
    std::fill_n(out.mask.begin(), seq.size(), 1);
    return out;
}

#define ASYNCFLOW_VAE(T)                                                                        \
    template VaeModel<T> init_vae<T>(const VaeConfig&, std::mt19937_64&);                       \
    template Tensor<T> event_features<T>(const std::vector<Event>&, int);                       \
    template EncoderOut<T> encoder_graph<T>(Tape<T>&, const VaeModel<T>&, Var<T>);              \
    template Var<T> decoder_graph<T>(Tape<T>&, const VaeModel<T>&, Var<T>);                     \
    template Posterior<T> encode<T>(const VaeModel<T>&, const Event&);                          \
    template std::vector<T> reparameterize<T>(std::span<const T>, std::span<const T>,           \
                                              std::mt19937_64&);                                \
    template std::vector<T> reparameterize<T>(std::span<const T>, std::span<const T>,           \
                                              std::span<const double>);                         \
    template int argmax<T>(std::span<const T>);                                                 \
    template Decoded<T> decode<T>(const VaeModel<T>&, std::span<const T>);                      \
    template Var<T> vae_batch_loss<T>(Tape<T>&, const VaeModel<T>&, const std::vector<Event>&,  \
                                      const Tensor<T>&, double);                                \
    template double vae_eval_loss<T>(const VaeModel<T>&, const std::vector<Event>&, double);    \
    template VaeTrainResult<T> train_vae<T>(const Dataset&, const VaeConfig&, std::mt19937_64&, \
                                            const std::function<void(const VaeTrainLog&)>&);    \
    template LatentSequence<T> encode_sequence<T>(const VaeModel<T>&, const EventSequence&,     \
                                                  std::size_t);

ASYNCFLOW_VAE(float)
ASYNCFLOW_VAE(double)

}  // namespace asyncflow
