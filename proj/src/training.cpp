#include "asyncflow/training.hpp"

#include <cmath>
#include <sstream>

namespace asyncflow {

template <class T>
LatentBatch<T> make_batch(const std::vector<LatentSequence<T>>& seqs,
                          const std::vector<std::size_t>& indices) {
    ASYNCFLOW_EXPECT(!indices.empty(), "make_batch: empty batch");
    const Shape& row = seqs.at(indices[0]).latents.shape();
    const std::size_t n = row[0], d = row[1], per = n * d;
    LatentBatch<T> b{Tensor<T>(Shape{indices.size(), n, d}), std::vector<std::uint8_t>(indices.size() * n)};
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto& s = seqs.at(indices[k]);
        ASYNCFLOW_EXPECT(s.latents.shape() == row, "make_batch: latent shapes differ");
        std::copy(s.latents.vec().begin(), s.latents.vec().end(), b.x0.vec().begin() + k * per);
        std::copy(s.mask.begin(), s.mask.end(), b.mask.begin() + k * n);
    }
    return b;
}

template <class T>
CfmDraw<T> make_cfm_draw(const LatentBatch<T>& batch, const NoiseSchedule& schedule,
                         std::vector<double> s, Tensor<T> eps) {
    const std::size_t bs = batch.batch(), n = batch.length();
    ASYNCFLOW_EXPECT(n == schedule.size(), "cfm: sequence length does not match the schedule");
    ASYNCFLOW_EXPECT(s.size() == bs, "cfm: need one s per sequence");
    ASYNCFLOW_EXPECT(eps.shape() == batch.x0.shape(), "cfm: eps shape mismatch");
    CfmDraw<T> draw{std::move(s), std::move(eps), Tensor<T>(batch.x0.shape()), Tensor<T>(Shape{bs, n}),
                    Tensor<T>(Shape{bs, n})};
    std::vector<double> a_all(bs * n);
    for (std::size_t b = 0; b < bs; ++b) {
        const auto a = schedule.a_diag(draw.s[b]);
        const auto ap = schedule.a_prime_diag(draw.s[b]);
        for (std::size_t i = 0; i < n; ++i) {
            a_all[b * n + i] = a[i];
            draw.a[b * n + i] = static_cast<T>(a[i]);
            draw.a_prime[b * n + i] = static_cast<T>(ap[i]);
        }
    }
    draw.x_s = interpolate_rows(batch.x0, draw.eps, std::span<const double>(a_all));
    return draw;
}

template <class T>
CfmDraw<T> draw_cfm(const LatentBatch<T>& batch, const NoiseSchedule& schedule,
                    std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> normal;
    std::vector<double> s(batch.batch());
    for (auto& v : s) v = 1.0 - u(rng);   // (0, 1]
    Tensor<T> eps(batch.x0.shape());
    for (auto& v : eps.vec()) v = static_cast<T>(normal(rng));
    return make_cfm_draw(batch, schedule, std::move(s), std::move(eps));
}

namespace {

template <class T>
Tensor<T> row_weights(const LatentBatch<T>& batch, const CfmDraw<T>& draw, bool mask_padding) {
    const std::size_t rows = batch.batch() * batch.length();
    std::size_t active = 0;
    for (std::size_t r = 0; r < rows; ++r) active += !mask_padding || batch.mask[r];
    ASYNCFLOW_EXPECT(active > 0, "cfm: batch has no active rows");
    Tensor<T> w(Shape{batch.batch(), batch.length(), 1});
    for (std::size_t r = 0; r < rows; ++r)
        if (!mask_padding || batch.mask[r])
            w[r] = draw.a_prime[r] * draw.a_prime[r] / static_cast<T>(active);
    return w;
}

}  // namespace

template <class T>
Var<T> cfm_objective(Tape<T>& tape, const LatentBatch<T>& batch, const CfmDraw<T>& draw,
                     Var<T> v_pred, bool mask_padding) {
    ASYNCFLOW_EXPECT(v_pred.shape() == batch.x0.shape(), "cfm: prediction shape mismatch");
    Tensor<T> target(batch.x0.shape());
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = batch.x0[i] - draw.eps[i];
    auto r = tape.constant(std::move(target)) - v_pred;
    auto w = broadcast_to(tape.constant(row_weights(batch, draw, mask_padding)), batch.x0.shape());
    return sum(w * r * r);
}

template <class T>
VelocityFn<T> dit_velocity(const DitModel<T>& model) {
    return [&model](Tape<T>& tape, Var<T> x_s, const Tensor<T>& a,
                    const std::vector<std::uint8_t>& mask) {
        return dit_forward(tape, model, x_s, a, mask);
    };
}

template <class T>
Var<T> cfm_loss(Tape<T>& tape, const VelocityFn<T>& model, const LatentBatch<T>& batch,
                const NoiseSchedule& schedule, std::mt19937_64& rng, bool mask_padding) {
    const auto draw = draw_cfm(batch, schedule, rng);
    const std::vector<std::uint8_t> keys =
        mask_padding ? batch.mask : std::vector<std::uint8_t>(batch.mask.size(), 1);
    auto v = model(tape, tape.constant(draw.x_s), draw.a, keys);
    auto loss = cfm_objective(tape, batch, draw, v, mask_padding);
    if (!std::isfinite(static_cast<double>(loss.value().item()))) {
        const std::size_t per = batch.length() * batch.x0.dim(2);
        for (std::size_t b = 0; b < batch.batch(); ++b)
            for (std::size_t j = 0; j < per; ++j)
                if (!std::isfinite(static_cast<double>(v.value()[b * per + j]))) {
                    std::ostringstream os;
                    os << "cfm loss is not finite: batch index " << b << ", s=" << draw.s[b];
                    throw NumericError(os.str());
                }
        throw NumericError("cfm loss is not finite");
    }
    return loss;
}

void TrainConfig::validate() const {
    ASYNCFLOW_EXPECT(batch_size >= 1, "train: batch_size must be >= 1");
    ASYNCFLOW_EXPECT(total_steps >= 1, "train: total_steps must be >= 1");
    ASYNCFLOW_EXPECT(adam.lr > 0.0, "train: lr must be positive");
}

template <class T>
std::vector<LatentSequence<T>> encode_dataset(const VaeModel<T>& vae, const Dataset& dataset) {
    std::vector<LatentSequence<T>> out;
    out.reserve(dataset.sequences.size());
    for (const auto& s : dataset.sequences) out.push_back(encode_sequence(vae, s, dataset.max_len));
    return out;
}

template <class T>
TrainDmResult<T> train_dm(const std::vector<LatentSequence<T>>& data, const DitConfig& model_config,
                          const TrainConfig& config, const TrainHooks<T>& hooks) {
    config.validate();
    ASYNCFLOW_EXPECT(!data.empty(), "train_dm: no training sequences");
    std::mt19937_64 rng(config.seed);
    TrainDmResult<T> res{init_dit<T>(model_config, rng), {}};
    auto& model = res.model;
    const NoiseSchedule schedule(config.schedule, model_config.max_len);
    const auto velocity = dit_velocity(model);
    auto state = OptimState<T>::zeros_like(model.params);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::vector<std::size_t> idx(config.batch_size);
    res.losses.reserve(config.total_steps);
    for (std::size_t step = 0; step < config.total_steps; ++step) {
        for (auto& i : idx) i = pick(rng);
        const auto batch = make_batch(data, idx);
        Tape<T> tape;
        Var<T> loss;
        try {
            loss = cfm_loss(tape, velocity, batch, schedule, rng, config.mask_padding);
        } catch (const NumericError& e) {
            throw NumericError("diffusion training diverged at step " + std::to_string(step) + ": " +
                               e.what());
        }
        auto grads = tape.grad(loss, model.params.size());
        adam_step(model.params, grads, state, config.adam);
        res.losses.push_back(static_cast<double>(loss.value().item()));
        if (hooks.on_step) hooks.on_step({step, res.losses.back()});
        if (config.checkpoint_every && hooks.on_checkpoint && (step + 1) % config.checkpoint_every == 0)
            hooks.on_checkpoint(model, step + 1);
    }
    return res;
}

template <class T>
TrainDmResult<T> train_dm(const Dataset& dataset, const VaeModel<T>& vae,
                          const DitConfig& model_config, const TrainConfig& config,
                          const TrainHooks<T>& hooks) {
    ASYNCFLOW_EXPECT(model_config.d_latent == vae.config.d_latent,
                     "train_dm: DiT d_latent does not match the VAE");
    ASYNCFLOW_EXPECT(model_config.max_len == dataset.max_len,
                     "train_dm: DiT max_len does not match the dataset");
    return train_dm(encode_dataset(vae, dataset), model_config, config, hooks);
}

double moving_average(const std::vector<double>& xs, std::size_t end, std::size_t window) {
    ASYNCFLOW_EXPECT(window >= 1 && end >= window && end <= xs.size(), "moving_average: bad window");
    double s = 0.0;
    for (std::size_t i = end - window; i < end; ++i) s += xs[i];
    return s / static_cast<double>(window);
}

#define ASYNCFLOW_TRAINING(T)                                                                   \
    template LatentBatch<T> make_batch<T>(const std::vector<LatentSequence<T>>&,               \
                                          const std::vector<std::size_t>&);                    \
    template CfmDraw<T> make_cfm_draw<T>(const LatentBatch<T>&, const NoiseSchedule&,          \
                                         std::vector<double>, Tensor<T>);                      \
    template CfmDraw<T> draw_cfm<T>(const LatentBatch<T>&, const NoiseSchedule&, std::mt19937_64&); \
    template Var<T> cfm_objective<T>(Tape<T>&, const LatentBatch<T>&, const CfmDraw<T>&, Var<T>, \
                                     bool);                                                    \
    template VelocityFn<T> dit_velocity<T>(const DitModel<T>&);                                \
    template Var<T> cfm_loss<T>(Tape<T>&, const VelocityFn<T>&, const LatentBatch<T>&,         \
                                const NoiseSchedule&, std::mt19937_64&, bool);                 \
    template std::vector<LatentSequence<T>> encode_dataset<T>(const VaeModel<T>&, const Dataset&); \
    template TrainDmResult<T> train_dm<T>(const std::vector<LatentSequence<T>>&, const DitConfig&, \
                                          const TrainConfig&, const TrainHooks<T>&);           \
    template TrainDmResult<T> train_dm<T>(const Dataset&, const VaeModel<T>&, const DitConfig&, \
                                          const TrainConfig&, const TrainHooks<T>&);

ASYNCFLOW_TRAINING(float)
ASYNCFLOW_TRAINING(double)

}  // namespace asyncflow
