#include "asyncflow/dit.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "asyncflow/nn.hpp"

namespace asyncflow {

void DitConfig::validate() const {
    ASYNCFLOW_EXPECT(max_len >= 1 && d_latent >= 1 && d_model >= 1, "dit: sizes must be >= 1");
    ASYNCFLOW_EXPECT(num_heads >= 1 && d_model % num_heads == 0,
                     "dit: d_model must be divisible by num_heads");
    ASYNCFLOW_EXPECT(mlp_ratio >= 1, "dit: mlp_ratio must be >= 1");
    ASYNCFLOW_EXPECT(max_period > 1.0, "dit: max_period must exceed 1");
    ASYNCFLOW_EXPECT(h_emb >= 1, "dit: h_emb must be >= 1");
}

namespace {

std::string block(std::size_t l, const char* part) {
    return "blk" + std::to_string(l) + "." + part;
}

}  // namespace

template <class T>
DitModel<T> init_dit(const DitConfig& config, std::mt19937_64& rng) {
    config.validate();
    const std::size_t d = config.d_model, hidden = config.mlp_ratio * d;
    DitModel<T> m{config, {}};
    auto& p = m.params;
    nn::add_linear(p, "in", config.d_latent, d, rng);
    Tensor<T> pos(Shape{config.max_len, d});
    std::normal_distribution<double> normal(0.0, 0.02);
    for (auto& v : pos.vec()) v = static_cast<T>(normal(rng));
    p.add("pos", std::move(pos));
    nn::add_linear(p, "emb.l1", 2 * config.h_emb, d, rng);
    nn::add_linear(p, "emb.l2", d, d, rng);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        nn::add_linear(p, block(l, "ada"), d, 6 * d, rng, true);
        nn::add_linear(p, block(l, "q"), d, d, rng);
        nn::add_linear(p, block(l, "k"), d, d, rng);
        nn::add_linear(p, block(l, "v"), d, d, rng);
        nn::add_linear(p, block(l, "o"), d, d, rng);
        nn::add_linear(p, block(l, "fc1"), d, hidden, rng);
        nn::add_linear(p, block(l, "fc2"), hidden, d, rng);
    }
    nn::add_linear(p, "final.ada", d, 2 * d, rng, true);
    nn::add_linear(p, "final.out", d, config.d_latent, rng, true);
    return m;
}

template <class T>
Tensor<T> schedule_embedding(std::span<const double> a, double max_period, std::size_t h_emb) {
    ASYNCFLOW_EXPECT(!a.empty(), "schedule_embedding: empty diagonal");
    ASYNCFLOW_EXPECT(max_period > 1.0 && h_emb >= 1, "schedule_embedding: bad T_m or h");
    Tensor<T> e(Shape{a.size(), 2 * h_emb});
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < h_emb; ++j) {
            const double arg = a[i] * std::pow(max_period, -static_cast<double>(j) /
                                                               static_cast<double>(h_emb));
            e.at(i, j) = static_cast<T>(std::cos(arg));
            e.at(i, h_emb + j) = static_cast<T>(std::sin(arg));
        }
    return e;
}

template <class T>
Var<T> masked_attention(Var<T> q, Var<T> k, Var<T> v, const std::vector<std::uint8_t>& key_mask) {
    if (q.value().rank() == 2) {
        auto lift = [](Var<T> x) {
            return reshape(x, Shape{1, x.shape()[0], x.shape()[1]});
        };
        auto out = masked_attention(lift(q), lift(k), lift(v), key_mask);
        return reshape(out, Shape{out.shape()[1], out.shape()[2]});
    }
    ASYNCFLOW_EXPECT(q.value().rank() == 3 && q.shape() == k.shape() && k.shape() == v.shape(),
                     "masked_attention: q, k, v must share shape [B, N, dh]");
    const std::size_t b = q.shape()[0], n = q.shape()[1], dh = q.shape()[2];
    ASYNCFLOW_EXPECT(key_mask.size() == b * n, "masked_attention: key_mask has wrong length");
    std::vector<std::uint8_t> blocked(b * n * n, 0);
    for (std::size_t bi = 0; bi < b; ++bi) {
        bool any = false;
        for (std::size_t j = 0; j < n; ++j) any = any || key_mask[bi * n + j];
        ASYNCFLOW_EXPECT(any, "masked_attention: key_mask is all zero");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) blocked[(bi * n + i) * n + j] = !key_mask[bi * n + j];
    }
    auto scores = scale(matmul(q, transpose(k)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    scores = masked_fill(scores, blocked, -std::numeric_limits<T>::infinity());
    return matmul(softmax(scores), v);
}

namespace {

template <class T>
Var<T> modulate(Var<T> x, Var<T> shift, Var<T> scale_) {
    auto h = layer_norm(x);
    return h + h * scale_ + shift;
}

}  // namespace

template <class T>
Var<T> dit_forward(Tape<T>& tape, const DitModel<T>& model, Var<T> x_s, const Tensor<T>& a,
                   const std::vector<std::uint8_t>& key_mask) {
    const auto& c = model.config;
    const auto& p = model.params;
    ASYNCFLOW_EXPECT(x_s.value().rank() == 3, "dit_forward: x_s must be [B, N, d_latent]");
    const std::size_t b = x_s.shape()[0], n = x_s.shape()[1], d = c.d_model;
    if (n != c.max_len || x_s.shape()[2] != c.d_latent)
        throw ContractViolation("dit_forward: x_s shape " + shape_str(x_s.shape()) +
                                " does not match config [*, " + std::to_string(c.max_len) + ", " +
                                std::to_string(c.d_latent) + "]");
    ASYNCFLOW_EXPECT(a.shape() == (Shape{b, n}), "dit_forward: a must be [B, N]");
    ASYNCFLOW_EXPECT(key_mask.size() == b * n, "dit_forward: key_mask must have B*N entries");

    std::vector<double> ad(a.vec().begin(), a.vec().end());
    auto emb = tape.constant(schedule_embedding<T>(ad, c.max_period, c.h_emb)
                                 .reshaped(Shape{b, n, 2 * c.h_emb}));
    auto cond = silu(nn::dense(tape, p, "emb.l2", silu(nn::dense(tape, p, "emb.l1", emb))));

    const Shape hs{b, n, d};
    auto h = nn::dense(tape, p, "in", x_s) + broadcast_to(tape.param(p, "pos"), hs);
    const std::size_t heads = c.num_heads, dh = d / heads;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        auto mod = nn::dense(tape, p, block(l, "ada"), cond);
        auto part = [&](std::size_t i) { return slice(mod, -1, i * d, (i + 1) * d); };

        auto x = modulate(h, part(0), part(1));
        auto q = nn::dense(tape, p, block(l, "q"), x);
        auto k = nn::dense(tape, p, block(l, "k"), x);
        auto v = nn::dense(tape, p, block(l, "v"), x);
        std::vector<Var<T>> outs;
        for (std::size_t hd = 0; hd < heads; ++hd) {
            auto cut = [&](Var<T> t) { return heads == 1 ? t : slice(t, -1, hd * dh, (hd + 1) * dh); };
            outs.push_back(masked_attention(cut(q), cut(k), cut(v), key_mask));
        }
        auto att = nn::dense(tape, p, block(l, "o"), heads == 1 ? outs[0] : concat(outs, -1));
        h = h + part(2) * att;

        x = modulate(h, part(3), part(4));
        auto mlp = nn::dense(tape, p, block(l, "fc2"), gelu(nn::dense(tape, p, block(l, "fc1"), x)));
        h = h + part(5) * mlp;
    }
    auto fin = nn::dense(tape, p, "final.ada", cond);
    auto x = modulate(h, slice(fin, -1, 0, d), slice(fin, -1, d, 2 * d));
    return nn::dense(tape, p, "final.out", x);
}

template <class T>
Tensor<T> dit_apply(const DitModel<T>& model, const Tensor<T>& x_s, std::span<const double> a,
                    const std::vector<std::uint8_t>& key_mask) {
    ASYNCFLOW_EXPECT(x_s.rank() == 2, "dit_apply: x_s must be [N, d_latent]");
    const std::size_t n = x_s.dim(0);
    ASYNCFLOW_EXPECT(a.size() == n, "dit_apply: a has wrong length");
    Tape<T> tape(false);
    Tensor<T> at(Shape{1, n});
    for (std::size_t i = 0; i < n; ++i) at[i] = static_cast<T>(a[i]);
    auto x = tape.constant(x_s.reshaped(Shape{1, n, x_s.dim(1)}));
    return dit_forward(tape, model, x, at, key_mask).value().reshaped(x_s.shape());
}

#define ASYNCFLOW_DIT(T)                                                                       \
    template DitModel<T> init_dit<T>(const DitConfig&, std::mt19937_64&);                      \
    template Tensor<T> schedule_embedding<T>(std::span<const double>, double, std::size_t);    \
    template Var<T> masked_attention<T>(Var<T>, Var<T>, Var<T>, const std::vector<std::uint8_t>&); \
    template Var<T> dit_forward<T>(Tape<T>&, const DitModel<T>&, Var<T>, const Tensor<T>&,      \
                                   const std::vector<std::uint8_t>&);                          \
    template Tensor<T> dit_apply<T>(const DitModel<T>&, const Tensor<T>&, std::span<const double>, \
                                    const std::vector<std::uint8_t>&);

ASYNCFLOW_DIT(float)
ASYNCFLOW_DIT(double)

}  // namespace asyncflow
