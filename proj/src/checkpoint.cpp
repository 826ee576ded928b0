#include "asyncflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace asyncflow {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'I', 'F'};

template <class U>
void put(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class U>
    U get() {
        need(sizeof(U));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return static_cast<U>(v);
    }

    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw CheckpointError("truncated checkpoint: needed " + std::to_string(n) +
                                  " more bytes at offset " + std::to_string(pos_));
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const CheckpointArray* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, ckpt.version);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& a : ckpt.arrays) {
        ASYNCFLOW_EXPECT(shape_size(a.shape) == a.values.size(),
                         "checkpoint array " + a.name + " has inconsistent shape");
        put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
        out += a.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) put<std::uint64_t>(out, d);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype));
        for (double v : a.values) {
            if (a.dtype == DType::F32)
                put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
            else
                put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    const std::string cfg = ckpt.config.dump();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CheckpointError("not a checkpoint (bad magic bytes)");
    Reader r(bytes);
    r.take(4);
    Checkpoint ck;
    ck.version = r.get<std::uint32_t>();
    if (ck.version != kCheckpointVersion)
        throw CheckpointError("checkpoint version mismatch: file has version " +
                              std::to_string(ck.version) + ", this build reads version " +
                              std::to_string(kCheckpointVersion));
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < count; ++k) {
        CheckpointArray a;
        a.name = r.take(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < rank; ++i) a.shape.push_back(r.get<std::uint64_t>());
        const auto code = r.get<std::uint8_t>();
        if (code > 1) throw CheckpointError("array " + a.name + ": unknown dtype code " + std::to_string(code));
        a.dtype = static_cast<DType>(code);
        const std::size_t n = shape_size(a.shape);
        a.values.resize(n);
        for (auto& v : a.values)
            v = a.dtype == DType::F32 ? static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()))
                                      : std::bit_cast<double>(r.get<std::uint64_t>());
        ck.arrays.push_back(std::move(a));
    }
    const std::string cfg = r.take(r.get<std::uint32_t>());
    if (!r.done()) throw CheckpointError("trailing bytes after checkpoint config");
    try {
        ck.config = nlohmann::json::parse(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::string bytes = encode_checkpoint(ckpt);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    try {
        return decode_checkpoint(ss.str());
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

template <class T>
void add_params(Checkpoint& ckpt, const ParamSet<T>& params, const std::string& prefix) {
    for (const auto& p : params) {
        CheckpointArray a{prefix + p.name, p.value.shape(),
                          std::is_same_v<T, float> ? DType::F32 : DType::F64, {}};
        a.values.assign(p.value.vec().begin(), p.value.vec().end());
        ckpt.arrays.push_back(std::move(a));
    }
}

template <class T>
ParamSet<T> extract_params(const Checkpoint& ckpt, const std::string& prefix) {
    ParamSet<T> ps;
    for (const auto& a : ckpt.arrays) {
        if (a.name.rfind(prefix, 0) != 0) continue;
        std::vector<T> v(a.values.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(a.values[i]);
        ps.add(a.name.substr(prefix.size()), Tensor<T>(a.shape, std::move(v)));
    }
    return ps;
}

// ------------------------------------------------------------- configs

nlohmann::json to_json(const VaeConfig& c) {
    return {{"num_types", c.num_types}, {"d_latent", c.d_latent}, {"hidden", c.hidden},
            {"beta_min", c.beta_min},   {"beta_max", c.beta_max}, {"steps", c.steps},
            {"batch", c.batch},         {"lr", c.lr}};
}

nlohmann::json to_json(const DitConfig& c) {
    return {{"max_len", c.max_len},       {"d_latent", c.d_latent},   {"d_model", c.d_model},
            {"num_layers", c.num_layers}, {"num_heads", c.num_heads}, {"mlp_ratio", c.mlp_ratio},
            {"max_period", c.max_period}, {"h_emb", c.h_emb}};
}

nlohmann::json to_json(const TauScaler& s) {
    return {{"mean", s.mean}, {"std", s.std}, {"active", s.active}};
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
    VaeConfig c;
    c.num_types = j.at("num_types").get<int>();
    c.d_latent = j.at("d_latent").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.beta_min = j.at("beta_min").get<double>();
    c.beta_max = j.at("beta_max").get<double>();
    c.steps = j.at("steps").get<std::size_t>();
    c.batch = j.at("batch").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    return c;
}

DitConfig dit_config_from_json(const nlohmann::json& j) {
    DitConfig c;
    c.max_len = j.at("max_len").get<std::size_t>();
    c.d_latent = j.at("d_latent").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    c.max_period = j.at("max_period").get<double>();
    c.h_emb = j.at("h_emb").get<std::size_t>();
    return c;
}

TauScaler scaler_from_json(const nlohmann::json& j) {
    return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("active").get<bool>()};
}

template <class T>
Checkpoint vae_checkpoint(const VaeBundle<T>& bundle) {
    Checkpoint ck;
    add_params(ck, bundle.model.params, "vae.");
    ck.config = {{"kind", "vae"},
                 {"vae", to_json(bundle.model.config)},
                 {"tau_scaler", to_json(bundle.scaler)},
                 {"max_len", bundle.max_len},
                 {"seed", bundle.seed}};
    return ck;
}

template <class T>
VaeBundle<T> vae_from_checkpoint(const Checkpoint& ckpt) {
    try {
        if (ckpt.config.value("kind", "") != "vae") throw CheckpointError("checkpoint does not hold a VAE");
        VaeBundle<T> b;
        b.model.config = vae_config_from_json(ckpt.config.at("vae"));
        b.model.params = extract_params<T>(ckpt, "vae.");
        b.scaler = scaler_from_json(ckpt.config.at("tau_scaler"));
        b.max_len = ckpt.config.at("max_len").get<std::size_t>();
        b.seed = ckpt.config.at("seed").get<std::uint64_t>();
        std::mt19937_64 rng(0);
        const auto ref = init_vae<T>(b.model.config, rng);
        if (ref.params.size() != b.model.params.size())
            throw CheckpointError("VAE checkpoint has " + std::to_string(b.model.params.size()) +
                                  " arrays, expected " + std::to_string(ref.params.size()));
        for (std::size_t i = 0; i < ref.params.size(); ++i)
            if (ref.params[i].name != b.model.params[i].name ||
                ref.params[i].value.shape() != b.model.params[i].value.shape())
                throw CheckpointError("VAE checkpoint array " + b.model.params[i].name +
                                      " does not match its config");
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("VAE checkpoint config: ") + e.what());
    }
}

template <class T>
Checkpoint dit_checkpoint(const DitBundle<T>& bundle) {
    Checkpoint ck;
    add_params(ck, bundle.model.params, "dit.");
    ck.config = {{"kind", "dit"},
                 {"dit", to_json(bundle.model.config)},
                 {"schedule", to_string(bundle.schedule)},
                 {"num_types", bundle.num_types},
                 {"seed", bundle.seed},
                 {"extra", bundle.extra}};
    return ck;
}

template <class T>
DitBundle<T> dit_from_checkpoint(const Checkpoint& ckpt) {
    try {
        if (ckpt.config.value("kind", "") != "dit") throw CheckpointError("checkpoint does not hold a DiT");
        DitBundle<T> b;
        b.model.config = dit_config_from_json(ckpt.config.at("dit"));
        b.model.params = extract_params<T>(ckpt, "dit.");
        b.schedule = parse_schedule_kind(ckpt.config.at("schedule").get<std::string>());
        b.num_types = ckpt.config.at("num_types").get<int>();
        b.seed = ckpt.config.at("seed").get<std::uint64_t>();
        b.extra = ckpt.config.value("extra", nlohmann::json::object());
        std::mt19937_64 rng(0);
        const auto ref = init_dit<T>(b.model.config, rng);
        if (ref.params.size() != b.model.params.size())
            throw CheckpointError("DiT checkpoint has " + std::to_string(b.model.params.size()) +
                                  " arrays, expected " + std::to_string(ref.params.size()));
        for (std::size_t i = 0; i < ref.params.size(); ++i)
            if (ref.params[i].name != b.model.params[i].name ||
                ref.params[i].value.shape() != b.model.params[i].value.shape())
                throw CheckpointError("DiT checkpoint array " + b.model.params[i].name +
                                      " does not match its config");
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("DiT checkpoint config: ") + e.what());
    }
}

#define ASYNCFLOW_CKPT(T)                                                           \
    template void add_params<T>(Checkpoint&, const ParamSet<T>&, const std::string&); \
    template ParamSet<T> extract_params<T>(const Checkpoint&, const std::string&);  \
    template Checkpoint vae_checkpoint<T>(const VaeBundle<T>&);                     \
    template VaeBundle<T> vae_from_checkpoint<T>(const Checkpoint&);                \
    template Checkpoint dit_checkpoint<T>(const DitBundle<T>&);                     \
    template DitBundle<T> dit_from_checkpoint<T>(const Checkpoint&);

ASYNCFLOW_CKPT(float)
ASYNCFLOW_CKPT(double)

}  // namespace asyncflow
