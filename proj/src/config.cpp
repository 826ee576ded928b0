#include "asyncflow/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

namespace asyncflow {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class N>
bool parse_number(const std::string& v, N& out) {
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    return ec == std::errc() && p == end;
}

class Parser {
public:
    explicit Parser(RunConfig& cfg) : cfg_(cfg) {}

    void set(const std::string& key, const std::string& v) {
        auto& c = cfg_;
        if (key == "data.path") {
            if (v.empty()) bad(key, v, "a path");
            c.data_path = v;
        } else if (key == "data.num_types") {
            count(key, v, c.data_num_types);
        } else if (key == "data.max_len") {
            count(key, v, c.data_max_len);
        } else if (key == "vae.d_latent") {
            count(key, v, c.vae.d_latent);
        } else if (key == "vae.beta_min") {
            positive(key, v, c.vae.beta_min);
        } else if (key == "vae.beta_max") {
            positive(key, v, c.vae.beta_max);
        } else if (key == "vae.steps") {
            count(key, v, c.vae.steps);
        } else if (key == "vae.batch") {
            count(key, v, c.vae.batch);
        } else if (key == "vae.lr") {
            positive(key, v, c.vae.lr);
        } else if (key == "dm.schedule") {
            try {
                c.dm.schedule = parse_schedule_kind(v);
            } catch (const Error&) {
                bad(key, v, "one of async, disjoint, sync");
            }
        } else if (key == "dm.layers") {
            count(key, v, c.dm_layers);
        } else if (key == "dm.heads") {
            count(key, v, c.dm_heads);
        } else if (key == "dm.d_model") {
            count(key, v, c.dm_d_model);
        } else if (key == "dm.steps") {
            count(key, v, c.dm.total_steps);
        } else if (key == "dm.batch") {
            count(key, v, c.dm.batch_size);
        } else if (key == "dm.lr") {
            positive(key, v, c.dm.adam.lr);
        } else if (key == "solver.kind") {
            if (v == "euler" || v == "rk4")
                c.solver = parse_solver_kind(v);
            else
                bad(key, v, "euler or rk4");
        } else if (key == "solver.substeps") {
            count(key, v, c.substeps);
        } else if (key == "seed") {
            if (!parse_number(v, c.seed)) bad(key, v, "a non-negative integer");
        } else if (key == "dtype") {
            if (v == "f32")
                c.dtype = DTypeChoice::F32;
            else if (v == "f64")
                c.dtype = DTypeChoice::F64;
            else
                bad(key, v, "f32 or f64");
        } else {
            errors_.push_back(key + ": unknown key");
        }
    }

    void error(const std::string& e) { errors_.push_back(e); }
    const std::vector<std::string>& errors() const { return errors_; }

private:
    template <class N>
    void count(const std::string& key, const std::string& v, N& out) {
        N n{};
        if (!parse_number(v, n) || n <= 0)
            bad(key, v, "a positive integer");
        else
            out = n;
    }

    void positive(const std::string& key, const std::string& v, double& out) {
        double x = 0;
        if (!parse_number(v, x) || !(x > 0.0))
            bad(key, v, "a positive number");
        else
            out = x;
    }

    void bad(const std::string& key, const std::string& v, const std::string& expected) {
        errors_.push_back(key + ": expected " + expected + ", got '" + v + "'");
    }

    RunConfig& cfg_;
    std::vector<std::string> errors_;
};

[[noreturn]] void fail(const std::vector<std::string>& errors) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ValidationError(msg);
}

}  // namespace

const std::set<std::string>& run_config_keys() {
    static const std::set<std::string> keys{
        "data.path",   "data.num_types", "data.max_len", "vae.d_latent",    "vae.beta_min",
        "vae.beta_max", "vae.steps",     "vae.batch",    "vae.lr",          "dm.schedule",
        "dm.layers",   "dm.heads",       "dm.d_model",   "dm.steps",        "dm.batch",
        "dm.lr",       "solver.kind",    "solver.substeps", "seed",         "dtype"};
    return keys;
}

DitConfig RunConfig::dit_config(std::size_t max_len, std::size_t d_latent) const {
    DitConfig c;
    c.max_len = max_len;
    c.d_latent = d_latent;
    c.d_model = dm_d_model;
    c.num_layers = dm_layers;
    c.num_heads = dm_heads;
    return c;
}

namespace {

RunConfig parse_impl(const std::string& text, std::vector<std::string>& errors) {
    RunConfig cfg;
    Parser p(cfg);
    std::istringstream in(text);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            p.error("line " + std::to_string(no) + ": expected key=value");
            continue;
        }
        const auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (cfg.present.count(key)) {
            p.error(key + ": given more than once");
            continue;
        }
        cfg.present.insert(key);
        p.set(key, value);
    }
    if (cfg.vae.beta_min > cfg.vae.beta_max)
        p.error("vae.beta_min: must not exceed vae.beta_max");
    if (cfg.dm_d_model % cfg.dm_heads != 0) p.error("dm.heads: must divide dm.d_model");
    errors = p.errors();
    return cfg;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    std::vector<std::string> errors;
    auto cfg = parse_impl(text, errors);
    if (!errors.empty()) fail(errors);
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    std::vector<std::string> errors;
    auto cfg = parse_impl(ss.str(), errors);
    if (cfg.data_path.empty()) {
        errors.push_back("data.path: missing (required)");
    } else {
        std::filesystem::path dp(cfg.data_path);
        if (dp.is_relative()) dp = path.parent_path() / dp;
        if (!std::filesystem::exists(dp))
            errors.push_back("data.path: file not found: " + dp.string());
        cfg.data_path = dp.string();
    }
    if (!errors.empty()) fail(errors);
    return cfg;
}

}  // namespace asyncflow
