// asyncflow command-line interface.
//
// Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "asyncflow/checkpoint.hpp"
#include "asyncflow/config.hpp"
#include "asyncflow/data.hpp"
#include "asyncflow/forecast.hpp"
#include "asyncflow/metrics.hpp"
#include "asyncflow/schedule.hpp"
#include "asyncflow/training.hpp"
#include "asyncflow/vae.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace asyncflow;

namespace {

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
    std::string kind;
    std::string out;
    std::size_t n_seqs = 50;
    double horizon = 100.0;
    double rate = 1.0;
    std::vector<double> mu{0.2, 0.2};
    std::vector<double> alpha{0.8, 0.05, 0.05, 0.8};
    double decay = 1.0;
    std::size_t max_len = 16;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
    std::mt19937_64 rng(a.seed);
    Dataset ds;
    ds.max_len = a.max_len;
    HawkesParams hp;
    if (a.kind == "hawkes") {
        const std::size_t k = a.mu.size();
        if (a.alpha.size() != k * k)
            throw ValidationError("synth: --alpha needs " + std::to_string(k * k) +
                                  " values for " + std::to_string(k) + " types");
        hp.base_rates = a.mu;
        hp.excitation.assign(k, std::vector<double>(k));
        hp.decay.assign(k, std::vector<double>(k, a.decay));
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) hp.excitation[i][j] = a.alpha[i * k + j];
        hp.validate();
        ds.num_types = static_cast<int>(k);
    } else {
        if (!(a.rate > 0)) throw ValidationError("synth: --rate must be positive");
        ds.num_types = 1;
    }
    if (!(a.horizon > 0)) throw ValidationError("synth: --T must be positive");
    if (a.max_len < 1) throw ValidationError("synth: --max-len must be >= 1");
    std::size_t events = 0;
    for (std::size_t i = 0; i < a.n_seqs; ++i) {
        EventSequence s;
        // Empty draws are redrawn: datasets hold non-empty sequences only.
        for (int attempt = 0; s.empty(); ++attempt) {
            if (attempt == 1000) throw ValidationError("synth: process produced no events");
            s = a.kind == "hawkes" ? simulate_hawkes(hp, a.horizon, rng)
                                   : simulate_poisson(a.rate, a.horizon, rng);
        }
        events += s.size();
        ds.sequences.push_back(std::move(s));
    }
    write_jsonl(a.out, ds, MetaPlacement::Companion);
    std::cout << "event=synth kind=" << a.kind << " sequences=" << ds.sequences.size()
              << " events=" << events << " path=" << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- training

Dataset load_checked(const RunConfig& cfg) {
    auto ds = load_jsonl(cfg.data_path);
    std::vector<std::string> errors;
    if (cfg.data_num_types && cfg.data_num_types != ds.num_types)
        errors.push_back("data.num_types: config says " + std::to_string(cfg.data_num_types) +
                         ", dataset has " + std::to_string(ds.num_types));
    if (cfg.data_max_len && cfg.data_max_len != ds.max_len)
        errors.push_back("data.max_len: config says " + std::to_string(cfg.data_max_len) +
                         ", dataset has " + std::to_string(ds.max_len));
    if (!errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ValidationError(msg);
    }
    return ds;
}

template <class T>
int train_vae_impl(const RunConfig& cfg, const std::string& out, std::size_t log_every) {
    const auto raw = load_checked(cfg);
    const auto [ds, scaler] = standardize_tau(raw);
    VaeConfig vc = cfg.vae;
    vc.num_types = ds.num_types;
    std::mt19937_64 rng(cfg.seed);
    auto res = train_vae<T>(ds, vc, rng, [&](const VaeTrainLog& l) {
        if ((l.step + 1) % log_every == 0 || l.step == 0)
            std::cout << "event=vae_step step=" << l.step + 1 << " loss=" << l.loss
                      << " beta=" << l.beta << "\n";
    });
    save_checkpoint(out, vae_checkpoint(VaeBundle<T>{res.model, scaler, ds.max_len, cfg.seed}));
    std::cout << "event=vae_done initial_loss=" << res.initial_loss
              << " final_loss=" << res.final_loss << " path=" << out << "\n";
    return 0;
}

template <class T>
int train_dm_impl(const RunConfig& cfg, const std::string& vae_path, const std::string& out,
                  std::size_t log_every) {
    const auto raw = load_checked(cfg);
    const auto vb = vae_from_checkpoint<T>(load_checkpoint(vae_path));
    if (vb.model.config.num_types != raw.num_types)
        throw ValidationError("dimension mismatch: VAE has " +
                              std::to_string(vb.model.config.num_types) + " types, data has " +
                              std::to_string(raw.num_types));
    const auto ds = apply_scaler(raw, vb.scaler);
    const auto dc = cfg.dit_config(ds.max_len, vb.model.config.d_latent);
    TrainConfig tc = cfg.dm;
    tc.seed = cfg.seed;
    TrainHooks<T> hooks;
    hooks.on_step = [&](const TrainStep& s) {
        if ((s.step + 1) % log_every == 0 || s.step == 0)
            std::cout << "event=dm_step step=" << s.step + 1 << " loss=" << s.loss << "\n";
    };
    auto res = train_dm<T>(ds, vb.model, dc, tc, hooks);
    DitBundle<T> bundle{res.model, tc.schedule, ds.num_types, cfg.seed,
                        {{"solver", to_string(cfg.solver)}, {"substeps", cfg.substeps},
                         {"steps", tc.total_steps}, {"batch", tc.batch_size}, {"lr", tc.adam.lr}}};
    save_checkpoint(out, dit_checkpoint(bundle));
    std::cout << "event=dm_done initial_loss=" << res.losses.front()
              << " final_loss=" << res.losses.back() << " path=" << out << "\n";
    return 0;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
    std::string task;
    std::size_t h = 1;
    std::string ckpt, vae, data, out;
    std::uint64_t seed = 0;
    std::string solver;
    std::size_t substeps = 0;
    std::size_t threads = 1;
    std::size_t limit = 0;
    bool full_span = false;
};

template <class T>
int predict_impl(const PredictArgs& a, const Checkpoint& dit_ck) {
    const auto db = dit_from_checkpoint<T>(dit_ck);
    const auto vb = vae_from_checkpoint<T>(load_checkpoint(a.vae));
    auto data = load_jsonl(a.data);
    std::vector<std::string> errors;
    if (vb.model.config.d_latent != db.model.config.d_latent)
        errors.push_back("latent size: VAE " + std::to_string(vb.model.config.d_latent) +
                         ", diffusion model " + std::to_string(db.model.config.d_latent));
    if (data.max_len != db.model.config.max_len)
        errors.push_back("sequence length: data " + std::to_string(data.max_len) +
                         ", diffusion model " + std::to_string(db.model.config.max_len));
    if (data.num_types != vb.model.config.num_types || data.num_types != db.num_types)
        errors.push_back("event types: data " + std::to_string(data.num_types) + ", VAE " +
                         std::to_string(vb.model.config.num_types) + ", diffusion model " +
                         std::to_string(db.num_types));
    if (!errors.empty()) {
        std::string msg = "dimension mismatch between checkpoints and data:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ValidationError(msg);
    }
    if (a.limit && data.sequences.size() > a.limit) data.sequences.resize(a.limit);

    Forecaster<T> f;
    f.denoiser = dit_denoiser(db.model);
    f.vae = &vb.model;
    f.scaler = vb.scaler;
    f.schedule = NoiseSchedule(db.schedule, db.model.config.max_len);
    f.solver = parse_solver_kind(!a.solver.empty() ? a.solver
                                                   : db.extra.value("solver", std::string("euler")));
    f.substeps = a.substeps ? a.substeps : db.extra.value("substeps", std::size_t{8});

    std::vector<ForecastRecord> recs;
    if (a.task == "next") {
        recs = forecast_next(f, data, a.seed, a.threads);
    } else {
        if (a.h < 1 || a.h >= f.schedule.size())
            throw ValidationError("predict: --h must be in [1, " +
                                  std::to_string(f.schedule.size() - 1) + "]");
        recs = forecast_horizon(f, data, a.h, a.seed, a.threads, a.full_span);
    }
    std::ofstream out(a.out);
    if (!out) throw ValidationError("cannot write " + a.out);
    std::size_t events = 0;
    for (const auto& r : recs) {
        json taus = json::array(), types = json::array(), tt = json::array(), tk = json::array();
        for (std::size_t i = 0; i < r.pred.size(); ++i) {
            taus.push_back(r.pred[i].tau);
            types.push_back(r.pred[i].type);
            tt.push_back(r.truth[i].tau);
            tk.push_back(r.truth[i].type);
        }
        events += r.pred.size();
        out << json{{"seq", r.seq},      {"task", a.task},     {"h", a.task == "next" ? 1 : a.h},
                    {"start", r.start},  {"taus", taus},       {"types", types},
                    {"true_taus", tt},   {"true_types", tk},   {"seed", a.seed}}
                   .dump()
            << "\n";
    }
    std::cout << "event=predict task=" << a.task << " records=" << recs.size()
              << " events=" << events << " skipped=" << data.sequences.size() - recs.size()
              << " path=" << a.out << "\n";
    return 0;
}

int cmd_predict(const PredictArgs& a) {
    const auto ck = load_checkpoint(a.ckpt);
    if (ck.arrays.empty()) throw CheckpointError("checkpoint holds no arrays");
    return ck.arrays.front().dtype == DType::F64 ? predict_impl<double>(a, ck)
                                                 : predict_impl<float>(a, ck);
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
    std::string pred, data, out, dataset;
    bool append = false;
};

struct PredLine {
    std::size_t seq, start, h;
    std::string task;
    std::uint64_t seed;
    std::vector<Event> pred;
};

std::vector<PredLine> read_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read " + path);
    std::vector<PredLine> out;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            PredLine p{j.at("seq").get<std::size_t>(), j.at("start").get<std::size_t>(),
                       j.at("h").get<std::size_t>(), j.at("task").get<std::string>(),
                       j.at("seed").get<std::uint64_t>(), {}};
            const auto taus = j.at("taus").get<std::vector<double>>();
            const auto types = j.at("types").get<std::vector<int>>();
            if (taus.size() != types.size()) throw ValidationError("taus and types differ in length");
            for (std::size_t i = 0; i < taus.size(); ++i) p.pred.push_back({taus[i], types[i]});
            out.push_back(std::move(p));
        } catch (const std::exception& e) {
            throw ValidationError(path + ":" + std::to_string(no) + ": bad prediction line: " + e.what());
        }
    }
    if (out.empty()) throw ValidationError(path + ": no predictions");
    return out;
}

bool is_prediction_file(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line)) return false;
    try {
        const auto j = json::parse(line);
        return j.is_object() && j.contains("task") && j.contains("taus");
    } catch (const json::exception&) {
        return false;
    }
}

int cmd_eval(const EvalArgs& a) {
    const auto preds = read_predictions(a.pred);
    std::vector<ForecastRecord> recs;
    if (is_prediction_file(a.data)) {
        const auto truth = read_predictions(a.data);
        std::map<std::pair<std::size_t, std::size_t>, const PredLine*> by_key;
        for (const auto& t : truth) by_key[{t.seq, t.start}] = &t;
        for (const auto& p : preds) {
            auto it = by_key.find({p.seq, p.start});
            if (it == by_key.end())
                throw ValidationError("eval: no truth for sequence " + std::to_string(p.seq));
            recs.push_back({p.seq, p.start, p.pred, it->second->pred});
        }
    } else {
        const auto data = load_jsonl(a.data);
        for (const auto& p : preds) {
            if (p.seq >= data.sequences.size())
                throw ValidationError("eval: sequence " + std::to_string(p.seq) + " not in " + a.data);
            const auto& ev = data.sequences[p.seq].events;
            if (p.start + p.pred.size() > ev.size())
                throw ValidationError("eval: prediction for sequence " + std::to_string(p.seq) +
                                      " runs past its end");
            recs.push_back({p.seq, p.start, p.pred,
                            std::vector<Event>(ev.begin() + static_cast<std::ptrdiff_t>(p.start),
                                               ev.begin() + static_cast<std::ptrdiff_t>(p.start + p.pred.size()))});
        }
    }
    const auto& first = preds.front();
    const auto m = summarize(recs, first.task == "next" ? OtdMode::PerEvent : OtdMode::PerSequence);
    const bool header = !a.append || !fs::exists(a.out) || fs::file_size(a.out) == 0;
    std::ofstream out(a.out, a.append ? std::ios::app : std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + a.out);
    if (header) out << "dataset,task,horizon,seed,rmse,error_rate,otd\n";
    const std::string name = a.dataset.empty() ? fs::path(a.data).stem().string() : a.dataset;
    out << name << "," << first.task << "," << first.h << "," << first.seed << "," << num(m.rmse)
        << "," << num(m.error_rate) << "," << num(m.otd) << "\n";
    std::cout << "event=eval task=" << first.task << " records=" << m.records
              << " events=" << m.events << " rmse=" << m.rmse << " error_rate=" << m.error_rate
              << " otd=" << m.otd << "\n";
    return 0;
}

// --------------------------------------------------------------- schedule

struct ScheduleArgs {
    std::string kind;
    std::size_t n = 6;
    std::size_t grid = 1001;
    std::string out;
    bool knots = false;
    std::size_t samples = 1000;
    std::uint64_t seed = 0;
    bool inject_fault = false;
};

int cmd_schedule_dump(const ScheduleArgs& a) {
    if (a.grid < 2) throw ValidationError("schedule dump: --grid must be >= 2");
    const NoiseSchedule s(parse_schedule_kind(a.kind), a.n);
    std::vector<double> pts;
    for (std::size_t k = 0; k < a.grid; ++k)
        pts.push_back(static_cast<double>(k) / static_cast<double>(a.grid - 1));
    if (a.knots)
        for (const auto& r : s.knots()) pts.push_back(r.to_double());
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    std::ofstream file;
    if (!a.out.empty()) {
        file.open(a.out);
        if (!file) throw ValidationError("cannot write " + a.out);
    }
    std::ostream& out = a.out.empty() ? std::cout : file;
    out << "s";
    for (std::size_t i = 1; i <= a.n; ++i) out << ",a_" << i;
    out << "\n";
    for (double p : pts) {
        out << num(p);
        for (double v : s.a_diag(p)) out << "," << num(v);
        out << "\n";
    }
    return 0;
}

int cmd_schedule_check(const ScheduleArgs& a) {
    const NoiseSchedule s(parse_schedule_kind(a.kind), a.n);
    ScheduleReport rep;
    if (a.inject_fault) {
        // Test hook: a schedule that briefly moves back towards data.
        const DiagonalFn broken = [&](double t) {
            auto d = s.a_diag(t);
            for (auto& v : d) v = std::clamp(v + 0.2 * std::sin(40.0 * t) * v * (1 - v), 0.0, 1.0);
            return d;
        };
        rep = validate_schedule(broken, a.n, s.lipschitz(), a.grid);
    } else {
        rep = validate_schedule(s, a.grid);
    }
    int bad = 0;
    for (const auto& v : rep.violations) {
        std::cout << "violation check=" << v.check << " i=" << v.index << " s=" << num(v.s)
                  << " value=" << num(v.value) << "\n";
        ++bad;
    }
    std::mt19937_64 rng(a.seed);
    std::normal_distribution<double> normal;
    Tensor<double> x0(Shape{a.n, 4}), eps(Shape{a.n, 4});
    for (auto& v : x0.vec()) v = normal(rng);
    for (auto& v : eps.vec()) v = normal(rng);
    const double dev = field_equivalence_check(x0, eps, s, a.samples, rng);
    const double tol = s.kind() == ScheduleKind::Sync ? 1e-12 : 1e-5;
    std::cout << "check=field_equivalence deviation=" << num(dev) << " tolerance=" << tol << "\n";
    if (!(dev < tol)) {
        std::cout << "violation check=field_equivalence deviation=" << num(dev) << "\n";
        ++bad;
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0, worst_s = 0.0;
    for (int t = 0; t < 100; ++t) {
        for (auto& v : x0.vec()) v = normal(rng);
        for (auto& v : eps.vec()) v = normal(rng);
        const double sv = u(rng);
        const auto xs = interpolate(x0, eps, s, sv);
        const auto back = interpolate(inverse_flow(xs, eps, s, sv), eps, s, sv);
        for (std::size_t k = 0; k < xs.size(); ++k)
            if (std::abs(back[k] - xs[k]) > worst) {
                worst = std::abs(back[k] - xs[k]);
                worst_s = sv;
            }
    }
    std::cout << "check=inverse_flow max_error=" << num(worst) << "\n";
    if (!(worst < 1e-6)) {
        std::cout << "violation check=inverse_flow s=" << num(worst_s) << "\n";
        ++bad;
    }
    std::cout << "event=schedule_check kind=" << a.kind << " n=" << a.n << " violations=" << bad << "\n";
    return bad ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Asynchronous flow-matching forecaster for temporal point processes"};
    app.require_subcommand(1);
    std::function<int()> action;

    SynthArgs synth;
    auto* sc = app.add_subcommand("synth", "Simulate a synthetic event dataset");
    sc->add_option("--kind", synth.kind, "Process kind")->required()->check(CLI::IsMember({"hawkes", "poisson"}));
    sc->add_option("--out", synth.out, "Output JSON Lines path")->required();
    sc->add_option("--n-seqs", synth.n_seqs, "Number of sequences")->capture_default_str();
    sc->add_option("--T", synth.horizon, "Observation horizon per sequence")->capture_default_str();
    sc->add_option("--rate", synth.rate, "Poisson rate")->capture_default_str();
    sc->add_option("--mu", synth.mu, "Hawkes base rates, one per type")->delimiter(',');
    sc->add_option("--alpha", synth.alpha, "Hawkes excitation, K*K row-major [target][source]")->delimiter(',');
    sc->add_option("--decay", synth.decay, "Hawkes kernel decay")->capture_default_str();
    sc->add_option("--max-len", synth.max_len, "Maximum sequence length N")->capture_default_str();
    sc->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
    sc->callback([&] { action = [&] { return cmd_synth(synth); }; });

    std::string cfg_path, out_path, vae_path;
    std::size_t log_every = 100;
    auto* tv = app.add_subcommand("train-vae", "Train the event VAE");
    tv->add_option("--config", cfg_path, "Run config")->required();
    tv->add_option("--out", out_path, "Checkpoint path")->required();
    tv->add_option("--log-every", log_every, "Steps between log lines")->check(CLI::PositiveNumber);
    tv->callback([&] {
        action = [&] {
            const auto cfg = load_run_config(cfg_path);
            return cfg.dtype == DTypeChoice::F64 ? train_vae_impl<double>(cfg, out_path, log_every)
                                                 : train_vae_impl<float>(cfg, out_path, log_every);
        };
    });

    auto* td = app.add_subcommand("train-dm", "Train the diffusion model on frozen VAE latents");
    td->add_option("--config", cfg_path, "Run config")->required();
    td->add_option("--vae", vae_path, "VAE checkpoint")->required();
    td->add_option("--out", out_path, "Checkpoint path")->required();
    td->add_option("--log-every", log_every, "Steps between log lines")->check(CLI::PositiveNumber);
    td->callback([&] {
        action = [&] {
            const auto cfg = load_run_config(cfg_path);
            return cfg.dtype == DTypeChoice::F64
                       ? train_dm_impl<double>(cfg, vae_path, out_path, log_every)
                       : train_dm_impl<float>(cfg, vae_path, out_path, log_every);
        };
    });

    PredictArgs pa;
    auto* pc = app.add_subcommand("predict", "Forecast events for every test sequence");
    pc->set_help_flag("--help", "Print this help message and exit");
    pc->add_option("--task", pa.task, "next or horizon")->required()->check(CLI::IsMember({"next", "horizon"}));
    pc->add_option("--h", pa.h, "Horizon length for --task horizon")->capture_default_str();
    pc->add_option("--ckpt", pa.ckpt, "Diffusion checkpoint")->required();
    pc->add_option("--vae", pa.vae, "VAE checkpoint")->required();
    pc->add_option("--data", pa.data, "Test dataset")->required();
    pc->add_option("--out", pa.out, "Prediction JSON Lines path")->required();
    pc->add_option("--seed", pa.seed, "Random seed")->capture_default_str();
    pc->add_option("--solver", pa.solver, "euler or rk4 (default: from checkpoint)")
        ->check(CLI::IsMember({"euler", "rk4"}));
    pc->add_option("--substeps", pa.substeps, "Substeps per solver cell (default: from checkpoint)")
        ->check(CLI::PositiveNumber);
    pc->add_option("--threads", pa.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    pc->add_option("--limit", pa.limit, "Use only the first N sequences");
    pc->add_flag("--full-span", pa.full_span, "Integrate horizon tasks over the whole flow interval");
    pc->callback([&] { action = [&] { return cmd_predict(pa); }; });

    EvalArgs ea;
    auto* ec = app.add_subcommand("eval", "Score predictions against the truth");
    ec->add_option("--pred", ea.pred, "Prediction file")->required();
    ec->add_option("--data", ea.data, "Dataset or prediction file used as truth")->required();
    ec->add_option("--out", ea.out, "CSV path")->required();
    ec->add_option("--dataset", ea.dataset, "Dataset name for the CSV (default: file stem)");
    ec->add_flag("--append", ea.append, "Append a row instead of overwriting");
    ec->callback([&] { action = [&] { return cmd_eval(ea); }; });

    ScheduleArgs sa;
    auto* sch = app.add_subcommand("schedule", "Inspect noise schedules");
    sch->require_subcommand(1);
    auto* sd = sch->add_subcommand("dump", "Write (s, a_1..a_N) as CSV");
    sd->add_option("--kind", sa.kind)->required()->check(CLI::IsMember({"async", "disjoint", "sync"}));
    sd->add_option("--n", sa.n)->required()->check(CLI::PositiveNumber);
    sd->add_option("--grid", sa.grid, "Uniform grid points")->capture_default_str();
    sd->add_option("--out", sa.out, "CSV path (default: stdout)");
    sd->add_flag("--knots", sa.knots, "Also emit every solver knot");
    sd->callback([&] { action = [&] { return cmd_schedule_dump(sa); }; });
    auto* sk = sch->add_subcommand("check", "Validate a schedule and its flow identities");
    sk->add_option("--kind", sa.kind)->required()->check(CLI::IsMember({"async", "disjoint", "sync"}));
    sk->add_option("--n", sa.n)->required()->check(CLI::PositiveNumber);
    sk->add_option("--grid", sa.grid, "Validation grid points")->default_val(2001);
    sk->add_option("--samples", sa.samples, "Field-equivalence samples")->capture_default_str();
    sk->add_option("--seed", sa.seed)->capture_default_str();
    sk->add_flag("--inject-fault", sa.inject_fault)->group("");
    sk->callback([&] { action = [&] { return cmd_schedule_check(sa); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        return action();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
