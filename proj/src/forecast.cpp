#include "asyncflow/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "asyncflow/parallel.hpp"

namespace asyncflow {

SolverKind parse_solver_kind(const std::string& name) {
    if (name == "euler") return SolverKind::Euler;
    if (name == "rk4") return SolverKind::RK4;
    throw ValidationError("unknown solver '" + name + "' (expected euler or rk4)");
}

std::string to_string(SolverKind kind) { return kind == SolverKind::Euler ? "euler" : "rk4"; }

template <class T>
Denoiser<T> dit_denoiser(const DitModel<T>& model) {
    return [&model](const Tensor<T>& x, std::span<const double> a, const std::vector<std::uint8_t>& mask) {
        return dit_apply(model, x, a, mask);
    };
}

template <class T>
void ForecastTask<T>::validate(const NoiseSchedule& schedule) const {
    const std::size_t n = schedule.size();
    ASYNCFLOW_EXPECT(observed.rank() == 2 && observed.dim(0) == n,
                     "forecast: observed latents must be [N, d] with N = schedule length");
    ASYNCFLOW_EXPECT(eps.shape() == observed.shape(), "forecast: eps shape mismatch");
    ASYNCFLOW_EXPECT(p_first >= 1 && p_first <= p_last && p_last <= n,
                     "forecast: prediction rows must be a non-empty range inside 1..N");
    ASYNCFLOW_EXPECT(n_obs < p_first, "forecast: observed and predicted rows overlap");
    ASYNCFLOW_EXPECT(substeps >= 1, "forecast: substeps must be >= 1");
}

template <class T>
std::vector<std::uint8_t> ForecastTask<T>::key_mask() const {
    std::vector<std::uint8_t> m(observed.dim(0), 0);
    for (std::size_t i = 1; i <= m.size(); ++i) m[i - 1] = in_obs(i) || in_pred(i);
    return m;
}

template <class T>
FlowSpan task_span(const ForecastTask<T>& task, const NoiseSchedule& schedule) {
    if (task.full_span) return {Rational(0), Rational(1)};
    FlowSpan span{schedule.window(task.p_first).start, schedule.window(task.p_first).end};
    for (std::size_t i = task.p_first; i <= task.p_last; ++i) {
        const auto w = schedule.window(i);
        span.start = std::min(span.start, w.start);
        span.end = std::max(span.end, w.end);
    }
    return span;
}

std::vector<double> solver_grid(const NoiseSchedule& schedule, FlowSpan span, std::size_t substeps) {
    ASYNCFLOW_EXPECT(substeps >= 1, "solver_grid: substeps must be >= 1");
    ASYNCFLOW_EXPECT(Rational(0) <= span.start && span.start < span.end && span.end <= Rational(1),
                     "solver_grid: span must satisfy 0 <= start < end <= 1");
    std::vector<Rational> cuts{span.end};
    const auto knots = schedule.knots();
    for (auto it = knots.rbegin(); it != knots.rend(); ++it)
        if (span.start < *it && *it < span.end) cuts.push_back(*it);
    cuts.push_back(span.start);
    std::vector<double> grid{span.end.to_double()};
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
        const double hi = cuts[c].to_double(), lo = cuts[c + 1].to_double();
        for (std::size_t k = 1; k < substeps; ++k)
            grid.push_back(hi - (hi - lo) * static_cast<double>(k) / static_cast<double>(substeps));
        grid.push_back(lo);
    }
    return grid;
}

namespace {

template <class T>
Tensor<T> field_with(const ForecastTask<T>& task, const Tensor<T>& x, std::span<const double> a,
                     std::span<const double> ap, const Denoiser<T>& denoiser) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor<T> out(x.shape());
    bool need_model = false;
    for (std::size_t i = task.p_first; i <= task.p_last; ++i) need_model |= ap[i - 1] != 0.0;
    Tensor<T> v;
    if (need_model) {
        v = denoiser(x, a, task.key_mask());
        ASYNCFLOW_EXPECT(v.shape() == x.shape(), "forecast: denoiser output shape mismatch");
    }
    for (std::size_t i = 1; i <= n; ++i) {
        const T g = static_cast<T>(ap[i - 1]);
        if (g == T(0)) continue;
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t k = (i - 1) * d + j;
            if (task.in_obs(i))
                out[k] = g * (task.observed[k] - task.eps[k]);
            else if (task.in_pred(i))
                out[k] = g * v[k];
        }
    }
    return out;
}

template <class T>
void check_finite(const Tensor<T>& x, double s) {
    for (std::size_t k = 0; k < x.size(); ++k)
        if (!std::isfinite(static_cast<double>(x[k]))) {
            std::ostringstream os;
            os << "solver state is not finite at s=" << s << " (row " << k / x.dim(1) + 1 << ")";
            throw NumericError(os.str());
        }
}

template <class T>
Tensor<T> cast_state(const std::vector<double>& acc, const Shape& shape) {
    Tensor<T> x(shape);
    for (std::size_t i = 0; i < acc.size(); ++i) x[i] = static_cast<T>(acc[i]);
    return x;
}

template <class T>
Tensor<T> stage(const std::vector<double>& acc, double h, const Tensor<T>& k) {
    Tensor<T> x(k.shape());
    for (std::size_t i = 0; i < acc.size(); ++i)
        x[i] = static_cast<T>(acc[i] - h * static_cast<double>(k[i]));
    return x;
}

}  // namespace

template <class T>
Tensor<T> conditional_field(const ForecastTask<T>& task, const Tensor<T>& x_s, double s,
                            const Denoiser<T>& denoiser, const NoiseSchedule& schedule,
                            std::span<const double> a_prime) {
    task.validate(schedule);
    ASYNCFLOW_EXPECT(x_s.shape() == task.observed.shape(), "forecast: state shape mismatch");
    const auto a = schedule.a_diag(s);
    std::vector<double> ap_own;
    if (a_prime.empty()) {
        ap_own = schedule.a_prime_diag(s);
        a_prime = ap_own;
    }
    ASYNCFLOW_EXPECT(a_prime.size() == schedule.size(), "forecast: a_prime length mismatch");
    return field_with(task, x_s, std::span<const double>(a), a_prime, denoiser);
}

template <class T>
Tensor<T> initial_state(const ForecastTask<T>& task, const NoiseSchedule& schedule) {
    task.validate(schedule);
    const double s_end = task_span(task, schedule).end.to_double();
    const auto a = schedule.a_diag(s_end);
    for (std::size_t i = task.p_first; i <= task.p_last; ++i)
        if (a[i - 1] != 0.0)
            throw ContractViolation("forecast: prediction row " + std::to_string(i) +
                                    " is not pure noise at the start of the solve");
    const std::size_t d = task.observed.dim(1);
    Tensor<T> x(task.observed.shape());
    for (std::size_t i = 1; i <= schedule.size(); ++i) {
        const T ai = static_cast<T>(a[i - 1]);
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t k = (i - 1) * d + j;
            const T star = task.in_obs(i) ? task.observed[k] : task.eps[k];
            x[k] = ai == T(1) ? star : ai * star + (T(1) - ai) * task.eps[k];
        }
    }
    return x;
}

template <class T>
Tensor<T> integrate(const FieldFn<T>& field, Tensor<T> x, const std::vector<double>& grid,
                    const NoiseSchedule& schedule, SolverKind solver) {
    ASYNCFLOW_EXPECT(grid.size() >= 2, "integrate: grid needs at least two points");
    // The state is accumulated in double; fields are evaluated in T.
    const Shape shape = x.shape();
    std::vector<double> acc(x.vec().begin(), x.vec().end());
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        const double hi = grid[k], lo = grid[k + 1], h = hi - lo, mid = 0.5 * (hi + lo);
        ASYNCFLOW_EXPECT(h > 0.0, "integrate: grid must be strictly decreasing");
        const auto ap = schedule.a_prime_diag(mid);
        const std::span<const double> aps(ap);
        const auto xt = cast_state<T>(acc, shape);
        if (solver == SolverKind::Euler) {
            const auto k1 = field(xt, hi, aps);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] -= h * static_cast<double>(k1[i]);
        } else {
            const auto k1 = field(xt, hi, aps);
            const auto k2 = field(stage(acc, 0.5 * h, k1), mid, aps);
            const auto k3 = field(stage(acc, 0.5 * h, k2), mid, aps);
            const auto k4 = field(stage(acc, h, k3), lo, aps);
            for (std::size_t i = 0; i < acc.size(); ++i)
                acc[i] -= h / 6.0 *
                          (static_cast<double>(k1[i]) + 2.0 * static_cast<double>(k2[i]) +
                           2.0 * static_cast<double>(k3[i]) + static_cast<double>(k4[i]));
        }
        x = cast_state<T>(acc, shape);
        check_finite(x, lo);
    }
    return x;
}

template <class T>
Tensor<T> solve(const ForecastTask<T>& task, const Denoiser<T>& denoiser, const NoiseSchedule& schedule) {
    auto x = initial_state(task, schedule);
    const auto grid = solver_grid(schedule, task_span(task, schedule), task.substeps);
    const FieldFn<T> field = [&](const Tensor<T>& xs, double s, std::span<const double> ap) {
        const auto a = schedule.a_diag(s);
        return field_with(task, xs, std::span<const double>(a), ap, denoiser);
    };
    return integrate(field, std::move(x), grid, schedule, task.solver);
}

// ------------------------------------------------------------ event level

template <class T>
ForecastTask<T> horizon_task(const Forecaster<T>& f, const std::vector<Event>& observed,
                             std::size_t h, std::mt19937_64& rng, bool full_span) {
    ASYNCFLOW_EXPECT(f.vae != nullptr && f.denoiser, "forecast: forecaster is missing a model");
    const std::size_t n = f.schedule.size(), d = f.vae->config.d_latent;
    ASYNCFLOW_EXPECT(h >= 1, "forecast: horizon must be >= 1");
    ASYNCFLOW_EXPECT(observed.size() + h <= n, "forecast: observed events plus horizon exceed N");
    EventSequence scaled;
    for (const auto& e : observed) scaled.events.push_back({f.scaler.apply(e.tau), e.type});
    ForecastTask<T> task;
    task.observed = observed.empty() ? Tensor<T>(Shape{n, d}) : encode_sequence(*f.vae, scaled, n).latents;
    task.n_obs = observed.size();
    task.p_first = observed.size() + 1;
    task.p_last = observed.size() + h;
    task.eps = Tensor<T>(Shape{n, d});
    std::normal_distribution<double> normal;
    for (auto& v : task.eps.vec()) v = static_cast<T>(normal(rng));
    task.solver = f.solver;
    task.substeps = f.substeps;
    task.full_span = full_span;
    return task;
}

template <class T>
std::vector<Event> decode_rows(const Forecaster<T>& f, const Tensor<T>& x, std::size_t first,
                               std::size_t last) {
    const std::size_t d = x.dim(1);
    std::vector<Event> out;
    for (std::size_t i = first; i <= last; ++i) {
        const std::span<const T> row(x.vec().data() + (i - 1) * d, d);
        const auto dec = decode(*f.vae, row);
        out.push_back({f.scaler.invert(static_cast<double>(dec.tau)), dec.type});
    }
    return out;
}

template <class T>
std::vector<Event> predict_horizon(const Forecaster<T>& f, const std::vector<Event>& observed,
                                   std::size_t h, std::mt19937_64& rng, bool full_span) {
    const auto task = horizon_task(f, observed, h, rng, full_span);
    const auto x = solve(task, f.denoiser, f.schedule);
    return decode_rows(f, x, task.p_first, task.p_last);
}

template <class T>
Event predict_next(const Forecaster<T>& f, const std::vector<Event>& history, std::size_t n,
                   std::mt19937_64& rng) {
    ASYNCFLOW_EXPECT(n >= 2 && n <= f.schedule.size(), "predict_next: need 2 <= n <= N");
    ASYNCFLOW_EXPECT(history.size() >= n - 1, "predict_next: history shorter than n - 1 events");
    const std::vector<Event> obs(history.begin(), history.begin() + static_cast<std::ptrdiff_t>(n - 1));
    return predict_horizon(f, obs, 1, rng).front();
}

template <class T>
std::vector<Event> generate(const Forecaster<T>& f, std::size_t length, std::mt19937_64& rng) {
    return predict_horizon(f, {}, length, rng);
}

template <class T>
std::vector<ForecastRecord> forecast_next(const Forecaster<T>& f, const Dataset& raw,
                                          std::uint64_t seed, std::size_t threads) {
    std::vector<ForecastRecord> out(raw.sequences.size());
    parallel_for(out.size(), threads, [&](std::size_t k) {
        const auto& ev = raw.sequences[k].events;
        auto rng = task_rng(seed, k);
        ForecastRecord r{k, 1, {}, {}};
        for (std::size_t n = 2; n <= ev.size(); ++n) {
            r.pred.push_back(predict_next(f, ev, n, rng));
            r.truth.push_back(ev[n - 1]);
        }
        out[k] = std::move(r);
    });
    std::erase_if(out, [](const ForecastRecord& r) { return r.pred.empty(); });
    return out;
}

template <class T>
std::vector<ForecastRecord> forecast_horizon(const Forecaster<T>& f, const Dataset& raw,
                                             std::size_t h, std::uint64_t seed,
                                             std::size_t threads, bool full_span) {
    ASYNCFLOW_EXPECT(h >= 1 && h < f.schedule.size(), "forecast_horizon: need 1 <= h <= N - 1");
    std::vector<ForecastRecord> out(raw.sequences.size());
    parallel_for(out.size(), threads, [&](std::size_t k) {
        const auto& ev = raw.sequences[k].events;
        if (ev.size() < h + 1) return;
        auto rng = task_rng(seed, k);
        const std::size_t start = ev.size() - h;
        const std::vector<Event> obs(ev.begin(), ev.begin() + static_cast<std::ptrdiff_t>(start));
        out[k] = {k, start, predict_horizon(f, obs, h, rng, full_span),
                  std::vector<Event>(ev.begin() + static_cast<std::ptrdiff_t>(start), ev.end())};
    });
    std::erase_if(out, [](const ForecastRecord& r) { return r.pred.empty(); });
    return out;
}

#define ASYNCFLOW_FORECAST(T)                                                                     \
    template Denoiser<T> dit_denoiser<T>(const DitModel<T>&);                                     \
    template struct ForecastTask<T>;                                                              \
    template FlowSpan task_span<T>(const ForecastTask<T>&, const NoiseSchedule&);                 \
    template Tensor<T> conditional_field<T>(const ForecastTask<T>&, const Tensor<T>&, double,     \
                                            const Denoiser<T>&, const NoiseSchedule&,             \
                                            std::span<const double>);                             \
    template Tensor<T> initial_state<T>(const ForecastTask<T>&, const NoiseSchedule&);            \
    template Tensor<T> integrate<T>(const FieldFn<T>&, Tensor<T>, const std::vector<double>&,     \
                                    const NoiseSchedule&, SolverKind);                            \
    template Tensor<T> solve<T>(const ForecastTask<T>&, const Denoiser<T>&, const NoiseSchedule&); \
    template ForecastTask<T> horizon_task<T>(const Forecaster<T>&, const std::vector<Event>&,     \
                                             std::size_t, std::mt19937_64&, bool);                \
    template std::vector<Event> decode_rows<T>(const Forecaster<T>&, const Tensor<T>&,           \
                                               std::size_t, std::size_t);                         \
    template std::vector<Event> predict_horizon<T>(const Forecaster<T>&, const std::vector<Event>&, \
                                                   std::size_t, std::mt19937_64&, bool);          \
    template Event predict_next<T>(const Forecaster<T>&, const std::vector<Event>&, std::size_t,  \
                                   std::mt19937_64&);                                             \
    template std::vector<Event> generate<T>(const Forecaster<T>&, std::size_t, std::mt19937_64&); \
    template std::vector<ForecastRecord> forecast_next<T>(const Forecaster<T>&, const Dataset&,  \
                                                          std::uint64_t, std::size_t);            \
    template std::vector<ForecastRecord> forecast_horizon<T>(const Forecaster<T>&, const Dataset&, \
                                                             std::size_t, std::uint64_t, std::size_t, bool);

ASYNCFLOW_FORECAST(float)
ASYNCFLOW_FORECAST(double)

}  // namespace asyncflow
