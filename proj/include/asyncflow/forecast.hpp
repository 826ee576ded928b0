#pragma once

// Generation and forecasting by integrating the conditional field from s_end
// down to s_start. Observed rows follow their known straight-line field;
// prediction rows follow the denoiser. Grids contain every schedule
// breakpoint in the span, and a'(s) is frozen per step at the step midpoint,
// so piecewise-constant parts of the field are integrated exactly.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "asyncflow/data.hpp"
#include "asyncflow/dit.hpp"
#include "asyncflow/metrics.hpp"
#include "asyncflow/rational.hpp"
#include "asyncflow/schedule.hpp"
#include "asyncflow/vae.hpp"

namespace asyncflow {

enum class SolverKind { Euler, RK4 };

SolverKind parse_solver_kind(const std::string& name);
std::string to_string(SolverKind kind);

/// v(x_s [N, d], a [N], key_mask [N]) -> [N, d].
template <class T>
using Denoiser = std::function<Tensor<T>(const Tensor<T>&, std::span<const double>,
                                         const std::vector<std::uint8_t>&)>;

template <class T>
Denoiser<T> dit_denoiser(const DitModel<T>& model);

/// Rows are 1-based. O = {1..n_obs}; P = {p_first..p_last}.
template <class T>
struct ForecastTask {
    Tensor<T> observed;        // [N, d]; rows outside O are ignored
    std::size_t n_obs = 0;
    std::size_t p_first = 1;
    std::size_t p_last = 1;
    Tensor<T> eps;             // [N, d], one draw for the whole solve
    SolverKind solver = SolverKind::Euler;
    std::size_t substeps = 8;
    bool full_span = false;    // integrate over [0, 1] instead of the P span

    void validate(const NoiseSchedule& schedule) const;
    bool in_obs(std::size_t i) const { return i >= 1 && i <= n_obs; }
    bool in_pred(std::size_t i) const { return i >= p_first && i <= p_last; }
    std::vector<std::uint8_t> key_mask() const;
};

struct FlowSpan {
    Rational start;
    Rational end;
};

/// [min s_start over P, max s_end over P], or [0, 1] for full-span tasks.
template <class T>
FlowSpan task_span(const ForecastTask<T>& task, const NoiseSchedule& schedule);

/// Strictly decreasing s values from span.end to span.start containing every
/// knot of the schedule inside the span, each cell split into `substeps`.
std::vector<double> solver_grid(const NoiseSchedule& schedule, FlowSpan span, std::size_t substeps);

/// Conditional field at flow time s: a'_i (y_i - eps_i) on O, a'_i v_i on P, zero
/// elsewhere. `a_prime` overrides a'(s) when given.
template <class T>
Tensor<T> conditional_field(const ForecastTask<T>& task, const Tensor<T>& x_s, double s,
                            const Denoiser<T>& denoiser, const NoiseSchedule& schedule,
                            std::span<const double> a_prime = {});

/// A(s_end) x* + (I - A(s_end)) eps with x* = [y on O, eps elsewhere]. Throws
/// ContractViolation if a prediction row is not pure noise.
template <class T>
Tensor<T> initial_state(const ForecastTask<T>& task, const NoiseSchedule& schedule);

/// (x, s, a'(cell)) -> dx/ds.
template <class T>
using FieldFn = std::function<Tensor<T>(const Tensor<T>&, double, std::span<const double>)>;

/// Integrates dx/ds = field from grid.front() down to grid.back(). a' is
/// taken at each step's midpoint and held for all stages of that step.
template <class T>
Tensor<T> integrate(const FieldFn<T>& field, Tensor<T> x, const std::vector<double>& grid,
                    const NoiseSchedule& schedule, SolverKind solver);

template <class T>
Tensor<T> solve(const ForecastTask<T>& task, const Denoiser<T>& denoiser, const NoiseSchedule& schedule);

/// Everything needed to turn raw events into predicted events.
template <class T>
struct Forecaster {
    Denoiser<T> denoiser;
    const VaeModel<T>* vae = nullptr;
    TauScaler scaler;
    NoiseSchedule schedule{ScheduleKind::Async, 1};
    SolverKind solver = SolverKind::Euler;
    std::size_t substeps = 8;
};

/// Predicts the h events following `observed` (raw taus). P directly follows
/// the observations; rows past P are masked out.
template <class T>
std::vector<Event> predict_horizon(const Forecaster<T>& f, const std::vector<Event>& observed,
                                   std::size_t h, std::mt19937_64& rng, bool full_span = false);

/// Predicts event n (2 <= n <= N) from events 1..n-1.
template <class T>
Event predict_next(const Forecaster<T>& f, const std::vector<Event>& history, std::size_t n,
                   std::mt19937_64& rng);

/// Unconditional sample of `length` events.
template <class T>
std::vector<Event> generate(const Forecaster<T>& f, std::size_t length, std::mt19937_64& rng);

/// Builds the task used by predict_horizon (exposed for tests).
template <class T>
ForecastTask<T> horizon_task(const Forecaster<T>& f, const std::vector<Event>& observed,
                             std::size_t h, std::mt19937_64& rng, bool full_span);

/// Decodes rows p_first..p_last of a solved state into raw events.
template <class T>
std::vector<Event> decode_rows(const Forecaster<T>& f, const Tensor<T>& x, std::size_t first,
                               std::size_t last);

/// Next-event evaluation over a raw dataset: for every sequence and every
/// n = 2..L, predicts event n from events 1..n-1 with a fresh noise draw.
/// Sequence k uses task_rng(seed, k), so results do not depend on `threads`.
template <class T>
std::vector<ForecastRecord> forecast_next(const Forecaster<T>& f, const Dataset& raw,
                                          std::uint64_t seed, std::size_t threads = 1);

/// Horizon evaluation: for every sequence with at least h + 1 events,
/// predicts its last h events from the ones before.
template <class T>
std::vector<ForecastRecord> forecast_horizon(const Forecaster<T>& f, const Dataset& raw,
                                             std::size_t h, std::uint64_t seed,
                                             std::size_t threads = 1, bool full_span = false);

}  // namespace asyncflow
