#pragma once

// Matrix-valued noise schedules A(s), represented by their diagonal.
//
// Row i of the latent sequence is interpolated as
//     x_s[i] = a_i(s) x0[i] + (1 - a_i(s)) eps[i]
// and moves from data (a=1) to noise (a=0) inside its window
// [s_start(i), s_end(i)]. Indices i are 1-based throughout this header to
// match the ordering of events in a sequence.

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "asyncflow/rational.hpp"
#include "asyncflow/tensor.hpp"

namespace asyncflow {

enum class ScheduleKind { Async, Disjoint, Sync };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

struct EventWindow {
    Rational start;
    Rational end;

    double s_start() const { return start.to_double(); }
    double s_end() const { return end.to_double(); }
};

class NoiseSchedule {
public:
    NoiseSchedule(ScheduleKind kind, std::size_t n);

    ScheduleKind kind() const { return kind_; }
    std::size_t size() const { return n_; }

    /// Flow-time window of event i (1-based).
    EventWindow window(std::size_t i) const;

    /// Diagonal of A(s); s must lie in [0, 1].
    std::vector<double> a_diag(double s) const;

    /// Weak derivative of the diagonal using the left-hand limit at kinks
    /// (right-hand at s = 0).
    std::vector<double> a_prime_diag(double s) const;

    /// Exact a_i(s) for rational s.
    Rational a_exact(std::size_t i, Rational s) const;

    /// Magnitude of the steepest slope of any diagonal entry.
    double lipschitz() const;

    /// Sorted points in (0, 1) where some entry is not differentiable.
    std::vector<Rational> breakpoints() const;

    /// Solver cell boundaries in [0, 1]: both ends plus every breakpoint. The
    /// synchronous schedule has no interior breakpoints and uses the lattice
    /// k / (2N - 1) so that step counts match the asynchronous schedule.
    std::vector<Rational> knots() const;

private:
    ScheduleKind kind_;
    std::size_t n_;
};

// -------------------------------------------------------------- row maps

/// Row-wise a_i x0 + (1 - a_i) eps for tensors of shape [N, d] or [B, N, d]
/// with `a` holding one value per row.
template <class T>
Tensor<T> interpolate_rows(const Tensor<T>& x0, const Tensor<T>& eps, std::span<const double> a);

template <class T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& eps, const NoiseSchedule& schedule,
                      double s);

/// psi_s^{-1}(x_s | eps) = A(s)^+ (x_s - eps) + eps with the diagonal
/// Moore-Penrose inverse: rows with a_i = 0 come back as eps.
template <class T>
Tensor<T> inverse_flow(const Tensor<T>& x_s, const Tensor<T>& eps, const NoiseSchedule& schedule,
                       double s);

// ---------------------------------------------------------------- checks

struct ScheduleViolation {
    std::string check;  // "boundary", "range", "monotone", "continuity"
    std::size_t index;  // 1-based row
    double s;
    double value;
};

struct ScheduleReport {
    std::vector<ScheduleViolation> violations;
    bool ok() const { return violations.empty(); }
};

using DiagonalFn = std::function<std::vector<double>(double s)>;

/// Checks boundary values, range [0, 1], monotone non-increase and a
/// Lipschitz continuity bound on a uniform grid of `grid_size` points.
ScheduleReport validate_schedule(const DiagonalFn& a, std::size_t n, double lipschitz,
                                 std::size_t grid_size);
ScheduleReport validate_schedule(const NoiseSchedule& schedule, std::size_t grid_size);

/// Max |A'(s) A(s)^+ (x_s - eps) - A'(s)(x0 - eps)| over `sample_count`
/// uniform s draws nudged off breakpoints, over rows with a_i > 0 or a'_i = 0.
/// Inputs of either precision are evaluated in double: the 1/a_i factor
/// amplifies single-precision rounding of x_s near the end of a window.
template <class T>
double field_equivalence_check(const Tensor<T>& x0, const Tensor<T>& eps,
                               const NoiseSchedule& schedule, std::size_t sample_count,
                               std::mt19937_64& rng);

struct LimitRow {
    double sigma;
    double deviation;   // max over samples of ||field_sigma - field_0||_inf
    double reference;   // max over samples of ||A'(s)(x0 - eps)||_inf
};

/// For A_sigma(s) = (1 - sigma) A(s) + sigma I, evaluates the marginal field
/// A'_sigma A_sigma^{-1} (x_s - eps) through the (invertible) inverse route
/// and compares with the sigma = 0 conditional field A'(s)(x0 - eps). The
/// samples are the midpoints of every solver cell of `base`.
template <class T>
std::vector<LimitRow> invertible_limit_check(const Tensor<T>& x0, const Tensor<T>& eps,
                                             const NoiseSchedule& base,
                                             const std::vector<double>& sigmas);

}  // namespace asyncflow
