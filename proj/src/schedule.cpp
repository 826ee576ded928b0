#include "asyncflow/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace asyncflow {

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "async") return ScheduleKind::Async;
    if (name == "disjoint") return ScheduleKind::Disjoint;
    if (name == "sync") return ScheduleKind::Sync;
    throw ValidationError("unknown schedule kind '" + name + "' (expected async|disjoint|sync)");
}

std::string to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::Async: return "async";
        case ScheduleKind::Disjoint: return "disjoint";
        case ScheduleKind::Sync: return "sync";
    }
    return "?";
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::size_t n) : kind_(kind), n_(n) {
    ASYNCFLOW_EXPECT(n >= 1, "noise schedule needs N >= 1");
}

EventWindow NoiseSchedule::window(std::size_t i) const {
    if (i < 1 || i > n_)
        throw ContractViolation("window index " + std::to_string(i) + " outside [1, " +
                                std::to_string(n_) + "]");
    const auto n = static_cast<std::int64_t>(n_);
    const auto k = static_cast<std::int64_t>(i);
    switch (kind_) {
        case ScheduleKind::Async: return {Rational(n - k, 2 * n - 1), Rational(2 * n - k, 2 * n - 1)};
        case ScheduleKind::Disjoint: return {Rational(n - k, n), Rational(n - k + 1, n)};
        case ScheduleKind::Sync: return {Rational(0), Rational(1)};
    }
    return {};
}

std::vector<double> NoiseSchedule::a_diag(double s) const {
    ASYNCFLOW_EXPECT(s >= 0.0 && s <= 1.0, "a_diag: s outside [0, 1]");
    std::vector<double> a(n_);
    for (std::size_t i = 1; i <= n_; ++i) {
        const auto w = window(i);
        const double lo = w.s_start(), hi = w.s_end();
        a[i - 1] = std::clamp((hi - s) / (hi - lo), 0.0, 1.0);
    }
    return a;
}

std::vector<double> NoiseSchedule::a_prime_diag(double s) const {
    ASYNCFLOW_EXPECT(s >= 0.0 && s <= 1.0, "a_prime_diag: s outside [0, 1]");
    std::vector<double> d(n_, 0.0);
    for (std::size_t i = 1; i <= n_; ++i) {
        const auto w = window(i);
        const double lo = w.s_start(), hi = w.s_end();
        const bool inside = s == 0.0 ? (lo <= 0.0 && 0.0 < hi) : (lo < s && s <= hi);
        if (inside) d[i - 1] = -1.0 / (hi - lo);
    }
    return d;
}

Rational NoiseSchedule::a_exact(std::size_t i, Rational s) const {
    ASYNCFLOW_EXPECT(s >= Rational(0) && s <= Rational(1), "a_exact: s outside [0, 1]");
    const auto w = window(i);
    const Rational v = (w.end - s) / (w.end - w.start);
    if (v < Rational(0)) return Rational(0);
    if (v > Rational(1)) return Rational(1);
    return v;
}

double NoiseSchedule::lipschitz() const {
    switch (kind_) {
        case ScheduleKind::Async:
            return static_cast<double>(2 * n_ - 1) / static_cast<double>(n_);
        case ScheduleKind::Disjoint: return static_cast<double>(n_);
        case ScheduleKind::Sync: return 1.0;
    }
    return 0.0;
}

std::vector<Rational> NoiseSchedule::breakpoints() const {
    std::vector<Rational> out;
    const auto n = static_cast<std::int64_t>(n_);
    switch (kind_) {
        case ScheduleKind::Async:
            for (std::int64_t k = 1; k < 2 * n - 1; ++k) out.emplace_back(k, 2 * n - 1);
            break;
        case ScheduleKind::Disjoint:
            for (std::int64_t k = 1; k < n; ++k) out.emplace_back(k, n);
            break;
        case ScheduleKind::Sync: break;
    }
    return out;
}

std::vector<Rational> NoiseSchedule::knots() const {
    std::vector<Rational> out{Rational(0)};
    if (kind_ == ScheduleKind::Sync) {
        const auto m = static_cast<std::int64_t>(2 * n_ - 1);
        for (std::int64_t k = 1; k < m; ++k) out.emplace_back(k, m);
    } else {
        auto bp = breakpoints();
        out.insert(out.end(), bp.begin(), bp.end());
    }
    out.emplace_back(1);
    return out;
}

// ------------------------------------------------------------- row maps

template <class T>
Tensor<T> interpolate_rows(const Tensor<T>& x0, const Tensor<T>& eps, std::span<const double> a) {
    if (x0.shape() != eps.shape())
        throw ContractViolation("interpolate: x0 " + shape_str(x0.shape()) + " vs eps " +
                                shape_str(eps.shape()));
    const std::size_t d = x0.dim(-1), rows = x0.size() / d;
    if (rows != a.size())
        throw ContractViolation("interpolate: " + std::to_string(rows) + " rows but " +
                                std::to_string(a.size()) + " schedule entries");
    Tensor<T> out(x0.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T ai = static_cast<T>(a[r]);
        for (std::size_t j = 0; j < d; ++j)
            out[r * d + j] = ai * x0[r * d + j] + (T(1) - ai) * eps[r * d + j];
    }
    return out;
}

template <class T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& eps, const NoiseSchedule& schedule,
                      double s) {
    const auto a = schedule.a_diag(s);
    return interpolate_rows(x0, eps, std::span<const double>(a));
}

template <class T>
Tensor<T> inverse_flow(const Tensor<T>& x_s, const Tensor<T>& eps, const NoiseSchedule& schedule,
                       double s) {
    if (x_s.shape() != eps.shape() || x_s.rank() != 2 || x_s.dim(0) != schedule.size())
        throw ContractViolation("inverse_flow: shapes do not match the schedule");
    const auto a = schedule.a_diag(s);
    const std::size_t d = x_s.dim(1);
    Tensor<T> out(x_s.shape());
    for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) {
            const T e = eps[r * d + j];
            if (a[r] == 1.0)
                out[r * d + j] = x_s[r * d + j];
            else if (a[r] > 0.0)
                out[r * d + j] = static_cast<T>((static_cast<double>(x_s[r * d + j]) -
                                                 static_cast<double>(e)) / a[r]) + e;
            else
                out[r * d + j] = e;
        }
    return out;
}

// ---------------------------------------------------------------- checks

ScheduleReport validate_schedule(const DiagonalFn& a, std::size_t n, double lipschitz,
                                 std::size_t grid_size) {
    ASYNCFLOW_EXPECT(grid_size >= 2, "validate_schedule: grid_size must be >= 2");
    ScheduleReport rep;
    auto add = [&](const char* check, std::size_t i, double s, double v) {
        rep.violations.push_back({check, i + 1, s, v});
    };
    const double h = 1.0 / static_cast<double>(grid_size - 1);
    std::vector<double> prev;
    double prev_s = 0.0;
    for (std::size_t k = 0; k < grid_size; ++k) {
        const double s = k + 1 == grid_size ? 1.0 : static_cast<double>(k) * h;
        const auto cur = a(s);
        if (cur.size() != n) throw ContractViolation("validate_schedule: diagonal has wrong length");
        for (std::size_t i = 0; i < n; ++i) {
            if (k == 0 && std::abs(cur[i] - 1.0) > 1e-12) add("boundary", i, s, cur[i]);
            if (k + 1 == grid_size && std::abs(cur[i]) > 1e-12) add("boundary", i, s, cur[i]);
            if (!(cur[i] >= 0.0 && cur[i] <= 1.0)) add("range", i, s, cur[i]);
            if (k > 0) {
                if (cur[i] > prev[i] + 1e-12) add("monotone", i, s, cur[i] - prev[i]);
                if (std::abs(cur[i] - prev[i]) > lipschitz * (s - prev_s) + 1e-9)
                    add("continuity", i, s, std::abs(cur[i] - prev[i]));
            }
        }
        prev = cur;
        prev_s = s;
    }
    return rep;
}

ScheduleReport validate_schedule(const NoiseSchedule& schedule, std::size_t grid_size) {
    return validate_schedule([&](double s) { return schedule.a_diag(s); }, schedule.size(),
                             schedule.lipschitz(), grid_size);
}

namespace {

// Moves s at least `gap` away from every breakpoint and from the ends.
double nudge_off_breakpoints(double s, const std::vector<Rational>& bps, double gap) {
    for (const auto& b : bps) {
        const double bd = b.to_double();
        if (std::abs(s - bd) < gap) s = s < bd ? bd - gap : bd + gap;
    }
    return std::clamp(s, gap, 1.0 - gap);
}

}  // namespace

template <class T>
double field_equivalence_check(const Tensor<T>& x0, const Tensor<T>& eps,
                               const NoiseSchedule& schedule, std::size_t sample_count,
                               std::mt19937_64& rng) {
    ASYNCFLOW_EXPECT(x0.rank() == 2 && x0.dim(0) == schedule.size() && x0.shape() == eps.shape(),
                     "field_equivalence_check: shapes do not match the schedule");
    const std::size_t n = schedule.size(), d = x0.dim(1);
    const auto bps = schedule.breakpoints();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (std::size_t k = 0; k < sample_count; ++k) {
        const double s = nudge_off_breakpoints(u(rng), bps, 1e-6);
        const auto a = schedule.a_diag(s);
        const auto ap = schedule.a_prime_diag(s);
        for (std::size_t i = 0; i < n; ++i) {
            if (!(a[i] > 0.0 || ap[i] == 0.0)) continue;
            const double pinv = a[i] > 0.0 ? 1.0 / a[i] : 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double x = static_cast<double>(x0[i * d + j]);
                const double e = static_cast<double>(eps[i * d + j]);
                const double xs = a[i] * x + (1.0 - a[i]) * e;
                const double via_inverse = ap[i] * pinv * (xs - e);
                const double direct = ap[i] * (x - e);
                worst = std::max(worst, std::abs(via_inverse - direct));
            }
        }
    }
    return worst;
}

template <class T>
std::vector<LimitRow> invertible_limit_check(const Tensor<T>& x0, const Tensor<T>& eps,
                                             const NoiseSchedule& base,
                                             const std::vector<double>& sigmas) {
    ASYNCFLOW_EXPECT(x0.rank() == 2 && x0.dim(0) == base.size() && x0.shape() == eps.shape(),
                     "invertible_limit_check: shapes do not match the schedule");
    const std::size_t n = base.size(), d = x0.dim(1);
    const auto knots = base.knots();
    std::vector<double> samples;
    for (std::size_t k = 0; k + 1 < knots.size(); ++k)
        samples.push_back(0.5 * (knots[k].to_double() + knots[k + 1].to_double()));

    std::vector<LimitRow> rows;
    for (double sigma : sigmas) {
        ASYNCFLOW_EXPECT(sigma > 0.0 && sigma < 1.0, "invertible_limit_check: sigma must be in (0, 1)");
        LimitRow row{sigma, 0.0, 0.0};
        for (double s : samples) {
            const auto a = base.a_diag(s);
            const auto ap = base.a_prime_diag(s);
            for (std::size_t i = 0; i < n; ++i) {
                const double as = (1.0 - sigma) * a[i] + sigma;  // > 0: invertible
                const double aps = (1.0 - sigma) * ap[i];
                for (std::size_t j = 0; j < d; ++j) {
                    const double x = static_cast<double>(x0[i * d + j]);
                    const double e = static_cast<double>(eps[i * d + j]);
                    const double xs = as * x + (1.0 - as) * e;
                    const double field_sigma = aps * (xs - e) / as;
                    const double field_zero = ap[i] * (x - e);
                    row.deviation = std::max(row.deviation, std::abs(field_sigma - field_zero));
                    row.reference = std::max(row.reference, std::abs(field_zero));
                }
            }
        }
        rows.push_back(row);
    }
    return rows;
}

#define ASYNCFLOW_SCHEDULE_INSTANTIATE(T)                                                      \
    template Tensor<T> interpolate_rows(const Tensor<T>&, const Tensor<T>&,                    \
                                        std::span<const double>);                              \
    template Tensor<T> interpolate(const Tensor<T>&, const Tensor<T>&, const NoiseSchedule&,   \
                                   double);                                                    \
    template Tensor<T> inverse_flow(const Tensor<T>&, const Tensor<T>&, const NoiseSchedule&,  \
                                    double);                                                   \
    template double field_equivalence_check(const Tensor<T>&, const Tensor<T>&,                \
                                            const NoiseSchedule&, std::size_t,                 \
                                            std::mt19937_64&);                                 \
    template std::vector<LimitRow> invertible_limit_check(                                     \
        const Tensor<T>&, const Tensor<T>&, const NoiseSchedule&, const std::vector<double>&);

ASYNCFLOW_SCHEDULE_INSTANTIATE(float)
ASYNCFLOW_SCHEDULE_INSTANTIATE(double)

}  // namespace asyncflow
