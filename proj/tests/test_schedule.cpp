#include <doctest.h>

#include <cmath>
#include <random>

#include "asyncflow/schedule.hpp"
#include "test_util.hpp"

using namespace asyncflow;
using asyncflow::testing::random_tensor;

namespace {

// Direct scalar evaluation of the clipped window formula, written
// independently of NoiseSchedule.
double async_entry(std::size_t n, std::size_t i, double s) {
    const double m = 2.0 * static_cast<double>(n) - 1.0;
    const double lo = (static_cast<double>(n) - static_cast<double>(i)) / m;
    const double hi = (2.0 * static_cast<double>(n) - static_cast<double>(i)) / m;
    const double v = (hi - s) / (hi - lo);
    return v < 0 ? 0 : (v > 1 ? 1 : v);
}

}  // namespace

TEST_CASE("async windows and anchors for N = 6") {
    NoiseSchedule sch(ScheduleKind::Async, 6);
    CHECK(sch.window(6).start == Rational(0));
    CHECK(sch.window(6).end == Rational(6, 11));
    CHECK(sch.window(1).start == Rational(5, 11));
    CHECK(sch.window(1).end == Rational(1));
    CHECK(sch.a_exact(6, Rational(6, 11)) == Rational(0));
    CHECK(sch.a_exact(1, Rational(5, 11)) == Rational(1));
    CHECK(sch.a_diag(6.0 / 11.0)[5] == 0.0);
    CHECK(sch.a_diag(5.0 / 11.0)[0] == 1.0);
    CHECK(sch.a_diag(0.5)[2] == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
    CHECK(sch.a_exact(3, Rational(1, 2)) == Rational(7, 12));
    CHECK_THROWS_AS(sch.window(0), ContractViolation);
    CHECK_THROWS_AS(sch.window(7), ContractViolation);
    CHECK_THROWS_AS(sch.a_diag(1.5), ContractViolation);
}

TEST_CASE("async window width is exactly N/(2N-1)") {
    for (std::size_t n = 1; n <= 64; ++n) {
        NoiseSchedule sch(ScheduleKind::Async, n);
        const auto nn = static_cast<std::int64_t>(n);
        for (std::size_t i = 1; i <= n; ++i) {
            const auto w = sch.window(i);
            CHECK(w.end - w.start == Rational(nn, 2 * nn - 1));
        }
    }
}

TEST_CASE("other kinds: windows and derivatives") {
    NoiseSchedule sync(ScheduleKind::Sync, 4);
    CHECK(sync.window(3).start == Rational(0));
    CHECK(sync.window(3).end == Rational(1));
    for (double s : {0.0, 0.2, 0.77, 1.0})
        for (double v : sync.a_prime_diag(s)) CHECK(v == -1.0);

    NoiseSchedule disj(ScheduleKind::Disjoint, 4);
    CHECK(disj.window(1).start == Rational(3, 4));
    CHECK(disj.window(4).end == Rational(1, 4));
    auto d = disj.a_prime_diag(0.6);  // inside (1/2, 3/4]: event 2
    CHECK(d == std::vector<double>{0, -4, 0, 0});

    NoiseSchedule as(ScheduleKind::Async, 6);
    CHECK(as.a_prime_diag(0.7)[2] == doctest::Approx(-11.0 / 6.0));
    CHECK(as.a_prime_diag(0.1)[2] == 0.0);
    // Left-hand convention at the kink s = s_end(6) = 6/11.
    CHECK(as.a_prime_diag(6.0 / 11.0)[5] == doctest::Approx(-11.0 / 6.0));
    // Right-hand value at s = 0.
    CHECK(as.a_prime_diag(0.0)[5] == doctest::Approx(-11.0 / 6.0));
    CHECK(as.a_prime_diag(0.0)[4] == 0.0);
}

TEST_CASE("a_diag agrees with a direct scalar evaluation") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (std::size_t n : {1u, 2u, 6u, 13u}) {
        NoiseSchedule sch(ScheduleKind::Async, n);
        for (int k = 0; k < 200; ++k) {
            const double s = u(rng);
            const auto a = sch.a_diag(s);
            for (std::size_t i = 1; i <= n; ++i)
                CHECK(a[i - 1] == doctest::Approx(async_entry(n, i, s)).epsilon(1e-14));
        }
    }
}

TEST_CASE("interpolate: endpoints, N = 2 row oracle, affinity") {
    std::mt19937_64 rng(1);
    NoiseSchedule sch(ScheduleKind::Async, 2);
    auto x0 = random_tensor<double>({2, 3}, rng);
    auto eps = random_tensor<double>({2, 3}, rng);
    CHECK(interpolate(x0, eps, sch, 0.0) == x0);
    CHECK(interpolate(x0, eps, sch, 1.0) == eps);

    // N = 2: windows (1/3, 1] and (0, 2/3]; at s = 1/2 the entries are
    // (1 - 1/2)/(2/3) = 3/4 and (2/3 - 1/2)/(2/3) = 1/4.
    auto xs = interpolate(x0, eps, sch, 0.5);
    const double a1 = async_entry(2, 1, 0.5), a2 = async_entry(2, 2, 0.5);
    CHECK(a1 == doctest::Approx(0.75));
    CHECK(a2 == doctest::Approx(0.25));
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(xs.at(0, j) == doctest::Approx(a1 * x0.at(0, j) + (1 - a1) * eps.at(0, j)));
        CHECK(xs.at(1, j) == doctest::Approx(a2 * x0.at(1, j) + (1 - a2) * eps.at(1, j)));
    }

    Tensor<double> x0s = x0, es = eps;
    for (auto& v : x0s.vec()) v *= 2.5;
    for (auto& v : es.vec()) v *= 2.5;
    auto scaled = interpolate(x0s, es, sch, 0.3);
    auto base = interpolate(x0, eps, sch, 0.3);
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(scaled[i] == doctest::Approx(2.5 * base[i]).epsilon(1e-14));

    CHECK_THROWS_AS(interpolate(x0, random_tensor<double>({3, 3}, rng), sch, 0.3),
                    ContractViolation);
}

TEST_CASE("inverse_flow: endpoints and round trip") {
    std::mt19937_64 rng(12);
    for (auto kind : {ScheduleKind::Async, ScheduleKind::Disjoint, ScheduleKind::Sync}) {
        NoiseSchedule sch(kind, 6);
        auto x0 = random_tensor<float>({6, 4}, rng);
        auto eps = random_tensor<float>({6, 4}, rng);
        CHECK(inverse_flow(x0, eps, sch, 0.0) == x0);
        CHECK(inverse_flow(x0, eps, sch, 1.0) == eps);
        std::uniform_real_distribution<double> u(0, 1);
        for (int k = 0; k < 100; ++k) {
            const double s = u(rng);
            auto xs = interpolate(x0, eps, sch, s);
            auto back = interpolate(inverse_flow(xs, eps, sch, s), eps, sch, s);
            for (std::size_t i = 0; i < xs.size(); ++i) CHECK(std::abs(back[i] - xs[i]) < 1e-6);
        }
    }
}

TEST_CASE("inverse_flow partially reconstructs x0 row by row") {
    std::mt19937_64 rng(13);
    NoiseSchedule sch(ScheduleKind::Async, 6);
    auto x0 = random_tensor<double>({6, 3}, rng);
    auto eps = random_tensor<double>({6, 3}, rng);
    for (double s : {0.1, 0.3, 0.5, 0.62, 0.9}) {
        const auto a = sch.a_diag(s);
        auto rec = inverse_flow(interpolate(x0, eps, sch, s), eps, sch, s);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                if (a[i] == 1.0)
                    CHECK(rec.at(i, j) == x0.at(i, j));
                else if (a[i] == 0.0)
                    CHECK(rec.at(i, j) == eps.at(i, j));
                else
                    CHECK(std::abs(rec.at(i, j) - x0.at(i, j)) < 1e-6 / a[i]);
            }
    }
}

TEST_CASE("a_prime_diag integrates back to a_diag") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto kind : {ScheduleKind::Async, ScheduleKind::Disjoint, ScheduleKind::Sync}) {
        NoiseSchedule sch(kind, 7);
        auto knots = sch.knots();
        for (int k = 0; k < 50; ++k) {
            double lo = u(rng), hi = u(rng);
            if (lo > hi) std::swap(lo, hi);
            // Piecewise-constant integral: split [lo, hi] at every knot and
            // evaluate the derivative at each piece's midpoint.
            std::vector<double> cuts{lo};
            for (const auto& q : knots)
                if (q.to_double() > lo && q.to_double() < hi) cuts.push_back(q.to_double());
            cuts.push_back(hi);
            std::vector<double> integral(7, 0.0);
            for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
                const auto d = sch.a_prime_diag(0.5 * (cuts[c] + cuts[c + 1]));
                for (std::size_t i = 0; i < 7; ++i) integral[i] += d[i] * (cuts[c + 1] - cuts[c]);
            }
            const auto a_hi = sch.a_diag(hi), a_lo = sch.a_diag(lo);
            for (std::size_t i = 0; i < 7; ++i)
                CHECK(std::abs(a_hi[i] - a_lo[i] - integral[i]) < 1e-9);
        }
    }
}

TEST_CASE("validate_schedule") {
    for (auto kind : {ScheduleKind::Async, ScheduleKind::Disjoint, ScheduleKind::Sync})
        for (std::size_t n : {1u, 6u, 32u})
            CHECK(validate_schedule(NoiseSchedule(kind, n), 1001).ok());

    auto rising = [](double s) { return std::vector<double>(3, s); };
    auto rep = validate_schedule(rising, 3, 1.0, 101);
    REQUIRE_FALSE(rep.ok());
    bool boundary = false, monotone = false;
    for (const auto& v : rep.violations) {
        boundary = boundary || v.check == "boundary";
        monotone = monotone || v.check == "monotone";
    }
    CHECK(boundary);
    CHECK(monotone);

    auto jump = [](double s) { return std::vector<double>(1, s < 0.5 ? 1.0 : 0.0); };
    auto rj = validate_schedule(jump, 1, 1.0, 101);
    REQUIRE(rj.violations.size() == 1);
    CHECK(rj.violations[0].check == "continuity");
    CHECK_THROWS_AS(validate_schedule(NoiseSchedule(ScheduleKind::Sync, 2), 1), ContractViolation);
}

TEST_CASE("field equivalence") {
    std::mt19937_64 rng(31);
    NoiseSchedule sync(ScheduleKind::Sync, 6);
    auto x0 = random_tensor<double>({6, 4}, rng);
    auto eps = random_tensor<double>({6, 4}, rng);
    CHECK(field_equivalence_check(x0, eps, sync, 200, rng) < 1e-12);

    NoiseSchedule as(ScheduleKind::Async, 6);
    auto x32 = random_tensor<float>({6, 8}, rng);
    auto e32 = random_tensor<float>({6, 8}, rng);
    const double dev32 = field_equivalence_check(x32, e32, as, 1000, rng);
    INFO("32-bit deviation " << dev32);
    CHECK(dev32 < 1e-5);
    CHECK(field_equivalence_check(x0, eps, as, 1000, rng) < 1e-9);
}

TEST_CASE("invertible limit family shrinks linearly in sigma") {
    std::mt19937_64 rng(41);
    NoiseSchedule as(ScheduleKind::Async, 6);
    auto x0 = random_tensor<double>({6, 4}, rng);
    auto eps = random_tensor<double>({6, 4}, rng);
    auto rows = invertible_limit_check(x0, eps, as, {0.5, 0.1, 0.01, 0.001});
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].deviation == doctest::Approx(0.5 * rows[0].reference).epsilon(1e-9));
    CHECK(rows[3].deviation <= 1e-3 * rows[3].reference + 1e-7);
    for (std::size_t k = 1; k < rows.size(); ++k) {
        CHECK(rows[k].deviation < rows[k - 1].deviation);
        CHECK(rows[k].deviation / rows[k].sigma ==
              doctest::Approx(rows[k].reference).epsilon(1e-6));
    }
    CHECK_THROWS_AS(invertible_limit_check(x0, eps, as, {0.0}), ContractViolation);
}

TEST_CASE("knots contain every breakpoint once and both ends") {
    NoiseSchedule as(ScheduleKind::Async, 6);
    auto k = as.knots();
    REQUIRE(k.size() == 12);
    CHECK(k.front() == Rational(0));
    CHECK(k.back() == Rational(1));
    for (std::size_t i = 0; i + 1 < k.size(); ++i) CHECK(k[i] < k[i + 1]);
    NoiseSchedule d(ScheduleKind::Disjoint, 6);
    CHECK(d.knots().size() == 7);
    NoiseSchedule s(ScheduleKind::Sync, 6);
    CHECK(s.breakpoints().empty());
    CHECK(s.knots().size() == 12);
}
