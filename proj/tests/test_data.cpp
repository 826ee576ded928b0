#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "asyncflow/data.hpp"
#include "asyncflow/error.hpp"

using namespace asyncflow;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& body) {
    auto p = fs::temp_directory_path() / ("asyncflow_test_" + name);
    std::ofstream(p) << body;
    return p;
}

// Kolmogorov-Smirnov statistic of samples against Exp(rate).
double ks_exponential(std::vector<double> xs, double rate) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double cdf = 1.0 - std::exp(-rate * xs[i]);
        d = std::max({d, std::abs(cdf - static_cast<double>(i) / n),
                      std::abs(static_cast<double>(i + 1) / n - cdf)});
    }
    return d;
}

}  // namespace

TEST_CASE("load_jsonl parses sequences and the meta header") {
    auto p = write_file("ok.jsonl",
                        "{\"num_types\": 2, \"max_len\": 4}\n"
                        "{\"taus\":[0.5,1.2],\"types\":[0,1]}\n"
                        "{\"taus\":[0.1],\"types\":[1]}\n"
                        "{\"taus\":[2.0,0.0,3.5],\"types\":[1,1,0]}\n");
    auto ds = load_jsonl(p);
    CHECK(ds.num_types == 2);
    CHECK(ds.max_len == 4);
    REQUIRE(ds.sequences.size() == 3);
    CHECK(ds.sequences[0].events == std::vector<Event>{{0.5, 0}, {1.2, 1}});
}

TEST_CASE("load_jsonl validation errors name the line") {
    auto bad_type = write_file("badtype.jsonl",
                               "{\"num_types\": 2, \"max_len\": 4}\n"
                               "{\"taus\":[0.5,1.2],\"types\":[0,1]}\n"
                               "{\"taus\":[0.5,1.2],\"types\":[0,5]}\n");
    try {
        load_jsonl(bad_type);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    auto neg = write_file("neg.jsonl",
                          "{\"num_types\": 2, \"max_len\": 4}\n{\"taus\":[-0.5],\"types\":[0]}\n");
    CHECK_THROWS_AS(load_jsonl(neg), ValidationError);
    auto malformed = write_file("malformed.jsonl",
                                "{\"num_types\": 2, \"max_len\": 4}\n{\"taus\":[0.5,\n");
    try {
        load_jsonl(malformed);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    auto mismatch = write_file("mismatch.jsonl",
                               "{\"num_types\": 2, \"max_len\": 4}\n{\"taus\":[0.5],\"types\":[0,1]}\n");
    CHECK_THROWS_AS(load_jsonl(mismatch), ValidationError);
}

TEST_CASE("load_jsonl reads a companion meta file and chunks long sequences") {
    auto p = write_file("companion.jsonl", "{\"taus\":[1,2,3,4,5],\"types\":[0,0,0,0,0]}\n");
    auto meta = p;
    meta += ".meta.json";
    std::ofstream(meta) << "{\"num_types\": 1, \"max_len\": 2}";
    auto ds = load_jsonl(p);
    REQUIRE(ds.sequences.size() == 3);
    CHECK(ds.sequences[0].size() == 2);
    CHECK(ds.sequences[1].events[0].tau == 3.0);
    CHECK(ds.sequences[2].size() == 1);
}

TEST_CASE("write_jsonl then load_jsonl round-trips") {
    Dataset ds;
    ds.num_types = 3;
    ds.max_len = 5;
    ds.sequences = {{{{0.25, 2}, {1.75, 0}}}, {{{3.0, 1}}}};
    auto p = fs::temp_directory_path() / "asyncflow_test_roundtrip.jsonl";
    write_jsonl(p, ds);
    auto back = load_jsonl(p);
    CHECK(back.sequences == ds.sequences);
    CHECK(back.num_types == 3);
}

TEST_CASE("pad_and_mask") {
    EventSequence s{{{0.5, 1}, {0.7, 0}}};
    auto p = pad_and_mask(s, 4);
    CHECK(p.mask == std::vector<std::uint8_t>{1, 1, 0, 0});
    CHECK(p.events[2] == Event{0.0, 0});
    CHECK(std::vector<Event>(p.events.begin(), p.events.begin() + 2) == s.events);

    auto full = pad_and_mask(s, 2);
    CHECK(full.mask == std::vector<std::uint8_t>{1, 1});

    CHECK_THROWS_AS(pad_and_mask(EventSequence{}, 4), ContractViolation);
    CHECK_THROWS_AS(pad_and_mask(s, 1), ContractViolation);
}

TEST_CASE("standardize_tau uses the population standard deviation") {
    Dataset ds;
    ds.num_types = 1;
    ds.max_len = 4;
    ds.sequences = {{{{1, 0}, {1, 0}, {3, 0}, {3, 0}}}};
    auto [z, sc] = standardize_tau(ds);
    CHECK(sc.mean == doctest::Approx(2.0));
    CHECK(sc.std == doctest::Approx(1.0));
    std::vector<double> got;
    for (const auto& e : z.sequences[0].events) got.push_back(e.tau);
    CHECK(got == std::vector<double>{-1, -1, 1, 1});

    for (const auto& e : z.sequences[0].events) {
        const double back = sc.invert(e.tau);
        CHECK(std::abs(back - sc.invert(sc.apply(back))) < 1e-6);
    }
    CHECK(sc.invert(-5.0) == 0.0);

    Dataset flat = ds;
    for (auto& e : flat.sequences[0].events) e.tau = 2.0;
    CHECK_THROWS_AS(standardize_tau(flat), ValidationError);
}

TEST_CASE("standardize then invert is the identity on non-negative taus") {
    std::mt19937_64 rng(8);
    std::exponential_distribution<double> ex(0.7);
    Dataset ds;
    ds.num_types = 1;
    ds.max_len = 50;
    EventSequence s;
    for (int i = 0; i < 50; ++i) s.events.push_back({ex(rng), 0});
    ds.sequences = {s};
    auto [z, sc] = standardize_tau(ds);
    for (std::size_t i = 0; i < s.size(); ++i)
        CHECK(std::abs(sc.invert(z.sequences[0].events[i].tau) - s.events[i].tau) < 1e-6);
}

TEST_CASE("simulate_poisson count and mean gap") {
    std::mt19937_64 rng(123);
    auto s = simulate_poisson(2.0, 1000.0, rng);
    CHECK(std::abs(static_cast<double>(s.size()) - 2000.0) < 3 * std::sqrt(2000.0));

    std::mt19937_64 rng2(9);
    std::vector<double> taus;
    while (taus.size() < 10000) {
        auto seq = simulate_poisson(2.0, 100.0, rng2);
        for (const auto& e : seq.events) taus.push_back(e.tau);
    }
    taus.resize(10000);
    double m = 0;
    for (auto t : taus) m += t;
    m /= 10000.0;
    CHECK(std::abs(m - 0.5) < 0.05 * 0.5);

    std::mt19937_64 rng3(1);
    CHECK(simulate_poisson(1e-6, 1.0, rng3).empty());
}

TEST_CASE("hawkes with zero excitation is Poisson") {
    HawkesParams hp{{0.5, 0.5}, {{0, 0}, {0, 0}}, {{1, 1}, {1, 1}}};
    std::mt19937_64 rng(42);
    auto s = simulate_hawkes(hp, 1000.0, rng);
    std::array<int, 2> counts{0, 0};
    for (const auto& e : s.events) ++counts[static_cast<std::size_t>(e.type)];
    for (int c : counts) CHECK(std::abs(c - 500.0) < 3 * std::sqrt(500.0));

    HawkesParams single{{1.0}, {{0.0}}, {{1.0}}};
    std::mt19937_64 rng2(7);
    std::vector<double> taus;
    while (taus.size() < 10000) {
        auto seq = simulate_hawkes(single, 500.0, rng2);
        for (const auto& e : seq.events) taus.push_back(e.tau);
    }
    taus.resize(10000);
    CHECK(ks_exponential(taus, 1.0) < 0.05);
}

TEST_CASE("hawkes stationary mean intensity follows the branching ratio") {
    HawkesParams hp{{0.5}, {{0.8}}, {{1.0}}};
    std::mt19937_64 rng(2025);
    auto s = simulate_hawkes(hp, 5000.0, rng);
    const double rate = static_cast<double>(s.size()) / 5000.0;
    CHECK(std::abs(rate / 0.5 - 5.0) < 0.2 * 5.0);
}

TEST_CASE("hawkes rejects non-stationary parameters and tiny horizons may be empty") {
    HawkesParams bad{{0.5}, {{1.5}}, {{1.0}}};
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(simulate_hawkes(bad, 10.0, rng), ValidationError);
    HawkesParams ok{{0.01}, {{0.1}}, {{1.0}}};
    CHECK(simulate_hawkes(ok, 1e-6, rng).empty());
}

TEST_CASE("absolute_times accumulates durations") {
    std::vector<Event> ev{{1.0, 0}, {0.5, 1}, {2.0, 0}};
    CHECK(absolute_times(ev) == std::vector<double>{1.0, 1.5, 3.5});
    CHECK(absolute_times(ev, 10.0) == std::vector<double>{11.0, 11.5, 13.5});
}
