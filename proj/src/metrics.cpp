#include "asyncflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>

#include "asyncflow/error.hpp"

namespace asyncflow {

void OtdConfig::validate() const {
    ASYNCFLOW_EXPECT(del_cost > 0.0 && trans_cost > 0.0, "otd: costs must be positive");
}

std::vector<TimedEvent> timed_events(const std::vector<Event>& events, double origin) {
    std::vector<TimedEvent> out;
    out.reserve(events.size());
    double t = origin;
    for (const auto& e : events) {
        t += e.tau;
        out.push_back({t, e.type});
    }
    return out;
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
    ASYNCFLOW_EXPECT(pred.size() == truth.size(), "rmse: length mismatch");
    ASYNCFLOW_EXPECT(!pred.empty(), "rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return std::sqrt(s / static_cast<double>(pred.size()));
}

double error_rate(std::span<const int> pred, std::span<const int> truth) {
    ASYNCFLOW_EXPECT(pred.size() == truth.size(), "error_rate: length mismatch");
    ASYNCFLOW_EXPECT(!pred.empty(), "error_rate: empty input");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != truth[i];
    return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

namespace {

using TimesByType = std::map<int, std::vector<double>>;

TimesByType split_by_type(const std::vector<TimedEvent>& seq, const char* what) {
    TimesByType out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        ASYNCFLOW_EXPECT(std::isfinite(seq[i].time), std::string("otd: non-finite time in ") + what);
        if (i > 0 && seq[i].time < seq[i - 1].time)
            throw ContractViolation(std::string("otd: times in ") + what + " are not sorted");
        out[seq[i].type].push_back(seq[i].time);
    }
    return out;
}

// Applies `per_type` to every type present on either side, summing in type order.
double sum_over_types(const std::vector<TimedEvent>& pred, const std::vector<TimedEvent>& truth,
                      const OtdConfig& config,
                      const std::function<double(const std::vector<double>&,
                                                 const std::vector<double>&)>& per_type) {
    config.validate();
    auto p = split_by_type(pred, "prediction");
    auto t = split_by_type(truth, "truth");
    std::vector<int> types;
    for (const auto& [k, v] : p) types.push_back(k);
    for (const auto& [k, v] : t) types.push_back(k);
    std::sort(types.begin(), types.end());
    types.erase(std::unique(types.begin(), types.end()), types.end());
    double total = 0.0;
    for (int k : types) total += per_type(p[k], t[k]);
    return total;
}

double otd_dp(const std::vector<double>& a, const std::vector<double>& b, const OtdConfig& c) {
    const std::size_t m = a.size(), n = b.size();
    std::vector<double> prev(n + 1), cur(n + 1);
    // Boundaries accumulate del_cost step by step so every entry is the
    // floating-point sum along some alignment path.
    prev[0] = 0.0;
    for (std::size_t j = 1; j <= n; ++j) prev[j] = prev[j - 1] + c.del_cost;
    for (std::size_t i = 1; i <= m; ++i) {
        cur[0] = prev[0] + c.del_cost;
        for (std::size_t j = 1; j <= n; ++j)
            cur[j] = std::min({prev[j] + c.del_cost, cur[j - 1] + c.del_cost,
                               prev[j - 1] + c.trans_cost * std::abs(a[i - 1] - b[j - 1])});
        std::swap(prev, cur);
    }
    return prev[n];
}

double otd_search(const std::vector<double>& a, const std::vector<double>& b, const OtdConfig& c,
                  std::size_t i, std::size_t j, double cost) {
    if (i == a.size() && j == b.size()) return cost;
    double best = std::numeric_limits<double>::infinity();
    if (i < a.size()) best = std::min(best, otd_search(a, b, c, i + 1, j, cost + c.del_cost));
    if (j < b.size()) best = std::min(best, otd_search(a, b, c, i, j + 1, cost + c.del_cost));
    if (i < a.size() && j < b.size())
        best = std::min(best, otd_search(a, b, c, i + 1, j + 1,
                                         cost + c.trans_cost * std::abs(a[i] - b[j])));
    return best;
}

}  // namespace

double otd(const std::vector<TimedEvent>& pred, const std::vector<TimedEvent>& truth,
           const OtdConfig& config) {
    return sum_over_types(pred, truth, config,
                          [&](const auto& a, const auto& b) { return otd_dp(a, b, config); });
}

double otd_bruteforce(const std::vector<TimedEvent>& pred, const std::vector<TimedEvent>& truth,
                      const OtdConfig& config) {
    return sum_over_types(pred, truth, config, [&](const auto& a, const auto& b) {
        if (a.size() > kOtdBruteforceLimit || b.size() > kOtdBruteforceLimit)
            throw ContractViolation("otd_bruteforce: more than " +
                                    std::to_string(kOtdBruteforceLimit) + " events of one type");
        return otd_search(a, b, config, 0, 0, 0.0);
    });
}

MetricSummary summarize(const std::vector<ForecastRecord>& records, OtdMode mode,
                        const OtdConfig& config) {
    ASYNCFLOW_EXPECT(!records.empty(), "summarize: no forecast records");
    std::vector<double> pt, tt;
    std::vector<int> pk, tk;
    double otd_sum = 0.0;
    std::size_t otd_count = 0;
    for (const auto& r : records) {
        ASYNCFLOW_EXPECT(r.pred.size() == r.truth.size(),
                         "summarize: record " + std::to_string(r.seq) + " has mismatched lengths");
        for (std::size_t i = 0; i < r.pred.size(); ++i) {
            pt.push_back(r.pred[i].tau);
            tt.push_back(r.truth[i].tau);
            pk.push_back(r.pred[i].type);
            tk.push_back(r.truth[i].type);
            if (mode == OtdMode::PerEvent) {
                otd_sum += otd(timed_events({r.pred[i]}), timed_events({r.truth[i]}), config);
                ++otd_count;
            }
        }
        if (mode == OtdMode::PerSequence) {
            otd_sum += otd(timed_events(r.pred), timed_events(r.truth), config);
            ++otd_count;
        }
    }
    MetricSummary m;
    m.rmse = rmse(pt, tt);
    m.error_rate = error_rate(pk, tk);
    m.otd = otd_sum / static_cast<double>(otd_count);
    m.events = pt.size();
    m.records = records.size();
    return m;
}

}  // namespace asyncflow
