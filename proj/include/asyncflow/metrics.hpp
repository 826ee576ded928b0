#pragma once

// Forecast metrics: duration RMSE, type error rate and a per-type optimal
// transport distance between event sequences.

#include <span>
#include <vector>

#include "asyncflow/data.hpp"
#include "asyncflow/error.hpp"

namespace asyncflow {

struct OtdConfig {
    double del_cost = 1.0;
    double trans_cost = 1.0;

    void validate() const;
};

/// An event at an absolute time measured from the start of the window.
struct TimedEvent {
    double time = 0.0;
    int type = 0;
};

/// Cumulative times of `events` starting from `origin`.
std::vector<TimedEvent> timed_events(const std::vector<Event>& events, double origin = 0.0);

double rmse(std::span<const double> pred, std::span<const double> truth);
double error_rate(std::span<const int> pred, std::span<const int> truth);

/// Sum over types of the edit distance between the type-k subsequences with
/// deletion cost del_cost and matching cost trans_cost * |t - t'|. Times must
/// be non-decreasing.
double otd(const std::vector<TimedEvent>& pred, const std::vector<TimedEvent>& truth,
           const OtdConfig& config = {});

/// Exhaustive search over alignments of each type pair. At most
/// kOtdBruteforceLimit events per type on either side.
inline constexpr std::size_t kOtdBruteforceLimit = 6;
double otd_bruteforce(const std::vector<TimedEvent>& pred, const std::vector<TimedEvent>& truth,
                      const OtdConfig& config = {});

/// Predicted and true events of one forecast. `start` is the number of
/// observed events before the first prediction.
struct ForecastRecord {
    std::size_t seq = 0;
    std::size_t start = 0;
    std::vector<Event> pred;
    std::vector<Event> truth;
};

enum class OtdMode {
    PerSequence,   // one distance per record over window-relative times
    PerEvent,      // one distance per predicted event (next-event records)
};

struct MetricSummary {
    double rmse = 0.0;
    double error_rate = 0.0;
    double otd = 0.0;            // mean over records or events per OtdMode
    std::size_t events = 0;
    std::size_t records = 0;
};

/// RMSE and error rate pooled over every event of every record.
MetricSummary summarize(const std::vector<ForecastRecord>& records, OtdMode mode,
                        const OtdConfig& config = {});

}  // namespace asyncflow
