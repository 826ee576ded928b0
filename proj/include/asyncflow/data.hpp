#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

namespace asyncflow {

/// One event: duration since the previous event and a categorical type.
struct Event {
    double tau = 0.0;
    int type = 0;

    bool operator==(const Event&) const = default;
};

struct EventSequence {
    std::vector<Event> events;

    std::size_t size() const { return events.size(); }
    bool empty() const { return events.empty(); }
    bool operator==(const EventSequence&) const = default;
};

/// Affine standardisation of durations. Inactive scalers are the identity.
/// Inversion clamps at zero since durations are non-negative.
struct TauScaler {
    double mean = 0.0;
    double std = 1.0;
    bool active = false;

    double apply(double tau) const { return active ? (tau - mean) / std : tau; }
    double invert(double z) const {
        const double tau = active ? z * std + mean : z;
        return tau < 0.0 ? 0.0 : tau;
    }
};

struct Dataset {
    std::vector<EventSequence> sequences;
    int num_types = 1;
    std::size_t max_len = 1;
    TauScaler scaler;

    std::size_t event_count() const;
    /// Throws ValidationError if any event or length invariant is violated.
    void validate() const;
};

/// Reads a JSON Lines dataset. The meta object {"num_types", "max_len"} is
/// either the first line or a companion file `<path>.meta.json`. Sequences
/// longer than max_len are split into consecutive chunks of at most max_len.
Dataset load_jsonl(const std::filesystem::path& path);

enum class MetaPlacement { Header, Companion };

/// Writes one line per sequence, with the meta object either as the first
/// line or in `<path>.meta.json`.
void write_jsonl(const std::filesystem::path& path, const Dataset& dataset,
                 MetaPlacement meta = MetaPlacement::Header);

/// Splits a sequence into consecutive, non-overlapping chunks of <= max_len.
std::vector<EventSequence> chunk_sequence(const EventSequence& seq, std::size_t max_len);

/// Builds a dataset from raw sequences: chunks each to max_len and drops
/// empty ones. The result is validated.
Dataset make_dataset(const std::vector<EventSequence>& raw, int num_types, std::size_t max_len);

/// First `train_count` sequences and the rest, with meta copied to both.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, std::size_t train_count);

struct Padded {
    std::vector<Event> events;         // length N
    std::vector<std::uint8_t> mask;    // 1 on real events
};

Padded pad_and_mask(const EventSequence& seq, std::size_t max_len);

/// Fits a population mean/std over all taus and returns the transformed
/// dataset together with the fitted scaler.
std::pair<Dataset, TauScaler> standardize_tau(const Dataset& dataset);

/// Applies an already-fitted scaler (e.g. a training-set scaler to test data).
Dataset apply_scaler(const Dataset& dataset, const TauScaler& scaler);

/// Cumulative event times, starting from `origin`.
std::vector<double> absolute_times(const std::vector<Event>& events, double origin = 0.0);

// -------------------------------------------------------------- synthetic

struct HawkesParams {
    std::vector<double> base_rates;                 // K
    std::vector<std::vector<double>> excitation;    // K x K, [target][source]
    std::vector<std::vector<double>> decay;         // K x K, [target][source]

    std::size_t num_types() const { return base_rates.size(); }
    /// Spectral radius of excitation / decay (elementwise); < 1 is stationary.
    double branching_ratio() const;
    void validate() const;
};

/// Multivariate Hawkes process with exponential kernels on [0, horizon],
/// simulated by Ogata thinning. May return an empty sequence.
EventSequence simulate_hawkes(const HawkesParams& params, double horizon, std::mt19937_64& rng);

/// Homogeneous single-type Poisson process on [0, horizon].
EventSequence simulate_poisson(double rate, double horizon, std::mt19937_64& rng);

}  // namespace asyncflow
