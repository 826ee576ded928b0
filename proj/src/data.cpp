#include "asyncflow/data.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "asyncflow/error.hpp"

namespace asyncflow {

using nlohmann::json;

std::size_t Dataset::event_count() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.size();
    return n;
}

void Dataset::validate() const {
    if (num_types < 1) throw ValidationError("num_types must be positive");
    if (max_len < 1) throw ValidationError("max_len must be positive");
    if (scaler.active && !(scaler.std > 0)) throw ValidationError("tau scaler std must be > 0");
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        const auto& seq = sequences[s];
        if (seq.empty()) throw ValidationError("sequence " + std::to_string(s) + " is empty");
        if (seq.size() > max_len)
            throw ValidationError("sequence " + std::to_string(s) + " exceeds max_len");
        for (const auto& e : seq.events) {
            if (e.type < 0 || e.type >= num_types)
                throw ValidationError("sequence " + std::to_string(s) + ": type " +
                                      std::to_string(e.type) + " outside [0, " +
                                      std::to_string(num_types) + ")");
            if (!scaler.active && !(e.tau >= 0))
                throw ValidationError("sequence " + std::to_string(s) + ": negative tau");
        }
    }
}

std::vector<EventSequence> chunk_sequence(const EventSequence& seq, std::size_t max_len) {
    ASYNCFLOW_EXPECT(max_len > 0, "chunk_sequence: max_len must be positive");
    std::vector<EventSequence> out;
    for (std::size_t start = 0; start < seq.size(); start += max_len) {
        EventSequence c;
        const std::size_t end = std::min(seq.size(), start + max_len);
        c.events.assign(seq.events.begin() + static_cast<std::ptrdiff_t>(start),
                        seq.events.begin() + static_cast<std::ptrdiff_t>(end));
        out.push_back(std::move(c));
    }
    return out;
}

namespace {

bool is_meta(const json& j) { return j.is_object() && j.contains("num_types") && !j.contains("taus"); }

void read_meta(const json& j, Dataset& ds, const std::string& where) {
    try {
        ds.num_types = j.at("num_types").get<int>();
        const auto n = j.at("max_len").get<long long>();
        if (n < 1) throw ValidationError(where + ": max_len must be positive");
        ds.max_len = static_cast<std::size_t>(n);
    } catch (const json::exception& e) {
        throw ValidationError(where + ": malformed meta object: " + e.what());
    }
    if (ds.num_types < 1) throw ValidationError(where + ": num_types must be positive");
}

}  // namespace

Dataset load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset " + path.string());
    Dataset ds;
    bool have_meta = false;
    std::vector<std::pair<std::size_t, EventSequence>> raw;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError(where + ": malformed JSON: " + e.what());
        }
        if (!have_meta && raw.empty() && is_meta(j)) {
            read_meta(j, ds, where);
            have_meta = true;
            continue;
        }
        EventSequence seq;
        try {
            const auto taus = j.at("taus").get<std::vector<double>>();
            const auto types = j.at("types").get<std::vector<int>>();
            if (taus.size() != types.size())
                throw ValidationError(where + ": taus and types differ in length");
            for (std::size_t i = 0; i < taus.size(); ++i) seq.events.push_back({taus[i], types[i]});
        } catch (const json::exception& e) {
            throw ValidationError(where + ": expected {\"taus\": [...], \"types\": [...]}: " +
                                  e.what());
        }
        if (seq.empty()) throw ValidationError(where + ": empty sequence");
        raw.emplace_back(lineno, std::move(seq));
    }
    if (!have_meta) {
        auto meta_path = path;
        meta_path += ".meta.json";
        std::ifstream mf(meta_path);
        if (!mf) throw ValidationError(path.string() + ": no meta header line and no " +
                                       meta_path.string());
        json j;
        try {
            mf >> j;
        } catch (const json::exception& e) {
            throw ValidationError(meta_path.string() + ": malformed JSON: " + e.what());
        }
        read_meta(j, ds, meta_path.string());
    }
    for (const auto& [ln, seq] : raw) {
        const std::string where = path.string() + ":" + std::to_string(ln);
        for (const auto& e : seq.events) {
            if (e.type < 0 || e.type >= ds.num_types)
                throw ValidationError(where + ": type " + std::to_string(e.type) +
                                      " outside [0, " + std::to_string(ds.num_types) + ")");
            if (!(e.tau >= 0)) throw ValidationError(where + ": negative tau " + std::to_string(e.tau));
        }
        for (auto& c : chunk_sequence(seq, ds.max_len)) ds.sequences.push_back(std::move(c));
    }
    ds.validate();
    return ds;
}

void write_jsonl(const std::filesystem::path& path, const Dataset& dataset, MetaPlacement meta) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    const json header{{"num_types", dataset.num_types}, {"max_len", dataset.max_len}};
    if (meta == MetaPlacement::Header) {
        out << header.dump() << '\n';
    } else {
        auto meta_path = path;
        meta_path += ".meta.json";
        std::ofstream mf(meta_path);
        if (!mf) throw ValidationError("cannot write " + meta_path.string());
        mf << header.dump() << '\n';
    }
    for (const auto& seq : dataset.sequences) {
        json taus = json::array(), types = json::array();
        for (const auto& e : seq.events) {
            taus.push_back(dataset.scaler.active ? dataset.scaler.invert(e.tau) : e.tau);
            types.push_back(e.type);
        }
        out << json{{"taus", taus}, {"types", types}}.dump() << '\n';
    }
}

Dataset make_dataset(const std::vector<EventSequence>& raw, int num_types, std::size_t max_len) {
    Dataset ds;
    ds.num_types = num_types;
    ds.max_len = max_len;
    for (const auto& seq : raw)
        if (!seq.empty())
            for (auto& c : chunk_sequence(seq, max_len)) ds.sequences.push_back(std::move(c));
    ds.validate();
    return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, std::size_t train_count) {
    ASYNCFLOW_EXPECT(train_count <= dataset.sequences.size(), "split_dataset: not enough sequences");
    Dataset a = dataset, b = dataset;
    a.sequences.assign(dataset.sequences.begin(),
                       dataset.sequences.begin() + static_cast<std::ptrdiff_t>(train_count));
    b.sequences.assign(dataset.sequences.begin() + static_cast<std::ptrdiff_t>(train_count),
                       dataset.sequences.end());
    return {a, b};
}

Padded pad_and_mask(const EventSequence& seq, std::size_t max_len) {
    if (seq.empty()) throw ContractViolation("pad_and_mask: sequence must have at least one event");
    if (seq.size() > max_len)
        throw ContractViolation("pad_and_mask: sequence length " + std::to_string(seq.size()) +
                                " exceeds N=" + std::to_string(max_len));
    Padded p;
    p.events = seq.events;
    p.events.resize(max_len, Event{0.0, 0});
    p.mask.assign(max_len, 0);
    std::fill_n(p.mask.begin(), seq.size(), std::uint8_t{1});
    return p;
}

std::pair<Dataset, TauScaler> standardize_tau(const Dataset& dataset) {
    const std::size_t n = dataset.event_count();
    if (n < 2) throw ValidationError("standardize_tau: need at least two events");
    double mean = 0.0;
    for (const auto& s : dataset.sequences)
        for (const auto& e : s.events) mean += e.tau;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& s : dataset.sequences)
        for (const auto& e : s.events) var += (e.tau - mean) * (e.tau - mean);
    var /= static_cast<double>(n);
    if (!(var > 0.0))
        throw ValidationError("standardize_tau: taus have zero variance; use an identity scaler");
    TauScaler scaler{mean, std::sqrt(var), true};
    return {apply_scaler(dataset, scaler), scaler};
}

Dataset apply_scaler(const Dataset& dataset, const TauScaler& scaler) {
    Dataset out = dataset;
    for (auto& s : out.sequences)
        for (auto& e : s.events) e.tau = scaler.apply(e.tau);
    out.scaler = scaler;
    return out;
}

std::vector<double> absolute_times(const std::vector<Event>& events, double origin) {
    std::vector<double> t(events.size());
    double acc = origin;
    for (std::size_t i = 0; i < events.size(); ++i) t[i] = (acc += events[i].tau);
    return t;
}

// ---------------------------------------------------------------- Hawkes

double HawkesParams::branching_ratio() const {
    const auto k = static_cast<Eigen::Index>(num_types());
    Eigen::MatrixXd m(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j)
            m(i, j) = excitation[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] /
                      decay[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

void HawkesParams::validate() const {
    const std::size_t k = num_types();
    if (k == 0) throw ValidationError("hawkes: need at least one type");
    if (excitation.size() != k || decay.size() != k)
        throw ValidationError("hawkes: excitation/decay must be K x K");
    for (std::size_t i = 0; i < k; ++i) {
        if (!(base_rates[i] > 0)) throw ValidationError("hawkes: base rates must be positive");
        if (excitation[i].size() != k || decay[i].size() != k)
            throw ValidationError("hawkes: excitation/decay must be K x K");
        for (std::size_t j = 0; j < k; ++j) {
            if (!(excitation[i][j] >= 0)) throw ValidationError("hawkes: excitation must be >= 0");
            if (!(decay[i][j] > 0)) throw ValidationError("hawkes: decay must be > 0");
        }
    }
    const double rho = branching_ratio();
    if (!(rho < 1.0))
        throw ValidationError("hawkes: non-stationary parameters (branching ratio " +
                              std::to_string(rho) + " >= 1)");
}

EventSequence simulate_hawkes(const HawkesParams& params, double horizon, std::mt19937_64& rng) {
    params.validate();
    ASYNCFLOW_EXPECT(horizon > 0, "simulate_hawkes: horizon must be positive");
    const std::size_t k = params.num_types();
    // excite[i][j]: current contribution of past type-j events to lambda_i.
    std::vector<std::vector<double>> excite(k, std::vector<double>(k, 0.0));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto intensities = [&](std::vector<double>& lam) {
        for (std::size_t i = 0; i < k; ++i)
            lam[i] = params.base_rates[i] +
                     std::accumulate(excite[i].begin(), excite[i].end(), 0.0);
    };
    auto decay_by = [&](double dt) {
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) excite[i][j] *= std::exp(-params.decay[i][j] * dt);
    };

    EventSequence seq;
    std::vector<double> lam(k);
    double t = 0.0, last = 0.0;
    while (true) {
        intensities(lam);
        // Exponential kernels only decay between events, so the current
        // total intensity bounds it until the next accepted event.
        const double bound = std::accumulate(lam.begin(), lam.end(), 0.0);
        const double w = -std::log(1.0 - unif(rng)) / bound;
        if (t + w > horizon) break;
        t += w;
        decay_by(w);
        intensities(lam);
        const double total = std::accumulate(lam.begin(), lam.end(), 0.0);
        const double u = unif(rng) * bound;
        if (u > total) continue;
        std::size_t type = 0;
        double cum = lam[0];
        while (u > cum && type + 1 < k) cum += lam[++type];
        seq.events.push_back({t - last, static_cast<int>(type)});
        last = t;
        for (std::size_t i = 0; i < k; ++i) excite[i][type] += params.excitation[i][type];
    }
    return seq;
}

EventSequence simulate_poisson(double rate, double horizon, std::mt19937_64& rng) {
    ASYNCFLOW_EXPECT(rate > 0 && horizon > 0, "simulate_poisson: rate and horizon must be positive");
    std::exponential_distribution<double> gap(rate);
    EventSequence seq;
    double t = 0.0;
    while (true) {
        const double w = gap(rng);
        if (t + w > horizon) break;
        t += w;
        seq.events.push_back({w, 0});
    }
    return seq;
}

}  // namespace asyncflow
