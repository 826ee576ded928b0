#pragma once

// Flat key=value run configuration. Blank lines and text after '#' are
// ignored. Unknown keys and malformed values are collected and reported
// together in one ValidationError.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include "asyncflow/dit.hpp"
#include "asyncflow/forecast.hpp"
#include "asyncflow/training.hpp"
#include "asyncflow/vae.hpp"

namespace asyncflow {

enum class DTypeChoice { F32, F64 };

struct RunConfig {
    std::string data_path;
    int data_num_types = 0;           // 0: take from the dataset
    std::size_t data_max_len = 0;     // 0: take from the dataset
    VaeConfig vae;
    std::size_t dm_layers = 4;
    std::size_t dm_heads = 4;
    std::size_t dm_d_model = 128;
    TrainConfig dm;
    SolverKind solver = SolverKind::Euler;
    std::size_t substeps = 8;
    std::uint64_t seed = 0;
    DTypeChoice dtype = DTypeChoice::F32;

    /// Keys that appeared in the file.
    std::set<std::string> present;

    /// DiT hyperparameters for a given sequence length and latent size.
    DitConfig dit_config(std::size_t max_len, std::size_t d_latent) const;
};

/// Every key accepted by the parser.
const std::set<std::string>& run_config_keys();

RunConfig parse_run_config(const std::string& text);

/// Parses the file; relative data.path values resolve against the file's
/// directory. Also checks that data.path is set and exists.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace asyncflow
