#pragma once

// Binary checkpoint files.
//
//   "ADIF" | u32 version | u32 array count
//   per array: u32 name length, name bytes, u32 rank, u64 dims[rank],
//              u8 dtype (0 = f32, 1 = f64), raw payload
//   u32 config length, UTF-8 JSON config
//
// All integers and payloads are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "asyncflow/autodiff.hpp"
#include "asyncflow/data.hpp"
#include "asyncflow/dit.hpp"
#include "asyncflow/schedule.hpp"
#include "asyncflow/vae.hpp"

namespace asyncflow {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

/// Values are held in double; f32 arrays round-trip exactly through it.
struct CheckpointArray {
    std::string name;
    Shape shape;
    DType dtype = DType::F32;
    std::vector<double> values;

    bool operator==(const CheckpointArray&) const = default;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::vector<CheckpointArray> arrays;
    nlohmann::json config = nlohmann::json::object();

    const CheckpointArray* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Serialises to / parses from the byte layout above.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

template <class T>
void add_params(Checkpoint& ckpt, const ParamSet<T>& params, const std::string& prefix);

/// Collects arrays named `prefix` + parameter name, in file order.
template <class T>
ParamSet<T> extract_params(const Checkpoint& ckpt, const std::string& prefix);

// ---- model-level helpers

nlohmann::json to_json(const VaeConfig& c);
nlohmann::json to_json(const DitConfig& c);
nlohmann::json to_json(const TauScaler& s);
VaeConfig vae_config_from_json(const nlohmann::json& j);
DitConfig dit_config_from_json(const nlohmann::json& j);
TauScaler scaler_from_json(const nlohmann::json& j);

template <class T>
struct VaeBundle {
    VaeModel<T> model;
    TauScaler scaler;
    std::size_t max_len = 0;
    std::uint64_t seed = 0;
};

template <class T>
Checkpoint vae_checkpoint(const VaeBundle<T>& bundle);
template <class T>
VaeBundle<T> vae_from_checkpoint(const Checkpoint& ckpt);

template <class T>
struct DitBundle {
    DitModel<T> model;
    ScheduleKind schedule = ScheduleKind::Async;
    int num_types = 1;
    std::uint64_t seed = 0;
    nlohmann::json extra = nlohmann::json::object();
};

template <class T>
Checkpoint dit_checkpoint(const DitBundle<T>& bundle);
template <class T>
DitBundle<T> dit_from_checkpoint(const Checkpoint& ckpt);

}  // namespace asyncflow
