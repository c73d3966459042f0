#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cvnet/vnet.hpp"
#include "json.hpp"

namespace cvnet {

// Checkpoint file layout:
//
//   cvnet-checkpoint 1\n
//   meta <single-line JSON: format version, config echo, seed, ...>\n
//   records <count>\n
//   end\n
//   per record: u32 name length, name bytes, u32 rank, u32 dims[rank],
//               float32 values[product(dims)]       (all little-endian)
inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
  const CheckpointRecord& at(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Model parameters and running statistics as records; meta echoes cfg and seed.
template <typename T>
Checkpoint model_checkpoint(const ModelParams<T>& params, const NetworkConfig& cfg, std::uint64_t seed);

// Rebuilds the layer structure from the echoed config and loads every
// record into it. Throws FormatError on missing or mis-shaped records.
template <typename T>
ModelParams<T> params_from_checkpoint(const Checkpoint& ckpt, NetworkConfig* cfg_out = nullptr);

NetworkConfig config_from_checkpoint(const Checkpoint& ckpt);

extern template Checkpoint model_checkpoint<float>(const ModelParams<float>&, const NetworkConfig&, std::uint64_t);
extern template Checkpoint model_checkpoint<double>(const ModelParams<double>&, const NetworkConfig&, std::uint64_t);
extern template ModelParams<float> params_from_checkpoint<float>(const Checkpoint&, NetworkConfig*);
extern template ModelParams<double> params_from_checkpoint<double>(const Checkpoint&, NetworkConfig*);

}  // namespace cvnet
