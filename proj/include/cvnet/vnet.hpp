#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cvnet/ops.hpp"
#include "json.hpp"

namespace cvnet {

enum class UpsampleKind { Learned, Repeat };
enum class DownsampleKind { StridedConv, MaxPool };

struct NetworkConfig {
  std::size_t in_channels = 4;
  std::size_t out_classes = 2;
  std::size_t levels = 3;
  std::size_t base_channels = 8;
  std::vector<std::size_t> convs_per_level{1, 2, 3};
  // Concatenate the raw FLAIR channel to the last decoder level.
  bool flair_concat = false;
  // Insert one conv_block between the FLAIR concatenation and the head.
  bool flair_block = true;
  std::size_t flair_channel = 3;
  UpsampleKind upsample = UpsampleKind::Learned;
  DownsampleKind downsample = DownsampleKind::StridedConv;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
  // Spatial extents must be multiples of this.
  std::size_t spatial_divisor() const { return std::size_t{1} << levels; }
  void validate() const;
};

void to_json(nlohmann::json& j, const NetworkConfig& cfg);
void from_json(const nlohmann::json& j, NetworkConfig& cfg);

template <typename T>
using ParamEntry = std::variant<ConvKernel<T>, BatchNormState<T>>;

// Named parameters of one network, keyed by canonical layer name
// (e.g. "enc1.conv0", "dec0.up", "head").
template <typename T>
struct ModelParams {
  std::map<std::string, ParamEntry<T>> entries;

  bool has(const std::string& name) const { return entries.count(name) != 0; }
  ConvKernel<T>& conv(const std::string& name);
  const ConvKernel<T>& conv(const std::string& name) const;
  BatchNormState<T>& norm(const std::string& name);
  const BatchNormState<T>& norm(const std::string& name) const;

  // Trainable tensors as ("layer.weight", var) pairs in canonical order.
  std::vector<std::pair<std::string, Var<T>>> named_trainable() const;
  std::vector<Var<T>> trainable() const;
  std::size_t parameter_count() const;

  ModelParams clone() const;
  template <typename U>
  ModelParams<U> cast() const;

  void zero_grad() const;
};

// Bitwise comparison of every parameter and running statistic.
template <typename T>
bool identical(const ModelParams<T>& a, const ModelParams<T>& b);

// conv3d (padding k/2, stride 1) -> batchnorm3d -> relu.
template <typename T>
Var<T> conv_block(const Var<T>& x, const ConvKernel<T>& kernel, BatchNormState<T>& bn, Mode mode);

template <typename T>
struct ConvBlockRef {
  const ConvKernel<T>* kernel;
  BatchNormState<T>* bn;
};

template <typename T>
Var<T> run_blocks(const Var<T>& x, std::span<const ConvBlockRef<T>> body, Mode mode);

// x + body(x) with an identity skip path. Body output must match x.
template <typename T>
Var<T> residual_block(const Var<T>& x, std::span<const ConvBlockRef<T>> body, Mode mode);

enum class SpatialChange { None, Down, Up };

// Reshapes a skip path for addition: max-pool (down) or repeat (up) by 2,
// then a 1x1x1 projection only when channel counts differ.
template <typename T>
Var<T> residual_adapter(const Var<T>& x, std::size_t target_channels, SpatialChange change,
                        const ConvKernel<T>* projection);

// Deterministic parameter initialization from (cfg, seed).
template <typename T>
ModelParams<T> build_network(const NetworkConfig& cfg, std::uint64_t seed);

// Per-voxel class probabilities (1, out_classes, D, H, W).
template <typename T>
Var<T> forward(ModelParams<T>& params, const NetworkConfig& cfg, const Var<T>& scan, Mode mode);

}  // namespace cvnet
