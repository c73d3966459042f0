#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cvnet/autodiff.hpp"
#include "cvnet/volume.hpp"

namespace cvnet {

inline constexpr std::size_t kBackgroundChannel = 0;
// Network output channel c predicts BraTS label kChannelLabels[c].
inline constexpr std::array<std::uint8_t, 4> kChannelLabels{0, 1, 2, 4};

// Channel for a BraTS label; throws FormatError for unknown labels.
std::size_t channel_for_label(std::uint8_t label);

enum class Region { ET, WT, TC };

struct RegionSpec {
  Region region;
  std::string name;
  std::vector<std::uint8_t> labels;

  bool contains(std::uint8_t label) const;
};

// WT = {1,2,4}, TC = {1,4}, ET = {4}.
RegionSpec region_spec(Region region);
// Throws ConfigError for names other than "ET", "WT", "TC".
RegionSpec region_spec(const std::string& name);
// Report order of the evaluation tables.
inline constexpr std::array<Region, 3> kReportRegions{Region::ET, Region::WT, Region::TC};

struct LossConfig {
  double dice_weight = 0.5;
  double epsilon = 1e-5;
  // Cross entropy as a mean over ROI voxels; false sums instead.
  bool cross_entropy_mean = true;
  double log_floor = 1e-12;
};

// Inside the mask probabilities pass through unchanged; outside every channel
// is multiplied by 0 and the background channel is then set to 1, so no
// gradient reaches upstream activations at outside voxels.
template <typename T>
Var<T> apply_roi_mask(const Var<T>& probs, const MaskVolume& mask);

// Zeroes every channel of a (N,C,D,H,W) input outside the mask. Convolutions
// and batch statistics would otherwise carry outside voxels into the
// in-mask outputs.
template <typename T>
Tensor<T> mask_input(const Tensor<T>& input, const MaskVolume& mask);

// sum(p*l) / (sum(p) + sum(l)) over ROI voxels, no smoothing. `tumor` is a
// (1,1,D,H,W) probability map.
template <typename T>
Var<T> dice_ratio(const Var<T>& tumor, const MaskVolume& labels, const MaskVolume& roi);

// 1 - (2*sum(p*l) + eps) / (sum(p) + sum(l) + eps). Zero for perfect
// overlap, and for an empty prediction on an empty target.
template <typename T>
Var<T> dice_loss_binary(const Var<T>& tumor, const MaskVolume& labels, const MaskVolume& roi,
                        double epsilon = 1e-5);

// Soft dice loss of one merged tumor region from 4-class probabilities.
template <typename T>
Var<T> soft_dice_region(const Var<T>& probs, const LabelVolume& labels, const RegionSpec& region,
                        const MaskVolume& roi, double epsilon = 1e-5);

template <typename T>
Var<T> cross_entropy(const Var<T>& probs, const LabelVolume& labels, const MaskVolume& roi,
                     const LossConfig& cfg = {});

// XE + w * (D_WT + D_ET + D_TC).
template <typename T>
Var<T> combined_loss(const Var<T>& probs, const LabelVolume& labels, const MaskVolume& roi,
                     const LossConfig& cfg = {});

}  // namespace cvnet
