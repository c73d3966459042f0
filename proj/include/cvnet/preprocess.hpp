#pragma once

#include <array>

#include "cvnet/volume.hpp"

namespace cvnet {

// Axis-order tag used for volumes produced here: depth runs
// superior-inferior, height anterior-posterior, width left-right.
inline constexpr const char* kDefaultAxes = "SI AP LR";

struct NormalizationReport {
  std::array<double, MultiModalScan::kModalities> mean{};
  std::array<double, MultiModalScan::kModalities> stddev{};
  // True where the brain std fell below 1e-8 and a unit divisor was used.
  std::array<bool, MultiModalScan::kModalities> unit_divisor{};
};

// Per-modality standardization with statistics over brain voxels (nonzero
// support); background voxels stay exactly zero.
MultiModalScan normalize_scan(const MultiModalScan& scan, NormalizationReport* report = nullptr);

// Index of the left-right axis from the axis-order declaration; throws
// FormatError when it is missing.
int sagittal_axis(const std::string& axes);

// Mirrors across the sagittal plane (reverses the left-right axis).
ScalarVolume reflect_sagittal(const ScalarVolume& volume);
LabelVolume reflect_sagittal(const LabelVolume& volume);
MaskVolume reflect_sagittal(const MaskVolume& volume);
// Reflects every modality and the labels jointly.
MultiModalScan reflect_sagittal(const MultiModalScan& scan);

// Scan prepared for a network: normalized modalities plus its brain mask
// taken before normalization.
struct PreparedScan {
  MultiModalScan scan;
  MaskVolume brain;
};
PreparedScan prepare_scan(const MultiModalScan& raw);

}  // namespace cvnet
