#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "cvnet/volume.hpp"

namespace cvnet {

enum class Connectivity { Face6 = 6, Edge18 = 18, Vertex26 = 26 };

struct ComponentLabeling {
  Dims3 dims;
  // 0 = background, otherwise a component id in 1..count.
  std::vector<std::uint32_t> labels;
  // sizes[id - 1] is the voxel count of component id.
  std::vector<std::size_t> sizes;

  std::size_t count() const { return sizes.size(); }
};

// Ids are assigned in order of each component's first voxel in scan order.
ComponentLabeling connected_components(const MaskVolume& mask,
                                       Connectivity connectivity = Connectivity::Vertex26);

struct MinVoxels {
  std::size_t k;
};
struct KeepLargest {};
using FilterPolicy = std::variant<MinVoxels, KeepLargest>;

std::string to_string(const FilterPolicy& policy);
// Parses "keep_largest" or "min_voxels:<k>".
FilterPolicy parse_filter_policy(const std::string& text);

// min_voxels keeps components with size >= k; keep_largest keeps the single
// largest one (ties go to the lowest id).
MaskVolume filter_small_components(const ComponentLabeling& labeling, const FilterPolicy& policy);

// Inclusive voxel box.
struct Box3D {
  std::array<std::size_t, 3> min_corner{};
  std::array<std::size_t, 3> max_corner{};

  bool contains(std::size_t z, std::size_t y, std::size_t x) const {
    return z >= min_corner[0] && z <= max_corner[0] && y >= min_corner[1] && y <= max_corner[1] &&
           x >= min_corner[2] && x <= max_corner[2];
  }
  bool operator==(const Box3D&) const = default;
};

// Tightest box around the nonzero voxels, dilated by `margin` and clipped to
// the volume. std::nullopt when the mask is empty (no tumor).
std::optional<Box3D> bounding_box(const MaskVolume& mask, std::size_t margin = 0);

MaskVolume rasterize(const Box3D& box, const MaskVolume& like);

// Box mask around labels {1,2,4}. Throws ConfigError on a tumor-free volume.
MaskVolume gt_tumor_box(const LabelVolume& labels, std::size_t margin = 0);

// Voxels where any modality is nonzero.
MaskVolume brain_mask(const MultiModalScan& scan);

}  // namespace cvnet
