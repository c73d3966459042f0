#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cvnet/tensor.hpp"

namespace cvnet {

struct Dims3 {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return d * h * w; }
  std::size_t operator[](int axis) const { return axis == 0 ? d : axis == 1 ? h : w; }
  bool operator==(const Dims3&) const = default;
};

std::string to_string(const Dims3& dims);

using Spacing = std::array<double, 3>;

// Dense scalar grid, index (d*H + h)*W + w.
template <typename T>
struct Volume {
  Dims3 dims;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string modality;
  // Anatomical meaning of the three storage axes, e.g. "SI AP LR". Empty
  // when unknown.
  std::string axes;
  std::vector<T> data;

  Volume() = default;
  explicit Volume(Dims3 d, T fill = T{0}) : dims(d), data(d.size(), fill) {}

  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * dims.h + y) * dims.w + x;
  }
  T& operator()(std::size_t z, std::size_t y, std::size_t x) { return data[index(z, y, x)]; }
  const T& operator()(std::size_t z, std::size_t y, std::size_t x) const {
    return data[index(z, y, x)];
  }
  std::size_t size() const { return data.size(); }

  // Copies geometry and metadata without the payload.
  template <typename U>
  void copy_geometry_from(const Volume<U>& other) {
    dims = other.dims;
    spacing = other.spacing;
    axes = other.axes;
  }
};

using ScalarVolume = Volume<float>;

// BraTS labels: 0 background, 1 necrotic/non-enhancing core, 2 edema, 4 enhancing.
struct LabelVolume : Volume<std::uint8_t> {
  using Volume<std::uint8_t>::Volume;
};

// Binary {0,1} voxel mask.
struct MaskVolume : Volume<std::uint8_t> {
  using Volume<std::uint8_t>::Volume;

  std::size_t count() const;
  bool any() const;
};

template <typename U>
MaskVolume make_mask_like(const Volume<U>& like, std::uint8_t fill = 0) {
  MaskVolume m(like.dims, fill);
  m.spacing = like.spacing;
  m.axes = like.axes;
  return m;
}

// Throws ShapeError if any voxel is outside {0,1}.
void require_binary(const MaskVolume& mask, const char* context);

// Throws FormatError if any voxel is outside {0,1,2,4}.
void require_brats_labels(const LabelVolume& labels, const char* context);

struct MultiModalScan {
  static constexpr std::size_t kModalities = 4;
  static constexpr const char* kModalityNames[kModalities] = {"t1", "t1c", "t2", "flair"};
  static constexpr std::size_t kFlairIndex = 3;

  std::array<ScalarVolume, kModalities> modalities;
  std::optional<LabelVolume> labels;
  std::string subject_id;

  const Dims3& dims() const { return modalities[0].dims; }
  ScalarVolume& flair() { return modalities[kFlairIndex]; }
  const ScalarVolume& flair() const { return modalities[kFlairIndex]; }

  // Throws ShapeError unless every modality and the labels share dims and spacing.
  void validate() const;
};

// Packs a scan into a (1, 4, D, H, W) tensor in modality order T1, T1c, T2, FLAIR.
template <typename T>
Tensor<T> scan_to_tensor(const MultiModalScan& scan);

// Packs a mask into a (1, 1, D, H, W) tensor.
template <typename T>
Tensor<T> mask_to_tensor(const MaskVolume& mask);

extern template Tensor<float> scan_to_tensor<float>(const MultiModalScan&);
extern template Tensor<double> scan_to_tensor<double>(const MultiModalScan&);
extern template Tensor<float> mask_to_tensor<float>(const MaskVolume&);
extern template Tensor<double> mask_to_tensor<double>(const MaskVolume&);

}  // namespace cvnet
