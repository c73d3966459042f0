#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cvnet/tensor.hpp"
#include "cvnet/volume.hpp"

namespace cvnet {

// Native volume file: a text header terminated by an "end" line, followed by
// a little-endian dense payload in (D, H, W) order, W fastest.
//
//   cvnet-volume 1
//   dims <D> <H> <W>
//   type float32|float64|int16|uint8
//   spacing <sD> <sH> <sW>
//   modality <tag>|-
//   axes <a0> <a1> <a2>|-
//   end
inline constexpr int kVolumeFormatVersion = 1;

enum class ElementType { Float32, Float64, Int16, UInt8 };

std::size_t element_size(ElementType t);
std::string to_string(ElementType t);

struct VolumeHeader {
  int version = kVolumeFormatVersion;
  Dims3 dims;
  ElementType type = ElementType::Float32;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string modality;
  std::string axes;
};

VolumeHeader read_volume_header(const std::filesystem::path& path);

void save_volume(const ScalarVolume& volume, const std::filesystem::path& path);
void save_volume(const Volume<std::uint8_t>& volume, const std::filesystem::path& path);

// Accepts any element type; integer payloads widen exactly to float.
ScalarVolume load_scalar_volume(const std::filesystem::path& path);
// uint8 payload only; values must be BraTS labels.
LabelVolume load_label_volume(const std::filesystem::path& path);
// uint8 payload only; values must be {0,1}.
MaskVolume load_mask_volume(const std::filesystem::path& path);

// Writes channel `channel` of batch item `n` of a rank-5 tensor for inspection.
template <typename T>
void dump_tensor(const Tensor<T>& tensor, std::size_t n, std::size_t channel,
                 const std::filesystem::path& path);

// Minimal NIfTI-1 reader: uncompressed single-file (.nii, magic "n+1"),
// little-endian, uint8/int16/float32 payloads. Fields other than dims,
// pixdim and vox_offset are ignored; a note is appended to `notices` for
// each one that would have changed the interpretation.
ScalarVolume import_nifti(const std::filesystem::path& path,
                          std::vector<std::string>* notices = nullptr);

extern template void dump_tensor<float>(const Tensor<float>&, std::size_t, std::size_t,
                                        const std::filesystem::path&);
extern template void dump_tensor<double>(const Tensor<double>&, std::size_t, std::size_t,
                                         const std::filesystem::path&);

}  // namespace cvnet
