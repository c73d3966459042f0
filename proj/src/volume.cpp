#include "cvnet/volume.hpp"

#include <algorithm>

#include "cvnet/error.hpp"

namespace cvnet {

std::string to_string(const Dims3& dims) {
  return std::to_string(dims.d) + "x" + std::to_string(dims.h) + "x" + std::to_string(dims.w);
}

std::size_t MaskVolume::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

bool MaskVolume::any() const {
  return std::any_of(data.begin(), data.end(), [](auto v) { return v != 0; });
}

void require_binary(const MaskVolume& mask, const char* context) {
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] > 1) {
      throw ShapeError(std::string(context) + ": mask value " + std::to_string(mask.data[i]) +
                       " at voxel " + std::to_string(i) + " is not binary");
    }
  }
}

void require_brats_labels(const LabelVolume& labels, const char* context) {
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const auto v = labels.data[i];
    if (v != 0 && v != 1 && v != 2 && v != 4) {
      throw FormatError(std::string(context) + ": unknown label value " + std::to_string(v) +
                        " at voxel " + std::to_string(i));
    }
  }
}

void MultiModalScan::validate() const {
  const auto& ref = modalities[0];
  if (ref.dims.size() == 0) throw ShapeError("scan " + subject_id + ": empty volume");
  for (std::size_t m = 1; m < kModalities; ++m) {
    if (modalities[m].dims != ref.dims) {
      throw ShapeError("scan " + subject_id + ": modality " + kModalityNames[m] + " has dims " +
                       to_string(modalities[m].dims) + ", expected " + to_string(ref.dims));
    }
    if (modalities[m].spacing != ref.spacing) {
      throw ShapeError("scan " + subject_id + ": modality " + kModalityNames[m] +
                       " has different voxel spacing");
    }
  }
  if (labels) {
    if (labels->dims != ref.dims) {
      throw ShapeError("scan " + subject_id + ": labels have dims " + to_string(labels->dims) +
                       ", expected " + to_string(ref.dims));
    }
    require_brats_labels(*labels, ("scan " + subject_id).c_str());
  }
}

template <typename T>
Tensor<T> scan_to_tensor(const MultiModalScan& scan) {
  const Dims3 d = scan.dims();
  Tensor<T> t({1, MultiModalScan::kModalities, d.d, d.h, d.w});
  for (std::size_t m = 0; m < MultiModalScan::kModalities; ++m) {
    std::copy(scan.modalities[m].data.begin(), scan.modalities[m].data.end(),
              t.data.begin() + static_cast<std::ptrdiff_t>(m * d.size()));
  }
  return t;
}

template <typename T>
Tensor<T> mask_to_tensor(const MaskVolume& mask) {
  Tensor<T> t({1, 1, mask.dims.d, mask.dims.h, mask.dims.w});
  std::copy(mask.data.begin(), mask.data.end(), t.data.begin());
  return t;
}

template Tensor<float> scan_to_tensor<float>(const MultiModalScan&);
template Tensor<double> scan_to_tensor<double>(const MultiModalScan&);
template Tensor<float> mask_to_tensor<float>(const MaskVolume&);
template Tensor<double> mask_to_tensor<double>(const MaskVolume&);

}  // namespace cvnet
