#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cvnet/tensor.hpp"
#include "cvnet/volume.hpp"

namespace fixture {

cvnet::Tensor<double> random_tensor(const cvnet::Shape& shape, std::uint64_t seed, double lo = -1.0,
                                    double hi = 1.0);
cvnet::MaskVolume random_mask(cvnet::Dims3 dims, double density, std::uint64_t seed);
cvnet::LabelVolume random_labels(cvnet::Dims3 dims, std::uint64_t seed);
// Four random positive modalities on a cube, with zero background outside a
// central ball; labels optional.
cvnet::MultiModalScan random_scan(cvnet::Dims3 dims, std::uint64_t seed, const std::string& id = "s");

// Phantom cohort "ph-000".."ph-<n-1>" with jittered specs.
std::vector<cvnet::MultiModalScan> phantom_cohort(std::size_t n, std::size_t size, std::uint64_t seed);

// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

bool same_bytes(const std::filesystem::path& a, const std::filesystem::path& b);

}  // namespace fixture
