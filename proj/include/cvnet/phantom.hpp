#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "cvnet/volume.hpp"
#include "json.hpp"

namespace cvnet {

// Per-modality (T1, T1c, T2, FLAIR) intensity mean and spread of one tissue class.
struct TissueProfile {
  std::array<double, 4> mean{};
  std::array<double, 4> stddev{};
};

void to_json(nlohmann::json& j, const TissueProfile& t);
void from_json(const nlohmann::json& j, TissueProfile& t);

// Synthetic scan: an ellipsoidal brain containing nested ellipsoidal tumor
// regions, enhancing core (label 4) inside a necrotic shell (label 1) inside
// an edema shell (label 2). Coordinates are voxel indices (depth, height, width).
struct PhantomSpec {
  Dims3 dims{32, 32, 32};
  std::uint64_t seed = 0;
  std::array<double, 3> brain_center{15.5, 15.5, 15.5};
  std::array<double, 3> brain_radii{13.0, 14.0, 12.0};
  std::array<double, 3> tumor_center{15.5, 15.5, 15.5};
  std::array<double, 3> edema_radii{6.5, 7.0, 6.0};
  std::array<double, 3> necrotic_radii{4.5, 4.9, 4.2};
  std::array<double, 3> enhancing_radii{2.6, 2.8, 2.4};
  TissueProfile brain{{1.0, 1.0, 1.0, 1.0}, {0.08, 0.08, 0.08, 0.08}};
  TissueProfile edema{{0.8, 0.9, 1.8, 2.0}, {0.08, 0.08, 0.1, 0.1}};
  TissueProfile necrotic{{0.6, 0.7, 1.5, 1.3}, {0.08, 0.08, 0.1, 0.1}};
  TissueProfile enhancing{{0.9, 2.2, 1.3, 1.5}, {0.08, 0.1, 0.1, 0.1}};
  double noise = 0.05;

  // Throws ConfigError on non-nested radii or a tumor leaving the brain.
  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& spec);
void from_json(const nlohmann::json& j, PhantomSpec& spec);

// Default-shaped spec with tumor position and size jittered from `seed`.
PhantomSpec jittered_phantom_spec(Dims3 dims, std::uint64_t seed);

// Deterministic in the spec; labels are attached.
MultiModalScan generate_phantom(const PhantomSpec& spec, const std::string& subject_id);

}  // namespace cvnet
