#include "cvnet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cvnet/error.hpp"
#include "cvnet/preprocess.hpp"

namespace cvnet {

namespace {

double ellipsoid_norm(const std::array<double, 3>& p, const std::array<double, 3>& c,
                      const std::array<double, 3>& r) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double t = (p[a] - c[a]) / r[a];
    s += t * t;
  }
  return s;
}

}  // namespace

void to_json(nlohmann::json& j, const TissueProfile& t) {
  j = nlohmann::json{{"mean", t.mean}, {"stddev", t.stddev}};
}

void from_json(const nlohmann::json& j, TissueProfile& t) {
  t.mean = j.value("mean", t.mean);
  t.stddev = j.value("stddev", t.stddev);
}


void PhantomSpec::validate() const {
  if (dims.size() == 0) throw ConfigError("phantom: dims must be positive");
  for (int a = 0; a < 3; ++a) {
    if (!(brain_radii[a] > 0.0)) throw ConfigError("phantom: brain radii must be positive");
    if (!(enhancing_radii[a] > 0.0 && enhancing_radii[a] < necrotic_radii[a] &&
          necrotic_radii[a] < edema_radii[a])) {
      throw ConfigError("phantom: tumor radii must strictly decrease inward (edema > necrotic > enhancing > 0)");
    }
  }
  double offset = 0.0;
  for (int a = 0; a < 3; ++a) offset += (tumor_center[a] - brain_center[a]) * (tumor_center[a] - brain_center[a]);
  const double reach = std::sqrt(offset) + *std::max_element(edema_radii.begin(), edema_radii.end());
  if (reach > *std::min_element(brain_radii.begin(), brain_radii.end())) {
    throw ConfigError("phantom: tumor extends outside the brain ellipsoid");
  }
  if (noise < 0.0) throw ConfigError("phantom: noise must be non-negative");
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = nlohmann::json{
      {"dims", {s.dims.d, s.dims.h, s.dims.w}},
      {"seed", s.seed},
      {"brain_center", s.brain_center},
      {"brain_radii", s.brain_radii},
      {"tumor_center", s.tumor_center},
      {"edema_radii", s.edema_radii},
      {"necrotic_radii", s.necrotic_radii},
      {"enhancing_radii", s.enhancing_radii},
      {"profiles",
       {{"brain", s.brain}, {"edema", s.edema}, {"necrotic", s.necrotic}, {"enhancing", s.enhancing}}},
      {"noise", s.noise},
  };
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  try {
    if (j.contains("dims")) {
      const auto d = j.at("dims").get<std::array<std::size_t, 3>>();
      s.dims = {d[0], d[1], d[2]};
    }
    s.seed = j.value("seed", s.seed);
    s.brain_center = j.value("brain_center", s.brain_center);
    s.brain_radii = j.value("brain_radii", s.brain_radii);
    s.tumor_center = j.value("tumor_center", s.tumor_center);
    s.edema_radii = j.value("edema_radii", s.edema_radii);
    s.necrotic_radii = j.value("necrotic_radii", s.necrotic_radii);
    s.enhancing_radii = j.value("enhancing_radii", s.enhancing_radii);
    if (j.contains("profiles")) {
      const auto& p = j.at("profiles");
      if (p.contains("brain")) s.brain = p.at("brain").get<TissueProfile>();
      if (p.contains("edema")) s.edema = p.at("edema").get<TissueProfile>();
      if (p.contains("necrotic")) s.necrotic = p.at("necrotic").get<TissueProfile>();
      if (p.contains("enhancing")) s.enhancing = p.at("enhancing").get<TissueProfile>();
    }
    s.noise = j.value("noise", s.noise);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("phantom spec: ") + e.what());
  }
}

PhantomSpec jittered_phantom_spec(Dims3 dims, std::uint64_t seed) {
  PhantomSpec s;
  s.dims = dims;
  s.seed = seed;
  const std::array<double, 3> scale{dims.d / 32.0, dims.h / 32.0, dims.w / 32.0};
  for (int a = 0; a < 3; ++a) {
    s.brain_center[a] = (static_cast<double>(dims[a]) - 1.0) / 2.0;
    s.brain_radii[a] *= scale[a];
    s.edema_radii[a] *= scale[a];
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> size(0.85, 1.15);
  const double f = size(rng);
  for (int a = 0; a < 3; ++a) {
    s.edema_radii[a] *= f;
    s.necrotic_radii[a] = 0.7 * s.edema_radii[a];
    s.enhancing_radii[a] = 0.4 * s.edema_radii[a];
  }
  // Offset the tumor in a random direction, keeping one voxel of clearance.
  const double room = *std::min_element(s.brain_radii.begin(), s.brain_radii.end()) -
                      *std::max_element(s.edema_radii.begin(), s.edema_radii.end()) - 1.0;
  std::normal_distribution<double> dir(0.0, 1.0);
  std::array<double, 3> v{dir(rng), dir(rng), dir(rng)};
  const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  const double dist = std::max(room, 0.0) * frac(rng);
  for (int a = 0; a < 3; ++a) s.tumor_center[a] = s.brain_center[a] + (norm > 0 ? v[a] / norm : 0.0) * dist;
  return s;
}

MultiModalScan generate_phantom(const PhantomSpec& spec, const std::string& subject_id) {
  spec.validate();
  MultiModalScan scan;
  scan.subject_id = subject_id;
  for (std::size_t m = 0; m < MultiModalScan::kModalities; ++m) {
    auto& v = scan.modalities[m];
    v = ScalarVolume(spec.dims, 0.0f);
    v.modality = MultiModalScan::kModalityNames[m];
    v.axes = kDefaultAxes;
  }
  LabelVolume labels(spec.dims, 0);
  labels.axes = kDefaultAxes;
  labels.modality = "seg";

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t z = 0; z < spec.dims.d; ++z)
    for (std::size_t y = 0; y < spec.dims.h; ++y)
      for (std::size_t x = 0; x < spec.dims.w; ++x) {
        const std::array<double, 3> p{double(z), double(y), double(x)};
        if (ellipsoid_norm(p, spec.brain_center, spec.brain_radii) > 1.0) continue;
        const TissueProfile* tissue = &spec.brain;
        std::uint8_t label = 0;
        if (ellipsoid_norm(p, spec.tumor_center, spec.enhancing_radii) <= 1.0) {
          tissue = &spec.enhancing;
          label = 4;
        } else if (ellipsoid_norm(p, spec.tumor_center, spec.necrotic_radii) <= 1.0) {
          tissue = &spec.necrotic;
          label = 1;
        } else if (ellipsoid_norm(p, spec.tumor_center, spec.edema_radii) <= 1.0) {
          tissue = &spec.edema;
          label = 2;
        }
        const std::size_t i = labels.index(z, y, x);
        labels.data[i] = label;
        for (std::size_t m = 0; m < MultiModalScan::kModalities; ++m) {
          double v = tissue->mean[m] + tissue->stddev[m] * gauss(rng) + spec.noise * gauss(rng);
          // Brain support is defined by nonzero intensity.
          if (std::abs(v) < 1e-3) v = 1e-3;
          scan.modalities[m].data[i] = static_cast<float>(v);
        }
      }
  scan.labels = std::move(labels);
  return scan;
}

}  // namespace cvnet
