#include "fixtures.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <random>

#include "cvnet/phantom.hpp"
#include "cvnet/training.hpp"

namespace fixture {

cvnet::Tensor<double> random_tensor(const cvnet::Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  cvnet::Tensor<double> t(shape);
  for (auto& v : t.data) v = u(rng);
  return t;
}

cvnet::MaskVolume random_mask(cvnet::Dims3 dims, double density, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(density);
  cvnet::MaskVolume m(dims, 0);
  for (auto& v : m.data) v = b(rng) ? 1 : 0;
  return m;
}

cvnet::LabelVolume random_labels(cvnet::Dims3 dims, std::uint64_t seed) {
  static constexpr std::uint8_t kLabels[] = {0, 0, 0, 1, 2, 4};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 5);
  cvnet::LabelVolume l(dims, 0);
  for (auto& v : l.data) v = kLabels[pick(rng)];
  return l;
}

cvnet::MultiModalScan random_scan(cvnet::Dims3 dims, std::uint64_t seed, const std::string& id) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.5f, 2.0f);
  cvnet::MultiModalScan scan;
  scan.subject_id = id;
  const double cz = (dims.d - 1) / 2.0, cy = (dims.h - 1) / 2.0, cx = (dims.w - 1) / 2.0;
  const double r = std::min({dims.d, dims.h, dims.w}) / 2.0;
  for (auto& m : scan.modalities) {
    m = cvnet::ScalarVolume(dims, 0.0f);
    m.axes = "SI AP LR";
    for (std::size_t z = 0; z < dims.d; ++z)
      for (std::size_t y = 0; y < dims.h; ++y)
        for (std::size_t x = 0; x < dims.w; ++x) {
          const double dz = z - cz, dy = y - cy, dx = x - cx;
          const float v = u(rng);
          if (dz * dz + dy * dy + dx * dx <= r * r) m(z, y, x) = v;
        }
  }
  return scan;
}

std::vector<cvnet::MultiModalScan> phantom_cohort(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<cvnet::MultiModalScan> out;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "ph-%03zu", i);
    out.push_back(cvnet::generate_phantom(
        cvnet::jittered_phantom_spec({size, size, size}, cvnet::derive_seed(seed, 7, i)), id));
  }
  return out;
}

std::filesystem::path temp_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  std::random_device rd;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("cvnet-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

bool same_bytes(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::vector<char> da((std::istreambuf_iterator<char>(fa)), {}), db((std::istreambuf_iterator<char>(fb)), {});
  return da == db;
}

}  // namespace fixture
