#include "cvnet/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "cvnet/error.hpp"
#include "cvnet/volume_io.hpp"
#include "json.hpp"

namespace cvnet {

namespace fs = std::filesystem;

CohortSplit split_cohort(std::vector<std::string> subjects, double fraction, std::uint64_t seed) {
  if (subjects.empty()) throw ConfigError("split: empty cohort");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split: fraction must lie in (0,1)");
  std::sort(subjects.begin(), subjects.end());
  if (std::adjacent_find(subjects.begin(), subjects.end()) != subjects.end()) {
    throw ConfigError("split: duplicate subject ids");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(subjects.size())));
  if (n_train == 0 || n_train >= subjects.size()) {
    throw ConfigError("split: fraction " + std::to_string(fraction) + " of " + std::to_string(subjects.size()) +
                      " subjects leaves one side empty");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  CohortSplit out;
  out.train.assign(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.development.assign(subjects.begin() + static_cast<std::ptrdiff_t>(n_train), subjects.end());
  return out;
}

void save_split(const CohortSplit& split, double fraction, std::uint64_t seed, const fs::path& path) {
  nlohmann::json j{{"fraction", fraction}, {"seed", seed}, {"train", split.train},
                   {"development", split.development}};
  std::ofstream os(path);
  if (!os) throw IoError(path.string() + ": cannot open for writing");
  os << j.dump(2) << '\n';
}

CohortSplit load_split(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string() + ": cannot open split file");
  try {
    const auto j = nlohmann::json::parse(is);
    CohortSplit out;
    out.train = j.at("train").get<std::vector<std::string>>();
    out.development = j.value("development", std::vector<std::string>{});
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_subject(const MultiModalScan& scan, const fs::path& cohort_dir) {
  if (scan.subject_id.empty()) throw ConfigError("save_subject: empty subject id");
  scan.validate();
  const fs::path dir = cohort_dir / scan.subject_id;
  fs::create_directories(dir);
  for (std::size_t m = 0; m < MultiModalScan::kModalities; ++m) {
    save_volume(scan.modalities[m], dir / (std::string(MultiModalScan::kModalityNames[m]) + ".vol"));
  }
  if (scan.labels) save_volume(*scan.labels, dir / "seg.vol");
}

MultiModalScan load_subject(const fs::path& subject_dir) {
  if (!fs::is_directory(subject_dir)) throw IoError(subject_dir.string() + ": subject directory not found");
  MultiModalScan scan;
  scan.subject_id = subject_dir.filename().string();
  for (std::size_t m = 0; m < MultiModalScan::kModalities; ++m) {
    scan.modalities[m] =
        load_scalar_volume(subject_dir / (std::string(MultiModalScan::kModalityNames[m]) + ".vol"));
  }
  if (fs::exists(subject_dir / "seg.vol")) scan.labels = load_label_volume(subject_dir / "seg.vol");
  scan.validate();
  return scan;
}

std::vector<std::string> list_subjects(const fs::path& cohort_dir) {
  if (!fs::is_directory(cohort_dir)) throw IoError(cohort_dir.string() + ": cohort directory not found");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(cohort_dir)) {
    if (e.is_directory() && fs::exists(e.path() / "t1.vol")) out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<MultiModalScan> load_cohort(const fs::path& cohort_dir, const std::vector<std::string>& subject_ids) {
  std::vector<MultiModalScan> out;
  out.reserve(subject_ids.size());
  for (const auto& id : subject_ids) out.push_back(load_subject(cohort_dir / id));
  return out;
}

}  // namespace cvnet
