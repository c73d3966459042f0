#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cvnet/volume.hpp"

namespace cvnet {

struct CohortSplit {
  std::vector<std::string> train;
  std::vector<std::string> development;
};

// Seeded shuffle, then the first round(fraction * n) subjects train. Both
// sides must be non-empty.
CohortSplit split_cohort(std::vector<std::string> subjects, double fraction, std::uint64_t seed);

void save_split(const CohortSplit& split, double fraction, std::uint64_t seed,
                const std::filesystem::path& path);
CohortSplit load_split(const std::filesystem::path& path);

// On-disk cohort: one directory per subject holding t1.vol, t1c.vol,
// t2.vol, flair.vol and (optionally) seg.vol.
void save_subject(const MultiModalScan& scan, const std::filesystem::path& cohort_dir);
MultiModalScan load_subject(const std::filesystem::path& subject_dir);
// Subject directory names, sorted.
std::vector<std::string> list_subjects(const std::filesystem::path& cohort_dir);
std::vector<MultiModalScan> load_cohort(const std::filesystem::path& cohort_dir,
                                        const std::vector<std::string>& subject_ids);

}  // namespace cvnet
