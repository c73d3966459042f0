#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cvnet/loss.hpp"
#include "cvnet/volume.hpp"

namespace cvnet {

struct RegionMasks {
  MaskVolume et;
  MaskVolume wt;
  MaskVolume tc;

  const MaskVolume& get(Region r) const;
};

// Throws FormatError on labels outside {0,1,2,4}.
RegionMasks merge_labels(const LabelVolume& seg);

// 2|A∩B| / (|A|+|B|); 1 when both are empty.
double dice(const MaskVolume& a, const MaskVolume& b);

// Foreground voxels with at least one face neighbor outside the mask (the
// volume border counts as outside).
std::vector<std::array<std::size_t, 3>> boundary_voxels(const MaskVolume& mask);

enum class HausdorffKind { Max, Percentile95 };

// Symmetric Hausdorff distance between mask boundaries, in voxel units or in
// mm when spacing is given. std::nullopt when either mask is empty.
std::optional<double> hausdorff(const MaskVolume& a, const MaskVolume& b,
                                const std::optional<Spacing>& spacing = std::nullopt,
                                HausdorffKind kind = HausdorffKind::Max);

struct SensSpec {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

// Counts over eval_domain (the full volume when absent).
SensSpec sensitivity_specificity(const MaskVolume& pred, const MaskVolume& gt,
                                 const MaskVolume* eval_domain = nullptr);

struct RegionMetrics {
  double dice = 0.0;
  std::optional<double> hausdorff;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

struct ScanMetrics {
  std::string subject_id;
  // Indexed in kReportRegions order: ET, WT, TC.
  std::array<RegionMetrics, 3> regions;
};

struct MetricSummary {
  double mean = 0.0;
  std::size_t count = 0;
  std::size_t excluded = 0;
};

struct RegionSummary {
  MetricSummary dice;
  MetricSummary hausdorff;
  MetricSummary sensitivity;
  MetricSummary specificity;
};

struct MetricsReport {
  std::vector<ScanMetrics> scans;  // sorted by subject id
  std::array<RegionSummary, 3> means;
};

struct CohortCase {
  std::string subject_id;
  LabelVolume pred;
  LabelVolume gt;
};

struct EvalOptions {
  bool use_spacing = false;
  HausdorffKind hausdorff_kind = HausdorffKind::Max;
};

ScanMetrics evaluate_scan(const std::string& subject_id, const LabelVolume& pred, const LabelVolume& gt,
                          const EvalOptions& options = {});

// Per-scan metrics plus per-region means; undefined values are excluded from
// the means and counted. Results do not depend on the order of `cases`.
MetricsReport evaluate_cohort(const std::vector<CohortCase>& cases, const EvalOptions& options = {});

// Human-readable table in ET / WT / TC column order.
void write_report_table(std::ostream& os, const MetricsReport& report);

// CSV, one record per scan per region:
//   subject,region,dice,hausdorff,sensitivity,specificity
// Undefined values are written as "nan". A trailing "mean" record per region
// carries the cohort means.
void write_report_csv(std::ostream& os, const MetricsReport& report);

}  // namespace cvnet
