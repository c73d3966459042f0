#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cvnet/metrics.hpp"
#include "cvnet/morphology.hpp"
#include "cvnet/vnet.hpp"
#include "cvnet/volume.hpp"

namespace cvnet {

inline constexpr int kCascadeFormatVersion = 1;

enum class ModelKind {
  Networks,
  // Stage-1 detection and stage-2 labels come from the scan's ground truth.
  OracleStub,
  // Stage 1 never detects anything.
  EmptyStub,
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

struct CascadeModel {
  ModelKind kind = ModelKind::Networks;
  NetworkConfig net1_config;
  NetworkConfig net2_config;
  ModelParams<float> net1;
  ModelParams<float> net2;
  FilterPolicy filter = KeepLargest{};
  Connectivity connectivity = Connectivity::Vertex26;
  std::size_t margin = 0;
  // Net-1 tumor probability must exceed this.
  double threshold = 0.5;
  int format_version = kCascadeFormatVersion;

  static CascadeModel stub(ModelKind kind);
  // Throws ConfigError unless net-1 has 2 classes and net-2 has 4.
  void validate() const;
};

// Model directory: cascade.json plus net1.ckpt / net2.ckpt for real models.
void save_cascade_model(const CascadeModel& model, const std::filesystem::path& dir);
CascadeModel load_cascade_model(const std::filesystem::path& dir);

// Intermediate products of one cascade run.
struct CascadeTrace {
  MaskVolume detection;  // thresholded net-1 output
  MaskVolume filtered;   // after component filtering
  std::optional<Box3D> roi_box;
  MaskVolume roi;        // empty when nothing was detected
};

// Net-1 forward under the brain mask; returns the (1,2,D,H,W) masked probabilities.
Tensor<float> run_net1(ModelParams<float>& params, const NetworkConfig& cfg, const MultiModalScan& scan,
                       const MaskVolume& brain);
// Net-2 forward under the ROI; returns the (1,4,D,H,W) masked probabilities.
Tensor<float> run_net2(ModelParams<float>& params, const NetworkConfig& cfg, const MultiModalScan& scan,
                       const MaskVolume& roi);

// Channel 1 strictly above `threshold`.
MaskVolume threshold_tumor(const Tensor<float>& probs, const Volume<std::uint8_t>& like, double threshold = 0.5);
// Per-voxel argmax (ties to the lowest channel) mapped to BraTS labels.
LabelVolume argmax_labels(const Tensor<float>& probs, const Volume<std::uint8_t>& like);

// The two-stage pipeline on a raw (unnormalized) scan.
LabelVolume infer_cascade(const CascadeModel& model, const MultiModalScan& scan, CascadeTrace* trace = nullptr);

// Infers every subject and builds the cohort report. Errors carry the subject id.
MetricsReport run_evaluation(const CascadeModel& model, const std::vector<MultiModalScan>& cohort,
                             const EvalOptions& options = {});

}  // namespace cvnet
