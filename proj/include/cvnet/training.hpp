#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cvnet/checkpoint.hpp"
#include "cvnet/loss.hpp"
#include "cvnet/optimizer.hpp"
#include "cvnet/preprocess.hpp"
#include "cvnet/vnet.hpp"
#include "cvnet/volume.hpp"

namespace cvnet {

enum class Stage { Net1 = 1, Net2 = 2 };

struct TrainConfig {
  NetworkConfig network;
  AdamConfig optimizer;
  // Total gradient steps, one subject per step.
  std::size_t steps = 500;
  // Optional cap in passes over the training cohort; 0 means no cap.
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  LossConfig loss;
  // Sagittal reflection with probability 0.5 per step.
  bool augment = true;
  // Epochs without development improvement before stopping; 0 disables.
  std::size_t patience = 0;
  // Write a resumable checkpoint every this many steps; 0 disables.
  std::size_t checkpoint_every = 0;
  // Margin of the ground-truth box ROI used by net-2.
  std::size_t roi_margin = 2;

  void validate(Stage stage) const;
  // Steps actually run for a cohort of `cohort_size` subjects.
  std::size_t effective_steps(std::size_t cohort_size) const;
};

TrainConfig default_train_config(Stage stage);

void to_json(nlohmann::json& j, const TrainConfig& cfg);
// Missing keys keep the values already in `cfg`.
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct LogEntry {
  enum class Kind { Step, Epoch } kind = Kind::Step;
  std::size_t step = 0;   // 1-based step index (the last step of the epoch for Epoch)
  std::size_t epoch = 0;  // 1-based
  std::string subject_id;
  double loss = 0.0;
  bool reflected = false;
  // Development metrics for Epoch entries ("dice" for net-1; "WT", "TC", "ET" for net-2).
  std::map<std::string, double> metrics;
};

void to_json(nlohmann::json& j, const LogEntry& e);

struct TrainingLog {
  std::vector<LogEntry> entries;
  std::size_t steps_run() const;
  std::vector<double> step_losses() const;
  // JSON lines.
  void write(std::ostream& os) const;
};

struct TrainOptions {
  // Resumable checkpoint to continue from.
  std::optional<std::filesystem::path> resume;
  // Directory for periodic and abort checkpoints; nothing is written when absent.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Progress lines as training runs.
  std::ostream* progress = nullptr;
};

struct TrainResult {
  ModelParams<float> params;
  TrainingLog log;
  // Resumable state after the last step (parameters, optimizer moments, counters).
  Checkpoint state;
  bool stopped_early = false;
};

// Net-1: binary tumor/non-tumor under the brain mask with the dice loss.
TrainResult train_net1(const std::vector<MultiModalScan>& train, const std::vector<MultiModalScan>& development,
                       const TrainConfig& cfg, const TrainOptions& options = {});

// Net-2: four classes under the ground-truth tumor box with the combined loss.
TrainResult train_net2(const std::vector<MultiModalScan>& train, const std::vector<MultiModalScan>& development,
                       const TrainConfig& cfg, const TrainOptions& options = {});

// Loss of one prepared subject under the stage's ROI (brain for net-1, the
// ground-truth tumor box for net-2), in training mode.
Var<float> sample_loss(Stage stage, ModelParams<float>& params, const TrainConfig& cfg, const PreparedScan& scan,
                       const LabelVolume& labels);

TrainResult train_stage(Stage stage, const std::vector<MultiModalScan>& train,
                        const std::vector<MultiModalScan>& development, const TrainConfig& cfg,
                        const TrainOptions& options = {});

// Per-step random streams are keyed by (seed, stream, index) so that a resumed
// run draws the same values as an uninterrupted one.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

// Subject visiting order for one epoch (0-based epoch index).
std::vector<std::size_t> epoch_order(std::size_t cohort_size, std::uint64_t seed, std::size_t epoch);

}  // namespace cvnet
