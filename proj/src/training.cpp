#include "cvnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cvnet/cascade.hpp"
#include "cvnet/error.hpp"
#include "cvnet/metrics.hpp"
#include "cvnet/morphology.hpp"
#include "cvnet/preprocess.hpp"

namespace cvnet {

void TrainConfig::validate(Stage stage) const {
  network.validate();
  optimizer.validate();
  const std::size_t want = stage == Stage::Net1 ? 2 : 4;
  if (network.out_classes != want) {
    throw ConfigError("train: stage " + std::to_string(static_cast<int>(stage)) + " needs out_classes = " +
                      std::to_string(want) + ", config has " + std::to_string(network.out_classes));
  }
  if (network.in_channels != MultiModalScan::kModalities) {
    throw ConfigError("train: networks take " + std::to_string(MultiModalScan::kModalities) + " input channels");
  }
  if (!(loss.dice_weight >= 0.0)) throw ConfigError("train: dice_weight must be non-negative");
  if (!(loss.epsilon > 0.0)) throw ConfigError("train: loss epsilon must be positive");
}

std::size_t TrainConfig::effective_steps(std::size_t cohort_size) const {
  if (epochs == 0) return steps;
  return std::min(steps, epochs * cohort_size);
}

TrainConfig default_train_config(Stage stage) {
  TrainConfig cfg;
  if (stage == Stage::Net1) {
    cfg.network.out_classes = 2;
    cfg.network.flair_concat = true;
  } else {
    cfg.network.out_classes = 4;
    cfg.network.flair_concat = false;
  }
  return cfg;
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"network", cfg.network},
                     {"optimizer", cfg.optimizer},
                     {"steps", cfg.steps},
                     {"epochs", cfg.epochs},
                     {"seed", cfg.seed},
                     {"dice_weight", cfg.loss.dice_weight},
                     {"dice_epsilon", cfg.loss.epsilon},
                     {"cross_entropy_mean", cfg.loss.cross_entropy_mean},
                     {"augment", cfg.augment},
                     {"patience", cfg.patience},
                     {"checkpoint_every", cfg.checkpoint_every},
                     {"roi_margin", cfg.roi_margin}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  try {
    if (j.contains("network")) from_json(j.at("network"), cfg.network);
    if (j.contains("optimizer")) from_json(j.at("optimizer"), cfg.optimizer);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.loss.dice_weight = j.value("dice_weight", cfg.loss.dice_weight);
    cfg.loss.epsilon = j.value("dice_epsilon", cfg.loss.epsilon);
    cfg.loss.cross_entropy_mean = j.value("cross_entropy_mean", cfg.loss.cross_entropy_mean);
    cfg.augment = j.value("augment", cfg.augment);
    if (j.contains("patience") && j.at("patience").is_number_integer() && j.at("patience").get<long long>() < 0) {
      throw ConfigError("train: patience must be >= 0");
    }
    cfg.patience = j.value("patience", cfg.patience);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.roi_margin = j.value("roi_margin", cfg.roi_margin);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const LogEntry& e) {
  j = nlohmann::json{{"kind", e.kind == LogEntry::Kind::Step ? "step" : "epoch"},
                     {"step", e.step},
                     {"epoch", e.epoch}};
  if (e.kind == LogEntry::Kind::Step) {
    j["subject"] = e.subject_id;
    j["loss"] = e.loss;
    j["reflected"] = e.reflected;
  } else {
    j["metrics"] = e.metrics;
  }
}

namespace {

LogEntry log_entry_from_json(const nlohmann::json& j) {
  LogEntry e;
  e.kind = j.at("kind").get<std::string>() == "step" ? LogEntry::Kind::Step : LogEntry::Kind::Epoch;
  e.step = j.at("step").get<std::size_t>();
  e.epoch = j.at("epoch").get<std::size_t>();
  if (e.kind == LogEntry::Kind::Step) {
    e.subject_id = j.at("subject").get<std::string>();
    e.loss = j.at("loss").get<double>();
    e.reflected = j.at("reflected").get<bool>();
  } else {
    e.metrics = j.at("metrics").get<std::map<std::string, double>>();
  }
  return e;
}

}  // namespace

std::size_t TrainingLog::steps_run() const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(),
                                                [](const LogEntry& e) { return e.kind == LogEntry::Kind::Step; }));
}

std::vector<double> TrainingLog::step_losses() const {
  std::vector<double> out;
  for (const auto& e : entries) {
    if (e.kind == LogEntry::Kind::Step) out.push_back(e.loss);
  }
  return out;
}

void TrainingLog::write(std::ostream& os) const {
  for (const auto& e : entries) os << nlohmann::json(e).dump() << '\n';
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  // splitmix64 finalizer over a mix of the three keys
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1) + 0xBF58476D1CE4E5B9ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> epoch_order(std::size_t cohort_size, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(cohort_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 0, epoch));
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = cohort_size; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

namespace {

constexpr std::uint64_t kAugmentStream = 1;

struct Sample {
  std::string subject_id;
  MultiModalScan scan;  // normalized
  MaskVolume brain;
  LabelVolume labels;
};

Sample make_sample(const MultiModalScan& raw) {
  PreparedScan prep = prepare_scan(raw);
  return {raw.subject_id, std::move(prep.scan), std::move(prep.brain), *raw.labels};
}

Sample reflected(const Sample& s) {
  return {s.subject_id, reflect_sagittal(s.scan), reflect_sagittal(s.brain), reflect_sagittal(s.labels)};
}

MaskVolume whole_tumor(const LabelVolume& labels) { return merge_labels(labels).wt; }

std::vector<Sample> prepare_cohort(const std::vector<MultiModalScan>& cohort, Stage stage, const char* role) {
  std::vector<Sample> out;
  out.reserve(cohort.size());
  for (const auto& scan : cohort) {
    if (!scan.labels) throw ConfigError(std::string(role) + " subject " + scan.subject_id + " has no labels");
    require_brats_labels(*scan.labels, scan.subject_id.c_str());
    if (stage == Stage::Net2 && !whole_tumor(*scan.labels).any()) {
      throw ConfigError(std::string(role) + " subject " + scan.subject_id + " has no tumor; net-2 needs one");
    }
    out.push_back(make_sample(scan));
  }
  return out;
}

Var<float> stage_loss(Stage stage, ModelParams<float>& params, const TrainConfig& cfg, const Sample& s) {
  const MaskVolume roi = stage == Stage::Net1 ? s.brain : gt_tumor_box(s.labels, cfg.roi_margin);
  Var<float> x = constant(mask_input(scan_to_tensor<float>(s.scan), roi));
  Var<float> probs = apply_roi_mask(forward(params, cfg.network, x, Mode::Train), roi);
  if (stage == Stage::Net1) {
    return dice_loss_binary(slice_channels(probs, 1, 1), whole_tumor(s.labels), roi, cfg.loss.epsilon);
  }
  return combined_loss(probs, s.labels, roi, cfg.loss);
}

// Development metrics and the scalar used for early stopping.
std::pair<std::map<std::string, double>, double> development_metrics(Stage stage, ModelParams<float>& params,
                                                                     const TrainConfig& cfg,
                                                                     const std::vector<Sample>& dev) {
  std::map<std::string, double> metrics;
  if (stage == Stage::Net1) {
    double total = 0.0;
    for (const auto& s : dev) {
      const MaskVolume pred = threshold_tumor(run_net1(params, cfg.network, s.scan, s.brain), s.brain);
      total += dice(pred, whole_tumor(s.labels));
    }
    metrics["dice"] = total / static_cast<double>(dev.size());
    return {metrics, metrics["dice"]};
  }
  std::array<double, 3> totals{};
  for (const auto& s : dev) {
    const MaskVolume roi = gt_tumor_box(s.labels, cfg.roi_margin);
    const LabelVolume pred = argmax_labels(run_net2(params, cfg.network, s.scan, roi), s.brain);
    const RegionMasks p = merge_labels(pred), g = merge_labels(s.labels);
    for (std::size_t r = 0; r < kReportRegions.size(); ++r) {
      totals[r] += dice(p.get(kReportRegions[r]), g.get(kReportRegions[r]));
    }
  }
  double mean = 0.0;
  for (std::size_t r = 0; r < kReportRegions.size(); ++r) {
    const double v = totals[r] / static_cast<double>(dev.size());
    metrics[region_spec(kReportRegions[r]).name] = v;
    mean += v / 3.0;
  }
  return {metrics, mean};
}

struct LoopState {
  std::size_t step = 0;  // steps completed
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t epochs_since_best = 0;
  bool stopped_early = false;
};

void append_prefixed(Checkpoint& dst, const Checkpoint& src, const std::string& prefix) {
  for (const auto& r : src.records) {
    CheckpointRecord c = r;
    c.name = prefix + r.name;
    dst.records.push_back(std::move(c));
  }
}

Checkpoint strip_prefix(const Checkpoint& src, const std::string& prefix) {
  Checkpoint out;
  out.meta = src.meta;
  for (const auto& r : src.records) {
    if (r.name.rfind(prefix, 0) == 0) {
      CheckpointRecord c = r;
      c.name = r.name.substr(prefix.size());
      out.records.push_back(std::move(c));
    }
  }
  return out;
}

Checkpoint training_state(Stage stage, const ModelParams<float>& params, const Adam<float>& adam,
                          const TrainConfig& cfg, const LoopState& loop, const TrainingLog& log,
                          const ModelParams<float>* best) {
  Checkpoint ckpt = model_checkpoint(params, cfg.network, cfg.seed);
  ckpt.meta["kind"] = "training-state";
  ckpt.meta["stage"] = static_cast<int>(stage);
  ckpt.meta["train_config"] = cfg;
  ckpt.meta["step"] = loop.step;
  ckpt.meta["best_metric"] = std::isfinite(loop.best_metric) ? nlohmann::json(loop.best_metric) : nlohmann::json();
  ckpt.meta["epochs_since_best"] = loop.epochs_since_best;
  ckpt.meta["stopped_early"] = loop.stopped_early;
  ckpt.meta["log"] = nlohmann::json::array();
  for (const auto& e : log.entries) ckpt.meta["log"].push_back(e);
  adam.save_state(ckpt);
  if (best) append_prefixed(ckpt, model_checkpoint(*best, cfg.network, cfg.seed), "best.");
  return ckpt;
}

}  // namespace

Var<float> sample_loss(Stage stage, ModelParams<float>& params, const TrainConfig& cfg, const PreparedScan& scan,
                       const LabelVolume& labels) {
  return stage_loss(stage, params, cfg, Sample{scan.scan.subject_id, scan.scan, scan.brain, labels});
}

TrainResult train_stage(Stage stage, const std::vector<MultiModalScan>& train,
                        const std::vector<MultiModalScan>& development, const TrainConfig& cfg,
                        const TrainOptions& options) {
  cfg.validate(stage);
  if (train.empty()) throw ConfigError("train: the training cohort is empty");
  const std::vector<Sample> samples = prepare_cohort(train, stage, "training");
  const std::vector<Sample> dev = prepare_cohort(development, stage, "development");
  for (const auto& s : samples) {
    const std::size_t div = cfg.network.spatial_divisor();
    if (s.brain.dims.d % div || s.brain.dims.h % div || s.brain.dims.w % div) {
      throw ShapeError("train: subject " + s.subject_id + " dims " + to_string(s.brain.dims) +
                       " are not divisible by " + std::to_string(div));
    }
  }

  const bool track_best = cfg.patience > 0 && !dev.empty();
  LoopState loop;
  TrainingLog log;
  ModelParams<float> params;
  std::optional<ModelParams<float>> best;
  std::optional<Checkpoint> resume_ckpt;
  if (options.resume) {
    resume_ckpt = load_checkpoint(*options.resume);
    const auto& meta = resume_ckpt->meta;
    if (meta.value("kind", std::string()) != "training-state" || meta.value("stage", 0) != static_cast<int>(stage)) {
      throw ConfigError("resume: " + options.resume->string() + " is not a stage " +
                        std::to_string(static_cast<int>(stage)) + " training state");
    }
    if (meta.at("train_config") != nlohmann::json(cfg)) {
      throw ConfigError("resume: training config differs from the one the checkpoint was written with");
    }
    params = params_from_checkpoint<float>(*resume_ckpt);
    loop.step = meta.at("step").get<std::size_t>();
    if (!meta.at("best_metric").is_null()) loop.best_metric = meta.at("best_metric").get<double>();
    loop.epochs_since_best = meta.at("epochs_since_best").get<std::size_t>();
    loop.stopped_early = meta.at("stopped_early").get<bool>();
    for (const auto& e : meta.at("log")) log.entries.push_back(log_entry_from_json(e));
    if (track_best && resume_ckpt->find("best.head.weight")) {
      best = params_from_checkpoint<float>(strip_prefix(*resume_ckpt, "best."));
    }
  } else {
    params = build_network<float>(cfg.network, cfg.seed);
  }

  Adam<float> adam(params.named_trainable(), cfg.optimizer);
  if (resume_ckpt) adam.load_state(*resume_ckpt);

  const std::size_t n = samples.size();
  const std::size_t total = cfg.effective_steps(n);
  auto save_state = [&](const std::filesystem::path& path, const ModelParams<float>& p, const Adam<float>& a,
                        const LoopState& l) {
    save_checkpoint(training_state(stage, p, a, cfg, l, log, best ? &*best : nullptr), path);
  };

  while (loop.step < total && !loop.stopped_early) {
    const std::size_t s = loop.step;
    const std::size_t epoch = s / n;
    const std::size_t subject = epoch_order(n, cfg.seed, epoch)[s % n];
    std::mt19937_64 aug(derive_seed(cfg.seed, kAugmentStream, s));
    const bool reflect = cfg.augment && std::bernoulli_distribution(0.5)(aug);
    const Sample sample = reflect ? reflected(samples[subject]) : samples[subject];

    // Snapshot for the abort checkpoint; the forward pass moves running statistics.
    const ModelParams<float> prior = params.clone();
    Var<float> loss;
    try {
      loss = stage_loss(stage, params, cfg, sample);
      if (!std::isfinite(loss->value.data[0])) throw NumericError("loss is not finite");
    } catch (const NumericError& e) {
      std::string where;
      if (options.checkpoint_dir) {
        std::filesystem::create_directories(*options.checkpoint_dir);
        const auto path = *options.checkpoint_dir / ("abort-step-" + std::to_string(s + 1) + ".ckpt");
        Adam<float> prior_adam(prior.named_trainable(), cfg.optimizer);
        Checkpoint moments;
        adam.save_state(moments);
        prior_adam.load_state(moments);
        save_state(path, prior, prior_adam, loop);
        where = "; state before the step saved to " + path.string();
      }
      throw NumericError("training aborted at step " + std::to_string(s + 1) + " (subject " + sample.subject_id +
                         "): " + e.what() + where);
    }
    params.zero_grad();
    backward(loss);
    adam.step();
    ++loop.step;

    LogEntry entry;
    entry.step = loop.step;
    entry.epoch = epoch + 1;
    entry.subject_id = sample.subject_id;
    entry.loss = loss->value.data[0];
    entry.reflected = reflect;
    log.entries.push_back(entry);
    if (options.progress) {
      *options.progress << "step " << loop.step << '/' << total << " epoch " << epoch + 1 << " loss " << entry.loss
                        << '\n';
    }

    if (loop.step % n == 0 || loop.step == total) {
      if (!dev.empty()) {
        auto [metrics, score] = development_metrics(stage, params, cfg, dev);
        LogEntry ep;
        ep.kind = LogEntry::Kind::Epoch;
        ep.step = loop.step;
        ep.epoch = epoch + 1;
        ep.metrics = metrics;
        log.entries.push_back(ep);
        if (options.progress) {
          *options.progress << "epoch " << epoch + 1 << " development";
          for (const auto& [k, v] : metrics) *options.progress << ' ' << k << ' ' << v;
          *options.progress << '\n';
        }
        if (track_best) {
          if (score > loop.best_metric) {
            loop.best_metric = score;
            loop.epochs_since_best = 0;
            best = params.clone();
          } else if (++loop.epochs_since_best >= cfg.patience) {
            loop.stopped_early = true;
          }
        }
      }
    }
    if (options.checkpoint_dir && cfg.checkpoint_every > 0 && loop.step % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(*options.checkpoint_dir);
      save_state(*options.checkpoint_dir / ("state-step-" + std::to_string(loop.step) + ".ckpt"), params, adam, loop);
    }
  }

  TrainResult result;
  result.state = training_state(stage, params, adam, cfg, loop, log, best ? &*best : nullptr);
  result.params = best ? std::move(*best) : std::move(params);
  result.log = std::move(log);
  result.stopped_early = loop.stopped_early;
  return result;
}

TrainResult train_net1(const std::vector<MultiModalScan>& train, const std::vector<MultiModalScan>& development,
                       const TrainConfig& cfg, const TrainOptions& options) {
  return train_stage(Stage::Net1, train, development, cfg, options);
}

TrainResult train_net2(const std::vector<MultiModalScan>& train, const std::vector<MultiModalScan>& development,
                       const TrainConfig& cfg, const TrainOptions& options) {
  return train_stage(Stage::Net2, train, development, cfg, options);
}

}  // namespace cvnet
