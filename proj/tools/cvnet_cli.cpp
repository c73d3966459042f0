// Command-line front end: phantom, split, train, infer, eval.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cvnet/cascade.hpp"
#include "cvnet/checkpoint.hpp"
#include "cvnet/cohort.hpp"
#include "cvnet/error.hpp"
#include "cvnet/metrics.hpp"
#include "cvnet/phantom.hpp"
#include "cvnet/training.hpp"
#include "cvnet/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

json format_versions() {
  return {{"volume", cvnet::kVolumeFormatVersion},
          {"checkpoint", cvnet::kCheckpointFormatVersion},
          {"cascade", cvnet::kCascadeFormatVersion}};
}

// Metadata record written beside every command's outputs.
void write_metadata(const fs::path& path, const std::string& command, const std::vector<std::string>& argv,
                    json config, std::optional<std::uint64_t> seed) {
  json j;
  j["command"] = command;
  j["argv"] = argv;
  j["tool_version"] = kToolVersion;
  j["format_versions"] = format_versions();
  j["config"] = std::move(config);
  j["seed"] = seed ? json(*seed) : json();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw cvnet::IoError(path.string() + ": cannot write metadata");
  os << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw cvnet::IoError(path.string() + ": cannot open");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw cvnet::ConfigError(path.string() + ": " + e.what());
  }
}

cvnet::CascadeModel open_model(const std::string& spec) {
  if (spec == "stub:oracle") return cvnet::CascadeModel::stub(cvnet::ModelKind::OracleStub);
  if (spec == "stub:empty") return cvnet::CascadeModel::stub(cvnet::ModelKind::EmptyStub);
  return cvnet::load_cascade_model(spec);
}

// Subject ids under `dir`, or the single subject when `dir` itself holds the volumes.
std::vector<cvnet::MultiModalScan> open_scans(const fs::path& dir, const std::vector<std::string>& only) {
  if (fs::exists(dir / "t1.vol")) return {cvnet::load_subject(dir)};
  return cvnet::load_cohort(dir, only.empty() ? cvnet::list_subjects(dir) : only);
}

struct PhantomArgs {
  fs::path out;
  std::size_t count = 8;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  std::string prefix = "phantom";
};

void run_phantom(const PhantomArgs& a, const std::vector<std::string>& argv) {
  if (a.count == 0) throw cvnet::ConfigError("phantom: --count must be positive");
  fs::create_directories(a.out);
  json specs = json::array();
  for (std::size_t i = 0; i < a.count; ++i) {
    const auto spec = cvnet::jittered_phantom_spec({a.size, a.size, a.size}, cvnet::derive_seed(a.seed, 7, i));
    char id[64];
    std::snprintf(id, sizeof id, "%s-%03zu", a.prefix.c_str(), i);
    cvnet::save_subject(cvnet::generate_phantom(spec, id), a.out);
    specs.push_back({{"subject", id}, {"spec", spec}});
  }
  write_metadata(a.out / "phantom.meta.json", "phantom", argv, {{"count", a.count}, {"size", a.size}, {"specs", specs}},
                 a.seed);
  std::cout << "wrote " << a.count << " phantoms to " << a.out.string() << '\n';
}

struct SplitArgs {
  fs::path cohort;
  fs::path out;
  double fraction = 0.7;
  std::uint64_t seed = 0;
};

void run_split(const SplitArgs& a, const std::vector<std::string>& argv) {
  const auto split = cvnet::split_cohort(cvnet::list_subjects(a.cohort), a.fraction, a.seed);
  cvnet::save_split(split, a.fraction, a.seed, a.out);
  write_metadata(fs::path(a.out.string() + ".meta.json"), "split", argv,
                 {{"cohort", a.cohort.string()}, {"fraction", a.fraction}}, a.seed);
  std::cout << "train " << split.train.size() << ", development " << split.development.size() << '\n';
}

struct TrainArgs {
  int stage = 1;
  fs::path config;
  fs::path cohort;
  fs::path split;
  fs::path out;
  std::optional<std::uint64_t> seed;
  fs::path resume;
  bool quiet = false;
};

void write_cascade_description(const fs::path& dir) {
  if (fs::exists(dir / "cascade.json")) return;
  json j{{"format_version", cvnet::kCascadeFormatVersion},
         {"kind", "networks"},
         {"net1", "net1.ckpt"},
         {"net2", "net2.ckpt"},
         {"filter", "keep_largest"},
         {"connectivity", 26},
         {"margin", 0},
         {"threshold", 0.5}};
  std::ofstream os(dir / "cascade.json");
  os << j.dump(2) << '\n';
}

void run_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  if (a.stage != 1 && a.stage != 2) throw cvnet::ConfigError("train: --stage must be 1 or 2");
  const auto stage = static_cast<cvnet::Stage>(a.stage);
  cvnet::TrainConfig cfg = cvnet::default_train_config(stage);
  if (!a.config.empty()) cvnet::from_json(read_json(a.config), cfg);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate(stage);

  std::vector<std::string> train_ids, dev_ids;
  if (!a.split.empty()) {
    const auto split = cvnet::load_split(a.split);
    train_ids = split.train;
    dev_ids = split.development;
  } else {
    train_ids = cvnet::list_subjects(a.cohort);
  }
  const auto train = cvnet::load_cohort(a.cohort, train_ids);
  const auto dev = cvnet::load_cohort(a.cohort, dev_ids);

  fs::create_directories(a.out);
  const std::string name = "net" + std::to_string(a.stage);
  cvnet::TrainOptions options;
  if (!a.resume.empty()) options.resume = a.resume;
  options.checkpoint_dir = a.out / (name + ".states");
  if (!a.quiet) options.progress = &std::cout;
  const auto result = cvnet::train_stage(stage, train, dev, cfg, options);

  cvnet::save_checkpoint(cvnet::model_checkpoint(result.params, cfg.network, cfg.seed), a.out / (name + ".ckpt"));
  cvnet::save_checkpoint(result.state, a.out / (name + ".state.ckpt"));
  std::ofstream log(a.out / (name + ".log.jsonl"));
  result.log.write(log);
  write_cascade_description(a.out);
  write_metadata(a.out / (name + ".meta.json"), "train", argv,
                 {{"stage", a.stage},
                  {"train", cfg},
                  {"train_subjects", train_ids},
                  {"development_subjects", dev_ids},
                  {"stopped_early", result.stopped_early}},
                 cfg.seed);
  std::cout << "stage " << a.stage << ": " << result.log.steps_run() << " steps, checkpoint "
            << (a.out / (name + ".ckpt")).string() << '\n';
}

struct InferArgs {
  std::string model;
  fs::path scan_dir;
  fs::path out_dir;
};

void run_infer(const InferArgs& a, const std::vector<std::string>& argv) {
  const auto model = open_model(a.model);
  const auto scans = open_scans(a.scan_dir, {});
  fs::create_directories(a.out_dir);
  for (const auto& scan : scans) {
    cvnet::LabelVolume pred;
    try {
      pred = cvnet::infer_cascade(model, scan);
    } catch (const cvnet::Error& e) {
      cvnet::rethrow_with_prefix(e, scan.subject_id + ": ");
    }
    fs::create_directories(a.out_dir / scan.subject_id);
    cvnet::save_volume(pred, a.out_dir / scan.subject_id / "pred.vol");
  }
  write_metadata(a.out_dir / "infer.meta.json", "infer", argv,
                 {{"model", a.model}, {"kind", cvnet::to_string(model.kind)}, {"filter", cvnet::to_string(model.filter)},
                  {"margin", model.margin}},
                 std::nullopt);
  std::cout << "wrote " << scans.size() << " predictions to " << a.out_dir.string() << '\n';
}

struct EvalArgs {
  std::string model;
  fs::path cohort;
  fs::path split;
  fs::path report;
  bool spacing = false;
};

void run_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  const auto model = open_model(a.model);
  std::vector<std::string> ids;
  if (!a.split.empty()) ids = cvnet::load_split(a.split).development;
  const auto scans = open_scans(a.cohort, ids);
  cvnet::EvalOptions options;
  options.use_spacing = a.spacing;
  const auto report = cvnet::run_evaluation(model, scans, options);
  cvnet::write_report_table(std::cout, report);
  if (!a.report.empty()) {
    if (a.report.has_parent_path()) fs::create_directories(a.report.parent_path());
    std::ofstream os(a.report);
    if (!os) throw cvnet::IoError(a.report.string() + ": cannot open for writing");
    cvnet::write_report_csv(os, report);
    write_metadata(fs::path(a.report.string() + ".meta.json"), "eval", argv,
                   {{"model", a.model}, {"kind", cvnet::to_string(model.kind)}, {"subjects", scans.size()}},
                   std::nullopt);
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Cascaded V-Net brain tumor segmentation"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic cohort");
  phantom->add_option("--out", pa.out, "Cohort directory")->required();
  phantom->add_option("--count", pa.count, "Number of subjects");
  phantom->add_option("--size", pa.size, "Edge length of the cubic volumes");
  phantom->add_option("--seed", pa.seed, "Random seed");
  phantom->add_option("--prefix", pa.prefix, "Subject id prefix");

  SplitArgs sa;
  auto* split = app.add_subcommand("split", "Split a cohort into training and development subjects");
  split->add_option("--cohort", sa.cohort, "Cohort directory")->required()->check(CLI::ExistingDirectory);
  split->add_option("--out", sa.out, "Split file (JSON)")->required();
  split->add_option("--fraction", sa.fraction, "Training fraction");
  split->add_option("--seed", sa.seed, "Random seed");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train net-1 or net-2");
  train->add_option("--stage", ta.stage, "1 (whole tumor) or 2 (tumor regions)")->required();
  train->add_option("--config", ta.config, "Training config (JSON)")->check(CLI::ExistingFile);
  train->add_option("--cohort", ta.cohort, "Cohort directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--split", ta.split, "Split file; trains on its training side")->check(CLI::ExistingFile);
  train->add_option("--out", ta.out, "Model directory")->required();
  train->add_option("--seed", ta.seed, "Overrides the config seed");
  train->add_option("--resume", ta.resume, "Training state to continue from")->check(CLI::ExistingFile);
  train->add_flag("--quiet", ta.quiet, "No per-step progress");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Segment scans with a trained cascade");
  infer->add_option("--model", ia.model, "Model directory, stub:oracle or stub:empty")->required();
  infer->add_option("--scan-dir", ia.scan_dir, "Subject or cohort directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--out-dir", ia.out_dir, "Prediction directory")->required();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a cascade on a labeled cohort");
  eval->add_option("--model", ea.model, "Model directory, stub:oracle or stub:empty")->required();
  eval->add_option("--cohort", ea.cohort, "Cohort directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", ea.split, "Split file; evaluates its development side")->check(CLI::ExistingFile);
  eval->add_option("--report", ea.report, "CSV report path");
  eval->add_flag("--spacing", ea.spacing, "Hausdorff distance in mm using voxel spacing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(cvnet::ErrorCategory::Usage);
  }

  try {
    if (*phantom) run_phantom(pa, args);
    if (*split) run_split(sa, args);
    if (*train) run_train(ta, args);
    if (*infer) run_infer(ia, args);
    if (*eval) run_eval(ea, args);
  } catch (const cvnet::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
