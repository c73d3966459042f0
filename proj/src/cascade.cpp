#include "cvnet/cascade.hpp"

#include <fstream>

#include "cvnet/checkpoint.hpp"
#include "cvnet/error.hpp"
#include "cvnet/loss.hpp"
#include "cvnet/preprocess.hpp"

namespace cvnet {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Networks: return "networks";
    case ModelKind::OracleStub: return "oracle";
    case ModelKind::EmptyStub: return "empty";
  }
  return "networks";
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "networks") return ModelKind::Networks;
  if (text == "oracle") return ModelKind::OracleStub;
  if (text == "empty") return ModelKind::EmptyStub;
  throw ConfigError("unknown model kind '" + text + "' (expected networks, oracle or empty)");
}

CascadeModel CascadeModel::stub(ModelKind kind) {
  CascadeModel m;
  m.kind = kind;
  m.net1_config.out_classes = 2;
  m.net2_config.out_classes = 4;
  return m;
}

void CascadeModel::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("cascade: threshold must lie in (0,1)");
  if (kind != ModelKind::Networks) return;
  if (net1_config.out_classes != 2) {
    throw ConfigError("cascade: net-1 must have 2 output classes, has " + std::to_string(net1_config.out_classes));
  }
  if (net2_config.out_classes != 4) {
    throw ConfigError("cascade: net-2 must have 4 output classes, has " + std::to_string(net2_config.out_classes));
  }
  net1_config.validate();
  net2_config.validate();
}

void save_cascade_model(const CascadeModel& model, const std::filesystem::path& dir) {
  model.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format_version"] = model.format_version;
  j["kind"] = to_string(model.kind);
  j["filter"] = to_string(model.filter);
  j["connectivity"] = static_cast<int>(model.connectivity);
  j["margin"] = model.margin;
  j["threshold"] = model.threshold;
  if (model.kind == ModelKind::Networks) {
    j["net1"] = "net1.ckpt";
    j["net2"] = "net2.ckpt";
    save_checkpoint(model_checkpoint(model.net1, model.net1_config, 0), dir / "net1.ckpt");
    save_checkpoint(model_checkpoint(model.net2, model.net2_config, 0), dir / "net2.ckpt");
  }
  std::ofstream os(dir / "cascade.json");
  if (!os) throw IoError((dir / "cascade.json").string() + ": cannot open for writing");
  os << j.dump(2) << '\n';
}

namespace {

Connectivity parse_connectivity(int n) {
  switch (n) {
    case 6: return Connectivity::Face6;
    case 18: return Connectivity::Edge18;
    case 26: return Connectivity::Vertex26;
    default: throw ConfigError("cascade: connectivity must be 6, 18 or 26");
  }
}

}  // namespace

CascadeModel load_cascade_model(const std::filesystem::path& dir) {
  const auto path = dir / "cascade.json";
  std::ifstream is(path);
  if (!is) throw IoError(path.string() + ": cannot open model description");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  CascadeModel model;
  try {
    model.format_version = j.value("format_version", kCascadeFormatVersion);
    if (model.format_version != kCascadeFormatVersion) {
      throw FormatError(path.string() + ": unsupported format version " + std::to_string(model.format_version));
    }
    model.kind = parse_model_kind(j.value("kind", std::string("networks")));
    model.filter = parse_filter_policy(j.value("filter", std::string("keep_largest")));
    model.connectivity = parse_connectivity(j.value("connectivity", 26));
    model.margin = j.value("margin", std::size_t{0});
    model.threshold = j.value("threshold", 0.5);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (model.kind == ModelKind::Networks) {
    const auto net1 = dir / j.value("net1", std::string("net1.ckpt"));
    const auto net2 = dir / j.value("net2", std::string("net2.ckpt"));
    model.net1 = params_from_checkpoint<float>(load_checkpoint(net1), &model.net1_config);
    model.net2 = params_from_checkpoint<float>(load_checkpoint(net2), &model.net2_config);
  } else {
    model.net1_config.out_classes = 2;
    model.net2_config.out_classes = 4;
  }
  model.validate();
  return model;
}

namespace {

Tensor<float> run_masked(ModelParams<float>& params, const NetworkConfig& cfg, const MultiModalScan& scan,
                         const MaskVolume& roi) {
  Var<float> x = constant(mask_input(scan_to_tensor<float>(scan), roi));
  Var<float> probs = forward(params, cfg, x, Mode::Infer);
  return apply_roi_mask(probs, roi)->value;
}

}  // namespace

Tensor<float> run_net1(ModelParams<float>& params, const NetworkConfig& cfg, const MultiModalScan& scan,
                       const MaskVolume& brain) {
  return run_masked(params, cfg, scan, brain);
}

Tensor<float> run_net2(ModelParams<float>& params, const NetworkConfig& cfg, const MultiModalScan& scan,
                       const MaskVolume& roi) {
  return run_masked(params, cfg, scan, roi);
}

MaskVolume threshold_tumor(const Tensor<float>& probs, const Volume<std::uint8_t>& like, double threshold) {
  require_rank5(probs.shape, "threshold_tumor");
  if (probs.shape[1] != 2) throw ShapeError("threshold_tumor: expected 2 channels, got " + to_string(probs.shape));
  MaskVolume out = make_mask_like(like);
  const std::size_t sp = like.dims.size();
  if (probs.spatial_size() != sp) throw ShapeError("threshold_tumor: probability map does not match the volume");
  for (std::size_t i = 0; i < sp; ++i) out.data[i] = probs.data[sp + i] > threshold ? 1 : 0;
  return out;
}

LabelVolume argmax_labels(const Tensor<float>& probs, const Volume<std::uint8_t>& like) {
  require_rank5(probs.shape, "argmax_labels");
  const std::size_t C = probs.shape[1], sp = like.dims.size();
  if (C != kChannelLabels.size()) throw ShapeError("argmax_labels: expected 4 channels, got " + to_string(probs.shape));
  if (probs.spatial_size() != sp) throw ShapeError("argmax_labels: probability map does not match the volume");
  LabelVolume out(like.dims, 0);
  out.spacing = like.spacing;
  out.axes = like.axes;
  for (std::size_t i = 0; i < sp; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (probs.data[c * sp + i] > probs.data[best * sp + i]) best = c;
    }
    out.data[i] = kChannelLabels[best];
  }
  return out;
}

namespace {

MaskVolume oracle_detection(const MultiModalScan& scan) {
  if (!scan.labels) throw ConfigError("oracle stub needs ground-truth labels for " + scan.subject_id);
  MaskVolume m = make_mask_like(*scan.labels);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = scan.labels->data[i] != 0 ? 1 : 0;
  return m;
}

}  // namespace

LabelVolume infer_cascade(const CascadeModel& model, const MultiModalScan& scan, CascadeTrace* trace) {
  model.validate();
  PreparedScan prep = prepare_scan(scan);
  const Dims3 dims = prep.brain.dims;
  CascadeTrace local;
  CascadeTrace& tr = trace ? *trace : local;

  // Stage 1: whole-tumor detection.
  switch (model.kind) {
    case ModelKind::Networks: {
      ModelParams<float> net1 = model.net1.clone();
      try {
        tr.detection = threshold_tumor(run_net1(net1, model.net1_config, prep.scan, prep.brain), prep.brain,
                                       model.threshold);
      } catch (const ShapeError& e) {
        throw ShapeError(std::string("net-1: ") + e.what());
      }
      break;
    }
    case ModelKind::OracleStub:
      tr.detection = oracle_detection(scan);
      break;
    case ModelKind::EmptyStub:
      tr.detection = make_mask_like(prep.brain);
      break;
  }

  tr.filtered = filter_small_components(connected_components(tr.detection, model.connectivity), model.filter);
  tr.roi_box = bounding_box(tr.filtered, model.margin);
  LabelVolume background(dims, 0);
  background.spacing = prep.brain.spacing;
  background.axes = prep.brain.axes;
  if (!tr.roi_box) {
    tr.roi = make_mask_like(prep.brain);
    return background;
  }
  tr.roi = rasterize(*tr.roi_box, prep.brain);

  // Stage 2: region labels inside the box.
  if (model.kind == ModelKind::OracleStub) {
    LabelVolume out = background;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      if (tr.roi.data[i]) out.data[i] = scan.labels->data[i];
    }
    return out;
  }
  ModelParams<float> net2 = model.net2.clone();
  try {
    return argmax_labels(run_net2(net2, model.net2_config, prep.scan, tr.roi), prep.brain);
  } catch (const ShapeError& e) {
    throw ShapeError(std::string("net-2: ") + e.what());
  }
}

MetricsReport run_evaluation(const CascadeModel& model, const std::vector<MultiModalScan>& cohort,
                             const EvalOptions& options) {
  std::vector<CohortCase> cases;
  cases.reserve(cohort.size());
  for (const auto& scan : cohort) {
    if (!scan.labels) throw ConfigError(scan.subject_id + ": evaluation needs ground-truth labels");
    try {
      cases.push_back({scan.subject_id, infer_cascade(model, scan), *scan.labels});
    } catch (const Error& e) {
      rethrow_with_prefix(e, scan.subject_id + ": ");
    }
  }
  return evaluate_cohort(cases, options);
}

}  // namespace cvnet
