// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "cvnet/cascade.hpp"
#include "cvnet/checkpoint.hpp"
#include "cvnet/cohort.hpp"
#include "cvnet/loss.hpp"
#include "cvnet/metrics.hpp"
#include "cvnet/morphology.hpp"
#include "cvnet/ops.hpp"
#include "cvnet/phantom.hpp"
#include "cvnet/training.hpp"
#include "cvnet/volume_io.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cvnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool report(int id, const std::string& name, double limit_s, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = seconds_since(t0);
  if (s >= limit_s) {
    o.pass = false;
    o.detail += "; over the time limit";
  }
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << ") " << std::fixed
            << std::setprecision(1) << s << "s: " << o.detail << std::endl;
  return o.pass;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

NetworkConfig tiny_network(std::size_t out_classes, bool flair) {
  NetworkConfig c;
  c.out_classes = out_classes;
  c.levels = 2;
  c.base_channels = 2;
  c.convs_per_level = {1, 1};
  c.flair_concat = flair;
  return c;
}

MaskVolume ball(Dims3 d, double r) {
  MaskVolume m(d, 0);
  const double cz = (d.d - 1) / 2.0, cy = (d.h - 1) / 2.0, cx = (d.w - 1) / 2.0;
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x)
        m(z, y, x) = (z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
  return m;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  std::size_t checked = 0, skipped = 0, failures = 0;
  double worst = 0.0, refined = 0.0;
  std::string where;
  const Dims3 d{8, 8, 8};
  const MaskVolume roi = ball(d, 3.6);
  for (bool flair : {false, true}) {
    const auto cfg = tiny_network(4, flair);
    auto params = build_network<double>(cfg, flair ? 101 : 100);
    const Tensor<double> scan = mask_input(fixture::random_tensor({1, 4, 8, 8, 8}, 102), roi);
    LabelVolume labels = fixture::random_labels(d, 103);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (!roi.data[i]) labels.data[i] = 0;
    auto loss = [&] {
      auto probs = apply_roi_mask(forward(params, cfg, constant(scan), Mode::Train), roi);
      return combined_loss(probs, labels, roi, LossConfig{});
    };
    const auto r = oracle::gradient_check(loss, params.named_trainable(), 1e-3, 1e-4, 1e-6);
    checked += r.checked;
    skipped += r.skipped_kink;
    failures += r.failures;
    refined = std::max(refined, r.refined_max_rel_error);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = r.worst;
    }
  }
  return {failures == 0 && checked > 0,
          std::to_string(checked) + " coordinates checked, " + std::to_string(failures) + " over 1e-4, max rel err " +
              fmt(worst) + (where.empty() ? "" : " at " + where) + ", " + std::to_string(skipped) +
              " skipped at ReLU/max-pool kinks" +
              (failures ? ", failing coordinates at step 1e-5: max rel err " + fmt(refined) : "")};
}

template <typename T>
std::vector<T> gradient_buffers(ModelParams<T>& params, const NetworkConfig& cfg, const Tensor<T>& scan,
                                const MaskVolume& roi, const LabelVolume& labels) {
  auto probs = apply_roi_mask(forward(params, cfg, constant(mask_input(scan, roi)), Mode::Train), roi);
  Var<T> loss = cfg.out_classes == 4
                    ? combined_loss(probs, labels, roi, LossConfig{})
                    : dice_loss_binary(slice_channels(probs, 1, 1), merge_labels(labels).wt, roi);
  params.zero_grad();
  backward(loss);
  std::vector<T> out;
  for (const auto& [name, v] : params.named_trainable()) {
    if (v->has_grad()) out.insert(out.end(), v->grad.data.begin(), v->grad.data.end());
  }
  return out;
}

Outcome mask_blocking() {
  std::size_t trials = 0, mismatches = 0, nonzero = 0;
  std::mt19937_64 rng(200);
  for (std::uint64_t t = 0; t < 24; ++t) {
    const Dims3 d{8, 8, 8};
    MaskVolume roi = t % 3 == 0 ? rasterize(Box3D{{1, 2, 0}, {5, 6, 3 + t % 5}}, MaskVolume(d))
                                : fixture::random_mask(d, 0.1 + 0.035 * t, 210 + t);
    if (!roi.any()) roi.data[0] = 1;
    const auto cfg = tiny_network(t % 2 ? 4 : 2, t % 2 == 0);
    const auto labels = fixture::random_labels(d, 220 + t);
    const auto base = fixture::random_tensor({1, 4, 8, 8, 8}, 230 + t);
    Tensor<double> perturbed = base;
    std::cauchy_distribution<double> wild(0.0, 1e3);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < d.size(); ++i)
        if (!roi.data[i]) perturbed.data[c * d.size() + i] = wild(rng);

    auto p1 = build_network<double>(cfg, 240 + t), p2 = build_network<double>(cfg, 240 + t);
    const auto g1 = gradient_buffers(p1, cfg, base, roi, labels), g2 = gradient_buffers(p2, cfg, perturbed, roi, labels);
    auto f1 = build_network<float>(cfg, 250 + t), f2 = build_network<float>(cfg, 250 + t);
    const auto h1 = gradient_buffers(f1, cfg, base.cast<float>(), roi, labels);
    const auto h2 = gradient_buffers(f2, cfg, perturbed.cast<float>(), roi, labels);
    ++trials;
    const bool same = g1.size() == g2.size() && h1.size() == h2.size() &&
                      std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0 &&
                      std::memcmp(h1.data(), h2.data(), h1.size() * sizeof(float)) == 0;
    if (!same) ++mismatches;
    nonzero += std::count_if(g1.begin(), g1.end(), [](double v) { return v != 0.0; });
  }
  return {mismatches == 0 && nonzero > 0, std::to_string(trials) + " masks (float and double), " +
                                              std::to_string(mismatches) + " gradient buffers differ bitwise"};
}

Outcome dice_algebra() {
  auto ratio = [](const std::vector<double>& p, const std::vector<std::uint8_t>& q) {
    Tensor<double> t({1, 1, 1, 1, p.size()});
    t.data = p;
    MaskVolume labels(Dims3{1, 1, q.size()}, 0), roi(Dims3{1, 1, q.size()}, 1);
    labels.data = q;
    return dice_ratio(constant(t), labels, roi)->value.data[0];
  };
  const double perfect = ratio({1, 0, 1, 1, 0}, {1, 0, 1, 1, 0});
  const double disjoint = ratio({1, 1, 0, 0}, {0, 0, 1, 1});
  const double sixth = ratio({0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 0});
  const bool ok = std::abs(perfect - 0.5) <= 1e-12 && std::abs(disjoint) <= 1e-12 &&
                  std::abs(sixth - 1.0 / 6.0) <= 1e-12;
  return {ok, "perfect " + fmt(perfect) + ", disjoint " + fmt(disjoint) + ", uniform-half " + fmt(sixth)};
}

Outcome oracle_equivalence() {
  std::size_t conv_bad = 0, cc_bad = 0, hd_bad = 0;
  double worst_conv = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    std::mt19937_64 rng(300 + s);
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    const Dims3 d{pick(1, 8), pick(1, 8), pick(1, 8)};

    const std::size_t k = pick(0, 1) ? 3 : 1, cin = pick(1, 3), cout = pick(1, 3);
    const Triple stride{pick(1, 2), pick(1, 2), pick(1, 2)};
    const Triple pad{k == 3 ? pick(0, 1) : 0, k == 3 ? pick(0, 1) : 0, k == 3 ? pick(0, 1) : 0};
    if (d.d + 2 * pad[0] >= k && d.h + 2 * pad[1] >= k && d.w + 2 * pad[2] >= k) {
      const auto x = fixture::random_tensor({1, cin, d.d, d.h, d.w}, 400 + s);
      const auto w = fixture::random_tensor({cout, cin, k, k, k}, 500 + s);
      const auto b = fixture::random_tensor({cout}, 600 + s);
      const auto got = conv3d(constant(x), ConvKernel<double>{constant(w), constant(b)}, stride, pad)->value;
      const auto want = oracle::conv3d(x, w, b.data, stride, pad);
      if (got.shape != want.shape) {
        ++conv_bad;
      } else {
        double worst = 0.0;
        for (std::size_t i = 0; i < got.size(); ++i) {
          const double rel = std::abs(got.data[i] - want.data[i]) / std::max(1.0, std::abs(want.data[i]));
          worst = std::max(worst, rel);
        }
        if (worst > 1e-5) ++conv_bad;
        worst_conv = std::max(worst_conv, worst);
      }
    }

    const auto mask = fixture::random_mask(d, 0.15 + 0.01 * static_cast<double>(s % 40), 700 + s);
    for (auto conn : {Connectivity::Face6, Connectivity::Edge18, Connectivity::Vertex26}) {
      const auto got = connected_components(mask, conn);
      const auto want = oracle::flood_fill(mask, static_cast<int>(conn));
      if (got.count() != static_cast<std::size_t>(oracle::component_count(want)) ||
          !oracle::same_partition(want, got.labels))
        ++cc_bad;
    }

    const auto other = fixture::random_mask(d, 0.3, 800 + s);
    const auto hd = hausdorff(mask, other), hd_want = oracle::hausdorff(mask, other);
    if (hd.has_value() != hd_want.has_value() || (hd && *hd != *hd_want)) ++hd_bad;
  }
  return {conv_bad == 0 && cc_bad == 0 && hd_bad == 0,
          "50 instances: conv mismatches " + std::to_string(conv_bad) + " (max rel " + fmt(worst_conv) +
              "), component mismatches " + std::to_string(cc_bad) + " of 150, hausdorff mismatches " +
              std::to_string(hd_bad)};
}

// --- end-to-end phantom run -------------------------------------------------

constexpr std::uint64_t kRunSeed = 2024;

struct PhantomRun {
  fs::path dir;
  std::vector<MultiModalScan> cohort;
  CohortSplit split;
  CascadeModel model;
  std::array<TrainingLog, 2> logs;
  std::vector<std::string> outputs;  // files compared across reruns
};

TrainConfig phantom_config(Stage stage) {
  TrainConfig cfg = default_train_config(stage);
  cfg.network.levels = 3;
  cfg.network.base_channels = 4;
  cfg.network.convs_per_level = {1, 2, 2};
  cfg.steps = stage == Stage::Net1 ? 500 : 800;
  cfg.seed = kRunSeed + static_cast<std::uint64_t>(stage);
  return cfg;
}

PhantomRun run_phantom_pipeline(const fs::path& dir) {
  PhantomRun run;
  run.dir = dir;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 8; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "phantom-%03zu", i);
    run.cohort.push_back(
        generate_phantom(jittered_phantom_spec({32, 32, 32}, derive_seed(kRunSeed, 7, i)), id));
    save_subject(run.cohort.back(), dir / "cohort");
    ids.push_back(id);
  }
  fs::create_directories(dir / "model");
  fs::create_directories(dir / "pred");
  run.split = split_cohort(ids, 0.7, kRunSeed);
  save_split(run.split, 0.7, kRunSeed, dir / "split.json");
  const auto train = load_cohort(dir / "cohort", run.split.train);
  const auto dev = load_cohort(dir / "cohort", run.split.development);

  for (Stage stage : {Stage::Net1, Stage::Net2}) {
    const auto cfg = phantom_config(stage);
    const std::string name = stage == Stage::Net1 ? "net1" : "net2";
    auto result = train_stage(stage, train, dev, cfg);
    save_checkpoint(model_checkpoint(result.params, cfg.network, cfg.seed), dir / "model" / (name + ".ckpt"));
    save_checkpoint(result.state, dir / "model" / (name + ".state.ckpt"));
    run.outputs.push_back("model/" + name + ".ckpt");
    run.outputs.push_back("model/" + name + ".state.ckpt");
    run.logs[stage == Stage::Net1 ? 0 : 1] = std::move(result.log);
  }
  CascadeModel description;
  description.net1_config = phantom_config(Stage::Net1).network;
  description.net2_config = phantom_config(Stage::Net2).network;
  description.net1 = params_from_checkpoint<float>(load_checkpoint(dir / "model/net1.ckpt"));
  description.net2 = params_from_checkpoint<float>(load_checkpoint(dir / "model/net2.ckpt"));
  save_cascade_model(description, dir / "model");
  run.model = load_cascade_model(dir / "model");

  for (const auto& scan : run.cohort) {
    save_volume(infer_cascade(run.model, scan), dir / "pred" / (scan.subject_id + ".vol"));
    run.outputs.push_back("pred/" + scan.subject_id + ".vol");
  }
  return run;
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

Outcome end_to_end(const PhantomRun& run) {
  std::ostringstream detail;
  bool ok = run.split.train.size() == 6 && run.split.development.size() == 2;
  detail << "split " << run.split.train.size() << "/" << run.split.development.size();
  for (std::size_t i = 0; i < 2; ++i) {
    const auto losses = run.logs[i].step_losses();
    const std::size_t n = run.split.train.size();
    // Epoch-mean losses: the first epoch against the last complete one.
    const std::size_t last_end = losses.size() - losses.size() % n;
    const double first = mean_of(losses, 0, n), last = mean_of(losses, last_end - n, last_end);
    ok = ok && last < first;
    detail << "; net-" << i + 1 << " " << losses.size() << " steps, epoch loss " << fmt(first) << " -> " << fmt(last);
  }
  for (const auto& id : run.split.development) {
    const auto pred = load_label_volume(run.dir / "pred" / (id + ".vol"));
    const auto& scan = *std::find_if(run.cohort.begin(), run.cohort.end(),
                                     [&](const MultiModalScan& s) { return s.subject_id == id; });
    const auto p = merge_labels(pred), g = merge_labels(*scan.labels);
    const double wt = dice(p.wt, g.wt);
    bool nested = true;
    for (std::size_t i = 0; i < pred.size(); ++i)
      nested = nested && p.et.data[i] <= p.tc.data[i] && p.tc.data[i] <= p.wt.data[i];
    ok = ok && wt >= 0.7 && nested;
    detail << "; " << id << " WT dice " << fmt(wt) << " (ET " << fmt(dice(p.et, g.et)) << ", TC "
           << fmt(dice(p.tc, g.tc)) << ")" << (nested ? " nested" : " NOT nested");
  }
  return {ok, detail.str()};
}

Outcome containment(const PhantomRun& run) {
  std::size_t outside = 0, labeled = 0, empty_detections = 0;
  for (const auto& scan : run.cohort) {
    CascadeTrace trace;
    const auto pred = infer_cascade(run.model, scan, &trace);
    if (!trace.roi_box) ++empty_detections;
    for (std::size_t z = 0; z < pred.dims.d; ++z)
      for (std::size_t y = 0; y < pred.dims.h; ++y)
        for (std::size_t x = 0; x < pred.dims.w; ++x) {
          if (pred(z, y, x) == 0) continue;
          ++labeled;
          if (!trace.roi_box || !trace.roi_box->contains(z, y, x)) ++outside;
        }
  }
  std::size_t stub_nonzero = 0;
  const auto stub = CascadeModel::stub(ModelKind::EmptyStub);
  for (const auto& scan : run.cohort) {
    const auto pred = infer_cascade(stub, scan);
    stub_nonzero += std::count_if(pred.data.begin(), pred.data.end(), [](auto v) { return v != 0; });
  }
  return {outside == 0 && stub_nonzero == 0 && labeled > 0,
          std::to_string(labeled) + " labeled voxels over " + std::to_string(run.cohort.size()) + " phantoms, " +
              std::to_string(outside) + " outside the ROI box; empty stub nonzero voxels " +
              std::to_string(stub_nonzero)};
}

Outcome determinism(const PhantomRun& a, const PhantomRun& b) {
  std::size_t differ = 0;
  for (const auto& f : a.outputs)
    if (!fixture::same_bytes(a.dir / f, b.dir / f)) ++differ;

  // Persistence: load then save reproduces the files byte for byte.
  std::size_t roundtrip_bad = 0;
  const fs::path rt = a.dir / "roundtrip";
  fs::create_directories(rt);
  for (const char* name : {"net1.ckpt", "net2.ckpt", "net1.state.ckpt", "net2.state.ckpt"}) {
    save_checkpoint(load_checkpoint(a.dir / "model" / name), rt / name);
    if (!fixture::same_bytes(a.dir / "model" / name, rt / name)) ++roundtrip_bad;
  }
  const auto& id = a.cohort.front().subject_id;
  save_volume(load_label_volume(a.dir / "pred" / (id + ".vol")), rt / "pred.vol");
  if (!fixture::same_bytes(a.dir / "pred" / (id + ".vol"), rt / "pred.vol")) ++roundtrip_bad;
  save_volume(load_scalar_volume(a.dir / "cohort" / id / "flair.vol"), rt / "flair.vol");
  if (!fixture::same_bytes(a.dir / "cohort" / id / "flair.vol", rt / "flair.vol")) ++roundtrip_bad;

  return {differ == 0 && roundtrip_bad == 0 && !a.outputs.empty(),
          std::to_string(a.outputs.size()) + " checkpoint/prediction files compared, " + std::to_string(differ) +
              " differ; " + std::to_string(roundtrip_bad) + " of 6 files fail the load/save round trip"};
}

Outcome metric_sanity(const std::vector<MultiModalScan>& cohort) {
  const auto rep = run_evaluation(CascadeModel::stub(ModelKind::OracleStub), cohort);
  bool ok = rep.scans.size() == cohort.size();
  for (const auto& r : rep.means) {
    ok = ok && r.dice.mean == 1.0 && r.hausdorff.mean == 0.0 && r.hausdorff.excluded == 0;
  }
  std::ostringstream csv;
  write_report_csv(csv, rep);
  std::istringstream is(csv.str());
  std::string header, line;
  std::getline(is, header);
  ok = ok && header == "subject,region,dice,hausdorff,sensitivity,specificity";
  std::vector<std::string> regions;
  while (std::getline(is, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    regions.push_back(line.substr(a + 1, b - a - 1));
  }
  static const char* kOrder[] = {"ET", "WT", "TC"};
  for (std::size_t i = 0; i < regions.size(); ++i) ok = ok && regions[i] == kOrder[i % 3];
  std::ostringstream table;
  write_report_table(table, rep);
  const auto t = table.str();
  ok = ok && t.find("ET") < t.find("WT") && t.find("WT") < t.find("TC");
  return {ok, std::to_string(rep.scans.size()) + " subjects, mean dice ET/WT/TC " + fmt(rep.means[0].dice.mean) + "/" +
                  fmt(rep.means[1].dice.mean) + "/" + fmt(rep.means[2].dice.mean) + ", hausdorff " +
                  fmt(rep.means[0].hausdorff.mean) + "/" + fmt(rep.means[1].hausdorff.mean) + "/" +
                  fmt(rep.means[2].hausdorff.mean) + ", " + std::to_string(regions.size()) +
                  " CSV records in ET/WT/TC order"};
}

}  // namespace

int main() {
  bool all = true;
  all &= report(1, "gradient fidelity", 300, gradient_fidelity);
  all &= report(2, "mask blocking", 60, mask_blocking);
  all &= report(3, "dice ratio algebra", 60, dice_algebra);
  all &= report(4, "oracle equivalence", 120, oracle_equivalence);

  const fs::path root = fixture::temp_dir("acceptance");
  std::optional<PhantomRun> first, second;
  all &= report(5, "end-to-end phantom run", 1800, [&] {
    first = run_phantom_pipeline(root / "run-a");
    return end_to_end(*first);
  });
  all &= report(6, "cascade containment", 60, [&]() -> Outcome {
    if (!first) return {false, "no trained model from criterion 5"};
    return containment(*first);
  });
  all &= report(7, "determinism and persistence", 1800, [&]() -> Outcome {
    if (!first) return {false, "criterion 5 did not produce a run"};
    second = run_phantom_pipeline(root / "run-b");
    return determinism(*first, *second);
  });
  all &= report(8, "metric sanity", 60, [&] {
    return metric_sanity(first ? first->cohort : fixture::phantom_cohort(8, 32, kRunSeed));
  });
  fs::remove_all(root);
  std::cout << (all ? "ALL CRITERIA PASS" : "SOME CRITERIA FAIL") << std::endl;
  return all ? 0 : 1;
}
