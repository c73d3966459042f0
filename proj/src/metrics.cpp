#include "cvnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "cvnet/error.hpp"

namespace cvnet {

const MaskVolume& RegionMasks::get(Region r) const {
  switch (r) {
    case Region::ET: return et;
    case Region::WT: return wt;
    case Region::TC: return tc;
  }
  throw ConfigError("unknown region");
}

RegionMasks merge_labels(const LabelVolume& seg) {
  require_brats_labels(seg, "merge_labels");
  RegionMasks out{make_mask_like(seg), make_mask_like(seg), make_mask_like(seg)};
  for (std::size_t i = 0; i < seg.size(); ++i) {
    const auto v = seg.data[i];
    out.wt.data[i] = v != 0;
    out.tc.data[i] = v == 1 || v == 4;
    out.et.data[i] = v == 4;
  }
  return out;
}

namespace {

void require_same_dims(const MaskVolume& a, const MaskVolume& b, const char* op) {
  if (a.dims != b.dims) {
    throw ShapeError(std::string(op) + ": dims " + to_string(a.dims) + " vs " + to_string(b.dims));
  }
}

// Exact squared distance transform along one line (lower envelope of
// parabolas). `f` holds squared distances, infinity for no feature.
void envelope_1d(std::vector<double>& f, double step, std::vector<double>& out, std::vector<int>& v,
                 std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    const double xq = q * step;
    while (k >= 0) {
      const double xv = v[k] * step;
      const double s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -inf : ((f[q] + xq * xq) - (f[v[k - 1]] + (v[k - 1] * step) * (v[k - 1] * step))) /
                                 (2.0 * (xq - v[k - 1] * step));
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), inf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    const double xq = q * step;
    while (z[j + 1] < xq) ++j;
    const double dx = (q - v[j]) * step;
    out[q] = f[v[j]] + dx * dx;
  }
}

// Squared Euclidean distance from each voxel to the nearest feature voxel.
std::vector<double> squared_distance_map(const MaskVolume& features, const Spacing& sp) {
  const Dims3 d = features.dims;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) dist[i] = features.data[i] ? 0.0 : inf;
  const std::size_t longest = std::max({d.d, d.h, d.w});
  std::vector<double> line(longest), out(longest), z(longest + 1);
  std::vector<int> v(longest);
  auto pass = [&](std::size_t n, std::size_t stride, std::size_t count, auto base_of, double step) {
    line.resize(n);
    out.resize(n);
    for (std::size_t b = 0; b < count; ++b) {
      const std::size_t base = base_of(b);
      for (std::size_t i = 0; i < n; ++i) line[i] = dist[base + i * stride];
      envelope_1d(line, step, out, v, z);
      for (std::size_t i = 0; i < n; ++i) dist[base + i * stride] = out[i];
    }
  };
  // Along width, then height, then depth.
  pass(d.w, 1, d.d * d.h, [&](std::size_t b) { return b * d.w; }, sp[2]);
  pass(d.h, d.w, d.d * d.w, [&](std::size_t b) { return (b / d.w) * d.h * d.w + b % d.w; }, sp[1]);
  pass(d.d, d.h * d.w, d.h * d.w, [&](std::size_t b) { return b; }, sp[0]);
  return dist;
}

std::vector<double> directed_distances(const std::vector<std::array<std::size_t, 3>>& from,
                                       const std::vector<double>& sq_to, const Dims3& d) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& p : from) out.push_back(std::sqrt(sq_to[(p[0] * d.h + p[1]) * d.w + p[2]]));
  return out;
}

double percentile95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  // Nearest-rank percentile.
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size())));
  return v[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace

double dice(const MaskVolume& a, const MaskVolume& b) {
  require_same_dims(a, b, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<std::array<std::size_t, 3>> boundary_voxels(const MaskVolume& mask) {
  const Dims3 d = mask.dims;
  std::vector<std::array<std::size_t, 3>> out;
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        if (!mask(z, y, x)) continue;
        const bool edge = z == 0 || y == 0 || x == 0 || z + 1 == d.d || y + 1 == d.h || x + 1 == d.w;
        if (edge || !mask(z - 1, y, x) || !mask(z + 1, y, x) || !mask(z, y - 1, x) ||
            !mask(z, y + 1, x) || !mask(z, y, x - 1) || !mask(z, y, x + 1)) {
          out.push_back({z, y, x});
        }
      }
  return out;
}

std::optional<double> hausdorff(const MaskVolume& a, const MaskVolume& b,
                                const std::optional<Spacing>& spacing, HausdorffKind kind) {
  require_same_dims(a, b, "hausdorff");
  const auto ba = boundary_voxels(a);
  const auto bb = boundary_voxels(b);
  if (ba.empty() || bb.empty()) return std::nullopt;
  const Spacing sp = spacing.value_or(Spacing{1.0, 1.0, 1.0});
  auto features = [&](const std::vector<std::array<std::size_t, 3>>& pts) {
    MaskVolume m(a.dims, 0);
    for (const auto& p : pts) m(p[0], p[1], p[2]) = 1;
    return m;
  };
  const auto to_b = directed_distances(ba, squared_distance_map(features(bb), sp), a.dims);
  const auto to_a = directed_distances(bb, squared_distance_map(features(ba), sp), a.dims);
  if (kind == HausdorffKind::Percentile95) return std::max(percentile95(to_b), percentile95(to_a));
  return std::max(*std::max_element(to_b.begin(), to_b.end()), *std::max_element(to_a.begin(), to_a.end()));
}

SensSpec sensitivity_specificity(const MaskVolume& pred, const MaskVolume& gt, const MaskVolume* eval_domain) {
  require_same_dims(pred, gt, "sensitivity_specificity");
  if (eval_domain) require_same_dims(pred, *eval_domain, "sensitivity_specificity");
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (eval_domain && !eval_domain->data[i]) continue;
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    tp += p && g;
    fn += !p && g;
    tn += !p && !g;
    fp += p && !g;
  }
  SensSpec out;
  if (tp + fn > 0) out.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tn + fp > 0) out.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return out;
}

ScanMetrics evaluate_scan(const std::string& subject_id, const LabelVolume& pred, const LabelVolume& gt,
                          const EvalOptions& options) {
  if (pred.dims != gt.dims) {
    throw ShapeError("subject " + subject_id + ": prediction dims " + to_string(pred.dims) +
                     " differ from ground truth " + to_string(gt.dims));
  }
  const RegionMasks p = merge_labels(pred);
  const RegionMasks g = merge_labels(gt);
  ScanMetrics out;
  out.subject_id = subject_id;
  for (std::size_t r = 0; r < kReportRegions.size(); ++r) {
    const MaskVolume& pm = p.get(kReportRegions[r]);
    const MaskVolume& gm = g.get(kReportRegions[r]);
    auto& m = out.regions[r];
    m.dice = dice(pm, gm);
    m.hausdorff = hausdorff(pm, gm, options.use_spacing ? std::optional<Spacing>(gt.spacing) : std::nullopt,
                            options.hausdorff_kind);
    const SensSpec ss = sensitivity_specificity(pm, gm);
    m.sensitivity = ss.sensitivity;
    m.specificity = ss.specificity;
  }
  return out;
}

namespace {

void accumulate(MetricSummary& s, const std::optional<double>& v) {
  if (v) {
    s.mean += *v;
    ++s.count;
  } else {
    ++s.excluded;
  }
}

void finish(MetricSummary& s) {
  s.mean = s.count ? s.mean / static_cast<double>(s.count) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

MetricsReport evaluate_cohort(const std::vector<CohortCase>& cases, const EvalOptions& options) {
  MetricsReport report;
  for (const auto& c : cases) report.scans.push_back(evaluate_scan(c.subject_id, c.pred, c.gt, options));
  std::sort(report.scans.begin(), report.scans.end(),
            [](const ScanMetrics& a, const ScanMetrics& b) { return a.subject_id < b.subject_id; });
  for (const auto& s : report.scans) {
    for (std::size_t r = 0; r < 3; ++r) {
      accumulate(report.means[r].dice, s.regions[r].dice);
      accumulate(report.means[r].hausdorff, s.regions[r].hausdorff);
      accumulate(report.means[r].sensitivity, s.regions[r].sensitivity);
      accumulate(report.means[r].specificity, s.regions[r].specificity);
    }
  }
  for (auto& m : report.means) {
    finish(m.dice);
    finish(m.hausdorff);
    finish(m.sensitivity);
    finish(m.specificity);
  }
  return report;
}

namespace {

std::string fmt(const std::optional<double>& v, int precision = 3) {
  if (!v || std::isnan(*v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

std::string exact(const std::optional<double>& v) {
  if (!v || std::isnan(*v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

}  // namespace

void write_report_table(std::ostream& os, const MetricsReport& report) {
  auto row = [&](const std::string& name, auto get) {
    os << std::left << std::setw(16) << name;
    for (std::size_t r = 0; r < 3; ++r) os << std::right << std::setw(9) << get(r, 0);
    os << "  |";
    for (std::size_t r = 0; r < 3; ++r) os << std::right << std::setw(9) << get(r, 1);
    os << "\n";
  };
  auto header = [&](const char* left, const char* right) {
    os << std::left << std::setw(16) << "" << std::setw(27) << left << "  | " << right << "\n";
    os << std::left << std::setw(16) << "";
    for (int k = 0; k < 2; ++k) {
      for (Region r : kReportRegions) os << std::right << std::setw(9) << region_spec(r).name;
      if (k == 0) os << "  |";
    }
    os << "\n";
  };
  header("Dice", "Hausdorff");
  for (const auto& s : report.scans) {
    row(s.subject_id, [&](std::size_t r, int k) {
      return k == 0 ? fmt(s.regions[r].dice) : fmt(s.regions[r].hausdorff);
    });
  }
  row("mean", [&](std::size_t r, int k) {
    return fmt(k == 0 ? report.means[r].dice.mean : report.means[r].hausdorff.mean);
  });
  os << "\n";
  header("Sensitivity", "Specificity");
  for (const auto& s : report.scans) {
    row(s.subject_id, [&](std::size_t r, int k) {
      return k == 0 ? fmt(s.regions[r].sensitivity) : fmt(s.regions[r].specificity);
    });
  }
  row("mean", [&](std::size_t r, int k) {
    return fmt(k == 0 ? report.means[r].sensitivity.mean : report.means[r].specificity.mean);
  });
}

void write_report_csv(std::ostream& os, const MetricsReport& report) {
  os << "subject,region,dice,hausdorff,sensitivity,specificity\n";
  for (const auto& s : report.scans) {
    for (std::size_t r = 0; r < 3; ++r) {
      const auto& m = s.regions[r];
      os << s.subject_id << ',' << region_spec(kReportRegions[r]).name << ',' << exact(m.dice) << ','
         << exact(m.hausdorff) << ',' << exact(m.sensitivity) << ',' << exact(m.specificity) << '\n';
    }
  }
  for (std::size_t r = 0; r < 3; ++r) {
    const auto& m = report.means[r];
    os << "mean," << region_spec(kReportRegions[r]).name << ',' << exact(m.dice.mean) << ','
       << exact(m.hausdorff.mean) << ',' << exact(m.sensitivity.mean) << ',' << exact(m.specificity.mean)
       << '\n';
  }
}

}  // namespace cvnet
