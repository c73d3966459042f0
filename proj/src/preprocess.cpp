#include "cvnet/preprocess.hpp"

#include <cmath>
#include <sstream>

#include "cvnet/error.hpp"
#include "cvnet/morphology.hpp"

namespace cvnet {

MultiModalScan normalize_scan(const MultiModalScan& scan, NormalizationReport* report) {
  scan.validate();
  const MaskVolume brain = brain_mask(scan);
  MultiModalScan out = scan;
  const std::size_t count = brain.count();
  for (std::size_t m = 0; m < MultiModalScan::kModalities; ++m) {
    const auto& src = scan.modalities[m].data;
    double mean = 0.0, var = 0.0;
    if (count > 0) {
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (brain.data[i]) mean += src[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (brain.data[i]) var += (src[i] - mean) * (src[i] - mean);
      }
      var /= static_cast<double>(count);
    }
    const double sd = std::sqrt(var);
    const bool degenerate = sd < 1e-8;
    const double divisor = degenerate ? 1.0 : sd;
    auto& dst = out.modalities[m].data;
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = brain.data[i] ? static_cast<float>((src[i] - mean) / divisor) : 0.0f;
    }
    if (report) {
      report->mean[m] = mean;
      report->stddev[m] = sd;
      report->unit_divisor[m] = degenerate;
    }
  }
  return out;
}

int sagittal_axis(const std::string& axes) {
  std::istringstream is(axes);
  std::string tok;
  int axis = 0;
  while (is >> tok) {
    if (tok == "LR" || tok == "RL") return axis;
    ++axis;
  }
  throw FormatError("volume lacks a left-right axis-order declaration (axes='" + axes + "')");
}

namespace {

template <typename V>
V reflect(const V& v) {
  const int axis = sagittal_axis(v.axes);
  V out = v;
  const Dims3 d = v.dims;
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        std::size_t sz = z, sy = y, sx = x;
        if (axis == 0) sz = d.d - 1 - z;
        if (axis == 1) sy = d.h - 1 - y;
        if (axis == 2) sx = d.w - 1 - x;
        out(z, y, x) = v(sz, sy, sx);
      }
  return out;
}

}  // namespace

ScalarVolume reflect_sagittal(const ScalarVolume& volume) { return reflect(volume); }
LabelVolume reflect_sagittal(const LabelVolume& volume) { return reflect(volume); }
MaskVolume reflect_sagittal(const MaskVolume& volume) { return reflect(volume); }

MultiModalScan reflect_sagittal(const MultiModalScan& scan) {
  MultiModalScan out = scan;
  for (std::size_t m = 0; m < MultiModalScan::kModalities; ++m) out.modalities[m] = reflect(scan.modalities[m]);
  if (scan.labels) out.labels = reflect(*scan.labels);
  return out;
}

PreparedScan prepare_scan(const MultiModalScan& raw) {
  raw.validate();
  MaskVolume brain = brain_mask(raw);
  return {normalize_scan(raw), std::move(brain)};
}

}  // namespace cvnet
