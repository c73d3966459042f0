#include "cvnet/loss.hpp"

#include <algorithm>

#include "cvnet/error.hpp"
#include "cvnet/ops.hpp"

namespace cvnet {

std::size_t channel_for_label(std::uint8_t label) {
  for (std::size_t c = 0; c < kChannelLabels.size(); ++c) {
    if (kChannelLabels[c] == label) return c;
  }
  throw FormatError("unknown label value " + std::to_string(label));
}

bool RegionSpec::contains(std::uint8_t label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

RegionSpec region_spec(Region region) {
  switch (region) {
    case Region::ET: return {Region::ET, "ET", {4}};
    case Region::WT: return {Region::WT, "WT", {1, 2, 4}};
    case Region::TC: return {Region::TC, "TC", {1, 4}};
  }
  throw ConfigError("unknown region");
}

RegionSpec region_spec(const std::string& name) {
  if (name == "ET") return region_spec(Region::ET);
  if (name == "WT") return region_spec(Region::WT);
  if (name == "TC") return region_spec(Region::TC);
  throw ConfigError("unknown region '" + name + "' (expected ET, WT or TC)");
}

namespace {

void require_spatial(const Shape& s, const Dims3& d, const char* op) {
  require_rank5(s, op);
  if (s[2] != d.d || s[3] != d.h || s[4] != d.w) {
    throw ShapeError(std::string(op) + ": tensor " + to_string(s) + " does not match volume " +
                     to_string(d));
  }
}

// 1 - (2*I + eps) / (S + eps) where I = sum(p*q) and S = sum(p) + sum(q),
// with q a constant target and both restricted by roi.
template <typename T>
Var<T> smoothed_dice_loss(const Var<T>& p, const Tensor<T>& target, const Tensor<T>& roi,
                          double epsilon) {
  Tensor<T> q = target;
  for (std::size_t i = 0; i < q.size(); ++i) q.data[i] *= roi.data[i];
  double q_sum = 0.0;
  for (auto v : q.data) q_sum += v;
  Var<T> pr = mul(p, constant(roi));
  Var<T> inter = sum(mul(pr, constant(std::move(q))));
  Var<T> num = add_scalar(scale(inter, T{2}), static_cast<T>(epsilon));
  Var<T> den = add_scalar(sum(pr), static_cast<T>(q_sum + epsilon));
  return add_scalar(scale(div(num, den), T{-1}), T{1});
}

}  // namespace

template <typename T>
Var<T> apply_roi_mask(const Var<T>& probs, const MaskVolume& mask) {
  require_spatial(probs->shape(), mask.dims, "apply_roi_mask");
  require_binary(mask, "apply_roi_mask");
  const Shape& s = probs->shape();
  const std::size_t N = s[0], C = s[1], sp = mask.dims.size();
  Tensor<T> keep(s), fill(s);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < sp; ++i) {
        const bool inside = mask.data[i] != 0;
        keep.data[(n * C + c) * sp + i] = inside ? T{1} : T{0};
        fill.data[(n * C + c) * sp + i] = (!inside && c == kBackgroundChannel) ? T{1} : T{0};
      }
  return add(mul(probs, constant(std::move(keep))), constant(std::move(fill)));
}

template <typename T>
Tensor<T> mask_input(const Tensor<T>& input, const MaskVolume& mask) {
  require_spatial(input.shape, mask.dims, "mask_input");
  require_binary(mask, "mask_input");
  Tensor<T> out = input;
  const std::size_t sp = mask.dims.size(), planes = input.shape[0] * input.shape[1];
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < sp; ++i)
      if (mask.data[i] == 0) out.data[p * sp + i] = T{0};
  return out;
}

template <typename T>
Var<T> dice_ratio(const Var<T>& tumor, const MaskVolume& labels, const MaskVolume& roi) {
  require_spatial(tumor->shape(), labels.dims, "dice_ratio");
  require_binary(labels, "dice_ratio labels");
  require_binary(roi, "dice_ratio roi");
  if (roi.dims != labels.dims) throw ShapeError("dice_ratio: roi and labels differ in dims");
  Tensor<T> r = mask_to_tensor<T>(roi);
  Tensor<T> q = mask_to_tensor<T>(labels);
  for (std::size_t i = 0; i < q.size(); ++i) q.data[i] *= r.data[i];
  double q_sum = 0.0;
  for (auto v : q.data) q_sum += v;
  Var<T> pr = mul(tumor, constant(std::move(r)));
  Var<T> inter = sum(mul(pr, constant(std::move(q))));
  return div(inter, add_scalar(sum(pr), static_cast<T>(q_sum)));
}

template <typename T>
Var<T> dice_loss_binary(const Var<T>& tumor, const MaskVolume& labels, const MaskVolume& roi,
                        double epsilon) {
  require_spatial(tumor->shape(), labels.dims, "dice_loss_binary");
  if (tumor->shape()[1] != 1) throw ShapeError("dice_loss_binary: expects a single tumor channel");
  require_binary(labels, "dice_loss_binary labels");
  require_binary(roi, "dice_loss_binary roi");
  if (roi.dims != labels.dims) throw ShapeError("dice_loss_binary: roi and labels differ in dims");
  return smoothed_dice_loss(tumor, mask_to_tensor<T>(labels), mask_to_tensor<T>(roi), epsilon);
}

template <typename T>
Var<T> soft_dice_region(const Var<T>& probs, const LabelVolume& labels, const RegionSpec& region,
                        const MaskVolume& roi, double epsilon) {
  require_spatial(probs->shape(), labels.dims, "soft_dice_region");
  if (probs->shape()[1] != kChannelLabels.size()) {
    throw ShapeError("soft_dice_region: expects 4 class channels, got " +
                     std::to_string(probs->shape()[1]));
  }
  require_binary(roi, "soft_dice_region roi");
  std::vector<std::size_t> channels;
  for (auto l : region.labels) channels.push_back(channel_for_label(l));
  Tensor<T> target({1, 1, labels.dims.d, labels.dims.h, labels.dims.w});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    target.data[i] = region.contains(labels.data[i]) ? T{1} : T{0};
  }
  Var<T> p = sum_channels(probs, std::span<const std::size_t>(channels));
  return smoothed_dice_loss(p, target, mask_to_tensor<T>(roi), epsilon);
}

template <typename T>
Var<T> cross_entropy(const Var<T>& probs, const LabelVolume& labels, const MaskVolume& roi,
                     const LossConfig& cfg) {
  require_spatial(probs->shape(), labels.dims, "cross_entropy");
  require_binary(roi, "cross_entropy roi");
  const std::size_t C = probs->shape()[1];
  const std::size_t sp = labels.size();
  const std::size_t count = roi.count();
  if (count == 0) throw ShapeError("cross_entropy: empty ROI, no voxels to average");
  Tensor<T> onehot(probs->shape());
  for (std::size_t i = 0; i < sp; ++i) {
    const std::size_t c = channel_for_label(labels.data[i]);
    if (c >= C) {
      throw ShapeError("cross_entropy: label " + std::to_string(labels.data[i]) +
                       " has no channel among " + std::to_string(C));
    }
    onehot.data[c * sp + i] = T{1};
  }
  std::vector<std::size_t> all(C);
  for (std::size_t c = 0; c < C; ++c) all[c] = c;
  Var<T> p_true = sum_channels(mul(probs, constant(std::move(onehot))), std::span<const std::size_t>(all));
  Var<T> logp = log_clamped(p_true, static_cast<T>(cfg.log_floor));
  Var<T> total = sum(mul(logp, constant(mask_to_tensor<T>(roi))));
  const double factor = cfg.cross_entropy_mean ? -1.0 / static_cast<double>(count) : -1.0;
  return scale(total, static_cast<T>(factor));
}

template <typename T>
Var<T> combined_loss(const Var<T>& probs, const LabelVolume& labels, const MaskVolume& roi,
                     const LossConfig& cfg) {
  Var<T> loss = cross_entropy(probs, labels, roi, cfg);
  if (cfg.dice_weight == 0.0) return loss;
  Var<T> dice = add(add(soft_dice_region(probs, labels, region_spec(Region::WT), roi, cfg.epsilon),
                        soft_dice_region(probs, labels, region_spec(Region::ET), roi, cfg.epsilon)),
                    soft_dice_region(probs, labels, region_spec(Region::TC), roi, cfg.epsilon));
  return add(loss, scale(dice, static_cast<T>(cfg.dice_weight)));
}

#define CVNET_INSTANTIATE(T)                                                                         \
  template Var<T> apply_roi_mask<T>(const Var<T>&, const MaskVolume&);                               \
  template Tensor<T> mask_input<T>(const Tensor<T>&, const MaskVolume&);                             \
  template Var<T> dice_ratio<T>(const Var<T>&, const MaskVolume&, const MaskVolume&);                \
  template Var<T> dice_loss_binary<T>(const Var<T>&, const MaskVolume&, const MaskVolume&, double);  \
  template Var<T> soft_dice_region<T>(const Var<T>&, const LabelVolume&, const RegionSpec&,          \
                                      const MaskVolume&, double);                                    \
  template Var<T> cross_entropy<T>(const Var<T>&, const LabelVolume&, const MaskVolume&,             \
                                   const LossConfig&);                                               \
  template Var<T> combined_loss<T>(const Var<T>&, const LabelVolume&, const MaskVolume&,             \
                                   const LossConfig&);

CVNET_INSTANTIATE(float)
CVNET_INSTANTIATE(double)
#undef CVNET_INSTANTIATE

}  // namespace cvnet
