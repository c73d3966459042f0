#include "cvnet/vnet.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "cvnet/error.hpp"

namespace cvnet {

void NetworkConfig::validate() const {
  if (levels < 1) throw ConfigError("network: levels must be >= 1");
  if (base_channels < 1) throw ConfigError("network: base_channels must be >= 1");
  if (in_channels < 1) throw ConfigError("network: in_channels must be >= 1");
  if (out_classes < 1) throw ConfigError("network: out_classes must be >= 1");
  if (convs_per_level.size() != levels) {
    throw ConfigError("network: convs_per_level has " + std::to_string(convs_per_level.size()) +
                      " entries for " + std::to_string(levels) + " levels");
  }
  for (auto n : convs_per_level) {
    if (n < 1) throw ConfigError("network: every level needs at least one convolution");
  }
  if (flair_concat && flair_channel >= in_channels) {
    throw ConfigError("network: flair_channel outside the input channels");
  }
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ConfigError("network: bn_momentum must lie in (0,1)");
  if (!(bn_epsilon > 0.0)) throw ConfigError("network: bn_epsilon must be positive");
}

void to_json(nlohmann::json& j, const NetworkConfig& cfg) {
  j = nlohmann::json{
      {"in_channels", cfg.in_channels},
      {"out_classes", cfg.out_classes},
      {"levels", cfg.levels},
      {"base_channels", cfg.base_channels},
      {"convs_per_level", cfg.convs_per_level},
      {"flair_concat", cfg.flair_concat},
      {"flair_block", cfg.flair_block},
      {"flair_channel", cfg.flair_channel},
      {"upsample", cfg.upsample == UpsampleKind::Learned ? "learned" : "repeat"},
      {"downsample", cfg.downsample == DownsampleKind::StridedConv ? "conv" : "maxpool"},
      {"bn_momentum", cfg.bn_momentum},
      {"bn_epsilon", cfg.bn_epsilon},
  };
}

void from_json(const nlohmann::json& j, NetworkConfig& cfg) {
  try {
    cfg.in_channels = j.value("in_channels", cfg.in_channels);
    cfg.out_classes = j.value("out_classes", cfg.out_classes);
    cfg.levels = j.value("levels", cfg.levels);
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.convs_per_level = j.value("convs_per_level", cfg.convs_per_level);
    cfg.flair_concat = j.value("flair_concat", cfg.flair_concat);
    cfg.flair_block = j.value("flair_block", cfg.flair_block);
    cfg.flair_channel = j.value("flair_channel", cfg.flair_channel);
    const std::string up = j.value("upsample", std::string(cfg.upsample == UpsampleKind::Learned ? "learned" : "repeat"));
    if (up == "learned") {
      cfg.upsample = UpsampleKind::Learned;
    } else if (up == "repeat") {
      cfg.upsample = UpsampleKind::Repeat;
    } else {
      throw ConfigError("network: unknown upsample kind '" + up + "'");
    }
    const std::string down = j.value("downsample", std::string(cfg.downsample == DownsampleKind::StridedConv ? "conv" : "maxpool"));
    if (down == "conv") {
      cfg.downsample = DownsampleKind::StridedConv;
    } else if (down == "maxpool") {
      cfg.downsample = DownsampleKind::MaxPool;
    } else {
      throw ConfigError("network: unknown downsample kind '" + down + "'");
    }
    cfg.bn_momentum = j.value("bn_momentum", cfg.bn_momentum);
    cfg.bn_epsilon = j.value("bn_epsilon", cfg.bn_epsilon);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
}

// --- ModelParams ----------------------------------------------------------

template <typename T>
ConvKernel<T>& ModelParams<T>::conv(const std::string& name) {
  auto it = entries.find(name);
  if (it == entries.end() || !std::holds_alternative<ConvKernel<T>>(it->second)) {
    throw ShapeError("model has no convolution named '" + name + "'");
  }
  return std::get<ConvKernel<T>>(it->second);
}

template <typename T>
const ConvKernel<T>& ModelParams<T>::conv(const std::string& name) const {
  return const_cast<ModelParams*>(this)->conv(name);
}

template <typename T>
BatchNormState<T>& ModelParams<T>::norm(const std::string& name) {
  auto it = entries.find(name);
  if (it == entries.end() || !std::holds_alternative<BatchNormState<T>>(it->second)) {
    throw ShapeError("model has no normalization named '" + name + "'");
  }
  return std::get<BatchNormState<T>>(it->second);
}

template <typename T>
const BatchNormState<T>& ModelParams<T>::norm(const std::string& name) const {
  return const_cast<ModelParams*>(this)->norm(name);
}

template <typename T>
std::vector<std::pair<std::string, Var<T>>> ModelParams<T>::named_trainable() const {
  std::vector<std::pair<std::string, Var<T>>> out;
  for (const auto& [name, entry] : entries) {
    if (const auto* k = std::get_if<ConvKernel<T>>(&entry)) {
      out.emplace_back(name + ".weight", k->weight);
      if (k->bias) out.emplace_back(name + ".bias", k->bias);
    } else {
      const auto& bn = std::get<BatchNormState<T>>(entry);
      out.emplace_back(name + ".gamma", bn.gamma);
      out.emplace_back(name + ".beta", bn.beta);
    }
  }
  return out;
}

template <typename T>
std::vector<Var<T>> ModelParams<T>::trainable() const {
  std::vector<Var<T>> out;
  for (auto& [name, v] : named_trainable()) out.push_back(v);
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : named_trainable()) n += v->value.size();
  return n;
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  return cast<T>();
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  for (const auto& [name, entry] : entries) {
    if (const auto* k = std::get_if<ConvKernel<T>>(&entry)) {
      ConvKernel<U> c;
      c.weight = parameter(k->weight->value.template cast<U>());
      if (k->bias) c.bias = parameter(k->bias->value.template cast<U>());
      out.entries.emplace(name, c);
    } else {
      const auto& bn = std::get<BatchNormState<T>>(entry);
      BatchNormState<U> b;
      b.gamma = parameter(bn.gamma->value.template cast<U>());
      b.beta = parameter(bn.beta->value.template cast<U>());
      b.running_mean = bn.running_mean.template cast<U>();
      b.running_var = bn.running_var.template cast<U>();
      b.momentum = bn.momentum;
      b.epsilon = bn.epsilon;
      out.entries.emplace(name, b);
    }
  }
  return out;
}

template <typename T>
void ModelParams<T>::zero_grad() const {
  for (const auto& v : trainable()) v->zero_grad();
}

namespace {

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

template <typename T>
bool identical(const ModelParams<T>& a, const ModelParams<T>& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (const auto& [name, entry] : a.entries) {
    auto it = b.entries.find(name);
    if (it == b.entries.end() || it->second.index() != entry.index()) return false;
    if (const auto* k = std::get_if<ConvKernel<T>>(&entry)) {
      const auto& o = std::get<ConvKernel<T>>(it->second);
      if (!same_bits(k->weight->value, o.weight->value)) return false;
      if (static_cast<bool>(k->bias) != static_cast<bool>(o.bias)) return false;
      if (k->bias && !same_bits(k->bias->value, o.bias->value)) return false;
    } else {
      const auto& x = std::get<BatchNormState<T>>(entry);
      const auto& y = std::get<BatchNormState<T>>(it->second);
      if (!same_bits(x.gamma->value, y.gamma->value) || !same_bits(x.beta->value, y.beta->value) ||
          !same_bits(x.running_mean, y.running_mean) || !same_bits(x.running_var, y.running_var)) {
        return false;
      }
    }
  }
  return true;
}

// --- blocks ---------------------------------------------------------------

template <typename T>
Var<T> conv_block(const Var<T>& x, const ConvKernel<T>& kernel, BatchNormState<T>& bn, Mode mode) {
  const std::size_t k = kernel.extent();
  const Triple pad{k / 2, k / 2, k / 2};
  return relu(batchnorm3d(conv3d(x, kernel, Triple{1, 1, 1}, pad), bn, mode));
}

template <typename T>
Var<T> run_blocks(const Var<T>& x, std::span<const ConvBlockRef<T>> body, Mode mode) {
  Var<T> h = x;
  for (const auto& b : body) h = conv_block(h, *b.kernel, *b.bn, mode);
  return h;
}

template <typename T>
Var<T> residual_block(const Var<T>& x, std::span<const ConvBlockRef<T>> body, Mode mode) {
  Var<T> out = run_blocks(x, body, mode);
  if (out->shape() != x->shape()) {
    throw ShapeError("residual_block: body maps " + to_string(x->shape()) + " to " +
                     to_string(out->shape()) + "; use residual_adapter on the skip path");
  }
  return add(x, out);
}

template <typename T>
Var<T> residual_adapter(const Var<T>& x, std::size_t target_channels, SpatialChange change,
                        const ConvKernel<T>* projection) {
  Var<T> h = x;
  if (change == SpatialChange::Down) {
    h = maxpool3d(h, Triple{2, 2, 2}, Triple{2, 2, 2});
  } else if (change == SpatialChange::Up) {
    h = repeat_upsample3d(h, Triple{2, 2, 2});
  }
  const std::size_t channels = h->shape()[1];
  if (channels != target_channels) {
    if (!projection) {
      throw ShapeError("residual_adapter: " + std::to_string(channels) + " -> " +
                       std::to_string(target_channels) +
                       " channels needs a 1x1x1 projection kernel");
    }
    h = conv3d(h, *projection, Triple{1, 1, 1}, Triple{0, 0, 0});
  }
  return h;
}

// --- network --------------------------------------------------------------

namespace {

enum class LayerKind { Conv, Transpose, Norm };

struct LayerSpec {
  std::string name;
  LayerKind kind;
  std::size_t out = 0;
  std::size_t in = 0;
  std::size_t k = 0;
};

std::string lname(const char* stage, std::size_t level, const std::string& what) {
  return std::string(stage) + std::to_string(level) + "." + what;
}

void add_conv_blocks(std::vector<LayerSpec>& plan, const char* stage, std::size_t level,
                     std::size_t count, std::size_t first_in, std::size_t ch) {
  for (std::size_t i = 0; i < count; ++i) {
    plan.push_back({lname(stage, level, "conv" + std::to_string(i)), LayerKind::Conv, ch,
                    i == 0 ? first_in : ch, 3});
    plan.push_back({lname(stage, level, "bn" + std::to_string(i)), LayerKind::Norm, ch, 0, 0});
  }
}

std::vector<LayerSpec> layer_plan(const NetworkConfig& cfg) {
  std::vector<LayerSpec> plan;
  const std::size_t c0 = cfg.channels_at(0);
  if (cfg.in_channels != c0) plan.push_back({"enc0.adapter", LayerKind::Conv, c0, cfg.in_channels, 1});
  add_conv_blocks(plan, "enc", 0, cfg.convs_per_level[0], cfg.in_channels, c0);
  for (std::size_t l = 1; l < cfg.levels; ++l) {
    const std::size_t prev = cfg.channels_at(l - 1), ch = cfg.channels_at(l);
    std::size_t first_in = prev;
    if (cfg.downsample == DownsampleKind::StridedConv) {
      plan.push_back({lname("enc", l, "down"), LayerKind::Conv, ch, prev, 2});
      plan.push_back({lname("enc", l, "down_bn"), LayerKind::Norm, ch, 0, 0});
      first_in = ch;
    }
    plan.push_back({lname("enc", l, "adapter"), LayerKind::Conv, ch, prev, 1});
    add_conv_blocks(plan, "enc", l, cfg.convs_per_level[l], first_in, ch);
  }
  for (std::size_t l = cfg.levels - 1; l-- > 0;) {
    const std::size_t prev = cfg.channels_at(l + 1), ch = cfg.channels_at(l);
    if (cfg.upsample == UpsampleKind::Learned) {
      plan.push_back({lname("dec", l, "up"), LayerKind::Transpose, ch, prev, 2});
    } else {
      plan.push_back({lname("dec", l, "up"), LayerKind::Conv, ch, prev, 1});
    }
    plan.push_back({lname("dec", l, "up_bn"), LayerKind::Norm, ch, 0, 0});
    plan.push_back({lname("dec", l, "adapter"), LayerKind::Conv, ch, prev, 1});
    add_conv_blocks(plan, "dec", l, cfg.convs_per_level[l], 2 * ch, ch);
  }
  std::size_t head_in = c0;
  if (cfg.flair_concat) {
    if (cfg.flair_block) {
      plan.push_back({"flair.conv", LayerKind::Conv, c0, c0 + 1, 3});
      plan.push_back({"flair.bn", LayerKind::Norm, c0, 0, 0});
    } else {
      head_in = c0 + 1;
    }
  }
  plan.push_back({"head", LayerKind::Conv, cfg.out_classes, head_in, 1});
  return plan;
}

template <typename T>
void check_finite(const Var<T>& v, const std::string& layer) {
  for (const auto x : v->value.data) {
    if (std::isnan(x)) throw NumericError("NaN activation in layer '" + layer + "'");
  }
}

template <typename T>
Var<T> stage_body(ModelParams<T>& p, const char* stage, std::size_t level, std::size_t count,
                  const Var<T>& x, Mode mode) {
  Var<T> h = x;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string idx = std::to_string(i);
    h = conv_block(h, p.conv(lname(stage, level, "conv" + idx)), p.norm(lname(stage, level, "bn" + idx)),
                   mode);
    check_finite(h, lname(stage, level, "conv" + idx));
  }
  return h;
}

}  // namespace

template <typename T>
ModelParams<T> build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams<T> params;
  for (const auto& spec : layer_plan(cfg)) {
    if (spec.kind == LayerKind::Norm) {
      params.entries.emplace(spec.name, make_batchnorm<T>(spec.out, cfg.bn_momentum, cfg.bn_epsilon));
      continue;
    }
    const std::size_t k = spec.k;
    Shape wshape = spec.kind == LayerKind::Conv ? Shape{spec.out, spec.in, k, k, k}
                                                : Shape{spec.in, spec.out, k, k, k};
    // He-style fan-in scaling; a stride-k transposed kernel sees `in` taps per output voxel.
    const double fan_in = spec.kind == LayerKind::Conv ? double(spec.in * k * k * k) : double(spec.in);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Tensor<T> w(wshape);
    for (auto& v : w.data) v = static_cast<T>(dist(rng));
    ConvKernel<T> kernel;
    kernel.weight = parameter(std::move(w));
    kernel.bias = parameter(Tensor<T>({spec.out}, T{0}));
    params.entries.emplace(spec.name, kernel);
  }
  return params;
}

template <typename T>
Var<T> forward(ModelParams<T>& p, const NetworkConfig& cfg, const Var<T>& scan, Mode mode) {
  cfg.validate();
  require_rank5(scan->shape(), "forward");
  const Shape& s = scan->shape();
  if (s[1] != cfg.in_channels) {
    throw ShapeError("forward: scan has " + std::to_string(s[1]) + " channels, network expects " +
                     std::to_string(cfg.in_channels));
  }
  const char* axis[3] = {"depth", "height", "width"};
  for (int a = 0; a < 3; ++a) {
    if (s[2 + a] == 0 || s[2 + a] % cfg.spatial_divisor() != 0) {
      throw ShapeError("forward: " + std::string(axis[a]) + " extent " + std::to_string(s[2 + a]) +
                       " is not divisible by 2^levels = " + std::to_string(cfg.spatial_divisor()));
    }
  }

  std::vector<Var<T>> enc(cfg.levels);
  {
    const std::size_t c0 = cfg.channels_at(0);
    Var<T> body = stage_body(p, "enc", 0, cfg.convs_per_level[0], scan, mode);
    const ConvKernel<T>* proj = p.has("enc0.adapter") ? &p.conv("enc0.adapter") : nullptr;
    enc[0] = add(residual_adapter(scan, c0, SpatialChange::None, proj), body);
  }
  for (std::size_t l = 1; l < cfg.levels; ++l) {
    const std::size_t ch = cfg.channels_at(l);
    Var<T> h;
    if (cfg.downsample == DownsampleKind::StridedConv) {
      h = conv3d(enc[l - 1], p.conv(lname("enc", l, "down")), Triple{2, 2, 2}, Triple{0, 0, 0});
      h = relu(batchnorm3d(h, p.norm(lname("enc", l, "down_bn")), mode));
      check_finite(h, lname("enc", l, "down"));
    } else {
      h = maxpool3d(enc[l - 1], Triple{2, 2, 2}, Triple{2, 2, 2});
    }
    Var<T> body = stage_body(p, "enc", l, cfg.convs_per_level[l], h, mode);
    Var<T> skip = residual_adapter(enc[l - 1], ch, SpatialChange::Down, &p.conv(lname("enc", l, "adapter")));
    enc[l] = add(skip, body);
  }

  Var<T> cur = enc[cfg.levels - 1];
  for (std::size_t l = cfg.levels - 1; l-- > 0;) {
    const std::size_t ch = cfg.channels_at(l);
    Var<T> up;
    if (cfg.upsample == UpsampleKind::Learned) {
      up = conv3d_transpose(cur, p.conv(lname("dec", l, "up")), Triple{2, 2, 2});
    } else {
      up = conv3d(repeat_upsample3d(cur, Triple{2, 2, 2}), p.conv(lname("dec", l, "up")), Triple{1, 1, 1},
                  Triple{0, 0, 0});
    }
    up = relu(batchnorm3d(up, p.norm(lname("dec", l, "up_bn")), mode));
    check_finite(up, lname("dec", l, "up"));
    Var<T> body = stage_body(p, "dec", l, cfg.convs_per_level[l], concat_channels(up, enc[l]), mode);
    Var<T> skip = residual_adapter(cur, ch, SpatialChange::Up, &p.conv(lname("dec", l, "adapter")));
    cur = add(skip, body);
  }

  if (cfg.flair_concat) {
    cur = concat_channels(cur, slice_channels(scan, cfg.flair_channel, 1));
    if (cfg.flair_block) {
      cur = conv_block(cur, p.conv("flair.conv"), p.norm("flair.bn"), mode);
      check_finite(cur, "flair.conv");
    }
  }
  Var<T> logits = conv3d(cur, p.conv("head"), Triple{1, 1, 1}, Triple{0, 0, 0});
  check_finite(logits, "head");
  return softmax_channels(logits);
}

#define CVNET_INSTANTIATE(T)                                                                       \
  template struct ModelParams<T>;                                                                  \
  template bool identical<T>(const ModelParams<T>&, const ModelParams<T>&);                        \
  template Var<T> conv_block<T>(const Var<T>&, const ConvKernel<T>&, BatchNormState<T>&, Mode);    \
  template Var<T> run_blocks<T>(const Var<T>&, std::span<const ConvBlockRef<T>>, Mode);            \
  template Var<T> residual_block<T>(const Var<T>&, std::span<const ConvBlockRef<T>>, Mode);        \
  template Var<T> residual_adapter<T>(const Var<T>&, std::size_t, SpatialChange, const ConvKernel<T>*); \
  template ModelParams<T> build_network<T>(const NetworkConfig&, std::uint64_t);                   \
  template Var<T> forward<T>(ModelParams<T>&, const NetworkConfig&, const Var<T>&, Mode);

CVNET_INSTANTIATE(float)
CVNET_INSTANTIATE(double)
#undef CVNET_INSTANTIATE

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;

}  // namespace cvnet
