#include "cvnet/optimizer.hpp"

#include <cmath>

#include "cvnet/error.hpp"

namespace cvnet {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer: moment coefficients must lie in [0,1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
}

void to_json(nlohmann::json& j, const AdamConfig& cfg) {
  j = nlohmann::json{{"kind", "adam"},
                     {"learning_rate", cfg.learning_rate},
                     {"beta1", cfg.beta1},
                     {"beta2", cfg.beta2},
                     {"epsilon", cfg.epsilon}};
}

void from_json(const nlohmann::json& j, AdamConfig& cfg) {
  if (j.value("kind", std::string("adam")) != "adam") {
    throw ConfigError("optimizer: only 'adam' is supported");
  }
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
}

template <typename T>
Adam<T>::Adam(std::vector<std::pair<std::string, Var<T>>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p->value.shape, T{0});
    v_.emplace_back(p->value.shape, T{0});
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].second;
    if (!p->has_grad()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad.data[i];
      const double mi = b1 * m.data[i] + (1.0 - b1) * g;
      const double vi = b2 * v.data[i] + (1.0 - b2) * g * g;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      const double update = cfg_.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg_.epsilon);
      p->value.data[i] = static_cast<T>(p->value.data[i] - update);
    }
  }
}

template <typename T>
void Adam<T>::save_state(Checkpoint& ckpt) const {
  ckpt.meta["adam_steps"] = t_;
  ckpt.meta["optimizer"] = cfg_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (int which = 0; which < 2; ++which) {
      const Tensor<T>& t = which == 0 ? m_[k] : v_[k];
      CheckpointRecord r;
      r.name = std::string(which == 0 ? "adam.m." : "adam.v.") + params_[k].first;
      r.shape = t.shape;
      r.data.assign(t.data.begin(), t.data.end());
      ckpt.records.push_back(std::move(r));
    }
  }
}

template <typename T>
void Adam<T>::load_state(const Checkpoint& ckpt) {
  t_ = ckpt.meta.value("adam_steps", std::size_t{0});
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (int which = 0; which < 2; ++which) {
      Tensor<T>& t = which == 0 ? m_[k] : v_[k];
      const auto& r = ckpt.at(std::string(which == 0 ? "adam.m." : "adam.v.") + params_[k].first);
      if (r.shape != t.shape) throw FormatError("optimizer state '" + r.name + "' has the wrong shape");
      t.data.assign(r.data.begin(), r.data.end());
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace cvnet
