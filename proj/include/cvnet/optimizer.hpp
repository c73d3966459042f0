#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cvnet/autodiff.hpp"
#include "cvnet/checkpoint.hpp"

namespace cvnet {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

void to_json(nlohmann::json& j, const AdamConfig& cfg);
void from_json(const nlohmann::json& j, AdamConfig& cfg);

// Adaptive-moment gradient descent with bias correction.
template <typename T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Var<T>>> params, AdamConfig cfg);

  // Applies one update from the current gradients. Parameters without a
  // gradient buffer are treated as having zero gradient.
  void step();
  std::size_t steps() const { return t_; }

  // Moments go in as "adam.m.<name>" / "adam.v.<name>" records and the step
  // count as meta["adam_steps"].
  void save_state(Checkpoint& ckpt) const;
  void load_state(const Checkpoint& ckpt);

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::size_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace cvnet
