#include <cmath>
#include <vector>

#include "cvnet/error.hpp"
#include "cvnet/ops.hpp"

namespace cvnet {

template <typename T>
BatchNormState<T> make_batchnorm(std::size_t channels, double momentum, double epsilon) {
  if (!(momentum > 0.0 && momentum < 1.0)) {
    throw ConfigError("batchnorm momentum must lie in (0,1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("batchnorm epsilon must be positive");
  BatchNormState<T> s;
  s.gamma = parameter(Tensor<T>({channels}, T{1}));
  s.beta = parameter(Tensor<T>({channels}, T{0}));
  s.running_mean = Tensor<T>({channels}, T{0});
  s.running_var = Tensor<T>({channels}, T{1});
  s.momentum = momentum;
  s.epsilon = epsilon;
  return s;
}

template <typename T>
Var<T> batchnorm3d(const Var<T>& x, BatchNormState<T>& state, Mode mode) {
  require_rank5(x->shape(), "batchnorm3d");
  const Shape& xs = x->shape();
  const std::size_t N = xs[0], C = xs[1];
  const std::size_t sp = xs[2] * xs[3] * xs[4];
  if (state.channels() != C) {
    throw ShapeError("batchnorm3d: input has " + std::to_string(C) +
                     " channels but the normalization state has " +
                     std::to_string(state.channels()));
  }
  const std::size_t M = N * sp;
  std::vector<T> mean(C), inv_std(C);
  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x->value.data.data() + (n * C + c) * sp;
        for (std::size_t i = 0; i < sp; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(M);
      double v = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x->value.data.data() + (n * C + c) * sp;
        for (std::size_t i = 0; i < sp; ++i) {
          const double d = p[i] - mu;
          v += d * d;
        }
      }
      const double var = v / static_cast<double>(M);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + state.epsilon));
      const double m = state.momentum;
      state.running_mean[c] = static_cast<T>(m * state.running_mean[c] + (1.0 - m) * mu);
      state.running_var[c] = static_cast<T>(m * state.running_var[c] + (1.0 - m) * var);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) +
                                                  state.epsilon));
    }
  }

  Tensor<T> xhat(xs);
  Tensor<T> out(xs);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * sp;
      const T g = state.gamma->value[c], b = state.beta->value[c];
      for (std::size_t i = 0; i < sp; ++i) {
        const T h = (x->value.data[base + i] - mean[c]) * inv_std[c];
        xhat.data[base + i] = h;
        out.data[base + i] = g * h + b;
      }
    }

  const bool batch_stats = mode == Mode::Train;
  return make_op<T>("batchnorm3d", std::move(out), {x, state.gamma, state.beta},
                    [xhat = std::move(xhat), inv_std = std::move(inv_std), N, C, sp, M,
                     batch_stats](Node<T>& self) {
    const Var<T>& xv = self.inputs[0];
    const Var<T>& gv = self.inputs[1];
    const Var<T>& bv = self.inputs[2];
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t base = (n * C + c) * sp;
        for (std::size_t i = 0; i < sp; ++i) {
          const double dy = self.grad.data[base + i];
          sum_dy += dy;
          sum_dy_xhat += dy * xhat.data[base + i];
        }
      }
      if (gv->requires_grad) gv->ensure_grad()[c] += static_cast<T>(sum_dy_xhat);
      if (bv->requires_grad) bv->ensure_grad()[c] += static_cast<T>(sum_dy);
      if (!xv->requires_grad) continue;
      auto& dx = xv->ensure_grad();
      const double g = gv->value[c];
      const double is = inv_std[c];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t base = (n * C + c) * sp;
        for (std::size_t i = 0; i < sp; ++i) {
          const double dy = self.grad.data[base + i];
          double d;
          if (batch_stats) {
            d = g * is *
                (dy - sum_dy / static_cast<double>(M) -
                 xhat.data[base + i] * sum_dy_xhat / static_cast<double>(M));
          } else {
            d = g * is * dy;
          }
          dx.data[base + i] += static_cast<T>(d);
        }
      }
    }
  });
}

template BatchNormState<float> make_batchnorm<float>(std::size_t, double, double);
template BatchNormState<double> make_batchnorm<double>(std::size_t, double, double);
template Var<float> batchnorm3d<float>(const Var<float>&, BatchNormState<float>&, Mode);
template Var<double> batchnorm3d<double>(const Var<double>&, BatchNormState<double>&, Mode);

}  // namespace cvnet
