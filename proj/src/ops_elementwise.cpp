#include <algorithm>
#include <cmath>
#include <limits>

#include "cvnet/error.hpp"
#include "cvnet/kink_trace.hpp"
#include "cvnet/ops.hpp"

namespace cvnet {

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a->shape() != b->shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a->shape()) + " vs " +
                     to_string(b->shape()));
  }
}

}  // namespace

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x->shape());
  // NaN passes through so it can be reported by the layer that produced it.
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x->value.data[i] <= T{0} ? T{0} : x->value.data[i];
  if (auto* trace = active_kink_trace()) {
    // Pack the sign pattern 64 voxels per word.
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      word = (word << 1) | (x->value.data[i] > T{0} ? 1u : 0u);
      if (i % 64 == 63) {
        trace->decisions.push_back(word);
        word = 0;
      }
    }
    trace->decisions.push_back(word);
  }
  return make_op<T>("relu", std::move(out), {x}, [](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    auto& dx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv.data[i] > T{0}) dx.data[i] += self.grad.data[i];
    }
  });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  require_rank5(x->shape(), "softmax_channels");
  const Shape& xs = x->shape();
  const std::size_t N = xs[0], C = xs[1], sp = xs[2] * xs[3] * xs[4];
  if (C < 1) throw ShapeError("softmax_channels: need at least one channel");
  Tensor<T> out(xs);
  for (std::size_t n = 0; n < N; ++n) {
    const T* in = x->value.data.data() + n * C * sp;
    T* o = out.data.data() + n * C * sp;
    for (std::size_t i = 0; i < sp; ++i) {
      T mx = in[i];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, in[c * sp + i]);
      T total{0};
      for (std::size_t c = 0; c < C; ++c) {
        const T e = std::exp(in[c * sp + i] - mx);
        o[c * sp + i] = e;
        total += e;
      }
      for (std::size_t c = 0; c < C; ++c) o[c * sp + i] /= total;
    }
  }
  return make_op<T>("softmax_channels", std::move(out), {x}, [N, C, sp](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (std::size_t n = 0; n < N; ++n) {
      const T* y = self.value.data.data() + n * C * sp;
      const T* g = self.grad.data.data() + n * C * sp;
      T* d = dx.data.data() + n * C * sp;
      for (std::size_t i = 0; i < sp; ++i) {
        T dot{0};
        for (std::size_t c = 0; c < C; ++c) dot += g[c * sp + i] * y[c * sp + i];
        for (std::size_t c = 0; c < C; ++c) d[c * sp + i] += y[c * sp + i] * (g[c * sp + i] - dot);
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
  return make_op<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      if (!self.inputs[k]->requires_grad) continue;
      auto& d = self.inputs[k]->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += self.grad.data[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] - b->value.data[i];
  return make_op<T>("sub", std::move(out), {a, b}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto& d = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += self.grad.data[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& d = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d.data[i] -= self.grad.data[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] * b->value.data[i];
  return make_op<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      if (!self.inputs[k]->requires_grad) continue;
      const auto& other = self.inputs[1 - k]->value;
      auto& d = self.inputs[k]->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) {
        // A zero factor contributes nothing, not even a signed zero.
        if (other.data[i] != T{0}) d.data[i] += self.grad.data[i] * other.data[i];
      }
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "div");
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] / b->value.data[i];
  return make_op<T>("div", std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad) {
      auto& d = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += self.grad.data[i] / bv.data[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& d = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) {
        d.data[i] -= self.grad.data[i] * av.data[i] / (bv.data[i] * bv.data[i]);
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x->value.data[i] * factor;
  return make_op<T>("scale", std::move(out), {x}, [factor](Node<T>& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += self.grad.data[i] * factor;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T offset) {
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x->value.data[i] + offset;
  return make_op<T>("add_scalar", std::move(out), {x}, [](Node<T>& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += self.grad.data[i];
  });
}

template <typename T>
Var<T> log_clamped(const Var<T>& x, T floor) {
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::log(std::max(x->value.data[i], floor));
  return make_op<T>("log_clamped", std::move(out), {x}, [floor](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    auto& d = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (xv.data[i] > floor) d.data[i] += self.grad.data[i] / xv.data[i];
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  require_rank5(a->shape(), "concat_channels");
  require_rank5(b->shape(), "concat_channels");
  const Shape& as = a->shape();
  const Shape& bs = b->shape();
  for (std::size_t ax : {0u, 2u, 3u, 4u}) {
    if (as[ax] != bs[ax]) {
      throw ShapeError("concat_channels: non-channel dimension " + std::to_string(ax) +
                       " differs: " + to_string(as) + " vs " + to_string(bs));
    }
  }
  const std::size_t N = as[0], Ca = as[1], Cb = bs[1], sp = as[2] * as[3] * as[4];
  Tensor<T> out({N, Ca + Cb, as[2], as[3], as[4]});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a->value.data.data() + n * Ca * sp, Ca * sp, out.data.data() + n * (Ca + Cb) * sp);
    std::copy_n(b->value.data.data() + n * Cb * sp, Cb * sp,
                out.data.data() + (n * (Ca + Cb) + Ca) * sp);
  }
  return make_op<T>("concat_channels", std::move(out), {a, b}, [N, Ca, Cb, sp](Node<T>& self) {
    const std::size_t C = Ca + Cb;
    if (self.inputs[0]->requires_grad) {
      auto& d = self.inputs[0]->ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < Ca * sp; ++i) d.data[n * Ca * sp + i] += self.grad.data[n * C * sp + i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& d = self.inputs[1]->ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < Cb * sp; ++i)
          d.data[n * Cb * sp + i] += self.grad.data[(n * C + Ca) * sp + i];
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
  require_rank5(x->shape(), "slice_channels");
  const Shape& xs = x->shape();
  const std::size_t N = xs[0], C = xs[1], sp = xs[2] * xs[3] * xs[4];
  if (count == 0 || begin + count > C) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + std::to_string(C) + " channels");
  }
  Tensor<T> out({N, count, xs[2], xs[3], xs[4]});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(x->value.data.data() + (n * C + begin) * sp, count * sp,
                out.data.data() + n * count * sp);
  }
  return make_op<T>("slice_channels", std::move(out), {x}, [N, C, sp, begin, count](Node<T>& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < count * sp; ++i)
        d.data[(n * C + begin) * sp + i] += self.grad.data[n * count * sp + i];
  });
}

template <typename T>
Var<T> sum_channels(const Var<T>& x, std::span<const std::size_t> channels) {
  require_rank5(x->shape(), "sum_channels");
  const Shape& xs = x->shape();
  const std::size_t N = xs[0], C = xs[1], sp = xs[2] * xs[3] * xs[4];
  std::vector<std::size_t> chans(channels.begin(), channels.end());
  if (chans.empty()) throw ShapeError("sum_channels: empty channel list");
  for (auto c : chans) {
    if (c >= C) {
      throw ShapeError("sum_channels: channel " + std::to_string(c) + " outside " +
                       std::to_string(C) + " channels");
    }
  }
  Tensor<T> out({N, 1, xs[2], xs[3], xs[4]});
  for (std::size_t n = 0; n < N; ++n)
    for (auto c : chans) {
      const T* src = x->value.data.data() + (n * C + c) * sp;
      T* dst = out.data.data() + n * sp;
      for (std::size_t i = 0; i < sp; ++i) dst[i] += src[i];
    }
  return make_op<T>("sum_channels", std::move(out), {x}, [N, C, sp, chans](Node<T>& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (std::size_t n = 0; n < N; ++n)
      for (auto c : chans) {
        T* dst = d.data.data() + (n * C + c) * sp;
        const T* g = self.grad.data.data() + n * sp;
        for (std::size_t i = 0; i < sp; ++i) dst[i] += g[i];
      }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double s = 0.0;
  for (auto v : x->value.data) s += v;
  Tensor<T> out(Shape{}, static_cast<T>(s));
  return make_op<T>("sum", std::move(out), {x}, [](Node<T>& self) {
    auto& d = self.inputs[0]->ensure_grad();
    const T g = self.grad.data[0];
    for (auto& v : d.data) v += g;
  });
}

#define CVNET_INSTANTIATE(T)                                                          \
  template Var<T> relu<T>(const Var<T>&);                                             \
  template Var<T> softmax_channels<T>(const Var<T>&);                                 \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> div<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> scale<T>(const Var<T>&, T);                                         \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                    \
  template Var<T> log_clamped<T>(const Var<T>&, T);                                   \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                   \
  template Var<T> slice_channels<T>(const Var<T>&, std::size_t, std::size_t);         \
  template Var<T> sum_channels<T>(const Var<T>&, std::span<const std::size_t>);       \
  template Var<T> sum<T>(const Var<T>&);

CVNET_INSTANTIATE(float)
CVNET_INSTANTIATE(double)
#undef CVNET_INSTANTIATE

}  // namespace cvnet
