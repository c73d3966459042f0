#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>

#include "cvnet/error.hpp"
#include "cvnet/kink_trace.hpp"
#include "cvnet/ops.hpp"

namespace cvnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

using Index = std::ptrdiff_t;

const char* kAxisNames[3] = {"depth", "height", "width"};

// Sliding-window layout between a large volume and the grid of window
// positions. For conv3d the large volume is the input; for the transposed
// op it is the output.
struct WindowGeometry {
  std::size_t channels = 0;
  Triple big{};
  Triple small{};
  Triple kernel{};
  Triple stride{};
  Triple pad{};

  std::size_t rows() const { return channels * kernel[0] * kernel[1] * kernel[2]; }
  std::size_t cols() const { return small[0] * small[1] * small[2]; }
  std::size_t big_size() const { return channels * big[0] * big[1] * big[2]; }
  bool is_pointwise() const {
    return kernel == Triple{1, 1, 1} && stride == Triple{1, 1, 1} && pad == Triple{0, 0, 0};
  }
};

template <typename T>
void im2col(const T* vol, const WindowGeometry& g, T* cols) {
  const Index D = g.big[0], H = g.big[1], W = g.big[2];
  const Index oD = g.small[0], oH = g.small[1], oW = g.small[2];
  const Index P = oD * oH * oW;
  Index row = 0;
  for (Index c = 0; c < static_cast<Index>(g.channels); ++c) {
    for (Index kd = 0; kd < static_cast<Index>(g.kernel[0]); ++kd) {
      for (Index kh = 0; kh < static_cast<Index>(g.kernel[1]); ++kh) {
        for (Index kw = 0; kw < static_cast<Index>(g.kernel[2]); ++kw, ++row) {
          T* dst = cols + row * P;
          for (Index od = 0; od < oD; ++od) {
            const Index id = od * static_cast<Index>(g.stride[0]) + kd - static_cast<Index>(g.pad[0]);
            if (id < 0 || id >= D) {
              std::fill(dst, dst + oH * oW, T{0});
              dst += oH * oW;
              continue;
            }
            for (Index oh = 0; oh < oH; ++oh, dst += oW) {
              const Index ih = oh * static_cast<Index>(g.stride[1]) + kh - static_cast<Index>(g.pad[1]);
              if (ih < 0 || ih >= H) {
                std::fill(dst, dst + oW, T{0});
                continue;
              }
              const T* src = vol + ((c * D + id) * H + ih) * W;
              const Index sw = static_cast<Index>(g.stride[2]);
              const Index off = kw - static_cast<Index>(g.pad[2]);
              for (Index ow = 0; ow < oW; ++ow) {
                const Index iw = ow * sw + off;
                dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T{0};
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const WindowGeometry& g, T* vol) {
  const Index D = g.big[0], H = g.big[1], W = g.big[2];
  const Index oD = g.small[0], oH = g.small[1], oW = g.small[2];
  const Index P = oD * oH * oW;
  Index row = 0;
  for (Index c = 0; c < static_cast<Index>(g.channels); ++c) {
    for (Index kd = 0; kd < static_cast<Index>(g.kernel[0]); ++kd) {
      for (Index kh = 0; kh < static_cast<Index>(g.kernel[1]); ++kh) {
        for (Index kw = 0; kw < static_cast<Index>(g.kernel[2]); ++kw, ++row) {
          const T* src = cols + row * P;
          for (Index od = 0; od < oD; ++od) {
            const Index id = od * static_cast<Index>(g.stride[0]) + kd - static_cast<Index>(g.pad[0]);
            if (id < 0 || id >= D) {
              src += oH * oW;
              continue;
            }
            for (Index oh = 0; oh < oH; ++oh, src += oW) {
              const Index ih = oh * static_cast<Index>(g.stride[1]) + kh - static_cast<Index>(g.pad[1]);
              if (ih < 0 || ih >= H) continue;
              T* dst = vol + ((c * D + id) * H + ih) * W;
              const Index sw = static_cast<Index>(g.stride[2]);
              const Index off = kw - static_cast<Index>(g.pad[2]);
              for (Index ow = 0; ow < oW; ++ow) {
                const Index iw = ow * sw + off;
                if (iw >= 0 && iw < W) dst[iw] += src[ow];
              }
            }
          }
        }
      }
    }
  }
}

void check_positive(const Triple& t, const char* op, const char* what) {
  for (int a = 0; a < 3; ++a) {
    if (t[a] == 0) {
      throw ShapeError(std::string(op) + ": " + what + " along " + kAxisNames[a] +
                       " must be positive");
    }
  }
}

template <typename T>
void check_kernel(const ConvKernel<T>& kernel, const char* op) {
  if (!kernel.weight || kernel.weight->value.rank() != 5) {
    throw ShapeError(std::string(op) + ": kernel weights must be rank 5");
  }
}

}  // namespace

template <typename T>
Var<T> conv3d(const Var<T>& x, const ConvKernel<T>& kernel, Triple stride, Triple padding) {
  require_rank5(x->shape(), "conv3d");
  check_kernel(kernel, "conv3d");
  check_positive(stride, "conv3d", "stride");
  const Shape& xs = x->shape();
  const Shape& ws = kernel.weight->shape();
  const std::size_t N = xs[0], Cin = xs[1], Cout = ws[0];
  if (ws[1] != Cin) {
    throw ShapeError("conv3d: input has " + std::to_string(Cin) + " channels but kernel expects " +
                     std::to_string(ws[1]) + " (in-channels dimension)");
  }
  if (kernel.bias && kernel.bias->value.size() != Cout) {
    throw ShapeError("conv3d: bias length " + std::to_string(kernel.bias->value.size()) +
                     " does not match out-channels " + std::to_string(Cout));
  }
  WindowGeometry g;
  g.channels = Cin;
  g.stride = stride;
  g.pad = padding;
  for (int a = 0; a < 3; ++a) {
    g.big[a] = xs[2 + a];
    g.kernel[a] = ws[2 + a];
    if (g.big[a] + 2 * padding[a] < g.kernel[a]) {
      throw ShapeError("conv3d: " + std::string(kAxisNames[a]) + " extent " +
                       std::to_string(g.big[a]) + " plus padding is smaller than kernel size " +
                       std::to_string(g.kernel[a]));
    }
    g.small[a] = (g.big[a] + 2 * padding[a] - g.kernel[a]) / stride[a] + 1;
  }
  const std::size_t R = g.rows(), P = g.cols();
  Tensor<T> out({N, Cout, g.small[0], g.small[1], g.small[2]});
  ConstMapMat<T> Wm(kernel.weight->value.data.data(), Cout, R);
  std::vector<T> cols(g.is_pointwise() ? 0 : R * P);
  for (std::size_t n = 0; n < N; ++n) {
    const T* xin = x->value.data.data() + n * g.big_size();
    if (!g.is_pointwise()) im2col(xin, g, cols.data());
    ConstMapMat<T> Cm(g.is_pointwise() ? xin : cols.data(), R, P);
    MapMat<T> Ym(out.data.data() + n * Cout * P, Cout, P);
    Ym.noalias() = Wm * Cm;
    if (kernel.bias) {
      for (std::size_t o = 0; o < Cout; ++o) Ym.row(o).array() += kernel.bias->value[o];
    }
  }

  std::vector<Var<T>> inputs{x, kernel.weight};
  if (kernel.bias) inputs.push_back(kernel.bias);
  return make_op<T>("conv3d", std::move(out), std::move(inputs), [g, N, Cout](Node<T>& self) {
    const Var<T>& xv = self.inputs[0];
    const Var<T>& wv = self.inputs[1];
    const std::size_t R = g.rows(), P = g.cols();
    ConstMapMat<T> Wm(wv->value.data.data(), Cout, R);
    std::vector<T> cols(g.is_pointwise() ? 0 : R * P);
    std::vector<T> dcols(xv->requires_grad && !g.is_pointwise() ? R * P : 0);
    for (std::size_t n = 0; n < N; ++n) {
      ConstMapMat<T> dY(self.grad.data.data() + n * Cout * P, Cout, P);
      const T* xin = xv->value.data.data() + n * g.big_size();
      if (wv->requires_grad) {
        if (!g.is_pointwise()) im2col(xin, g, cols.data());
        ConstMapMat<T> Cm(g.is_pointwise() ? xin : cols.data(), R, P);
        MapMat<T> dW(wv->ensure_grad().data.data(), Cout, R);
        dW.noalias() += dY * Cm.transpose();
      }
      if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
        auto& db = self.inputs[2]->ensure_grad();
        for (std::size_t o = 0; o < Cout; ++o) db[o] += dY.row(o).sum();
      }
      if (xv->requires_grad) {
        T* dx = xv->ensure_grad().data.data() + n * g.big_size();
        if (g.is_pointwise()) {
          MapMat<T> dX(dx, R, P);
          dX.noalias() += Wm.transpose() * dY;
        } else {
          MapMat<T> dC(dcols.data(), R, P);
          dC.noalias() = Wm.transpose() * dY;
          col2im_add(dcols.data(), g, dx);
        }
      }
    }
  });
}

template <typename T>
Var<T> conv3d_transpose(const Var<T>& x, const ConvKernel<T>& kernel, Triple stride) {
  require_rank5(x->shape(), "conv3d_transpose");
  check_kernel(kernel, "conv3d_transpose");
  check_positive(stride, "conv3d_transpose", "stride");
  const Shape& xs = x->shape();
  const Shape& ws = kernel.weight->shape();
  const std::size_t N = xs[0], Cin = xs[1], Cout = ws[1];
  if (ws[0] != Cin) {
    throw ShapeError("conv3d_transpose: input has " + std::to_string(Cin) +
                     " channels but kernel expects " + std::to_string(ws[0]) +
                     " (in-channels dimension)");
  }
  if (kernel.bias && kernel.bias->value.size() != Cout) {
    throw ShapeError("conv3d_transpose: bias length " + std::to_string(kernel.bias->value.size()) +
                     " does not match out-channels " + std::to_string(Cout));
  }
  WindowGeometry g;
  g.channels = Cout;
  g.stride = stride;
  for (int a = 0; a < 3; ++a) {
    g.small[a] = xs[2 + a];
    g.kernel[a] = ws[2 + a];
    if (g.small[a] == 0) {
      throw ShapeError(std::string("conv3d_transpose: empty ") + kAxisNames[a] + " axis");
    }
    g.big[a] = (g.small[a] - 1) * stride[a] + g.kernel[a];
  }
  const std::size_t R = g.rows(), P = g.cols();
  Tensor<T> out({N, Cout, g.big[0], g.big[1], g.big[2]});
  ConstMapMat<T> Wm(kernel.weight->value.data.data(), Cin, R);
  std::vector<T> cols(R * P);
  const std::size_t spatial = g.big[0] * g.big[1] * g.big[2];
  for (std::size_t n = 0; n < N; ++n) {
    ConstMapMat<T> Xm(x->value.data.data() + n * Cin * P, Cin, P);
    MapMat<T> Cm(cols.data(), R, P);
    Cm.noalias() = Wm.transpose() * Xm;
    T* o = out.data.data() + n * g.big_size();
    col2im_add(cols.data(), g, o);
    if (kernel.bias) {
      for (std::size_t c = 0; c < Cout; ++c) {
        const T b = kernel.bias->value[c];
        T* oc = o + c * spatial;
        for (std::size_t i = 0; i < spatial; ++i) oc[i] += b;
      }
    }
  }

  std::vector<Var<T>> inputs{x, kernel.weight};
  if (kernel.bias) inputs.push_back(kernel.bias);
  return make_op<T>("conv3d_transpose", std::move(out), std::move(inputs),
                    [g, N, Cin, Cout](Node<T>& self) {
    const Var<T>& xv = self.inputs[0];
    const Var<T>& wv = self.inputs[1];
    const std::size_t R = g.rows(), P = g.cols();
    const std::size_t spatial = g.big[0] * g.big[1] * g.big[2];
    ConstMapMat<T> Wm(wv->value.data.data(), Cin, R);
    std::vector<T> dcols(R * P);
    for (std::size_t n = 0; n < N; ++n) {
      const T* dout = self.grad.data.data() + n * g.big_size();
      im2col(dout, g, dcols.data());
      ConstMapMat<T> dC(dcols.data(), R, P);
      if (xv->requires_grad) {
        MapMat<T> dX(xv->ensure_grad().data.data() + n * Cin * P, Cin, P);
        dX.noalias() += Wm * dC;
      }
      if (wv->requires_grad) {
        ConstMapMat<T> Xm(xv->value.data.data() + n * Cin * P, Cin, P);
        MapMat<T> dW(wv->ensure_grad().data.data(), Cin, R);
        dW.noalias() += Xm * dC.transpose();
      }
      if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
        auto& db = self.inputs[2]->ensure_grad();
        for (std::size_t c = 0; c < Cout; ++c) {
          T s{0};
          const T* dc = dout + c * spatial;
          for (std::size_t i = 0; i < spatial; ++i) s += dc[i];
          db[c] += s;
        }
      }
    }
  });
}

template <typename T>
Var<T> maxpool3d(const Var<T>& x, Triple window, Triple stride) {
  require_rank5(x->shape(), "maxpool3d");
  check_positive(window, "maxpool3d", "window");
  check_positive(stride, "maxpool3d", "stride");
  const Shape& xs = x->shape();
  Triple in{xs[2], xs[3], xs[4]};
  Triple outd{};
  for (int a = 0; a < 3; ++a) {
    if (in[a] < window[a] || (in[a] - window[a]) % stride[a] != 0) {
      throw ShapeError("maxpool3d: " + std::string(kAxisNames[a]) + " extent " +
                       std::to_string(in[a]) + " is not tiled by window " +
                       std::to_string(window[a]) + " with stride " + std::to_string(stride[a]));
    }
    outd[a] = (in[a] - window[a]) / stride[a] + 1;
  }
  const std::size_t planes = xs[0] * xs[1];
  Tensor<T> out({xs[0], xs[1], outd[0], outd[1], outd[2]});
  std::vector<std::uint32_t> argmax(out.size());
  const std::size_t in_sp = in[0] * in[1] * in[2];
  const std::size_t out_sp = outd[0] * outd[1] * outd[2];
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x->value.data.data() + p * in_sp;
    std::size_t o = p * out_sp;
    for (std::size_t od = 0; od < outd[0]; ++od)
      for (std::size_t oh = 0; oh < outd[1]; ++oh)
        for (std::size_t ow = 0; ow < outd[2]; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::uint32_t best_i = 0;
          bool first = true;
          for (std::size_t kd = 0; kd < window[0]; ++kd)
            for (std::size_t kh = 0; kh < window[1]; ++kh)
              for (std::size_t kw = 0; kw < window[2]; ++kw) {
                const std::size_t i =
                    ((od * stride[0] + kd) * in[1] + oh * stride[1] + kh) * in[2] + ow * stride[2] + kw;
                if (first || src[i] > best) {
                  best = src[i];
                  best_i = static_cast<std::uint32_t>(i);
                  first = false;
                }
              }
          out.data[o] = best;
          argmax[o] = best_i;
        }
  }
  if (auto* trace = active_kink_trace()) {
    trace->decisions.insert(trace->decisions.end(), argmax.begin(), argmax.end());
  }
  return make_op<T>("maxpool3d", std::move(out), {x},
                    [argmax = std::move(argmax), in_sp, out_sp](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < self.grad.size(); ++o) {
      const std::size_t p = o / out_sp;
      dx.data[p * in_sp + argmax[o]] += self.grad.data[o];
    }
  });
}

template <typename T>
Var<T> repeat_upsample3d(const Var<T>& x, Triple factor) {
  require_rank5(x->shape(), "repeat_upsample3d");
  check_positive(factor, "repeat_upsample3d", "factor");
  const Shape xs = x->shape();
  const Triple in{xs[2], xs[3], xs[4]};
  const Triple outd{in[0] * factor[0], in[1] * factor[1], in[2] * factor[2]};
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t in_sp = in[0] * in[1] * in[2];
  const std::size_t out_sp = outd[0] * outd[1] * outd[2];
  Tensor<T> out({xs[0], xs[1], outd[0], outd[1], outd[2]});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x->value.data.data() + p * in_sp;
    T* dst = out.data.data() + p * out_sp;
    for (std::size_t d = 0; d < outd[0]; ++d)
      for (std::size_t h = 0; h < outd[1]; ++h)
        for (std::size_t w = 0; w < outd[2]; ++w)
          *dst++ = src[((d / factor[0]) * in[1] + h / factor[1]) * in[2] + w / factor[2]];
  }
  return make_op<T>("repeat_upsample3d", std::move(out), {x},
                    [in, outd, factor, planes, in_sp, out_sp](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* g = self.grad.data.data() + p * out_sp;
      T* dst = dx.data.data() + p * in_sp;
      for (std::size_t d = 0; d < outd[0]; ++d)
        for (std::size_t h = 0; h < outd[1]; ++h)
          for (std::size_t w = 0; w < outd[2]; ++w)
            dst[((d / factor[0]) * in[1] + h / factor[1]) * in[2] + w / factor[2]] += *g++;
    }
  });
}

#define CVNET_INSTANTIATE(T)                                                          \
  template Var<T> conv3d<T>(const Var<T>&, const ConvKernel<T>&, Triple, Triple);    \
  template Var<T> conv3d_transpose<T>(const Var<T>&, const ConvKernel<T>&, Triple);  \
  template Var<T> maxpool3d<T>(const Var<T>&, Triple, Triple);                       \
  template Var<T> repeat_upsample3d<T>(const Var<T>&, Triple);

CVNET_INSTANTIATE(float)
CVNET_INSTANTIATE(double)
#undef CVNET_INSTANTIATE

}  // namespace cvnet
