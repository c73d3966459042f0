#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace cvnet {

using Shape = std::vector<std::size_t>;
using Triple = std::array<std::size_t, 3>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array. 5-D activations use (batch, channels, depth, height, width).
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0});
  Tensor(Shape s, std::vector<T> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  bool empty() const { return data.empty(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // Only valid on rank-5 tensors.
  std::size_t offset(std::size_t n, std::size_t c, std::size_t d, std::size_t h,
                     std::size_t w) const {
    return (((n * shape[1] + c) * shape[2] + d) * shape[3] + h) * shape[4] + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return data[offset(n, c, d, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t d, std::size_t h,
              std::size_t w) const {
    return data[offset(n, c, d, h, w)];
  }

  std::size_t spatial_size() const { return shape[2] * shape[3] * shape[4]; }

  void fill(T value);

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

// Throws ShapeError unless the tensor has rank 5.
void require_rank5(const Shape& shape, const char* op);

extern template struct Tensor<float>;
extern template struct Tensor<double>;

}  // namespace cvnet
