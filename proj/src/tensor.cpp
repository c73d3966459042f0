#include "cvnet/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "cvnet/error.hpp"

namespace cvnet {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape s, T fill) : shape(std::move(s)), data(numel(shape), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " holds " +
                     std::to_string(numel(shape)) + " elements but " +
                     std::to_string(data.size()) + " values were given");
  }
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data.begin(), data.end(), value);
}

void require_rank5(const Shape& shape, const char* op) {
  if (shape.size() != 5) {
    throw ShapeError(std::string(op) + ": expected a rank-5 (N,C,D,H,W) tensor, got " +
                     to_string(shape));
  }
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace cvnet
