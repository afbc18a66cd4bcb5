#include "svda/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace svda {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape s, std::vector<T> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
  for (auto dim : shape) {
    if (dim == 0) throw std::invalid_argument("tensor shape " + shape_str(shape) + " has a zero dimension");
  }
  if (numel(shape) != data.size()) {
    throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match data length " +
                                std::to_string(data.size()));
  }
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape s, bool rg) {
  return full(std::move(s), T(0), rg);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape s, T value, bool rg) {
  const auto n = numel(s);
  return Tensor(std::move(s), std::vector<T>(n, value), rg);
}

template <class T>
bool Tensor<T>::all_finite() const {
  for (auto v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace svda
