#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace svda {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array. `grad` is populated on graph leaves after a
/// backward pass when `requires_grad` is set.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::optional<std::vector<T>> grad;

  Tensor() = default;
  Tensor(Shape s, std::vector<T> d, bool rg = false);

  static Tensor zeros(Shape s, bool rg = false);
  static Tensor full(Shape s, T value, bool rg = false);

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  /// NCHW accessor.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  bool all_finite() const;

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    out.requires_grad = requires_grad;
    return out;
  }
};

/// Entries [begin, begin+count) along the first axis.
template <class T>
Tensor<T> slice_batch(const Tensor<T>& t, std::size_t begin, std::size_t count) {
  if (t.rank() == 0 || begin + count > t.dim(0))
    throw std::out_of_range("slice_batch: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                            ") outside " + shape_str(t.shape));
  Shape s = t.shape;
  s[0] = count;
  const std::size_t per = t.dim(0) ? t.size() / t.dim(0) : 0;
  return Tensor<T>(s, std::vector<T>(t.data.begin() + static_cast<std::ptrdiff_t>(begin * per),
                                     t.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * per)));
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

extern template struct Tensor<float>;
extern template struct Tensor<double>;

}  // namespace svda
