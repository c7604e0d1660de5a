#pragma once
// Dense row-major tensor of float or double. Plain data holder; all math goes
// through the kernel table or the autograd tape.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "gloss/common.hpp"

namespace gloss {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    require(d >= 0, Errc::shape_mismatch, "negative dimension");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;

  static Tensor zeros(Shape s) {
    Tensor t;
    const int64_t n = shape_numel(s);
    t.shape = std::move(s);
    t.data.assign(static_cast<size_t>(n), T(0));
    return t;
  }

  static Tensor full(Shape s, T value) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  static Tensor from(Shape s, std::vector<T> values) {
    const int64_t n = shape_numel(s);
    require(static_cast<int64_t>(values.size()) == n, Errc::shape_mismatch,
            "value count " + std::to_string(values.size()) + " does not match shape " +
                shape_str(s));
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(values);
    return t;
  }

  static Tensor scalar(T value) { return from({}, {value}); }

  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  int64_t dim(int i) const {
    require(i >= 0 && i < ndim(), Errc::shape_mismatch, "dim index out of range");
    return shape[static_cast<size_t>(i)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // Row-major accessors for the handful of shapes used directly.
  T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  T at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
  T& at3(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  T at3(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  require(a.same_shape(b), Errc::shape_mismatch,
          std::string(where) + ": " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& where) {
  if (!t.all_finite()) fail(Errc::numeric_error, "non-finite values in " + where);
}

}  // namespace gloss
