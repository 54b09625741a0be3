#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cdk/error.hpp"
#include "cdk/rng.hpp"

namespace cdk {

// Dense row-major tensor. Shapes are dynamic; rank is small (<= 5).
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel(shape_)), T(0));
  }

  TensorT(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(static_cast<int64_t>(data_.size()) == numel(shape_),
            "tensor data length does not match shape");
  }

  static int64_t numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      require(d >= 0, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

  static TensorT zeros(std::vector<int64_t> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int64_t> shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static TensorT ones(std::vector<int64_t> shape) { return full(std::move(shape), T(1)); }

  static TensorT randn(std::vector<int64_t> shape, Rng& rng, T stddev = T(1)) {
    TensorT t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  const T& at2(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * shape_[1] + j)];
  }

  int64_t idx3(int64_t a, int64_t b, int64_t c) const {
    return (a * shape_[1] + b) * shape_[2] + c;
  }
  int64_t idx4(int64_t a, int64_t b, int64_t c, int64_t d) const {
    return ((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }
  T& at3(int64_t a, int64_t b, int64_t c) { return data_[static_cast<size_t>(idx3(a, b, c))]; }
  const T& at3(int64_t a, int64_t b, int64_t c) const {
    return data_[static_cast<size_t>(idx3(a, b, c))];
  }
  T& at4(int64_t a, int64_t b, int64_t c, int64_t d) {
    return data_[static_cast<size_t>(idx4(a, b, c, d))];
  }
  const T& at4(int64_t a, int64_t b, int64_t c, int64_t d) const {
    return data_[static_cast<size_t>(idx4(a, b, c, d))];
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  TensorT reshaped(std::vector<int64_t> shape) const {
    require(numel(shape) == size(), "reshape changes element count");
    TensorT t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  // Convert between scalar types (used by double-precision checks).
  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape_);
    for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  static std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
double mean_sq(const TensorT<T>& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double v = static_cast<double>(a[i]);
    s += v * v;
  }
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

}  // namespace cdk
