#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace mmpivot {

using Shape = std::vector<int64_t>;

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) {
    if (e <= 0) fail_invalid("tensor extents must be positive, got ", shape_string(s));
    if (n > (int64_t(1) << 40) / e) fail_invalid("tensor too large: ", shape_string(s));
    n *= e;
  }
  return n;
}

// Dense row-major tensor. Default-constructed tensors are the empty
// placeholder; every constructed tensor has positive extents.
template <typename Real>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape)
      : shape_(std::move(shape)), data_(shape_size(shape_), Real(0)) {}

  TensorT(Shape shape, std::vector<Real> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<int64_t>(data_.size()) != shape_size(shape_))
      fail_invalid("value count ", data_.size(), " does not match shape ",
                   shape_string(shape_));
  }

  static TensorT matrix(int64_t rows, int64_t cols) { return TensorT(Shape{rows, cols}); }

  static TensorT scalar(Real v) { return TensorT(Shape{1, 1}, std::vector<Real>{v}); }

  static TensorT row(std::vector<Real> values) {
    const int64_t n = static_cast<int64_t>(values.size());
    return TensorT(Shape{1, n}, std::move(values));
  }

  static TensorT column(std::vector<Real> values) {
    const int64_t n = static_cast<int64_t>(values.size());
    return TensorT(Shape{n, 1}, std::move(values));
  }

  static TensorT full(Shape shape, Real v) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Rank <= 2 matrix view; a rank-1 tensor reads as a single row.
  int64_t rows() const {
    if (rank() == 2) return shape_[0];
    if (rank() == 1) return 1;
    fail_invalid("rows() needs rank <= 2, shape ", shape_string(shape_));
  }

  int64_t cols() const {
    if (rank() == 2) return shape_[1];
    if (rank() == 1) return shape_[0];
    fail_invalid("cols() needs rank <= 2, shape ", shape_string(shape_));
  }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }

  Real& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  Real operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  Real& operator()(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  Real operator()(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  std::span<const Real> row_span(int64_t r) const {
    return std::span<const Real>(data_.data() + r * cols(), static_cast<size_t>(cols()));
  }

  std::span<Real> row_span(int64_t r) {
    return std::span<Real>(data_.data() + r * cols(), static_cast<size_t>(cols()));
  }

  bool all_finite() const {
    for (Real v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename Other>
  TensorT<Other> cast() const {
    std::vector<Other> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
    return TensorT<Other>(shape_, std::move(out));
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  friend bool operator==(const TensorT& a, const TensorT& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace mmpivot
