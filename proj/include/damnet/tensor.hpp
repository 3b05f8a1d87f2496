#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace damnet {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

i64 shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major tensor of doubles. Value semantics; copies are deep.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, double fill);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor randn(const Shape& shape, double mean, double stddev, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return randn(shape, rng, stddev, mean);
  }
  static Tensor randn(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0,
                      double mean = 0.0);
  static Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi);

  bool empty() const { return data_.empty(); }
  i64 ndim() const { return static_cast<i64>(shape_.size()); }
  i64 dim(i64 i) const { return shape_[static_cast<size_t>(i)]; }
  i64 numel() const { return static_cast<i64>(data_.size()); }
  const Shape& shape() const { return shape_; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const { return damnet::shape_str(shape_); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](i64 i) { return data_[static_cast<size_t>(i)]; }
  double operator[](i64 i) const { return data_[static_cast<size_t>(i)]; }

  /// Same storage, new shape (numel must match). Returns a copy.
  Tensor reshaped(Shape shape) const;

  void fill(double v);
  void zero() { fill(0.0); }

  double sum() const;
  double min() const;
  double max() const;
  double max_abs() const;
  bool all_finite() const;
  bool equals(const Tensor& o) const;  // bitwise on values, same shape

private:
  Shape shape_;
  std::vector<double> data_;
};

/// C = alpha * op(A) * op(B) + beta * C with row-major storage.
/// op(A) is m x k, op(B) is k x n; ta/tb select the transposed reading.
void gemm(bool ta, bool tb, i64 m, i64 n, i64 k, double alpha, const double* a, const double* b,
          double beta, double* c);

Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace damnet
