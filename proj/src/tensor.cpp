#include "damnet/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace damnet {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
}  // namespace

i64 shape_numel(const Shape& s) {
  i64 n = 1;
  for (i64 d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (i64 d : shape_)
    if (d < 0)
      throw std::invalid_argument("Tensor: negative dimension in " + damnet::shape_str(shape_));
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, double fill) : Tensor(std::move(shape)) {
  this->fill(fill);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<i64>(values.size()))
    throw std::invalid_argument("Tensor::from: value count does not match shape " +
                                damnet::shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::randn(const Shape& shape, std::mt19937_64& rng, double stddev, double mean) {
  Tensor t(shape);
  std::normal_distribution<double> dist(mean, stddev);
  for (i64 i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

Tensor Tensor::uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (i64 i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str() + " -> " +
                                damnet::shape_str(shape));
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

void Tensor::fill(double v) {
  std::fill(data_.begin(), data_.end(), v);
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::min() const {
  return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
  return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::equals(const Tensor& o) const {
  return shape_ == o.shape_ &&
         std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(double)) == 0;
}

void gemm(bool ta, bool tb, i64 m, i64 n, i64 k, double alpha, const double* a, const double* b,
          double beta, double* c) {
  MapMat C(c, m, n);
  if (beta == 0.0)
    C.setZero();
  else if (beta != 1.0)
    C *= beta;
  const CMapMat A(a, ta ? k : m, ta ? m : k);
  const CMapMat B(b, tb ? n : k, tb ? k : n);
  if (!ta && !tb)
    C.noalias() += alpha * (A * B);
  else if (ta && !tb)
    C.noalias() += alpha * (A.transpose() * B);
  else if (!ta && tb)
    C.noalias() += alpha * (A * B.transpose());
  else
    C.noalias() += alpha * (A.transpose() * B.transpose());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() + " x " +
                                b.shape_str());
  Tensor out({a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), 1.0, a.data(), b.data(), 0.0, out.data());
  return out;
}

}  // namespace damnet
