#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tsbn/errors.hpp"

namespace tsbn {

// Dense row-major tensor of doubles, rank 0..4. Shapes follow the
// (N, C, H, W) convention for feature maps and (N, F) for vectors.
struct Tensor {
  std::vector<long> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<long> dims, double fill = 0.0)
      : shape(std::move(dims)) {
    long n = 1;
    for (long d : shape) {
      if (d <= 0) throw InvalidInput("tensor dimension must be positive");
      n *= d;
    }
    data.assign(static_cast<std::size_t>(n), fill);
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data.assign(1, v);
    return t;
  }

  long numel() const { return static_cast<long>(data.size()); }
  long dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  double& operator[](long i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](long i) const { return data[static_cast<std::size_t>(i)]; }

  // 4-d accessor for (N, C, H, W) tensors.
  double& at4(long n, long c, long h, long w) {
    return data[static_cast<std::size_t>(
        ((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  double at4(long n, long c, long h, long w) const {
    return data[static_cast<std::size_t>(
        ((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }
};

inline long numel_of(const std::vector<long>& shape) {
  long n = 1;
  for (long d : shape) n *= d;
  return n;
}

}  // namespace tsbn
