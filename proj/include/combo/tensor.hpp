#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace combo::nn {

/// Dense row-major tensor of 64-bit floats. Most of the codebase uses the
/// 2-D [rows x cols] form with rows as the batch dimension.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int rows, int cols) : shape{rows, cols}, v(static_cast<size_t>(rows) * cols, 0.0) {}
  explicit Tensor(std::vector<int> dims);

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  size_t size() const { return v.size(); }
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols() + c]; }
  double* row(int r) { return v.data() + static_cast<size_t>(r) * cols(); }
  const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols(); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
  void fill(double value) { std::fill(v.begin(), v.end(), value); }
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_transpose_a(const Tensor& a, const Tensor& b);  // a^T * b
Tensor matmul_transpose_b(const Tensor& a, const Tensor& b);  // a * b^T
Tensor concat_cols(const std::vector<const Tensor*>& parts);

/// Deterministic uniform double in [0, 1) built from the raw mt19937_64
/// stream, identical across platforms.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Box-Muller standard normal; two uniforms per draw, fully deterministic.
double gaussian(std::mt19937_64& rng);

void fill_gaussian(Tensor& t, std::mt19937_64& rng, double scale = 1.0);

}  // namespace combo::nn
