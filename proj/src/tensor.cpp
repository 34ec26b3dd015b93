#include "combo/tensor.hpp"

#include <cmath>

namespace combo::nn {

Tensor::Tensor(std::vector<int> dims) : shape(std::move(dims)) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  v.assign(n, 0.0);
}

bool Tensor::all_finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// i-k-j product; the k-major inner loop keeps b's rows hot in cache.
Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims mismatch");
  int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(m, n);
  const double* bp = b.v.data();
  for (int i = 0; i < m; ++i) {
    const double* ar = a.row(i);
    double* orow = out.row(i);
    for (int kk = 0; kk < k; ++kk) {
      double av = ar[kk];
      if (av == 0.0) continue;
      const double* brow = bp + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_transpose_a(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_ta: row dims mismatch");
  int m = a.cols(), k = a.rows(), n = b.cols();
  Tensor out(m, n);
  for (int kk = 0; kk < k; ++kk) {
    const double* ar = a.row(kk);
    const double* br = b.row(kk);
    for (int i = 0; i < m; ++i) {
      double av = ar[i];
      if (av == 0.0) continue;
      double* orow = out.row(i);
      for (int j = 0; j < n; ++j) orow[j] += av * br[j];
    }
  }
  return out;
}

Tensor matmul_transpose_b(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_tb: col dims mismatch");
  int m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out(m, n);
  for (int i = 0; i < m; ++i) {
    const double* ar = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < n; ++j) {
      const double* br = b.row(j);
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
      orow[j] = acc;
    }
  }
  return out;
}

Tensor concat_cols(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  int rows = parts[0]->rows();
  int cols = 0;
  for (const Tensor* p : parts) {
    if (p->rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p->cols();
  }
  Tensor out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    double* dst = out.row(r);
    for (const Tensor* p : parts) {
      const double* src = p->row(r);
      for (int c = 0; c < p->cols(); ++c) *dst++ = src[c];
    }
  }
  return out;
}

double gaussian(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  while (u1 <= 1e-300) u1 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void fill_gaussian(Tensor& t, std::mt19937_64& rng, double scale) {
  for (double& x : t.v) x = gaussian(rng) * scale;
}

}  // namespace combo::nn
