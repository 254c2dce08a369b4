#include "ftcaqr/verify.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "ftcaqr/dense_kernels.hpp"

namespace ftcaqr {

OracleQR oracle_qr(const Matrix& a) {
  if (a.rows() < a.cols() || a.cols() == 0) {
    throw DimensionError(fmt::format("oracle needs rows >= cols >= 1, got {}x{}", a.rows(), a.cols()));
  }
  const QRFactor f = householder_qr(a);
  Matrix e(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) e(i, i) = 1.0;
  Matrix q = apply_q(f, e);
  const SignNormalized n = sign_normalize(f.R);
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < q.cols(); ++j) q(i, j) *= n.signs[j];
  return {std::move(q), n.R};
}

SignNormalized sign_normalize(const Matrix& r) {
  SignNormalized out{r, std::vector<double>(r.rows(), 1.0)};
  const std::size_t k = std::min(r.rows(), r.cols());
  for (std::size_t i = 0; i < k; ++i) {
    if (r(i, i) >= 0) continue;
    out.signs[i] = -1.0;
    for (std::size_t j = 0; j < r.cols(); ++j) out.R(i, j) = -r(i, j);
  }
  return out;
}

Metrics metrics(const Matrix& a, const Matrix& q, const Matrix& r) {
  if (q.rows() != a.rows() || q.cols() != r.rows() || r.cols() != a.cols()) {
    throw DimensionError(fmt::format("metrics: A {}x{}, Q {}x{}, R {}x{}", a.rows(), a.cols(),
                                     q.rows(), q.cols(), r.rows(), r.cols()));
  }
  Metrics m;
  const double na = frobenius_norm(a);
  const double resid = frobenius_norm(a - q * r);
  m.backward_error = na > 0 ? resid / na : resid;
  m.orthogonality = frobenius_norm(transpose_times(q, q) - Matrix::identity(q.cols()));
  for (std::size_t i = 0; i < r.rows(); ++i)
    for (std::size_t j = 0; j < std::min(i, r.cols()); ++j)
      m.triangularity = std::max(m.triangularity, std::abs(r(i, j)));
  return m;
}

double compare_runs(const Matrix& r1, const Matrix& r2) {
  if (r1.rows() != r2.rows() || r1.cols() != r2.cols()) {
    throw DimensionError(fmt::format("compare_runs: {}x{} vs {}x{}", r1.rows(), r1.cols(),
                                     r2.rows(), r2.cols()));
  }
  return max_abs(sign_normalize(r1).R - sign_normalize(r2).R);
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Matrix a(rows, cols);
  for (double& x : a.data()) x = 2.0 * std::ldexp(static_cast<double>(gen() >> 11), -53) - 1.0;
  return a;
}

}  // namespace ftcaqr
