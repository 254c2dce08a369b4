#include "ftcaqr/dense_kernels.hpp"

#include <cmath>

#include <fmt/format.h>

namespace ftcaqr {

QRFactor householder_qr(const Matrix& A) {
  const std::size_t m = A.rows();
  const std::size_t n = A.cols();
  if (n == 0 || m < n) {
    throw DimensionError(fmt::format("householder_qr needs m >= n >= 1, got {}x{}", m, n));
  }
  A.require_finite("householder_qr");

  Matrix work = A;
  std::vector<double> tau(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double alpha = work(k, k);
    double sigma = 0.0;
    for (std::size_t i = k + 1; i < m; ++i) sigma += work(i, k) * work(i, k);
    if (sigma == 0.0) continue;

    const double norm = std::hypot(alpha, std::sqrt(sigma));
    const double beta = alpha >= 0.0 ? -norm : norm;
    const double v0 = alpha - beta;
    tau[k] = (beta - alpha) / beta;
    for (std::size_t i = k + 1; i < m; ++i) work(i, k) /= v0;
    work(k, k) = beta;

    for (std::size_t j = k + 1; j < n; ++j) {
      double w = work(k, j);
      for (std::size_t i = k + 1; i < m; ++i) w += work(i, k) * work(i, j);
      w *= tau[k];
      work(k, j) -= w;
      for (std::size_t i = k + 1; i < m; ++i) work(i, j) -= work(i, k) * w;
    }
  }

  QRFactor f;
  f.Y = Matrix(m, n);
  f.R = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    f.Y(j, j) = 1.0;
    for (std::size_t i = j + 1; i < m; ++i) f.Y(i, j) = work(i, j);
    for (std::size_t i = 0; i <= j; ++i) f.R(i, j) = work(i, j);
  }
  f.tau = std::move(tau);
  f.T = build_t(f.Y, f.tau);
  return f;
}

Matrix build_t(const Matrix& Y, const std::vector<double>& tau) {
  const std::size_t n = Y.cols();
  if (tau.size() != n) {
    throw DimensionError(fmt::format("build_t: {} reflectors but {} tau", n, tau.size()));
  }
  Matrix T(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    T(i, i) = tau[i];
    if (i == 0 || tau[i] == 0.0) continue;
    // z = Y(:, 0:i)^T Y(:, i)
    std::vector<double> z(i, 0.0);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      const double yri = Y(r, i);
      if (yri == 0.0) continue;
      for (std::size_t c = 0; c < i; ++c) z[c] += Y(r, c) * yri;
    }
    // T(0:i, i) = -tau_i T(0:i, 0:i) z
    for (std::size_t r = 0; r < i; ++r) {
      double s = 0.0;
      for (std::size_t c = r; c < i; ++c) s += T(r, c) * z[c];
      T(r, i) = -tau[i] * s;
    }
  }
  return T;
}

Matrix apply_qt(const QRFactor& f, const Matrix& C) {
  if (C.rows() != f.Y.rows()) {
    throw DimensionError(
        fmt::format("apply_qt: C has {} rows, factor has {}", C.rows(), f.Y.rows()));
  }
  return C - f.Y * transpose_times(f.T, transpose_times(f.Y, C));
}

Matrix apply_q(const QRFactor& f, const Matrix& C) {
  if (C.rows() != f.Y.rows()) {
    throw DimensionError(
        fmt::format("apply_q: C has {} rows, factor has {}", C.rows(), f.Y.rows()));
  }
  return C - f.Y * (f.T * transpose_times(f.Y, C));
}

namespace {
void require_upper_triangular(const Matrix& R, double scale, const char* name) {
  if (R.rows() != R.cols()) {
    throw DimensionError(fmt::format("combine_qr: {} is {}x{}, not square", name, R.rows(),
                                     R.cols()));
  }
  for (std::size_t i = 0; i < R.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(R(i, j)) > 1e-14 * scale) {
        throw InputError(fmt::format("combine_qr: {} not upper triangular at ({},{})", name, i, j));
      }
}

Matrix upper_part(const Matrix& R) {
  Matrix U = R;
  for (std::size_t i = 0; i < U.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) U(i, j) = 0.0;
  return U;
}
}  // namespace

CombineFactor combine_qr(const Matrix& Ra, const Matrix& Rb) {
  if (Ra.rows() != Rb.rows() || Ra.cols() != Rb.cols()) {
    throw DimensionError("combine_qr: operands differ in shape");
  }
  const double scale = std::hypot(frobenius_norm(Ra), frobenius_norm(Rb));
  require_upper_triangular(Ra, scale, "Ra");
  require_upper_triangular(Rb, scale, "Rb");

  const std::size_t n = Ra.cols();
  QRFactor f = householder_qr(vstack(upper_part(Ra), upper_part(Rb)));

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double expected = i == j ? 1.0 : 0.0;
      if (f.Y(i, j) != expected) {
        throw std::logic_error("combine_qr: top reflector block is not the identity");
      }
    }

  CombineFactor cf;
  cf.Y1 = f.Y.block(n, 0, n, n);
  cf.T = std::move(f.T);
  cf.Rout = std::move(f.R);
  return cf;
}

Matrix update_top(const Matrix& C0p, const Matrix& W) { return C0p - W; }

Matrix update_bottom(const Matrix& C1p, const Matrix& Y1, const Matrix& W) {
  return C1p - Y1 * W;
}

Matrix compute_w(const Matrix& C0p, const Matrix& C1p, const CombineFactor& cf) {
  if (C0p.rows() != cf.T.rows() || C1p.rows() != cf.Y1.rows() || C0p.cols() != C1p.cols()) {
    throw DimensionError(fmt::format("pair update: C0' {}x{}, C1' {}x{}, factor order {}",
                                     C0p.rows(), C0p.cols(), C1p.rows(), C1p.cols(),
                                     cf.T.rows()));
  }
  return transpose_times(cf.T, C0p + transpose_times(cf.Y1, C1p));
}

PairUpdate pair_update(const Matrix& C0p, const Matrix& C1p, const CombineFactor& cf) {
  PairUpdate out;
  out.W = compute_w(C0p, C1p, cf);
  out.chat0 = update_top(C0p, out.W);
  out.chat1 = update_bottom(C1p, cf.Y1, out.W);
  return out;
}

Matrix stacked_reflectors(const CombineFactor& cf) {
  return vstack(Matrix::identity(cf.Y1.cols()), cf.Y1);
}

}  // namespace ftcaqr
