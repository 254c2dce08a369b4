#pragma once

#include <vector>

#include "ftcaqr/matrix.hpp"

namespace ftcaqr {

/// Implicit Householder factorization A = (I - Y T Y^T) [R; 0].
struct QRFactor {
  Matrix Y;                 ///< m x n, unit lower trapezoidal
  std::vector<double> tau;  ///< reflector scalars
  Matrix R;                 ///< n x n upper triangular
  Matrix T;                 ///< n x n upper triangular compact-WY factor
};

/// QR of two stacked n x n upper triangles [Ra; Rb]. The top block of the
/// stacked reflectors is the identity and is not stored; Y1 is the lower
/// block (upper triangular).
struct CombineFactor {
  Matrix Y1;
  Matrix T;
  Matrix Rout;
};

/// Unblocked Householder QR of an m x n matrix, m >= n.
///
/// Each reflector sends its pivot column to -sign(pivot) * ||x|| e_1, so R
/// may have negative diagonal entries. A column whose subdiagonal part is
/// exactly zero is left alone (tau = 0).
QRFactor householder_qr(const Matrix& A);

/// Forward column-wise T such that I - Y T Y^T = H_0 H_1 ... H_{n-1}.
Matrix build_t(const Matrix& Y, const std::vector<double>& tau);

/// Q^T C = C - Y (T^T (Y^T C)).
Matrix apply_qt(const QRFactor& f, const Matrix& C);

/// Q C = C - Y (T (Y^T C)).
Matrix apply_q(const QRFactor& f, const Matrix& C);

/// Householder QR of [Ra; Rb] for upper-triangular n x n inputs.
CombineFactor combine_qr(const Matrix& Ra, const Matrix& Rb);

/// Rows owned by the top (identity) block: C0' - W.
Matrix update_top(const Matrix& C0p, const Matrix& W);

/// Rows owned by the bottom block: C1' - Y1 W.
Matrix update_bottom(const Matrix& C1p, const Matrix& Y1, const Matrix& W);

/// W = T^T (C0' + Y1^T C1').
Matrix compute_w(const Matrix& C0p, const Matrix& C1p, const CombineFactor& cf);

struct PairUpdate {
  Matrix chat0;
  Matrix chat1;
  Matrix W;
};

/// Applies the transpose of the combine factor's Q to [C0'; C1'].
PairUpdate pair_update(const Matrix& C0p, const Matrix& C1p, const CombineFactor& cf);

/// Full stacked reflector matrix [I; Y1] of a combine factor.
Matrix stacked_reflectors(const CombineFactor& cf);

}  // namespace ftcaqr
