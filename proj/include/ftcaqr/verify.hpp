#pragma once

#include <vector>

#include "ftcaqr/matrix.hpp"

namespace ftcaqr {

struct Metrics {
  double backward_error = 0.0;  ///< ||A - QR||_F / ||A||_F
  double orthogonality = 0.0;   ///< ||Q^T Q - I||_F
  double triangularity = 0.0;   ///< max |R(i,j)|, i > j
  double max_diff = 0.0;        ///< against a reference R, after sign normalization
};

struct OracleQR {
  Matrix Q;  ///< m x n, explicit
  Matrix R;  ///< n x n, nonnegative diagonal
};

/// Plain sequential Householder QR with an explicit thin Q. Uses none of
/// the tree, pair-update or ledger code.
OracleQR oracle_qr(const Matrix& a);

struct SignNormalized {
  Matrix R;
  std::vector<double> signs;  ///< +1 or -1 per row
};

/// Scale rows so the diagonal is nonnegative (zero diagonals keep +1).
SignNormalized sign_normalize(const Matrix& r);

Metrics metrics(const Matrix& a, const Matrix& q, const Matrix& r);

/// Max absolute difference after sign-normalizing both.
double compare_runs(const Matrix& r1, const Matrix& r2);

/// Uniform entries in [-1, 1): std::mt19937_64 seeded with `seed`, each
/// draw x mapped to 2 * (x >> 11) * 2^-53 - 1, filled row by row.
Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed);

}  // namespace ftcaqr
