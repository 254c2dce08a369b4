#include <gtest/gtest.h>

#include <random>

#include "ftcaqr/verify.hpp"

using namespace ftcaqr;

TEST(Oracle, IdentityIsFixed) {
  const auto o = oracle_qr(Matrix::identity(4));
  EXPECT_EQ(o.Q, Matrix::identity(4));
  EXPECT_EQ(o.R, Matrix::identity(4));
}

TEST(Oracle, ThreeFourFive) {
  const auto o = oracle_qr(Matrix{{3.0}, {4.0}});
  EXPECT_NEAR(o.R(0, 0), 5.0, 1e-15);
  EXPECT_NEAR(o.Q(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(o.Q(1, 0), 0.8, 1e-15);
}

TEST(Oracle, RandomSelfCheck) {
  const Matrix a = random_matrix(10, 4, 3);
  const auto o = oracle_qr(a);
  const auto m = metrics(a, o.Q, o.R);
  EXPECT_LE(m.backward_error, 1e-14);
  EXPECT_LE(m.orthogonality, 1e-14);
  EXPECT_EQ(m.triangularity, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_GE(o.R(i, i), 0.0);
}

TEST(Oracle, RejectsWide) {
  EXPECT_THROW(oracle_qr(Matrix(2, 3)), DimensionError);
}

TEST(SignNormalize, Cases) {
  const Matrix pos{{1.0, 2.0}, {0.0, 3.0}};
  const auto a = sign_normalize(pos);
  EXPECT_EQ(a.R, pos);
  EXPECT_EQ(a.signs, (std::vector<double>{1.0, 1.0}));

  const auto b = sign_normalize(Matrix{{-2.0, 1.0}, {0.0, 3.0}});
  EXPECT_EQ(b.R, (Matrix{{2.0, -1.0}, {0.0, 3.0}}));
  EXPECT_EQ(b.signs, (std::vector<double>{-1.0, 1.0}));
  EXPECT_EQ(sign_normalize(b.R).R, b.R);

  const auto z = sign_normalize(Matrix{{0.0, -1.0}, {0.0, -1.0}});
  EXPECT_EQ(z.signs, (std::vector<double>{1.0, -1.0}));
}

TEST(Metrics, ExactPairAndErrors) {
  const Matrix q{{1.0, 0.0}, {0.0, 1.0}, {0.0, 0.0}};
  const Matrix r{{2.0, 1.0}, {0.5, 3.0}};
  const auto m = metrics(q * r, q, r);
  EXPECT_EQ(m.backward_error, 0.0);
  EXPECT_EQ(m.orthogonality, 0.0);
  EXPECT_EQ(m.triangularity, 0.5);
  EXPECT_THROW(metrics(Matrix(3, 2), Matrix(3, 3), r), DimensionError);
}

TEST(CompareRuns, SignInsensitive) {
  const Matrix r{{-2.0, 1.0}, {0.0, 3.0}};
  EXPECT_EQ(compare_runs(r, r), 0.0);
  EXPECT_EQ(compare_runs(r, Matrix{{2.0, -1.0}, {0.0, 3.0}}), 0.0);
  EXPECT_EQ(compare_runs(r, Matrix{{2.0, -1.5}, {0.0, 3.0}}), 0.5);
  EXPECT_THROW(compare_runs(r, Matrix(1, 2)), DimensionError);
}

TEST(RandomMatrix, DocumentedMapping) {
  const Matrix a = random_matrix(3, 4, 42);
  std::mt19937_64 gen(42);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double want = static_cast<double>(gen() >> 11) / 9007199254740992.0 * 2.0 - 1.0;
      EXPECT_EQ(a(i, j), want);
      EXPECT_GE(a(i, j), -1.0);
      EXPECT_LT(a(i, j), 1.0);
    }
  EXPECT_EQ(random_matrix(3, 4, 42), a);
  EXPECT_FALSE(random_matrix(3, 4, 43) == a);
}
