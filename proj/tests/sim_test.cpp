#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "peg/sim.hpp"

namespace peg {
namespace {

TEST(Cosine, FortyFiveDegrees) {
  const Vector a{1.0, 0.0}, b{1.0, 1.0};
  EXPECT_NEAR(cosine(a, b), 0.70710678118654752, 1e-15);
}

TEST(Cosine, SymmetricAndScaleInvariant) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Vector a(6), b(6);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    const double c = cosine(a, b);
    EXPECT_DOUBLE_EQ(c, cosine(b, a));
    Vector scaled = a;
    for (auto& x : scaled) x *= 7.5;
    EXPECT_NEAR(c, cosine(scaled, b), 1e-14);
    EXPECT_LE(std::abs(c), 1.0);
  }
}

TEST(Cosine, ClampsParallelVectors) {
  const Vector a{0.1, 0.2, 0.3};
  Vector b = a;
  for (auto& x : b) x *= 3.0;
  EXPECT_LE(cosine(a, b), 1.0);
  EXPECT_NEAR(cosine(a, b), 1.0, 1e-15);
}

TEST(Cosine, DimensionMismatchThrows) {
  const Vector a{1.0, 2.0}, b{1.0, 2.0, 3.0};
  EXPECT_THROW(cosine(a, b), DomainError);
}

TEST(Cosine, ZeroNormNamesOperand) {
  const Vector a{0.0, 0.0}, b{1.0, 2.0};
  try {
    cosine(b, a);
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("second"), std::string::npos);
  }
  EXPECT_THROW(cosine(a, b), DomainError);
}

TEST(SimMatrix, MatchesPairwiseCosine) {
  const Matrix q = Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
  const Matrix c = Matrix::from_rows({{1, 0}, {-1, 1}});
  const Matrix s = sim_matrix(q, c);
  ASSERT_EQ(s.rows(), 3u);
  ASSERT_EQ(s.cols(), 2u);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(s(i, j), cosine(q.row(i), c.row(j)));
  }
}

TEST(LogSumExp, Fixtures) {
  const Vector zeros{0.0, 0.0};
  EXPECT_NEAR(log_sum_exp(zeros), std::log(2.0), 1e-15);
  const Vector big{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(big), 1000.6931471805599, 1e-12);
  const Vector small{-1000.0, -1000.0};
  EXPECT_NEAR(log_sum_exp(small), -1000.0 + std::log(2.0), 1e-12);
}

TEST(LogSumExp, ShiftEquivariant) {
  const Vector x{0.3, -2.0, 5.0, 1.25};
  Vector shifted = x;
  for (auto& v : shifted) v += 123.0;
  EXPECT_NEAR(log_sum_exp(shifted), log_sum_exp(x) + 123.0, 1e-12);
}

TEST(LogSumExp, NegativeInfinityEntriesIgnored) {
  const double inf = std::numeric_limits<double>::infinity();
  const Vector x{-inf, 0.0};
  EXPECT_DOUBLE_EQ(log_sum_exp(x), 0.0);
}

TEST(LogSumExp, EmptyThrows) { EXPECT_THROW(log_sum_exp(Vector{}), DomainError); }

TEST(Normalize, UnitLength) {
  Vector v{3.0, 4.0};
  normalize_in_place(v);
  EXPECT_DOUBLE_EQ(v[0], 0.6);
  EXPECT_DOUBLE_EQ(v[1], 0.8);
}

}  // namespace
}  // namespace peg
