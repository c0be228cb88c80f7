#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "moments_nerf/zernike.hpp"

using namespace moments_nerf;
using namespace moments_nerf::zernike;

namespace {

std::vector<double> random_patch(std::mt19937_64& rng, int size) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> p(static_cast<std::size_t>(size) * size);
  for (auto& v : p) v = u(rng);
  return p;
}

// 90 degrees counter-clockwise on the pixel grid.
std::vector<double> rot90(const std::vector<double>& p, int n) {
  std::vector<double> out(p.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = p[static_cast<std::size_t>(j) * n + (n - 1 - i)];
  return out;
}

}  // namespace

TEST(Zernike, IndexSetHasFifteenValidEntries) {
  const auto idx = indices(4);
  ASSERT_EQ(idx.size(), 15u);
  for (const auto& i : idx) EXPECT_TRUE(i.valid());
  EXPECT_EQ(idx[0], (ZernikeIndex{0, 0, Parity::Even}));
  EXPECT_EQ(idx[1], (ZernikeIndex{1, 1, Parity::Even}));
  EXPECT_EQ(idx[2], (ZernikeIndex{1, 1, Parity::Odd}));
  EXPECT_EQ(idx[3], (ZernikeIndex{2, 0, Parity::Even}));
  EXPECT_FALSE((ZernikeIndex{2, 0, Parity::Odd}).valid());
  EXPECT_FALSE((ZernikeIndex{2, 1, Parity::Even}).valid());
}

TEST(Zernike, RadialPolyExamples) {
  EXPECT_DOUBLE_EQ(radial_poly(3, 3, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(radial_poly(2, 1, 0.7), 0.0);
  EXPECT_NEAR(radial_poly(2, 0, 0.5), -0.5, 1e-15);
  EXPECT_THROW(radial_poly(2, 3, 0.5), ArgumentError);
  EXPECT_THROW(radial_poly(-1, 0, 0.5), ArgumentError);
}

TEST(Zernike, RadialPolyMatchesClosedForms) {
  for (double r = 0.0; r <= 1.0; r += 0.05) {
    EXPECT_NEAR(radial_poly(0, 0, r), 1.0, 1e-14);
    EXPECT_NEAR(radial_poly(1, 1, r), r, 1e-14);
    EXPECT_NEAR(radial_poly(2, 0, r), 2 * r * r - 1, 1e-14);
    EXPECT_NEAR(radial_poly(2, 2, r), r * r, 1e-14);
    EXPECT_NEAR(radial_poly(3, 1, r), 3 * r * r * r - 2 * r, 1e-14);
    EXPECT_NEAR(radial_poly(3, 3, r), r * r * r, 1e-14);
    EXPECT_NEAR(radial_poly(4, 0, r), 6 * std::pow(r, 4) - 6 * r * r + 1, 1e-14);
    EXPECT_NEAR(radial_poly(4, 2, r), 4 * std::pow(r, 4) - 3 * r * r, 1e-14);
    EXPECT_NEAR(radial_poly(4, 4, r), std::pow(r, 4), 1e-14);
  }
}

TEST(Zernike, RadialPolyBoundaryIsOne) {
  for (const auto& i : indices(4)) EXPECT_NEAR(radial_poly(i.n, i.m, 1.0), 1.0, 1e-14);
}

TEST(Zernike, OddNMinusMIsZeroEverywhere) {
  for (int n = 0; n <= 6; ++n)
    for (int m = 0; m <= n; ++m) {
      if ((n - m) % 2 == 0) continue;
      for (double r = 0.0; r <= 1.0; r += 0.1) EXPECT_EQ(radial_poly(n, m, r), 0.0);
    }
}

TEST(Zernike, EvalExamples) {
  EXPECT_DOUBLE_EQ(zernike_eval({0, 0, Parity::Even}, 0.3, 1.7), 1.0);
  EXPECT_DOUBLE_EQ(zernike_eval({3, 1, Parity::Odd}, 0.6, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(zernike_eval({1, 1, Parity::Even}, 1.0, 0.0), 1.0);
  EXPECT_NEAR(zernike_eval({2, 2, Parity::Odd}, 0.5, 0.4), 0.25 * std::sin(0.8), 1e-15);
}

TEST(Zernike, BasisShapeAndMask) {
  const auto b = build_basis(4, 9);
  ASSERT_EQ(b.count(), 15);
  EXPECT_EQ(b.size(), 9);
  for (int k = 0; k < b.count(); ++k)
    for (std::size_t p = 0; p < b.grid.pixels(); ++p) {
      EXPECT_EQ(b.grid.radius[p] > 1.0, !b.grid.mask[p]);
      if (!b.grid.mask[p]) {
        EXPECT_EQ(b.values[k][p], 0.0);
      }
    }
}

TEST(Zernike, BasisRejectsBadGrids) {
  EXPECT_THROW(build_basis(4, 8), ArgumentError);
  EXPECT_THROW(build_basis(4, 3), ArgumentError);
}

TEST(Zernike, CellWeightsApproachDiskArea) {
  double prev_err = 1.0;
  for (int n : {33, 129, 513}) {
    const auto g = DiskGrid::make(n);
    double s = 0.0;
    for (double w : g.cell_weight) s += w;
    const double err = std::abs(s - std::numbers::pi);
    EXPECT_LT(err, prev_err);
    prev_err = err;
  }
  EXPECT_LT(prev_err, 1e-2);
}

// Independent Gram matrix with a direct double loop over the grid.
TEST(Zernike, GramIsIdentityOnLargeGrids) {
  for (int n : {257, 513}) {
    const auto b = build_basis(4, n);
    double off = 0.0, diag = 0.0;
    for (int i = 0; i < 15; ++i)
      for (int j = 0; j < 15; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < b.grid.pixels(); ++p) s += b.grid.cell_weight[p] * b.values[i][p] * b.values[j][p];
        if (i == j)
          diag = std::max(diag, std::abs(s - 1.0));
        else
          off = std::max(off, std::abs(s));
      }
    EXPECT_LT(diag, 1e-6);
    EXPECT_LT(off, n == 257 ? 5e-3 : 1e-3);
  }
}

TEST(Zernike, UnitNormPlanesAreNearlyOrthogonalAlready) {
  const auto b = build_basis(4, 257, Normalization::UnitNorm);
  for (int i = 0; i < 15; ++i) {
    EXPECT_NEAR(b.inner(b.values[i], b.values[i]), 1.0, 1e-12);
    for (int j = 0; j < i; ++j) EXPECT_LT(std::abs(b.inner(b.values[i], b.values[j])), 5e-3);
  }
}

TEST(Zernike, MomentsExamples) {
  const auto b = build_basis(4, 15);
  const std::vector<double> zero(b.grid.pixels(), 0.0);
  for (double a : moments(zero, b)) EXPECT_EQ(a, 0.0);

  const auto piston = moments(b.values[0], b);
  EXPECT_NEAR(piston[0], 1.0, 1e-6);
  for (int k = 1; k < 15; ++k) EXPECT_NEAR(piston[k], 0.0, 1e-6);

  std::vector<double> constant(b.grid.pixels(), 0.7);
  const auto c = moments(constant, b);
  EXPECT_GT(std::abs(c[0]), 0.1);
  for (int k = 1; k < 15; ++k) EXPECT_NEAR(c[k], 0.0, 1e-12);

  EXPECT_THROW(moments(std::vector<double>(10, 0.0), b), ArgumentError);
}

TEST(Zernike, ReconstructExamples) {
  const auto b = build_basis(4, 11);
  ZernikeCoeffs zero{};
  for (double v : reconstruct(zero, b)) EXPECT_EQ(v, 0.0);

  ZernikeCoeffs piston{};
  piston[0] = 1.0;
  const auto p = reconstruct(piston, b);
  const double level = 1.0 / std::sqrt(b.inner(std::vector<double>(b.grid.pixels(), 1.0),
                                               std::vector<double>(b.grid.pixels(), 1.0)));
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], b.grid.mask[i] ? level : 0.0, 1e-12);
}

TEST(Zernike, MomentRoundTrip) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int n : {7, 31}) {
    const auto b = build_basis(4, n);
    for (int trial = 0; trial < 20; ++trial) {
      ZernikeCoeffs a;
      for (auto& v : a) v = g(rng);
      const auto back = moments(reconstruct(a, b), b);
      for (int k = 0; k < 15; ++k) EXPECT_NEAR(back[k], a[k], 1e-6 * std::max(1.0, std::abs(a[k])));
    }
  }
}

TEST(Zernike, ProjectionIsIdempotent) {
  std::mt19937_64 rng(5);
  const auto b = build_basis(4, 13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto patch = random_patch(rng, 13);
    const auto once = reconstruct(moments(patch, b), b);
    const auto twice = reconstruct(moments(once, b), b);
    for (std::size_t p = 0; p < once.size(); ++p) EXPECT_NEAR(once[p], twice[p], 1e-6);
  }
}

TEST(Zernike, MomentsAreLinear) {
  std::mt19937_64 rng(9);
  const auto b = build_basis(4, 9);
  const auto p = random_patch(rng, 9);
  const auto q = random_patch(rng, 9);
  const double a = 1.7, c = -0.4;
  std::vector<double> mix(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) mix[i] = a * p[i] + c * q[i];
  const auto mp = moments(p, b), mq = moments(q, b), mm = moments(mix, b);
  for (int k = 0; k < 15; ++k) EXPECT_NEAR(mm[k], a * mp[k] + c * mq[k], 1e-13);
}

TEST(Zernike, MagnitudesInvariantUnderGridRotation) {
  std::mt19937_64 rng(11);
  for (int n : {7, 21}) {
    const auto b = build_basis(4, n);
    for (int trial = 0; trial < 10; ++trial) {
      const auto p = random_patch(rng, n);
      const auto m0 = magnitudes(moments(p, b), b);
      const auto m1 = magnitudes(moments(rot90(p, n), b), b);
      ASSERT_EQ(m0.size(), 9u);
      for (std::size_t k = 0; k < m0.size(); ++k) EXPECT_NEAR(m1[k], m0[k], 1e-6 * std::max(1.0, m0[k]));
    }
  }
}

TEST(Zernike, CsvDumps) {
  const auto b = build_basis(4, 5);
  std::ostringstream basis_csv, coeff_csv;
  write_basis_csv(basis_csv, b);
  ZernikeCoeffs a{};
  a[3] = 0.5;
  write_coeffs_csv(coeff_csv, a, b);
  std::istringstream bl(basis_csv.str()), cl(coeff_csv.str());
  std::string line;
  int rows = 0;
  while (std::getline(bl, line)) ++rows;
  EXPECT_EQ(rows, 16);  // header + 15
  std::getline(cl, line);
  std::getline(cl, line);
  EXPECT_EQ(line.substr(0, 7), "0,0,eve");
}
