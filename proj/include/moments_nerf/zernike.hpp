#pragma once

// Zernike radial polynomials, the 15-function basis up to radial order 4
// sampled on a square pixel grid with its inscribed unit disk, and the
// projection (moments) / expansion (reconstruct) pair.

#include <array>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace moments_nerf::zernike {

enum class Parity { Even, Odd };  // Even <-> cos(m theta), Odd <-> sin(m theta)

struct ZernikeIndex {
  int n = 0;
  int m = 0;
  Parity parity = Parity::Even;

  bool valid() const {
    return n >= 0 && m >= 0 && m <= n && (n - m) % 2 == 0 && !(parity == Parity::Odd && m == 0);
  }
  friend bool operator==(const ZernikeIndex&, const ZernikeIndex&) = default;
};

inline constexpr int kOrderCap = 4;
inline constexpr int kNumBasis = 15;

/// All valid indices with n <= order_cap in (n, m, even-before-odd) order.
inline std::vector<ZernikeIndex> indices(int order_cap = kOrderCap) {
  require(order_cap >= 0, "order_cap must be non-negative");
  std::vector<ZernikeIndex> out;
  for (int n = 0; n <= order_cap; ++n)
    for (int m = 0; m <= n; ++m) {
      if ((n - m) % 2) continue;
      out.push_back({n, m, Parity::Even});
      if (m > 0) out.push_back({n, m, Parity::Odd});
    }
  return out;
}

namespace detail {
inline double factorial(int k) {
  double f = 1.0;
  for (int i = 2; i <= k; ++i) f *= i;
  return f;
}
}  // namespace detail

/// R_n^m(r). Zero when n - m is odd.
inline double radial_poly(int n, int m, double r) {
  if (n < 0 || m < 0 || m > n)
    throw ArgumentError("radial_poly: need 0 <= m <= n, got n=" + std::to_string(n) + " m=" + std::to_string(m));
  if ((n - m) % 2) return 0.0;
  const int half_diff = (n - m) / 2;
  const int half_sum = (n + m) / 2;
  double acc = 0.0;
  for (int k = 0; k <= half_diff; ++k) {
    const double coef = ((k % 2) ? -1.0 : 1.0) * detail::factorial(n - k) /
                        (detail::factorial(k) * detail::factorial(half_sum - k) * detail::factorial(half_diff - k));
    acc += coef * std::pow(r, n - 2 * k);
  }
  return acc;
}

inline double zernike_eval(const ZernikeIndex& idx, double r, double theta) {
  require(idx.valid(), "zernike_eval: invalid index");
  const double radial = radial_poly(idx.n, idx.m, r);
  return idx.parity == Parity::Even ? radial * std::cos(idx.m * theta) : radial * std::sin(idx.m * theta);
}

/// Square pixel grid whose inscribed disk is the unit disk. Pixel (i, j) has
/// center x = (2j + 1)/size - 1, y = 1 - (2i + 1)/size (rows grow downward).
struct DiskGrid {
  int size = 0;
  std::vector<double> radius;  // per pixel, row-major
  std::vector<double> theta;   // in [0, 2 pi)
  std::vector<unsigned char> mask;
  std::vector<double> cell_weight;  // (2/size)^2 inside the disk, 0 outside

  static DiskGrid make(int size) {
    require(size >= 1, "DiskGrid: size must be positive");
    DiskGrid g;
    g.size = size;
    const std::size_t npx = static_cast<std::size_t>(size) * size;
    g.radius.resize(npx);
    g.theta.resize(npx);
    g.mask.resize(npx);
    g.cell_weight.resize(npx);
    const double cell = 2.0 / size;
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j) {
        const double x = (2.0 * j + 1.0) / size - 1.0;
        const double y = 1.0 - (2.0 * i + 1.0) / size;
        const std::size_t p = static_cast<std::size_t>(i) * size + j;
        const double r = std::hypot(x, y);
        double th = std::atan2(y, x);
        if (th < 0) th += 2.0 * std::numbers::pi;
        g.radius[p] = r;
        g.theta[p] = th;
        g.mask[p] = r <= 1.0;
        g.cell_weight[p] = g.mask[p] ? cell * cell : 0.0;
      }
    return g;
  }

  std::size_t pixels() const { return radius.size(); }
};

enum class Normalization {
  UnitNorm,     // each sampled plane rescaled to unit discrete norm
  Orthonormal,  // UnitNorm followed by weighted Gram-Schmidt in index order
};

/// The 15 normalized basis planes. values[k] is a size*size row-major plane.
struct ZernikeBasis {
  DiskGrid grid;
  std::vector<ZernikeIndex> index;
  std::vector<std::vector<double>> values;
  std::vector<double> norms;  // discrete norm of each raw plane before rescaling

  int size() const { return grid.size; }
  int count() const { return static_cast<int>(values.size()); }

  /// Weighted discrete inner product of two planes on this grid.
  double inner(std::span<const double> a, std::span<const double> b) const {
    double s = 0.0;
    for (std::size_t p = 0; p < grid.pixels(); ++p) s += grid.cell_weight[p] * a[p] * b[p];
    return s;
  }
};

/// Sampled basis on a grid_size x grid_size disk grid. The default
/// orthonormalization makes the discrete Gram matrix the identity to rounding,
/// so moments() and reconstruct() are an exact projection pair. Each (n, m)
/// pair spans a subspace closed under 90 degree grid rotations, so the
/// pair magnitudes stay rotation invariant after Gram-Schmidt.
inline ZernikeBasis build_basis(int order_cap, int grid_size,
                                Normalization normalization = Normalization::Orthonormal) {
  require(order_cap == kOrderCap, "build_basis: only order_cap 4 (15 planes) is supported");
  require(grid_size >= 5 && grid_size % 2 == 1,
          "build_basis: grid_size must be odd and >= 5, got " + std::to_string(grid_size));
  ZernikeBasis b;
  b.grid = DiskGrid::make(grid_size);
  b.index = indices(order_cap);
  for (const auto& idx : b.index) {
    std::vector<double> plane(b.grid.pixels(), 0.0);
    for (std::size_t p = 0; p < plane.size(); ++p)
      if (b.grid.mask[p]) plane[p] = zernike_eval(idx, b.grid.radius[p], b.grid.theta[p]);
    const double norm = std::sqrt(b.inner(plane, plane));
    if (!(norm > 0.0)) throw NumericError("build_basis: degenerate plane on grid " + std::to_string(grid_size));
    for (auto& v : plane) v /= norm;
    b.norms.push_back(norm);
    b.values.push_back(std::move(plane));
  }
  if (normalization == Normalization::Orthonormal) {
    for (std::size_t k = 0; k < b.values.size(); ++k) {
      auto& v = b.values[k];
      for (std::size_t j = 0; j < k; ++j) {
        const double c = b.inner(v, b.values[j]);
        for (std::size_t p = 0; p < v.size(); ++p) v[p] -= c * b.values[j][p];
      }
      const double norm = std::sqrt(b.inner(v, v));
      if (!(norm > 1e-12)) throw NumericError("build_basis: planes are not independent on this grid");
      for (auto& x : v) x /= norm;
    }
  }
  return b;
}

using ZernikeCoeffs = std::array<double, kNumBasis>;

/// alpha_i = <patch, V_i> under the grid's cell weights. patch is size*size row-major.
inline ZernikeCoeffs moments(std::span<const double> patch, const ZernikeBasis& basis) {
  require(patch.size() == basis.grid.pixels(),
          "moments: patch has " + std::to_string(patch.size()) + " pixels, basis grid has " +
              std::to_string(basis.grid.pixels()));
  ZernikeCoeffs alpha{};
  for (int k = 0; k < basis.count(); ++k) alpha[k] = basis.inner(patch, basis.values[k]);
  return alpha;
}

/// sum_i alpha_i V_i on the grid (zero outside the disk).
inline std::vector<double> reconstruct(const ZernikeCoeffs& alpha, const ZernikeBasis& basis) {
  std::vector<double> patch(basis.grid.pixels(), 0.0);
  for (int k = 0; k < basis.count(); ++k)
    for (std::size_t p = 0; p < patch.size(); ++p) patch[p] += alpha[k] * basis.values[k][p];
  return patch;
}

/// Rotation-invariant magnitudes sqrt(even^2 + odd^2), one per (n, m) pair.
inline std::vector<double> magnitudes(const ZernikeCoeffs& alpha, const ZernikeBasis& basis) {
  std::vector<double> out;
  for (int k = 0; k < basis.count(); ++k) {
    const auto& idx = basis.index[k];
    if (idx.parity == Parity::Odd) continue;
    double sq = alpha[k] * alpha[k];
    if (idx.m > 0) sq += alpha[k + 1] * alpha[k + 1];  // odd partner follows its even plane
    out.push_back(std::sqrt(sq));
  }
  return out;
}

inline const char* parity_name(Parity p) { return p == Parity::Even ? "even" : "odd"; }

/// CSV: n,m,parity,norm,v0,v1,... one row per basis plane.
inline void write_basis_csv(std::ostream& os, const ZernikeBasis& basis) {
  os << "n,m,parity,norm";
  for (std::size_t p = 0; p < basis.grid.pixels(); ++p) os << ",v" << p;
  os << '\n';
  os.precision(17);
  for (int k = 0; k < basis.count(); ++k) {
    const auto& idx = basis.index[k];
    os << idx.n << ',' << idx.m << ',' << parity_name(idx.parity) << ',' << basis.norms[k];
    for (double v : basis.values[k]) os << ',' << v;
    os << '\n';
  }
}

/// CSV: n,m,parity,alpha one row per coefficient.
inline void write_coeffs_csv(std::ostream& os, const ZernikeCoeffs& alpha, const ZernikeBasis& basis) {
  os << "n,m,parity,alpha\n";
  os.precision(17);
  for (int k = 0; k < basis.count(); ++k) {
    const auto& idx = basis.index[k];
    os << idx.n << ',' << idx.m << ',' << parity_name(idx.parity) << ',' << alpha[k] << '\n';
  }
}

}  // namespace moments_nerf::zernike
