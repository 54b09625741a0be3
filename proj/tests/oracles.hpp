#pragma once

// Test-side reference implementations, kept independent of the library
// code paths they check.

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdk/tensor.hpp"

namespace oracles {

// Central finite difference of a scalar function at x[i].
inline double central_diff(const std::function<double()>& eval, double* slot, double h) {
  const double saved = *slot;
  *slot = saved + h;
  const double up = eval();
  *slot = saved - h;
  const double down = eval();
  *slot = saved;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

// Direct-convolution bicubic resampling (a = -0.5, half-pixel centers,
// clamped borders); no separability, no shared code with the library.
inline cdk::TensorT<double> bicubic_direct(const cdk::TensorT<double>& img, double factor) {
  auto kernel = [](double x) {
    x = std::abs(x);
    const double a = -0.5;
    if (x <= 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
    if (x < 2.0) return a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a;
    return 0.0;
  };
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int64_t Ho = static_cast<int64_t>(std::ceil(H * factor));
  const int64_t Wo = static_cast<int64_t>(std::ceil(W * factor));
  cdk::TensorT<double> out({C, Ho, Wo});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t x = 0; x < Wo; ++x) {
        const double sy = (y + 0.5) / factor - 0.5;
        const double sx = (x + 0.5) / factor - 0.5;
        const int64_t by = static_cast<int64_t>(std::floor(sy)) - 1;
        const int64_t bx = static_cast<int64_t>(std::floor(sx)) - 1;
        double acc = 0.0;
        for (int ky = 0; ky < 4; ++ky)
          for (int kx = 0; kx < 4; ++kx) {
            const int64_t iy = std::clamp<int64_t>(by + ky, 0, H - 1);
            const int64_t ix = std::clamp<int64_t>(bx + kx, 0, W - 1);
            acc += kernel(sy - static_cast<double>(by + ky)) *
                   kernel(sx - static_cast<double>(bx + kx)) *
                   img[(c * H + iy) * W + ix];
          }
        out[(c * Ho + y) * Wo + x] = acc;
      }
  return out;
}

// Symmetric eigendecomposition for D <= 4 via the characteristic
// polynomial: Faddeev-LeVerrier coefficients, Durand-Kerner roots, and
// Gaussian-elimination null spaces for the eigenvectors.
struct CharPolyEig {
  std::vector<double> eigenvalues;          // descending
  std::vector<std::vector<double>> vectors;  // unit eigenvectors, same order
};

inline CharPolyEig char_poly_eig(const Eigen::MatrixXd& a) {
  const int d = static_cast<int>(a.rows());
  // Faddeev-LeVerrier: p(x) = x^d + c[1] x^{d-1} + ... + c[d]
  std::vector<double> c(static_cast<size_t>(d) + 1, 0.0);
  c[0] = 1.0;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
  for (int k = 1; k <= d; ++k) {
    m = a * m + c[static_cast<size_t>(k - 1)] * Eigen::MatrixXd::Identity(d, d);
    c[static_cast<size_t>(k)] = -(a * m).trace() / k;
  }

  // Durand-Kerner on the monic polynomial
  auto poly = [&](std::complex<double> x) {
    std::complex<double> acc = 0.0;
    for (int i = 0; i <= d; ++i) acc = acc * x + c[static_cast<size_t>(i)];
    return acc;
  };
  std::vector<std::complex<double>> roots(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i)
    roots[static_cast<size_t>(i)] = std::pow(std::complex<double>(0.4, 0.9), i);
  for (int iter = 0; iter < 500; ++iter) {
    double moved = 0.0;
    for (int i = 0; i < d; ++i) {
      std::complex<double> denom = 1.0;
      for (int j = 0; j < d; ++j)
        if (j != i) denom *= roots[static_cast<size_t>(i)] - roots[static_cast<size_t>(j)];
      std::complex<double> delta = poly(roots[static_cast<size_t>(i)]) / denom;
      roots[static_cast<size_t>(i)] -= delta;
      moved = std::max(moved, std::abs(delta));
    }
    if (moved < 1e-14) break;
  }

  CharPolyEig out;
  for (const auto& r : roots) out.eigenvalues.push_back(r.real());
  std::sort(out.eigenvalues.begin(), out.eigenvalues.end(), std::greater<>());

  // eigenvector: null space of (A - lambda I) by row reduction
  for (double lambda : out.eigenvalues) {
    Eigen::MatrixXd b = a - lambda * Eigen::MatrixXd::Identity(d, d);
    // row-reduce with partial pivoting
    std::vector<int> pivot_col;
    int row = 0;
    for (int col = 0; col < d && row < d; ++col) {
      int best = row;
      for (int r = row + 1; r < d; ++r)
        if (std::abs(b(r, col)) > std::abs(b(best, col))) best = r;
      if (std::abs(b(best, col)) < 1e-7) continue;
      b.row(row).swap(b.row(best));
      b.row(row) /= b(row, col);
      for (int r = 0; r < d; ++r)
        if (r != row) b.row(r) -= b(r, col) * b.row(row);
      pivot_col.push_back(col);
      ++row;
    }
    // pick a free column and back-substitute
    std::vector<bool> is_pivot(static_cast<size_t>(d), false);
    for (int pc : pivot_col) is_pivot[static_cast<size_t>(pc)] = true;
    int free_col = -1;
    for (int colv = 0; colv < d; ++colv)
      if (!is_pivot[static_cast<size_t>(colv)]) {
        free_col = colv;
        break;
      }
    Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
    if (free_col < 0) {
      v(0) = 1.0;  // numerically full rank; should not happen at a true eigenvalue
    } else {
      v(free_col) = 1.0;
      for (size_t r = 0; r < pivot_col.size(); ++r)
        v(pivot_col[r]) = -b(static_cast<int>(r), free_col);
    }
    v.normalize();
    std::vector<double> vec(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) vec[static_cast<size_t>(i)] = v(i);
    out.vectors.push_back(std::move(vec));
  }
  return out;
}

// Per-pixel exhaustive ray vs axis-aligned cube renderer: for every output
// cell, intersect the center ray with every cube and keep the minimum-depth
// hit (ties to the smallest (i,j,k)).
struct OracleVoxel {
  int64_t i, j, k;
  std::vector<float> feature;
};

struct OracleHit {
  bool hit = false;
  std::vector<float> feature;
};

inline OracleHit oracle_trace(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                              const std::vector<OracleVoxel>& voxels, double voxel_size,
                              const Eigen::Vector3d& grid_origin) {
  OracleHit best;
  double best_t = std::numeric_limits<double>::infinity();
  std::array<int64_t, 3> best_key{0, 0, 0};
  for (const auto& vox : voxels) {
    Eigen::Vector3d lo = grid_origin + voxel_size * Eigen::Vector3d(static_cast<double>(vox.i),
                                                                    static_cast<double>(vox.j),
                                                                    static_cast<double>(vox.k));
    Eigen::Vector3d hi = lo + Eigen::Vector3d::Constant(voxel_size);
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (dir[a] == 0.0) {
        if (origin[a] < lo[a] || origin[a] > hi[a]) miss = true;
        continue;
      }
      double t0 = (lo[a] - origin[a]) / dir[a];
      double t1 = (hi[a] - origin[a]) / dir[a];
      if (t0 > t1) std::swap(t0, t1);
      tmin = std::max(tmin, t0);
      tmax = std::min(tmax, t1);
      if (tmin > tmax) miss = true;
    }
    if (miss || tmax <= 0.0) continue;
    double t_near = std::max(tmin, 0.0);
    std::array<int64_t, 3> key{vox.i, vox.j, vox.k};
    if (t_near < best_t || (t_near == best_t && key < best_key)) {
      best_t = t_near;
      best_key = key;
      best.hit = true;
      best.feature = vox.feature;
    }
  }
  return best;
}

// Unique temporary directory for file-based tests.
inline std::string temp_dir(const std::string& tag) {
  static int counter = 0;
  auto p = std::filesystem::temp_directory_path() /
           ("cdk_test_" + tag + "_" + std::to_string(counter++));
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace oracles
