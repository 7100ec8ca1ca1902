#pragma once

#include <vector>

#include "linalg.hpp"

namespace sloc {

// Points (columns) with normalized weights.
struct WeightedView {
  const Mat* points = nullptr;
  Vec weights;
};

// y = A^{-1/2}(x - a) for every column.
inline Mat whiten(const Mat& points, const Vec& a, const Mat& A) {
  return sym_inv_sqrt(A) * (points.colwise() - a);
}

// Symmetric 3-tensor T_ijk = sum_w y_i y_j y_k, flattened as i*n*n + j*n + k.
struct Tensor3 {
  int n = 0;
  std::vector<double> data;

  double operator()(int i, int j, int k) const { return data[(i * n + j) * n + k]; }
  double& operator()(int i, int j, int k) { return data[(i * n + j) * n + k]; }

  // Matrix T(., ., theta).
  Mat contract(const Vec& theta) const {
    Mat m = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) m(i, j) += (*this)(i, j, k) * theta(k);
    return m;
  }

  // G_kl = sum_ij T_ijk T_ijl
  Mat gram() const {
    Mat g = Mat::Zero(n, n);
    for (int k = 0; k < n; ++k)
      for (int l = 0; l < n; ++l)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) g(k, l) += (*this)(i, j, k) * (*this)(i, j, l);
    return g;
  }
};

inline Tensor3 third_moments(const Mat& y, const Vec& w) {
  const int n = static_cast<int>(y.rows());
  Tensor3 t{n, std::vector<double>(static_cast<std::size_t>(n) * n * n, 0.0)};
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      Vec yij = y.row(i).cwiseProduct(y.row(j)).transpose().cwiseProduct(w);
      for (int k = j; k < n; ++k) {
        double v = y.row(k).dot(yij);
        int idx[3] = {i, j, k};
        // fill all permutations
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c)
              if (a != b && b != c && a != c) t(idx[a], idx[b], idx[c]) = v;
      }
    }
  return t;
}

// kappa = sqrt(lambda_max(G)) and the maximizing direction.
inline std::pair<double, Vec> kappa_of(const Tensor3& t) {
  SymEigen e = sym_eigen(t.gram());
  return {std::sqrt(std::max(e.values(0), 0.0)), e.vectors.col(0)};
}

}  // namespace sloc
