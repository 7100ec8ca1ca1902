#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace sloc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

// Eigenvalues in descending order; each eigenvector has its first
// non-negligible entry positive.
struct SymEigen {
  Vec values;
  Mat vectors;
};

inline SymEigen sym_eigen(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> solver(symmetrize(m));
  const Eigen::Index n = m.rows();
  SymEigen out{Vec(n), Mat(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = solver.eigenvalues()(n - 1 - i);
    Vec v = solver.eigenvectors().col(n - 1 - i);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (std::abs(v(k)) > 1e-12) {
        if (v(k) < 0) v = -v;
        break;
      }
    }
    out.vectors.col(i) = v;
  }
  return out;
}

inline Vec sym_eigenvalues(const Mat& m) { return sym_eigen(m).values; }

template <class F>
Mat sym_apply(const Mat& m, F&& fn) {
  Eigen::SelfAdjointEigenSolver<Mat> solver(symmetrize(m));
  Vec d = solver.eigenvalues().unaryExpr(fn);
  return solver.eigenvectors() * d.asDiagonal() * solver.eigenvectors().transpose();
}

inline Mat sym_sqrt(const Mat& m) {
  return sym_apply(m, [](double x) { return std::sqrt(std::max(x, 0.0)); });
}

// Eigenvalues are clamped at floor before inversion.
inline Mat sym_inv_sqrt(const Mat& m, double floor = 0.0) {
  return sym_apply(m, [floor](double x) { return 1.0 / std::sqrt(std::max(x, floor)); });
}

inline Mat sym_inv(const Mat& m, double floor = 0.0) {
  return sym_apply(m, [floor](double x) { return 1.0 / std::max(x, floor); });
}

inline double op_norm_sym(const Mat& m) {
  Vec ev = sym_eigenvalues(m);
  return std::max(std::abs(ev(0)), std::abs(ev(ev.size() - 1)));
}

inline double op_norm(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

inline double lambda_min(const Mat& m) {
  Vec ev = sym_eigenvalues(m);
  return ev(ev.size() - 1);
}

inline double lambda_max(const Mat& m) { return sym_eigenvalues(m)(0); }

inline double log_abs_det(const Mat& m) {
  return std::log(std::abs(m.determinant()));
}

inline bool is_diagonal(const Mat& m, double tol = 0.0) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (i != j && std::abs(m(i, j)) > tol) return false;
  return true;
}

}  // namespace sloc
