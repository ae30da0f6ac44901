#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "impulse_gcac/errors.hpp"

namespace impulse_gcac {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kPi = 3.14159265358979323846;

/// Relative singular-value cutoff used by every rank decision.
inline constexpr double kDefaultRankTol = 1e-9;

struct SpectrumInfo {
  std::vector<std::complex<double>> eigenvalues;
  double max_real_part = 0.0;
  /// +inf when every eigenvalue is real.
  double min_nonzero_abs_imag = kInf;
};

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::invalid_argument, std::string(what) + ": non-finite entry");
  }
}

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::dimension_mismatch,
                std::string(what) + ": expected a square matrix, got " +
                    std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

namespace detail {

// Degree-13 diagonal Pade coefficients for exp.
inline constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0,  129060195264000.0,   10559470521600.0,
    670442572800.0,      33522128640.0,       1323241920.0,
    40840800.0,          960960.0,            16380.0,
    182.0,               1.0};

// Largest 1-norm for which the unscaled degree-13 approximant meets unit roundoff.
inline constexpr double kPade13Theta = 5.371920351148152;

}  // namespace detail

/// exp(M t) by scaling and squaring around a fixed degree-13 Pade kernel.
/// Negative t is allowed.
inline Matrix mat_exp(const Matrix& m, double t = 1.0) {
  require_square(m, "mat_exp");
  require_finite(m, "mat_exp");
  if (!std::isfinite(t)) {
    throw Error(ErrorCode::invalid_argument, "mat_exp: non-finite time");
  }
  const Eigen::Index n = m.rows();
  const Matrix a = m * t;
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  if (n == 0 || norm1 == 0.0) {
    return Matrix::Identity(n, n);
  }

  int squarings = 0;
  if (norm1 > detail::kPade13Theta) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / detail::kPade13Theta))));
  }
  const Matrix as = a / std::ldexp(1.0, squarings);

  const auto& b = detail::kPade13;
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = as * as;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u_inner = b[13] * a6 + b[11] * a4 + b[9] * a2;
  const Matrix u = as * (a6 * u_inner + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
  const Matrix v_inner = b[12] * a6 + b[10] * a4 + b[8] * a2;
  const Matrix v = a6 * v_inner + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;

  Matrix r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < squarings; ++i) {
    r = r * r;
  }
  if (!r.allFinite()) {
    throw Error(ErrorCode::numerical_failure, "mat_exp: overflow");
  }
  return r;
}

inline Vector singular_values(const Matrix& m) {
  if (m.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues();
}

inline double spectral_norm(const Matrix& m) {
  require_finite(m, "spectral_norm");
  if (m.size() == 0) return 0.0;
  return singular_values(m)(0);
}

/// Number of singular values above tol * sigma_max. Zero matrix -> 0.
inline int numerical_rank(const Matrix& m, double tol = kDefaultRankTol) {
  require_finite(m, "numerical_rank");
  if (!(tol > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "numerical_rank: tol must be positive");
  }
  if (m.size() == 0) return 0;
  const Vector s = singular_values(m);
  if (s(0) == 0.0) return 0;
  const double cutoff = tol * s(0);
  return static_cast<int>((s.array() > cutoff).count());
}

/// Columns rescaled to unit Euclidean norm; zero columns are dropped. Rank is
/// invariant under this, and the relative cutoff stops treating columns from
/// widely separated times as negligible.
inline Matrix normalized_columns(const Matrix& m) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (m.col(j).norm() > 0.0) keep.push_back(j);
  }
  Matrix out(m.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    out.col(static_cast<Eigen::Index>(c)) = m.col(keep[c]) / m.col(keep[c]).norm();
  }
  return out;
}

/// Orthonormal basis of the left null space {v : v^T m = 0} at relative tol.
inline Matrix left_null_space(const Matrix& m, double tol = kDefaultRankTol) {
  const Eigen::Index rows = m.rows();
  if (m.cols() == 0 || m.isZero(0.0)) return Matrix::Identity(rows, rows);
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU);
  const Vector& s = svd.singularValues();
  const double cutoff = tol * s(0);
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > cutoff) ++rank;
  return svd.matrixU().rightCols(rows - rank);
}

/// Least-squares solution of minimum Euclidean norm. With require_exact the
/// residual must satisfy |Ax - b| <= tol |b|, otherwise ErrorCode::unreachable.
inline Vector min_norm_solve(const Matrix& a, const Vector& b, bool require_exact = false,
                             double tol = 1e-10, double rcond = 1e-12) {
  require_finite(a, "min_norm_solve");
  if (!b.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "min_norm_solve: non-finite right-hand side");
  }
  if (a.rows() != b.size()) {
    throw Error(ErrorCode::dimension_mismatch,
                "min_norm_solve: A has " + std::to_string(a.rows()) + " rows but b has " +
                    std::to_string(b.size()) + " entries");
  }
  Vector x = Vector::Zero(a.cols());
  if (a.size() > 0 && !a.isZero(0.0)) {
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(rcond);
    x = svd.solve(b);
  }
  if (require_exact) {
    const double residual = (a * x - b).norm();
    if (residual > tol * b.norm()) {
      throw Error(ErrorCode::unreachable,
                  "min_norm_solve: unreachable target (residual " + std::to_string(residual) +
                      " exceeds " + std::to_string(tol) + " * |b|)");
    }
  }
  return x;
}

inline SpectrumInfo spectrum(const Matrix& m) {
  require_square(m, "spectrum");
  require_finite(m, "spectrum");
  SpectrumInfo info;
  if (m.rows() == 0) {
    info.max_real_part = -kInf;
    return info;
  }
  Eigen::EigenSolver<Matrix> es(m, false);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::numerical_failure, "spectrum: eigenvalue iteration did not converge");
  }
  info.max_real_part = -kInf;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const std::complex<double> ev = es.eigenvalues()(i);
    info.eigenvalues.push_back(ev);
    info.max_real_part = std::max(info.max_real_part, ev.real());
    if (ev.imag() != 0.0) {
      info.min_nonzero_abs_imag = std::min(info.min_nonzero_abs_imag, std::abs(ev.imag()));
    }
  }
  return info;
}

/// Largest eigenvalue of (M + M^T)/2, i.e. the sharp constant in <M x, x> <= c |x|^2.
inline double symmetric_part_max_eig(const Matrix& m) {
  require_square(m, "symmetric_part_max_eig");
  require_finite(m, "symmetric_part_max_eig");
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// Symmetric PSD square root; tiny negative eigenvalues from roundoff are clipped.
inline Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  const Vector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace impulse_gcac
