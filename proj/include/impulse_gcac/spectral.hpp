#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "impulse_gcac/errors.hpp"
#include "impulse_gcac/linalg.hpp"

namespace impulse_gcac {

/// Dirichlet Laplacian on (0, L) truncated to the first `modes` eigenpairs
/// lambda_i = (i pi / L)^2, e_i(x) = sqrt(2/L) sin(i pi x / L).
struct SpectralDomain {
  double length = kPi;
  int modes = 32;

  void validate() const {
    if (!(length > 0.0) || !std::isfinite(length)) {
      throw Error(ErrorCode::invariant_violation, "domain length must be positive and finite");
    }
    if (modes < 1) {
      throw Error(ErrorCode::invariant_violation, "truncation order must be at least 1");
    }
  }

  double wavenumber(int i) const { return i * (kPi / length); }
  double eigenvalue(int i) const {
    const double k = wavenumber(i);
    return k * k;
  }
  double normalization() const { return std::sqrt(2.0 / length); }
};

struct EigenData {
  double lambda;
  double normalization;
};

inline EigenData eigen_data(const SpectralDomain& domain, int i) {
  if (i < 1 || i > domain.modes) {
    throw Error(ErrorCode::invalid_argument,
                "mode index " + std::to_string(i) + " outside 1.." + std::to_string(domain.modes));
  }
  return {domain.eigenvalue(i), domain.normalization()};
}

/// Gram matrix of the retained eigenfunctions restricted to (a, b):
/// G[i][j] = int_a^b e_i e_j dx.
inline Matrix overlap_matrix(const SpectralDomain& domain, double a, double b) {
  domain.validate();
  const double len = domain.length;
  if (!(a >= 0.0 && a < b && b <= len)) {
    throw Error(ErrorCode::invariant_violation,
                "invalid support interval (" + std::to_string(a) + ", " + std::to_string(b) +
                    ") for domain length " + std::to_string(len));
  }
  const int n = domain.modes;
  const double w = kPi / len;
  // (1/L) * antiderivative of 2 sin(p w x) sin(q w x) evaluated from a to b.
  auto cos_part = [&](int s) {
    if (s == 0) return (b - a) / len;
    const double k = s * w;
    return (std::sin(k * b) - std::sin(k * a)) / (k * len);
  };
  Matrix g(n, n);
  for (int i = 1; i <= n; ++i) {
    for (int j = i; j <= n; ++j) {
      const double v = cos_part(i - j) - cos_part(i + j);
      g(i - 1, j - 1) = v;
      g(j - 1, i - 1) = v;
    }
  }
  return g;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// One controller B_k = chi_{omega_k} Q_k.
struct Controller {
  Matrix q;
  Interval support;
};

/// x' = Laplacian x + P x on (0, L)^n with hbar impulse controllers.
class CoupledSystem {
 public:
  CoupledSystem(Matrix p, std::vector<Controller> controllers, SpectralDomain domain)
      : p_(std::move(p)), controllers_(std::move(controllers)), domain_(domain) {
    validate_and_cache();
  }

  const Matrix& p() const noexcept { return p_; }
  const SpectralDomain& domain() const noexcept { return domain_; }
  int n() const noexcept { return static_cast<int>(p_.rows()); }
  int m() const noexcept { return static_cast<int>(controllers_.front().q.cols()); }
  int hbar() const noexcept { return static_cast<int>(controllers_.size()); }
  int modes() const noexcept { return domain_.modes; }
  double lambda1() const noexcept { return domain_.eigenvalue(1); }

  /// 1-based controller access, matching nu(j) in {1..hbar}.
  const Controller& controller(int k) const { return controllers_.at(check_index(k)); }
  const Matrix& q(int k) const { return controller(k).q; }
  std::vector<Matrix> qs() const {
    std::vector<Matrix> out;
    for (const auto& c : controllers_) out.push_back(c.q);
    return out;
  }
  const Matrix& overlap(int k) const { return overlaps_.at(check_index(k)); }
  const Matrix& overlap_sqrt(int k) const { return overlap_sqrts_.at(check_index(k)); }
  bool full_support(int k) const { return full_.at(check_index(k)); }
  bool all_full_support() const {
    for (bool f : full_) {
      if (!f) return false;
    }
    return true;
  }

  /// Same system at a different truncation order.
  CoupledSystem with_modes(int modes) const {
    SpectralDomain d = domain_;
    d.modes = modes;
    return CoupledSystem(p_, controllers_, d);
  }

 private:
  std::size_t check_index(int k) const {
    if (k < 1 || k > hbar()) {
      throw Error(ErrorCode::invalid_argument,
                  "controller index " + std::to_string(k) + " outside 1.." + std::to_string(hbar()));
    }
    return static_cast<std::size_t>(k - 1);
  }

  void validate_and_cache() {
    domain_.validate();
    require_square(p_, "P");
    require_finite(p_, "P");
    if (p_.rows() < 1) throw Error(ErrorCode::dimension_mismatch, "P must be at least 1x1");
    if (controllers_.empty()) {
      throw Error(ErrorCode::invariant_violation, "at least one controller is required");
    }
    const Eigen::Index m = controllers_.front().q.cols();
    double lo_max = 0.0;
    double hi_min = domain_.length;
    const double len = domain_.length;
    for (std::size_t k = 0; k < controllers_.size(); ++k) {
      const auto& c = controllers_[k];
      const std::string tag = "Q_" + std::to_string(k + 1);
      if (c.q.rows() != p_.rows() || c.q.cols() != m || m < 1) {
        throw Error(ErrorCode::dimension_mismatch,
                    tag + " is " + std::to_string(c.q.rows()) + "x" + std::to_string(c.q.cols()) +
                        ", expected " + std::to_string(p_.rows()) + "x" + std::to_string(m));
      }
      require_finite(c.q, tag.c_str());
      if (c.q.isZero(0.0)) throw Error(ErrorCode::invariant_violation, tag + " must be nonzero");
      lo_max = std::max(lo_max, c.support.lo);
      hi_min = std::min(hi_min, c.support.hi);
      const bool full = c.support.lo <= 1e-12 * len && c.support.hi >= len * (1.0 - 1e-12);
      full_.push_back(full);
      if (full) {
        if (c.support.lo < 0.0 || c.support.hi > len * (1.0 + 1e-12)) {
          throw Error(ErrorCode::invariant_violation, "support of " + tag + " leaves the domain");
        }
        overlaps_.push_back(Matrix::Identity(domain_.modes, domain_.modes));
        overlap_sqrts_.push_back(Matrix::Identity(domain_.modes, domain_.modes));
      } else {
        overlaps_.push_back(overlap_matrix(domain_, c.support.lo, c.support.hi));
        overlap_sqrts_.push_back(psd_sqrt(overlaps_.back()));
      }
    }
    if (!(lo_max < hi_min)) {
      throw Error(ErrorCode::invariant_violation, "the control supports have empty intersection");
    }
  }

  Matrix p_;
  std::vector<Controller> controllers_;
  SpectralDomain domain_;
  std::vector<Matrix> overlaps_;
  std::vector<Matrix> overlap_sqrts_;
  std::vector<bool> full_;
};

/// Truncated state: column i-1 holds g_i, the R^n coefficient of e_i.
struct ModalState {
  Matrix coeffs;

  static ModalState zero(int n, int modes) { return {Matrix::Zero(n, modes)}; }
  static ModalState zero(const CoupledSystem& sys) { return zero(sys.n(), sys.modes()); }
  /// v e_1.
  static ModalState first_mode(const Vector& v, int modes) {
    ModalState s = zero(static_cast<int>(v.size()), modes);
    s.coeffs.col(0) = v;
    return s;
  }

  int n() const noexcept { return static_cast<int>(coeffs.rows()); }
  int modes() const noexcept { return static_cast<int>(coeffs.cols()); }
};

inline double l2_norm(const ModalState& state) { return state.coeffs.norm(); }

namespace detail {

inline void check_state(const CoupledSystem& sys, const ModalState& s, const char* what) {
  if (s.n() != sys.n() || s.modes() != sys.modes()) {
    throw Error(ErrorCode::dimension_mismatch,
                std::string(what) + ": state is " + std::to_string(s.n()) + "x" +
                    std::to_string(s.modes()) + ", system expects " + std::to_string(sys.n()) +
                    "x" + std::to_string(sys.modes()));
  }
}

/// Mode factors exp(-(lambda_i - lambda_1) t), i = 1..N.
inline Vector relative_decay(const SpectralDomain& d, double t) {
  Vector out(d.modes);
  const double l1 = d.eigenvalue(1);
  for (int i = 1; i <= d.modes; ++i) out(i - 1) = std::exp(-(d.eigenvalue(i) - l1) * t);
  return out;
}

/// exp((P - lambda_1 I) t); the shift keeps mode-1 evolution free of cancellation.
inline Matrix shifted_exp(const Matrix& p, double lambda1, double t) {
  const Matrix shifted = p - lambda1 * Matrix::Identity(p.rows(), p.cols());
  return mat_exp(shifted, t);
}

}  // namespace detail

/// e^{At} acting mode-wise: g_i -> e^{-lambda_i t} e^{Pt} g_i.
inline ModalState apply_semigroup(const CoupledSystem& sys, const ModalState& state, double t) {
  detail::check_state(sys, state, "apply_semigroup");
  if (!(t >= 0.0) || !std::isfinite(t)) {
    throw Error(ErrorCode::invalid_argument, "apply_semigroup: time must be finite and >= 0");
  }
  if (t == 0.0) return state;
  const Matrix e = detail::shifted_exp(sys.p(), sys.lambda1(), t);
  return {e * state.coeffs * detail::relative_decay(sys.domain(), t).asDiagonal()};
}

/// The adjoint semigroup e^{A* t}, A* = Laplacian + P^T.
inline ModalState apply_adjoint_semigroup(const CoupledSystem& sys, const ModalState& state,
                                          double t) {
  detail::check_state(sys, state, "apply_adjoint_semigroup");
  if (!(t >= 0.0) || !std::isfinite(t)) {
    throw Error(ErrorCode::invalid_argument, "apply_adjoint_semigroup: time must be finite and >= 0");
  }
  if (t == 0.0) return state;
  const Matrix e = detail::shifted_exp(sys.p().transpose(), sys.lambda1(), t);
  return {e * state.coeffs * detail::relative_decay(sys.domain(), t).asDiagonal()};
}

/// x -> x + chi_{omega_k} Q_k u, with u an m x N modal array. The indicator is
/// applied through the overlap matrix, so the result is the projection onto the
/// retained modes.
inline ModalState apply_impulse(const CoupledSystem& sys, const ModalState& state, int k,
                                const Matrix& u) {
  detail::check_state(sys, state, "apply_impulse");
  const Matrix& q = sys.q(k);
  if (u.rows() != sys.m() || u.cols() != sys.modes()) {
    throw Error(ErrorCode::dimension_mismatch,
                "apply_impulse: control is " + std::to_string(u.rows()) + "x" +
                    std::to_string(u.cols()) + ", expected " + std::to_string(sys.m()) + "x" +
                    std::to_string(sys.modes()));
  }
  require_finite(u, "apply_impulse");
  if (sys.full_support(k)) return {state.coeffs + q * u};
  return {state.coeffs + q * u * sys.overlap(k)};
}

/// L^2 norm of B_k^* psi = chi_{omega_k} Q_k^T psi (exact for truncated psi).
inline double observation_norm(const CoupledSystem& sys, int k, const ModalState& psi) {
  detail::check_state(sys, psi, "observation_norm");
  const Matrix qt = sys.q(k).transpose() * psi.coeffs;
  if (sys.full_support(k)) return qt.norm();
  return (qt * sys.overlap_sqrt(k)).norm();
}

}  // namespace impulse_gcac
