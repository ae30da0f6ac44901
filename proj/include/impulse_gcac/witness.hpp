#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "impulse_gcac/detail/propagator.hpp"
#include "impulse_gcac/errors.hpp"
#include "impulse_gcac/linalg.hpp"
#include "impulse_gcac/schedule.hpp"
#include "impulse_gcac/spectral.hpp"
#include "impulse_gcac/synthesis.hpp"

namespace impulse_gcac {

enum class WitnessCase { real_eigenvector, complex_eigenvector };

inline std::string_view to_string(WitnessCase c) {
  return c == WitnessCase::real_eigenvector ? "real-eigenvector" : "complex-eigenvector";
}

/// Scale beyond which x0 = ell * direction * e_1 cannot be steered into
/// B_{epsilon0}(0) by unit-norm impulses, for an eigenvalue rho of P^T with
/// Re rho > lambda_1.
struct NegativeCertificate {
  std::complex<double> rho;
  Vector eta_re;  // real part of the unit eigenvector (after phase choice)
  Vector eta_im;  // imaginary part; this is eta-hat in the complex case
  double threshold_ell = 0.0;
  double epsilon0 = 0.0;
  WitnessCase kind = WitnessCase::real_eigenvector;

  /// eta in the real case, eta-hat in the complex case.
  const Vector& direction() const { return kind == WitnessCase::real_eigenvector ? eta_re : eta_im; }
};

inline NegativeCertificate negative_bound(const CoupledSystem& sys, const ImpulseSchedule& sched,
                                          double epsilon0) {
  if (!(epsilon0 > 0.0)) throw Error(ErrorCode::invalid_argument, "negative_bound: epsilon0 must be > 0");
  if (sched.hbar() != sys.hbar()) {
    throw Error(ErrorCode::dimension_mismatch, "negative_bound: schedule and system disagree on hbar");
  }
  const double l1 = sys.lambda1();
  const double tol = 1e-9 * std::max(1.0, std::abs(l1));
  Eigen::EigenSolver<Matrix> es(sys.p().transpose(), true);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::numerical_failure, "negative_bound: eigenvalue iteration did not converge");
  }
  Eigen::Index best = -1;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    if (best < 0 || es.eigenvalues()(i).real() > es.eigenvalues()(best).real()) best = i;
  }
  if (best < 0 || !(es.eigenvalues()(best).real() > l1 + tol)) {
    throw Error(ErrorCode::inapplicable,
                "negative bound inapplicable: every eigenvalue of P has real part <= lambda_1");
  }
  NegativeCertificate cert;
  cert.rho = es.eigenvalues()(best);
  cert.epsilon0 = epsilon0;
  Eigen::VectorXcd eta = es.eigenvectors().col(best);
  eta.normalize();

  double qmax = 0.0;
  for (int k = 1; k <= sys.hbar(); ++k) qmax = std::max(qmax, spectral_norm(sys.q(k)));
  const double base = qmax / ((cert.rho.real() - l1) * sched.min_gap());

  if (cert.rho.imag() == 0.0) {
    cert.kind = WitnessCase::real_eigenvector;
    cert.eta_re = eta.real();
    cert.eta_re.normalize();
    cert.eta_im = Vector::Zero(sys.n());
    cert.threshold_ell = base + epsilon0;
    return cert;
  }
  // eta -> e^{i phi} eta keeps |eta| = 1; pick phi maximising |Im| so the threshold is smallest.
  const Vector a = eta.real();
  const Vector b = eta.imag();
  Eigen::Matrix2d gram;
  gram << a.dot(a), a.dot(b), a.dot(b), b.dot(b);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> g2(gram);
  const double s = g2.eigenvectors()(0, 1);
  const double c = g2.eigenvectors()(1, 1);
  cert.kind = WitnessCase::complex_eigenvector;
  cert.eta_im = s * a + c * b;
  cert.eta_re = c * a - s * b;
  const double hat2 = cert.eta_im.squaredNorm();
  if (!(hat2 > 0.0)) {
    throw Error(ErrorCode::numerical_failure, "negative_bound: vanishing imaginary eigenvector part");
  }
  cert.threshold_ell = (base + epsilon0) / hat2;
  return cert;
}

struct GapOptions {
  explicit GapOptions(std::uint64_t s = 0x9a7ULL) : seed(s) {}

  std::uint64_t seed;
  int random_candidates = 100;
  /// Candidates refined by ascent (the best ones after a first evaluation).
  int refine_top = 8;
  int refine_iters = 100;
  GradientOptions descent{};
};

struct ReachabilityGap {
  double lower_bound = 0.0;
  double achieved = 0.0;
  Matrix direction;  // maximising dual direction (n x N), unit norm; empty if bound is 0
  int k = 0;
};

namespace detail {

// f(phi) = <x_free, phi> - budget * sum_j |B*_{nu(j)} e^{A*(t_k - t_j)} phi|, with a supergradient.
struct DualObjective {
  const Propagator& prop;
  const Matrix& x_free;
  int k;
  double budget;

  // Rounding in the two terms is absorbed by a relative 1e-12 margin, so the
  // value stays a valid lower bound in floating point.
  double value(const Matrix& phi) const {
    double obs = 0.0;
    Matrix psi = phi;
    for (long j = k; j >= 1; --j) {
      obs += prop.observe(psi, j);
      if (j > 1) psi = prop.step_adjoint(psi, j);
    }
    const double inner = (x_free.array() * phi.array()).sum();
    return inner - budget * obs - 1e-12 * (std::abs(inner) + budget * obs);
  }

  Matrix supergradient(const Matrix& phi) const {
    std::vector<Matrix> h(static_cast<std::size_t>(k));
    Matrix psi = phi;
    for (long j = k; j >= 1; --j) {
      const double o = prop.observe(psi, j);
      h[static_cast<std::size_t>(j - 1)] =
          o > 0.0 ? Matrix(prop.observe_normal(psi, j) / o) : Matrix::Zero(phi.rows(), phi.cols());
      if (j > 1) psi = prop.step_adjoint(psi, j);
    }
    // sum_j e^{A (t_k - t_j)} h_j by Horner.
    Matrix acc = h[0];
    for (long j = 2; j <= k; ++j) acc = prop.step(acc, j) + h[static_cast<std::size_t>(j - 1)];
    return x_free - budget * acc;
  }
};

inline Matrix ascend_on_sphere(const DualObjective& f, Matrix phi, int iters) {
  phi /= phi.norm();
  double fv = f.value(phi);
  double step = 0.5;
  for (int it = 0; it < iters && step > 1e-12; ++it) {
    Matrix g = f.supergradient(phi);
    g -= (g.array() * phi.array()).sum() * phi;
    const double gn = g.norm();
    if (gn < 1e-15) break;
    bool moved = false;
    while (step > 1e-12) {
      Matrix cand = phi + step * g / gn;
      cand /= cand.norm();
      const double fc = f.value(cand);
      if (fc > fv) {
        phi = std::move(cand);
        fv = fc;
        step = std::min(1.0, step * 1.5);
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return phi;
}

}  // namespace detail

/// Certified lower bound on inf |x(t_k)| over unit-norm impulses (weak duality
/// over a candidate set of dual directions) and the best residual found by the
/// projected-gradient engine. lower_bound <= achieved by construction.
inline ReachabilityGap reachability_gap(const CoupledSystem& sys, const ImpulseSchedule& sched,
                                        const ModalState& x0, int k, const GapOptions& opt = GapOptions()) {
  detail::check_state(sys, x0, "reachability_gap");
  if (k < 1) throw Error(ErrorCode::invalid_argument, "reachability_gap: k must be >= 1");
  ReachabilityGap out;
  out.k = k;
  if (x0.coeffs.isZero(0.0)) return out;

  const detail::Propagator prop(sys, sched);
  Matrix x_free_k = x0.coeffs;
  for (long j = 1; j <= k; ++j) x_free_k = prop.step(x_free_k, j);
  const detail::DualObjective f{prop, x_free_k, k, opt.descent.budget};

  const int n = sys.n();
  const int modes = sys.modes();
  std::vector<Matrix> candidates;
  auto add = [&](const Vector& v) {
    if (v.norm() <= 1e-14) return;
    Matrix phi = Matrix::Zero(n, modes);
    phi.col(0) = v / v.norm();
    candidates.push_back(phi);
    candidates.push_back(-phi);
  };
  Eigen::EigenSolver<Matrix> es(sys.p().transpose(), true);
  if (es.info() == Eigen::Success) {
    for (Eigen::Index i = 0; i < es.eigenvectors().cols(); ++i) {
      add(es.eigenvectors().col(i).real());
      add(es.eigenvectors().col(i).imag());
    }
  }
  if (x_free_k.norm() > 0.0) candidates.push_back(x_free_k / x_free_k.norm());
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int c = 0; c < opt.random_candidates; ++c) {
    Matrix phi = Matrix::Zero(n, modes).unaryExpr([&](double) { return normal(rng); });
    candidates.push_back(phi / phi.norm());
  }

  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < candidates.size(); ++i) scored.emplace_back(f.value(candidates[i]), i);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  double best = 0.0;
  const std::size_t top = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(opt.refine_top));
  for (std::size_t r = 0; r < scored.size(); ++r) {
    Matrix phi = candidates[scored[r].second];
    if (r < top) phi = detail::ascend_on_sphere(f, phi, opt.refine_iters);
    const double v = f.value(phi);
    if (v > best) {
      best = v;
      out.direction = phi;
    }
  }
  out.lower_bound = best;

  const SteeringResult primal = minimize_at_horizon(sys, sched, x0, k, opt.descent);
  out.achieved = primal.residual;
  return out;
}

}  // namespace impulse_gcac
