#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "impulse_gcac/detail/propagator.hpp"
#include "impulse_gcac/errors.hpp"
#include "impulse_gcac/linalg.hpp"
#include "impulse_gcac/observability.hpp"
#include "impulse_gcac/schedule.hpp"
#include "impulse_gcac/spectral.hpp"

namespace impulse_gcac {

/// Impulses u_1..u_k as m x N modal arrays. Missing trailing impulses are zero.
struct ControlSequence {
  std::vector<Matrix> impulses;
  double budget = 1.0;
  bool constrained = true;

  int size() const noexcept { return static_cast<int>(impulses.size()); }

  double max_norm() const {
    double s = 0.0;
    for (const auto& u : impulses) s = std::max(s, u.norm());
    return s;
  }

  /// l^2 norm of the whole sequence.
  double l2_norm() const {
    double s = 0.0;
    for (const auto& u : impulses) s += u.squaredNorm();
    return std::sqrt(s);
  }

  bool within_budget(double slack = 1e-12) const { return max_norm() <= budget + slack; }
};

enum class Certificate { exact, epsilon_ball, failed_horizon_exhausted };

inline std::string_view to_string(Certificate c) {
  switch (c) {
    case Certificate::exact: return "exact";
    case Certificate::epsilon_ball: return "epsilon-ball";
    case Certificate::failed_horizon_exhausted: return "failed-horizon-exhausted";
  }
  return "unknown";
}

/// One horizon of an iterative search.
struct HorizonRecord {
  int k = 0;
  double residual = 0.0;
  double sup_norm = 0.0;
};

/// Two-phase structure of an exact constrained steering run.
struct NullSteeringPhases {
  int k_star = 0;
  double obs_constant = 0.0;
  double semigroup_bound = 1.0;  // M
  double epsilon = 0.0;          // (M sqrt(C))^{-1}
  bool approach_skipped = false;
  int approach_horizon = 0;      // k reached by the approximate phase
  int padded_horizon = 0;        // first index of the exact phase minus one
  double handoff_norm = 0.0;     // |x(t_padded)|
  double exact_control_l2 = 0.0; // l^2 norm of the exact-phase impulses
};

struct SteeringResult {
  ControlSequence controls;
  int horizon_k = 0;
  ModalState final_state;
  double residual = 0.0;
  Certificate certificate = Certificate::epsilon_ball;
  std::vector<HorizonRecord> history;
  /// Set by exact steering: C(k*) and the l^2 bound sqrt(C(k*)) |x0|.
  std::optional<double> obs_constant;
  std::optional<double> control_l2_bound;
  std::optional<NullSteeringPhases> phases;
  /// Projected-gradient settings actually used (local synthesis).
  int iterations_per_horizon = 0;
};

/// x(t_k), post-impulse: alternate the free flow over (t_{j-1}, t_j) and the
/// jump of controller nu(j).
inline ModalState simulate(const CoupledSystem& sys, const ImpulseSchedule& sched,
                           const ModalState& x0, const ControlSequence& controls, int k) {
  if (k < 0) throw Error(ErrorCode::invalid_argument, "simulate: k must be >= 0");
  if (sched.hbar() != sys.hbar()) {
    throw Error(ErrorCode::dimension_mismatch, "simulate: schedule and system disagree on hbar");
  }
  ModalState x = x0;
  for (int j = 1; j <= k; ++j) {
    x = apply_semigroup(sys, x, sched.gap(j));
    if (j <= controls.size()) x = apply_impulse(sys, x, sched.nu(j), controls.impulses[j - 1]);
  }
  return x;
}

/// Post-impulse states x(t_1), ..., x(t_k).
inline std::vector<ModalState> simulate_trajectory(const CoupledSystem& sys,
                                                   const ImpulseSchedule& sched,
                                                   const ModalState& x0,
                                                   const ControlSequence& controls, int k) {
  std::vector<ModalState> out;
  ModalState x = x0;
  for (int j = 1; j <= k; ++j) {
    x = apply_semigroup(sys, x, sched.gap(j));
    if (j <= controls.size()) x = apply_impulse(sys, x, sched.nu(j), controls.impulses[j - 1]);
    out.push_back(x);
  }
  return out;
}

struct H1Split {
  Vector v;
  ModalState remainder;
};

/// state = v e_1 + remainder, remainder orthogonal to R^n e_1.
inline H1Split project_H1(const ModalState& state) {
  H1Split s{state.coeffs.col(0), state};
  s.remainder.coeffs.col(0).setZero();
  return s;
}

/// Mode-1 blocks K_j = e^{(lambda_1 I - P) t_j} Q_{nu(j)} and the Gramian
/// M = sum_j K_j K_j^T over impulses first+1 .. first+k. delta = |[K]|_2^{-1} |M^{-1}|_2^{-1}
/// is the radius reachable in one block with unit-norm controls.
struct GramianBall {
  Matrix gramian;
  double delta = 0.0;
  std::vector<Matrix> blocks;
  long first = 0;
};

inline Matrix first_mode_block(const CoupledSystem& sys, const ImpulseSchedule& sched, long j) {
  return detail::shifted_exp(sys.p(), sys.lambda1(), -sched.time_at(j)) * sys.q(sched.nu(j));
}

inline GramianBall gramian_delta(const CoupledSystem& sys, const ImpulseSchedule& sched, int k_star,
                                 long first = 0) {
  if (k_star < 1) throw Error(ErrorCode::invalid_argument, "gramian_delta: k* must be >= 1");
  const int n = sys.n();
  const int m = sys.m();
  GramianBall ball;
  ball.first = first;
  ball.gramian = Matrix::Zero(n, n);
  Matrix stack(n, static_cast<Eigen::Index>(m) * k_star);
  for (int j = 1; j <= k_star; ++j) {
    ball.blocks.push_back(first_mode_block(sys, sched, first + j));
    ball.gramian += ball.blocks.back() * ball.blocks.back().transpose();
    stack.middleCols(static_cast<Eigen::Index>(m) * (j - 1), m) = ball.blocks.back();
  }
  if (numerical_rank(normalized_columns(stack)) < n) {
    const Matrix null = left_null_space(normalized_columns(stack));
    throw RankDeficientError("gramian_delta: Gramian is singular at k* = " + std::to_string(k_star),
                             null.col(0));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(ball.gramian, Eigen::EigenvaluesOnly);
  ball.delta = es.eigenvalues().minCoeff() / spectral_norm(stack);
  return ball;
}

/// zeta_j = K_j^T M^{-1} eta, so that sum_j K_j zeta_j = eta; |zeta_j| <= 1 when |eta| <= delta.
inline std::vector<Vector> ball_controls(const GramianBall& ball, const Vector& eta) {
  const Vector w = ball.gramian.ldlt().solve(eta);
  std::vector<Vector> out;
  for (const auto& b : ball.blocks) out.push_back(b.transpose() * w);
  return out;
}

namespace detail {

inline void require_full_support(const CoupledSystem& sys, const char* what) {
  if (!sys.all_full_support()) {
    throw Error(ErrorCode::precondition,
                std::string(what) + ": every controller must act on the whole interval");
  }
}

inline void require_spectral_bound(const CoupledSystem& sys, const char* what) {
  if (spectral_position(sys) == SpectralPosition::violated) {
    throw Error(ErrorCode::precondition,
                std::string(what) + ": P has an eigenvalue with real part above lambda_1");
  }
}

inline ControlSequence first_mode_controls(const CoupledSystem& sys, const std::vector<Vector>& xi) {
  ControlSequence c;
  for (const auto& x : xi) {
    Matrix u = Matrix::Zero(sys.m(), sys.modes());
    u.col(0) = x;
    c.impulses.push_back(std::move(u));
  }
  return c;
}

// Minimum-norm xi with v + sum_{j<=k} K_j xi_j = 0; empty when unreachable at k.
// Solved after multiplying through by e^{(P - lambda_1) t_k}: same solution
// set, but only decaying exponentials, so long horizons cannot overflow.
inline std::optional<std::vector<Vector>> min_norm_first_mode(const CoupledSystem& sys,
                                                              const ImpulseSchedule& sched,
                                                              const Vector& v, int k) {
  const int m = sys.m();
  const double tk = sched.time_at(k);
  Matrix stack(sys.n(), static_cast<Eigen::Index>(m) * k);
  for (int j = 1; j <= k; ++j) {
    stack.middleCols(static_cast<Eigen::Index>(m) * (j - 1), m) =
        detail::shifted_exp(sys.p(), sys.lambda1(), tk - sched.time_at(j)) * sys.q(sched.nu(j));
  }
  if (numerical_rank(normalized_columns(stack)) < sys.n()) return std::nullopt;
  Vector sol;
  try {
    sol = min_norm_solve(stack, -(detail::shifted_exp(sys.p(), sys.lambda1(), tk) * v), true);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::unreachable) return std::nullopt;
    throw;
  }
  std::vector<Vector> xi;
  for (int j = 0; j < k; ++j) xi.push_back(sol.segment(static_cast<Eigen::Index>(m) * j, m));
  return xi;
}

inline double sup_norm(const std::vector<Vector>& xi) {
  double s = 0.0;
  for (const auto& x : xi) s = std::max(s, x.norm());
  return s;
}

}  // namespace detail

/// Drives v e_1 to 0 in H_1 with mode-1 controls of norm <= 1. Tries the
/// minimum-norm exact solve on doubling horizons, bisects down to the smallest
/// horizon that meets the bound, and falls back to Gramian-ball chunking.
inline SteeringResult steer_first_mode(const CoupledSystem& sys, const ImpulseSchedule& sched,
                                       const Vector& v, int k_max) {
  detail::require_full_support(sys, "steer_first_mode");
  detail::require_spectral_bound(sys, "steer_first_mode");
  if (v.size() != sys.n()) throw Error(ErrorCode::dimension_mismatch, "steer_first_mode: target size");
  if (!v.allFinite()) throw Error(ErrorCode::invalid_argument, "steer_first_mode: non-finite target");
  if (k_max < 1) throw Error(ErrorCode::invalid_argument, "steer_first_mode: k_max must be >= 1");

  SteeringResult res;
  res.certificate = Certificate::exact;
  res.final_state = ModalState::zero(sys);
  if (v.isZero(0.0)) return res;

  const auto rc = rank_condition(sys.p(), sys.qs(), sched, k_max);
  if (!rc.holds) {
    throw RankDeficientError("steer_first_mode: rank condition fails up to k = " + std::to_string(k_max));
  }

  // Minimum-norm solutions that sit exactly on the unit sphere come out 1 + O(eps).
  constexpr double kUnitSlack = 1.0 + 1e-12;
  double best_sup = kInf;
  std::optional<std::vector<Vector>> accepted;
  int lo = 0;  // largest horizon known to fail
  for (int k = *rc.k_star;; k = std::min(2 * k, k_max)) {
    const auto xi = detail::min_norm_first_mode(sys, sched, v, k);
    const double s = xi ? detail::sup_norm(*xi) : kInf;
    res.history.push_back({k, 0.0, s});
    best_sup = std::min(best_sup, s);
    if (s <= kUnitSlack) {
      accepted = xi;
      int hi = k;
      while (hi - lo > 1) {
        const int mid = lo + (hi - lo) / 2;
        const auto xm = detail::min_norm_first_mode(sys, sched, v, mid);
        const double sm = xm ? detail::sup_norm(*xm) : kInf;
        res.history.push_back({mid, 0.0, sm});
        if (sm <= kUnitSlack) {
          hi = mid;
          accepted = xm;
        } else {
          lo = mid;
        }
      }
      break;
    }
    lo = k;
    if (k == k_max) break;
  }

  if (!accepted) {
    // Chunk the target into Gramian balls, one block of gamma*hbar impulses each.
    const int hbar = sched.hbar();
    const int block = ((*rc.k_star + hbar - 1) / hbar) * hbar;
    Vector r = v;
    std::vector<Vector> xi;
    while (!r.isZero(0.0)) {
      if (static_cast<int>(xi.size()) + block > k_max) {
        throw HorizonExhaustedError("steer_first_mode: no unit-norm steering within k_max = " +
                                        std::to_string(k_max),
                                    best_sup);
      }
      const GramianBall ball = gramian_delta(sys, sched, block, static_cast<long>(xi.size()));
      const double rn = r.norm();
      const bool last = rn <= ball.delta;
      const Vector eta = last ? Vector(-r) : Vector(-r * (ball.delta * (1.0 - 1e-12) / rn));
      auto zeta = ball_controls(ball, eta);
      for (std::size_t j = 0; j < zeta.size(); ++j) r += ball.blocks[j] * zeta[j];
      xi.insert(xi.end(), zeta.begin(), zeta.end());
      if (last) break;
    }
    res.history.push_back({static_cast<int>(xi.size()), 0.0, detail::sup_norm(xi)});
    accepted = std::move(xi);
  }

  res.controls = detail::first_mode_controls(sys, *accepted);
  res.horizon_k = res.controls.size();
  res.final_state = simulate(sys, sched, ModalState::first_mode(v, sys.modes()), res.controls,
                             res.horizon_k);
  res.residual = l2_norm(res.final_state);
  if (res.final_state.coeffs.col(0).norm() > 1e-9 * v.norm()) {
    throw Error(ErrorCode::numerical_failure,
                "steer_first_mode: simulated mode-1 residual " + std::to_string(res.residual) +
                    " exceeds 1e-9 |v|");
  }
  return res;
}

/// Smallest k with |e^{A t_k} remainder| <= eps, evaluated directly at each t_k.
inline int decay_horizon(const CoupledSystem& sys, const ImpulseSchedule& sched,
                         const ModalState& remainder, double eps, int k_limit = 1 << 20) {
  if (!(eps > 0.0)) throw Error(ErrorCode::invalid_argument, "decay_horizon: eps must be > 0");
  detail::check_state(sys, remainder, "decay_horizon");
  if (!remainder.coeffs.col(0).isZero(0.0)) {
    throw Error(ErrorCode::precondition, "decay_horizon: remainder has a mode-1 component");
  }
  detail::require_spectral_bound(sys, "decay_horizon");
  for (int k = 0; k <= k_limit; ++k) {
    if (l2_norm(apply_semigroup(sys, remainder, sched.time_at(k))) <= eps) return k;
  }
  throw HorizonExhaustedError("decay_horizon: remainder above eps after " + std::to_string(k_limit) +
                                  " impulses",
                              0.0);
}

/// Smallest C with |e^{A t} g| <= C e^{-(lambda_2 - lambda_1) t / 2} |g| for g orthogonal to
/// R^n e_1, evaluated on a uniform grid over [0, t_max]. Uses the mode-wise norm bound
/// e^{-(lambda_2 - lambda_1) t / 2} |e^{(P - lambda_1) t}|.
inline double fit_decay_constant(const CoupledSystem& sys, double t_max, int points = 2000) {
  if (sys.modes() < 2) return 0.0;
  const double gap = sys.domain().eigenvalue(2) - sys.lambda1();
  double c = 0.0;
  for (int i = 0; i <= points; ++i) {
    const double t = t_max * i / points;
    c = std::max(c, std::exp(-gap * t / 2.0) *
                        spectral_norm(detail::shifted_exp(sys.p(), sys.lambda1(), t)));
  }
  return c;
}

/// Full-support approximate steering: kill the H_1 part with unit-norm mode-1
/// impulses, then coast until the dissipated remainder is inside B_eps(0).
inline SteeringResult gcac_synthesize(const CoupledSystem& sys, const ImpulseSchedule& sched,
                                      const ModalState& x0, double eps, int k_max) {
  if (!(eps > 0.0)) throw Error(ErrorCode::invalid_argument, "gcac_synthesize: eps must be > 0");
  detail::check_state(sys, x0, "gcac_synthesize");
  detail::require_full_support(sys, "gcac_synthesize");
  detail::require_spectral_bound(sys, "gcac_synthesize");

  SteeringResult res;
  res.certificate = Certificate::epsilon_ball;
  res.final_state = x0;
  res.residual = l2_norm(x0);
  if (res.residual <= eps) return res;

  const H1Split split = project_H1(x0);
  int k0 = 0;
  if (!split.v.isZero(0.0)) {
    SteeringResult first = steer_first_mode(sys, sched, split.v, k_max);
    res.controls = std::move(first.controls);
    res.history = std::move(first.history);
    k0 = first.horizon_k;
  }
  int k = std::max(k0, decay_horizon(sys, sched, split.remainder, eps, k_max));
  for (;; ++k) {
    if (k > k_max) {
      throw HorizonExhaustedError("gcac_synthesize: residual above eps at k_max = " +
                                      std::to_string(k_max),
                                  res.controls.max_norm());
    }
    res.final_state = simulate(sys, sched, x0, res.controls, k);
    res.residual = l2_norm(res.final_state);
    if (res.residual <= eps) break;
  }
  res.horizon_k = k;
  res.controls.impulses.resize(static_cast<std::size_t>(k), Matrix::Zero(sys.m(), sys.modes()));
  return res;
}

struct GradientOptions {
  int iterations = 500;
  double safety = 1.05;
  int power_iterations = 60;
  double budget = 1.0;
};

namespace detail {

// x(t_k) for controls u_1..u_k, with the cached propagator.
inline Matrix forward(const Propagator& prop, const Matrix& x0, const std::vector<Matrix>& u) {
  Matrix x = x0;
  for (std::size_t j = 1; j <= u.size(); ++j) {
    x = prop.step(x, static_cast<long>(j));
    x += prop.inject(u[j - 1], static_cast<long>(j));
  }
  return x;
}

// Gradient of |x(t_k)|^2 / 2 with respect to each u_j, given r = x(t_k).
inline std::vector<Matrix> backward(const Propagator& prop, const Matrix& r, std::size_t k) {
  std::vector<Matrix> g(k);
  Matrix y = r;
  for (std::size_t j = k; j >= 1; --j) {
    g[j - 1] = prop.inject_adjoint(y, static_cast<long>(j));
    y = prop.step_adjoint(y, static_cast<long>(j));
  }
  return g;
}

// Largest squared singular value of the control-to-final-state map.
inline double lipschitz_estimate(const Propagator& prop, std::size_t k, int m, int iters) {
  std::mt19937_64 rng(0x5eedULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int modes = prop.modes();
  std::vector<Matrix> u(k, Matrix(m, modes));
  for (auto& x : u) x = x.unaryExpr([&](double) { return normal(rng); });
  const Matrix zero = Matrix::Zero(prop.system().n(), modes);
  double est = 0.0;
  for (int it = 0; it < iters; ++it) {
    double nrm = 0.0;
    for (const auto& x : u) nrm += x.squaredNorm();
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) return 0.0;
    for (auto& x : u) x /= nrm;
    u = backward(prop, forward(prop, zero, u), k);
    double next = 0.0;
    for (const auto& x : u) next += x.squaredNorm();
    est = std::sqrt(next);
  }
  return est;
}

inline void clip(Matrix& u, double budget) {
  const double n = u.norm();
  if (n > budget) u *= budget / n;
}

struct GradientRun {
  std::vector<Matrix> controls;
  double residual = 0.0;
};

// Projected gradient on |x(t_k)|^2 / 2 over {|u_j| <= budget}, warm-started
// from `start` (zero-padded to k). Backtracks if an iterate ever increases the
// objective, so the residual is monotone.
inline GradientRun minimize_final_norm(const Propagator& prop, const Matrix& x0, int k,
                                       std::vector<Matrix> start, const GradientOptions& opt) {
  const int m = prop.system().m();
  const std::size_t kk = static_cast<std::size_t>(k);
  start.resize(kk, Matrix::Zero(m, prop.modes()));
  for (auto& u : start) clip(u, opt.budget);
  GradientRun run{std::move(start), 0.0};
  if (k == 0) {
    run.residual = x0.norm();
    return run;
  }
  const double lip = lipschitz_estimate(prop, kk, m, opt.power_iterations);
  Matrix r = forward(prop, x0, run.controls);
  double f = 0.5 * r.squaredNorm();
  if (lip > 0.0) {
    double step = 1.0 / (opt.safety * lip);
    for (int it = 0; it < opt.iterations && f > 0.0; ++it) {
      const auto g = backward(prop, r, kk);
      std::vector<Matrix> cand = run.controls;
      Matrix rc;
      double fc = kInf;
      for (int bt = 0; bt < 30; ++bt) {
        for (std::size_t j = 0; j < kk; ++j) {
          cand[j] = run.controls[j] - step * g[j];
          clip(cand[j], opt.budget);
        }
        rc = forward(prop, x0, cand);
        fc = 0.5 * rc.squaredNorm();
        if (fc <= f) break;
        step *= 0.5;
      }
      if (!(fc <= f)) break;
      const bool stalled = fc >= f;
      run.controls = std::move(cand);
      r = std::move(rc);
      f = fc;
      if (stalled) break;
    }
  }
  run.residual = r.norm();
  return run;
}

}  // namespace detail

/// Best unit-budget control for a fixed horizon by projected gradient
/// (no horizon search). Exposed for the cross-checks and witness bounds.
inline SteeringResult minimize_at_horizon(const CoupledSystem& sys, const ImpulseSchedule& sched,
                                          const ModalState& x0, int k,
                                          const GradientOptions& opt = {}) {
  detail::check_state(sys, x0, "minimize_at_horizon");
  if (k < 0) throw Error(ErrorCode::invalid_argument, "minimize_at_horizon: k must be >= 0");
  const detail::Propagator prop(sys, sched);
  auto run = detail::minimize_final_norm(prop, x0.coeffs, k, {}, opt);
  SteeringResult res;
  res.controls.impulses = std::move(run.controls);
  res.controls.budget = opt.budget;
  res.horizon_k = k;
  res.final_state = simulate(sys, sched, x0, res.controls, k);
  res.residual = l2_norm(res.final_state);
  res.certificate = Certificate::epsilon_ball;
  res.iterations_per_horizon = opt.iterations;
  res.history.push_back({k, res.residual, res.controls.max_norm()});
  return res;
}

/// Local-support approximate steering: projected-gradient minimisation of
/// |x(t_k)| over unit-norm impulses, horizon doubled from 2 hbar with zero-padded
/// warm starts. Reports failed-horizon-exhausted rather than throwing when eps
/// is not reached by k_max.
inline SteeringResult local_gcac_synthesize(const CoupledSystem& sys, const ImpulseSchedule& sched,
                                            const ModalState& x0, double eps, int k_max,
                                            const GradientOptions& opt = {}) {
  if (!(eps > 0.0)) throw Error(ErrorCode::invalid_argument, "local_gcac_synthesize: eps must be > 0");
  if (k_max < 1) throw Error(ErrorCode::invalid_argument, "local_gcac_synthesize: k_max must be >= 1");
  detail::check_state(sys, x0, "local_gcac_synthesize");
  if (!is_dissipative(sys)) {
    throw Error(ErrorCode::precondition,
                "local_gcac_synthesize: requires <P eta, eta> <= lambda_1 |eta|^2");
  }
  if (!rank_condition(sys.p(), sys.qs(), sched, k_max).holds) {
    throw RankDeficientError("local_gcac_synthesize: rank condition fails up to k = " +
                             std::to_string(k_max));
  }

  SteeringResult res;
  res.iterations_per_horizon = opt.iterations;
  res.controls.budget = opt.budget;
  res.final_state = x0;
  res.residual = l2_norm(x0);
  res.certificate = Certificate::epsilon_ball;
  if (res.residual <= eps) return res;

  const detail::Propagator prop(sys, sched);
  std::vector<Matrix> warm;
  double best = kInf;
  for (int k = std::min(2 * sched.hbar(), k_max);; k = std::min(2 * k, k_max)) {
    auto run = detail::minimize_final_norm(prop, x0.coeffs, k, warm, opt);
    res.history.push_back({k, run.residual, 0.0});
    if (run.residual <= best) {
      best = run.residual;
      res.controls.impulses = run.controls;
      res.horizon_k = k;
    }
    res.history.back().sup_norm = ControlSequence{run.controls, opt.budget, true}.max_norm();
    warm = std::move(run.controls);
    if (best <= eps || k == k_max) break;
  }
  res.final_state = simulate(sys, sched, x0, res.controls, res.horizon_k);
  res.residual = l2_norm(res.final_state);
  res.certificate = res.residual <= eps ? Certificate::epsilon_ball
                                        : Certificate::failed_horizon_exhausted;
  return res;
}

/// Exact steering to 0 at t_{k*} with the minimum-l^2 control, mode by mode.
/// Modes whose target has decayed below 1e-12 |x0| and cannot be matched
/// exactly at working precision get zero control.
inline SteeringResult null_steer(const CoupledSystem& sys, const ImpulseSchedule& sched,
                                 const ModalState& x0, int k_star) {
  detail::check_state(sys, x0, "null_steer");
  detail::require_full_support(sys, "null_steer");
  if (k_star < 1) throw Error(ErrorCode::invalid_argument, "null_steer: k* must be >= 1");
  const Matrix stack = rank_stack(sys.p(), sys.qs(), sched, k_star);
  if (numerical_rank(normalized_columns(stack)) < sys.n()) {
    throw RankDeficientError("null_steer: rank condition fails at k* = " + std::to_string(k_star),
                             left_null_space(normalized_columns(stack)).col(0));
  }
  const ObservabilityReport obs = finite_obs_constant(sys, sched, k_star);

  SteeringResult res;
  res.certificate = Certificate::exact;
  res.horizon_k = k_star;
  res.obs_constant = obs.constant;
  res.control_l2_bound = std::sqrt(obs.constant) * l2_norm(x0);
  res.controls.impulses.assign(static_cast<std::size_t>(k_star), Matrix::Zero(sys.m(), sys.modes()));

  const int n = sys.n();
  const int m = sys.m();
  const double tk = sched.time_at(k_star);
  const double x0_norm = l2_norm(x0);
  std::vector<Matrix> flow;  // e^{(P - lambda_1)(t_k - t_j)} Q_{nu(j)}
  for (int j = 1; j <= k_star; ++j) {
    flow.push_back(detail::shifted_exp(sys.p(), sys.lambda1(), tk - sched.time_at(j)) *
                   sys.q(sched.nu(j)));
  }
  const Matrix full_flow = detail::shifted_exp(sys.p(), sys.lambda1(), tk);
  for (int i = 1; i <= sys.modes(); ++i) {
    const Vector g = x0.coeffs.col(i - 1);
    if (g.isZero(0.0)) continue;
    const double rel = sys.domain().eigenvalue(i) - sys.lambda1();
    Matrix a(n, static_cast<Eigen::Index>(m) * k_star);
    for (int j = 1; j <= k_star; ++j) {
      a.middleCols(static_cast<Eigen::Index>(m) * (j - 1), m) =
          std::exp(-rel * (tk - sched.time_at(j))) * flow[static_cast<std::size_t>(j - 1)];
    }
    const Vector b = -std::exp(-rel * tk) * (full_flow * g);
    Vector sol;
    try {
      sol = min_norm_solve(a, b, true);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::unreachable) throw;
      if (b.norm() * std::exp(-sys.lambda1() * tk) > 1e-12 * x0_norm) throw;
      continue;
    }
    for (int j = 1; j <= k_star; ++j) {
      res.controls.impulses[static_cast<std::size_t>(j - 1)].col(i - 1) =
          sol.segment(static_cast<Eigen::Index>(m) * (j - 1), m);
    }
  }
  res.final_state = simulate(sys, sched, x0, res.controls, k_star);
  res.residual = l2_norm(res.final_state);
  res.history.push_back({k_star, res.residual, res.controls.max_norm()});
  return res;
}

/// Exact steering to 0 with unit-norm impulses: approximate phase into
/// B_eps(0), eps = (M sqrt(C(k*)))^{-1}, zero impulses to the next period
/// boundary, then the minimum-norm exact phase.
inline SteeringResult constrained_null_synthesize(const CoupledSystem& sys,
                                                  const ImpulseSchedule& sched,
                                                  const ModalState& x0, int k_max) {
  detail::check_state(sys, x0, "constrained_null_synthesize");
  detail::require_full_support(sys, "constrained_null_synthesize");
  detail::require_spectral_bound(sys, "constrained_null_synthesize");
  const auto rc = rank_condition(sys.p(), sys.qs(), sched, k_max);
  if (!rc.holds) {
    throw RankDeficientError("constrained_null_synthesize: rank condition fails up to k = " +
                             std::to_string(k_max));
  }
  NullSteeringPhases ph;
  ph.k_star = *rc.k_star;
  ph.obs_constant = finite_obs_constant(sys, sched, ph.k_star).constant;
  const int hbar = sched.hbar();
  double msum = 0.0;
  for (int k = 0; k < hbar; ++k) msum += semigroup_norm(sys, sched.period() - sched.time_at(k));
  ph.semigroup_bound = std::max(msum, 1.0);
  ph.epsilon = 1.0 / (ph.semigroup_bound * std::sqrt(ph.obs_constant));

  SteeringResult res;
  res.certificate = Certificate::exact;
  ModalState handoff = x0;
  if (l2_norm(x0) <= ph.epsilon) {
    ph.approach_skipped = true;
  } else {
    SteeringResult approach = gcac_synthesize(sys, sched, x0, ph.epsilon, k_max);
    ph.approach_horizon = approach.horizon_k;
    ph.padded_horizon = (approach.horizon_k / hbar + 1) * hbar;
    res.controls = std::move(approach.controls);
    res.history = std::move(approach.history);
    res.controls.impulses.resize(static_cast<std::size_t>(ph.padded_horizon),
                                 Matrix::Zero(sys.m(), sys.modes()));
    handoff = simulate(sys, sched, x0, res.controls, ph.padded_horizon);
  }
  ph.handoff_norm = l2_norm(handoff);
  if (ph.padded_horizon + ph.k_star > k_max) {
    throw HorizonExhaustedError("constrained_null_synthesize: exact phase does not fit in k_max = " +
                                    std::to_string(k_max),
                                res.controls.max_norm());
  }
  SteeringResult exact = null_steer(sys, sched, handoff, ph.k_star);
  ph.exact_control_l2 = exact.controls.l2_norm();
  for (auto& u : exact.controls.impulses) res.controls.impulses.push_back(std::move(u));
  res.obs_constant = exact.obs_constant;
  res.control_l2_bound = exact.control_l2_bound;
  res.horizon_k = ph.padded_horizon + ph.k_star;
  res.final_state = simulate(sys, sched, x0, res.controls, res.horizon_k);
  res.residual = l2_norm(res.final_state);
  res.history.push_back({res.horizon_k, res.residual, res.controls.max_norm()});
  res.phases = ph;
  return res;
}

}  // namespace impulse_gcac
