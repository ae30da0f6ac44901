#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "impulse_gcac/detail/propagator.hpp"
#include "impulse_gcac/errors.hpp"
#include "impulse_gcac/linalg.hpp"
#include "impulse_gcac/schedule.hpp"
#include "impulse_gcac/spectral.hpp"

namespace impulse_gcac {

enum class ObservabilityMethod { exact_gramian, sampled_fit, composed };

inline std::string_view to_string(ObservabilityMethod m) {
  switch (m) {
    case ObservabilityMethod::exact_gramian: return "exact-gramian";
    case ObservabilityMethod::sampled_fit: return "sampled-fit";
    case ObservabilityMethod::composed: return "composed";
  }
  return "unknown";
}

/// Observability constants. `exact_gramian` results are certified for the
/// finite-dimensional inequality; `sampled_fit` results only hold on the samples.
struct ObservabilityReport {
  int k = 0;
  double constant = 0.0;
  std::optional<double> theta;
  double delta = 0.0;
  ObservabilityMethod method = ObservabilityMethod::exact_gramian;
  int samples = 0;
  int modes = 0;
  std::optional<std::uint64_t> seed;
};

/// Controls for the sampled estimators. The seed has no default on purpose.
struct SamplingOptions {
  explicit SamplingOptions(std::uint64_t s) : seed(s) {}

  std::uint64_t seed;
  int modes = 4;
  int samples = 10000;
  int refine_top = 8;
  int refine_iters = 200;
  /// theta grid resolution; the top grid point is 1 - 1/theta_grid.
  int theta_grid = 1000;
};

struct RankConditionResult {
  bool holds = false;
  std::optional<int> k_star;
};

/// Horizontal stack (e^{-P t_1} Q_{nu(1)}, ..., e^{-P t_k} Q_{nu(k)}).
inline Matrix rank_stack(const Matrix& p, const std::vector<Matrix>& qs,
                         const ImpulseSchedule& sched, int k) {
  require_square(p, "rank_stack");
  if (static_cast<int>(qs.size()) != sched.hbar()) {
    throw Error(ErrorCode::dimension_mismatch, "rank_stack: controller count differs from hbar");
  }
  const Eigen::Index m = qs.front().cols();
  Matrix stack(p.rows(), m * k);
  for (int j = 1; j <= k; ++j) {
    stack.middleCols(m * (j - 1), m) =
        mat_exp(p, -sched.time_at(j)) * qs[static_cast<std::size_t>(sched.nu(j) - 1)];
  }
  return stack;
}

/// Smallest k* <= k_max for which the stack has full row rank.
inline RankConditionResult rank_condition(const Matrix& p, const std::vector<Matrix>& qs,
                                          const ImpulseSchedule& sched, int k_max,
                                          double tol = kDefaultRankTol) {
  if (k_max < 1) throw Error(ErrorCode::invalid_argument, "rank_condition: k_max must be >= 1");
  const Eigen::Index n = p.rows();
  // Columns of period l are (e^{-PT})^l times those of period 0, so by
  // Cayley-Hamilton the span stops growing after n periods.
  const int k_eval = static_cast<int>(std::min<long>(k_max, static_cast<long>(n) * sched.hbar()));
  const Matrix full = rank_stack(p, qs, sched, k_eval);
  const Eigen::Index m = qs.front().cols();
  for (int k = 1; k <= k_eval; ++k) {
    if (m * k < n) continue;
    if (numerical_rank(normalized_columns(full.leftCols(m * k)), tol) == n) {
      return {true, k};
    }
  }
  return {false, std::nullopt};
}

/// rank(Q_1..Q_hbar, P Q_1.., ..., P^{n-1} Q_1..) == n.
inline bool kalman_rank(const Matrix& p, const std::vector<Matrix>& qs,
                        double tol = kDefaultRankTol) {
  require_square(p, "kalman_rank");
  const Eigen::Index n = p.rows();
  Matrix block(n, 0);
  for (const auto& q : qs) {
    Matrix tmp(n, block.cols() + q.cols());
    tmp << block, q;
    block = std::move(tmp);
  }
  Matrix kalman(n, block.cols() * n);
  Matrix power = block;
  for (Eigen::Index i = 0; i < n; ++i) {
    kalman.middleCols(i * block.cols(), block.cols()) = power;
    power = p * power;
  }
  return numerical_rank(normalized_columns(kalman), tol) == n;
}

/// Optimal C(k) in |v|^2 <= C sum_j |Q_j^T e^{-P^T tau_j} v|^2, i.e.
/// 1 / lambda_min of W = sum_j e^{-P tau_j} Q_j Q_j^T e^{-P^T tau_j}.
/// `qs` holds one matrix per time, or a single matrix used for every time.
inline ObservabilityReport finite_obs_constant(const Matrix& p, const std::vector<Matrix>& qs,
                                               const std::vector<double>& taus) {
  require_square(p, "finite_obs_constant");
  if (taus.empty()) throw Error(ErrorCode::invalid_argument, "finite_obs_constant: no times");
  if (qs.size() != taus.size() && qs.size() != 1) {
    throw Error(ErrorCode::dimension_mismatch, "finite_obs_constant: one Q per time expected");
  }
  for (std::size_t j = 0; j < taus.size(); ++j) {
    if (!(taus[j] > 0.0) || (j > 0 && !(taus[j] > taus[j - 1]))) {
      throw Error(ErrorCode::invalid_argument, "finite_obs_constant: times must increase strictly");
    }
  }
  const Eigen::Index n = p.rows();
  Matrix w = Matrix::Zero(n, n);
  std::vector<Matrix> blocks;
  Eigen::Index cols = 0;
  for (std::size_t j = 0; j < taus.size(); ++j) {
    const Matrix& q = qs.size() == 1 ? qs.front() : qs[j];
    if (q.rows() != n) throw Error(ErrorCode::dimension_mismatch, "finite_obs_constant: Q rows");
    blocks.push_back(mat_exp(p, -taus[j]) * q);
    w += blocks.back() * blocks.back().transpose();
    cols += q.cols();
  }
  Matrix stack(n, cols);
  Eigen::Index c = 0;
  for (const auto& b : blocks) {
    stack.middleCols(c, b.cols()) = b;
    c += b.cols();
  }
  ObservabilityReport report;
  report.k = static_cast<int>(taus.size());
  report.method = ObservabilityMethod::exact_gramian;
  if (numerical_rank(normalized_columns(stack)) < n) {
    report.constant = kInf;
    return report;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(w, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  report.constant = lmin > 0.0 ? 1.0 / lmin : kInf;
  return report;
}

/// C(k) along the schedule: Q~_j = Q_{nu(j)}, tau_j = t_j.
inline ObservabilityReport finite_obs_constant(const CoupledSystem& sys,
                                               const ImpulseSchedule& sched, int k) {
  std::vector<Matrix> qs;
  std::vector<double> taus;
  for (int j = 1; j <= k; ++j) {
    qs.push_back(sys.q(sched.nu(j)));
    taus.push_back(sched.time_at(j));
  }
  return finite_obs_constant(sys.p(), qs, taus);
}

/// |e^{A t}| on (L^2)^n, exactly e^{-lambda_1 t} |e^{P t}|_2.
inline double semigroup_norm(const CoupledSystem& sys, double t) {
  if (!(t >= 0.0)) throw Error(ErrorCode::invalid_argument, "semigroup_norm: t must be >= 0");
  return spectral_norm(detail::shifted_exp(sys.p(), sys.lambda1(), t));
}

namespace detail {

// Dense adjoint-observation operators over vec(z), z an n x M block:
// final_map z = e^{A* T} z and obs_maps[j-1] z = B*_{nu(j)} e^{A*(T - t_j)} z
// (the latter as the matrix whose Euclidean norm is the L^2 norm).
struct ObservationModel {
  Matrix final_map;
  std::vector<Matrix> obs_maps;
  int n = 0;
  int modes = 0;

  double lhs(const Vector& z) const { return (final_map * z).norm(); }
  double obs(const Vector& z) const {
    double s = 0.0;
    for (const auto& o : obs_maps) s += (o * z).norm();
    return s;
  }
  Matrix stacked_obs() const {
    Eigen::Index rows = 0;
    for (const auto& o : obs_maps) rows += o.rows();
    Matrix out(rows, final_map.cols());
    Eigen::Index r = 0;
    for (const auto& o : obs_maps) {
      out.middleRows(r, o.rows()) = o;
      r += o.rows();
    }
    return out;
  }
};

inline ObservationModel build_observation_model(const CoupledSystem& sys,
                                                const ImpulseSchedule& sched, long final_index,
                                                int k, int modes) {
  const Propagator prop(sys, sched, modes);
  const int n = sys.n();
  const int dim = n * modes;
  ObservationModel model;
  model.n = n;
  model.modes = modes;
  model.final_map.resize(dim, dim);
  model.obs_maps.assign(static_cast<std::size_t>(k), Matrix(sys.m() * modes, dim));
  for (int b = 0; b < dim; ++b) {
    Matrix psi = Matrix::Zero(n, modes);
    psi(b % n, b / n) = 1.0;
    // Walk back from T = t_final to 0, recording observations at each t_j <= t_k.
    for (long j = final_index; j >= 1; --j) {
      if (j <= k) {
        const Matrix ob = prop.observe_block(psi, j);
        model.obs_maps[static_cast<std::size_t>(j - 1)].col(b) =
            Eigen::Map<const Vector>(ob.data(), ob.size());
      }
      psi = prop.step_adjoint(psi, j);
    }
    model.final_map.col(b) = Eigen::Map<const Vector>(psi.data(), psi.size());
  }
  return model;
}

inline std::vector<Vector> unit_samples(int dim, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    Vector z(dim);
    for (int i = 0; i < dim; ++i) z(i) = normal(rng);
    const double nz = z.norm();
    if (nz > 0.0) out.push_back(z / nz);
  }
  return out;
}

// Ascent of f(z) = (|E z| - delta) / sum_j |O_j z| on the unit sphere.
inline Vector refine_delta_ratio(const ObservationModel& model, Vector z, double delta, int iters) {
  auto value = [&](const Vector& v) {
    const double b = model.obs(v);
    return b > 0.0 ? (model.lhs(v) - delta) / b : -kInf;
  };
  double f = value(z);
  double step = 0.1;
  for (int it = 0; it < iters && step > 1e-14; ++it) {
    const Vector ez = model.final_map * z;
    const double a = ez.norm();
    double b = 0.0;
    Vector grad_b = Vector::Zero(z.size());
    for (const auto& o : model.obs_maps) {
      const Vector oz = o * z;
      const double no = oz.norm();
      b += no;
      if (no > 0.0) grad_b += o.transpose() * oz / no;
    }
    if (a == 0.0 || b == 0.0) break;
    const Vector grad_a = model.final_map.transpose() * ez / a;
    Vector g = (grad_a * b - (a - delta) * grad_b) / (b * b);
    g -= g.dot(z) * z;
    const double gn = g.norm();
    if (gn < 1e-15) break;
    bool improved = false;
    while (step > 1e-14) {
      Vector cand = z + step * g / gn;
      cand.normalize();
      const double fc = value(cand);
      if (fc > f) {
        z = cand;
        f = fc;
        step *= 1.5;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
  }
  return z;
}

}  // namespace detail

/// D(k, delta) for several deltas on one shared pool of states (random unit
/// samples plus their refinements for every delta), so the result is
/// non-increasing in delta by construction. D = +inf when some unobserved
/// direction keeps |e^{A* t_k} z| above delta.
inline std::vector<ObservabilityReport> delta_obs_curve(const CoupledSystem& sys,
                                                        const ImpulseSchedule& sched, int k,
                                                        const std::vector<double>& deltas,
                                                        const SamplingOptions& opts) {
  if (k < 1) throw Error(ErrorCode::invalid_argument, "delta_obs_constant: k must be >= 1");
  for (double d : deltas) {
    if (!(d > 0.0)) throw Error(ErrorCode::invalid_argument, "delta_obs_constant: delta must be > 0");
  }
  const int modes = std::min(opts.modes, sys.modes());
  const detail::ObservationModel model = detail::build_observation_model(sys, sched, k, k, modes);
  const int dim = sys.n() * modes;

  // Largest |e^{A* t_k} z| over unit z in the unobserved subspace.
  const Matrix stacked = model.stacked_obs();
  double unobserved_gain = 0.0;
  {
    Eigen::JacobiSVD<Matrix> svd(stacked, Eigen::ComputeFullV);
    const Vector& s = svd.singularValues();
    Eigen::Index rank = 0;
    const double cutoff = s.size() > 0 ? kDefaultRankTol * s(0) : 0.0;
    while (rank < s.size() && s(rank) > cutoff) ++rank;
    if (rank < dim) {
      const Matrix basis = svd.matrixV().rightCols(dim - rank);
      unobserved_gain = spectral_norm(model.final_map * basis);
    }
  }

  std::vector<Vector> pool = detail::unit_samples(dim, opts.samples, opts.seed);
  const std::size_t base = pool.size();
  for (double delta : deltas) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < base; ++i) {
      const double b = model.obs(pool[i]);
      if (b > 0.0) scored.emplace_back((model.lhs(pool[i]) - delta) / b, i);
    }
    const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(opts.refine_top), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(top), scored.end(),
                      [](const auto& x, const auto& y) { return x.first > y.first; });
    for (std::size_t i = 0; i < top; ++i) {
      pool.push_back(detail::refine_delta_ratio(model, pool[scored[i].second], delta, opts.refine_iters));
    }
  }

  std::vector<ObservabilityReport> out;
  for (double delta : deltas) {
    ObservabilityReport r;
    r.k = k;
    r.delta = delta;
    r.method = ObservabilityMethod::sampled_fit;
    r.samples = static_cast<int>(pool.size());
    r.modes = modes;
    r.seed = opts.seed;
    if (unobserved_gain > delta * (1.0 + 1e-12)) {
      r.constant = kInf;
    } else {
      double d = 0.0;
      for (const auto& z : pool) {
        const double a = model.lhs(z);
        if (a <= delta * (1.0 + 1e-12)) continue;  // same roundoff slack as above
        const double b = model.obs(z);
        d = std::max(d, b > 0.0 ? (a - delta) / b : kInf);
      }
      r.constant = d;
    }
    out.push_back(r);
  }
  return out;
}

inline ObservabilityReport delta_obs_constant(const CoupledSystem& sys, const ImpulseSchedule& sched,
                                              int k, double delta, const SamplingOptions& opts) {
  return delta_obs_curve(sys, sched, k, {delta}, opts).front();
}

/// Sampled fit of C(k), theta in |e^{A* t_{k+1}} z| <= C (sum_j |B* e^{A*(t_{k+1}-t_j)} z|)^theta |z|^{1-theta}.
/// theta is the largest grid value whose fitted constant stays within
/// max(1, best constant over the grid). Not a certificate.
inline ObservabilityReport interpolation_estimate(const CoupledSystem& sys,
                                                  const ImpulseSchedule& sched, int k,
                                                  const SamplingOptions& opts) {
  if (k < 1) throw Error(ErrorCode::invalid_argument, "interpolation_estimate: k must be >= 1");
  if (opts.samples < 100) {
    throw Error(ErrorCode::invalid_argument, "interpolation_estimate: at least 100 samples required");
  }
  const Matrix stack = rank_stack(sys.p(), sys.qs(), sched, k);
  const Matrix left_null = left_null_space(normalized_columns(stack));
  if (left_null.cols() > 0) {
    // v annihilates every Q^T e^{-P^T t_j}; v* = e^{-P^T t_{k+1}} v annihilates
    // every Q^T e^{P^T (t_{k+1} - t_j)}.
    Vector w = mat_exp(sys.p().transpose(), -sched.time_at(k + 1)) * left_null.col(0);
    w.normalize();
    throw RankDeficientError("interpolation_estimate: rank condition fails at k = " +
                                 std::to_string(k) + "; observations vanish on the witness direction",
                             w);
  }
  const int modes = std::min(opts.modes, sys.modes());
  const detail::ObservationModel model = detail::build_observation_model(sys, sched, k + 1, k, modes);
  const auto samples = detail::unit_samples(sys.n() * modes, opts.samples, opts.seed);

  std::vector<double> log_a;
  std::vector<double> log_b;
  for (const auto& z : samples) {
    const double a = model.lhs(z);
    const double b = model.obs(z);
    if (a <= 0.0) continue;
    if (b <= 0.0) {
      throw Error(ErrorCode::numerical_failure,
                  "interpolation_estimate: sampled state with zero observation");
    }
    log_a.push_back(std::log(a));
    log_b.push_back(std::log(b));
  }
  const int grid = std::max(2, opts.theta_grid);
  std::vector<double> consts(static_cast<std::size_t>(grid - 1));
  double best = kInf;
  for (int g = 1; g < grid; ++g) {
    const double theta = static_cast<double>(g) / grid;
    double c = 0.0;
    for (std::size_t i = 0; i < log_a.size(); ++i) c = std::max(c, std::exp(log_a[i] - theta * log_b[i]));
    consts[static_cast<std::size_t>(g - 1)] = c;
    best = std::min(best, c);
  }
  const double cap = std::max(1.0, best);
  ObservabilityReport r;
  r.k = k;
  r.method = ObservabilityMethod::sampled_fit;
  r.samples = static_cast<int>(samples.size());
  r.modes = modes;
  r.seed = opts.seed;
  for (int g = grid - 1; g >= 1; --g) {
    if (consts[static_cast<std::size_t>(g - 1)] <= cap) {
      r.theta = static_cast<double>(g) / grid;
      r.constant = consts[static_cast<std::size_t>(g - 1)];
      break;
    }
  }
  return r;
}

struct ComposedObservability {
  double delta_k = 0.0;
  double d_k = 0.0;
};

/// Chains a delta-observability constant on [0, t_{gamma hbar}] over k periods:
/// delta_k = delta sum_i |e^{A* t_{i gamma hbar}}| / sum_i |e^{A* t_{i gamma hbar}}|^{-1},
/// D_k = D_op / sum_i |e^{A* t_{i gamma hbar}}|^{-1}, i = 0..k-1.
inline ComposedObservability compose_obs(double d_op, double delta, int gamma, int k,
                                         const CoupledSystem& sys, const ImpulseSchedule& sched) {
  if (gamma < 1 || k < 1) throw Error(ErrorCode::invalid_argument, "compose_obs: gamma, k >= 1");
  if (!(delta >= 0.0) || !(d_op >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "compose_obs: delta and D_op must be >= 0");
  }
  double sum = 0.0;
  double inv_sum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double norm = semigroup_norm(sys, sched.time_at(static_cast<long>(i) * gamma * sched.hbar()));
    sum += norm;
    inv_sum += 1.0 / norm;
  }
  return {delta * sum / inv_sum, d_op / inv_sum};
}

enum class SpectralPosition { strict, boundary, violated };

inline std::string_view to_string(SpectralPosition s) {
  switch (s) {
    case SpectralPosition::strict: return "strict";
    case SpectralPosition::boundary: return "boundary";
    case SpectralPosition::violated: return "violated";
  }
  return "unknown";
}

/// Where max Re sigma(P) sits relative to lambda_1.
inline SpectralPosition spectral_position(const CoupledSystem& sys) {
  const double l1 = sys.lambda1();
  const double tol = 1e-9 * std::max(1.0, std::abs(l1));
  const double r = spectrum(sys.p()).max_real_part;
  if (r > l1 + tol) return SpectralPosition::violated;
  if (r >= l1 - tol) return SpectralPosition::boundary;
  return SpectralPosition::strict;
}

/// <P eta, eta> <= lambda_1 |eta|^2 for all eta.
inline bool is_dissipative(const CoupledSystem& sys) {
  const double l1 = sys.lambda1();
  return symmetric_part_max_eig(sys.p()) <= l1 + 1e-9 * std::max(1.0, std::abs(l1));
}

struct HypothesisVerdict {
  bool rank_ok = false;
  std::optional<int> k_star;
  bool kalman_ok = false;
  SpectralPosition spectral = SpectralPosition::strict;
  bool dissipative = false;
  bool omega_full = false;
};

inline HypothesisVerdict hypothesis_verdict(const CoupledSystem& sys, const ImpulseSchedule& sched,
                                            int k_max) {
  HypothesisVerdict v;
  const auto rc = rank_condition(sys.p(), sys.qs(), sched, k_max);
  v.rank_ok = rc.holds;
  v.k_star = rc.k_star;
  v.kalman_ok = kalman_rank(sys.p(), sys.qs());
  v.spectral = spectral_position(sys);
  v.dissipative = is_dissipative(sys);
  v.omega_full = sys.all_full_support();
  return v;
}

}  // namespace impulse_gcac
