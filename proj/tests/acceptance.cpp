// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit on
// any failure. Tolerances are fixed here and must not be loosened.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "impulse_gcac/impulse_gcac.hpp"
#include "impulse_gcac/scenario.hpp"
#include "oracles.hpp"

using namespace impulse_gcac;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream note;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) note << "first failure: " << what << "; ";
      pass = false;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string scenario_path(const std::string& name) {
  return std::string(IMPULSE_GCAC_SCENARIO_DIR) + "/" + name;
}

CoupledSystem full(const Matrix& p, const Matrix& q, int modes) {
  return CoupledSystem(p, {Controller{q, {0, kPi}}}, SpectralDomain{kPi, modes});
}

ModalState random_state(int n, int modes, double norm, std::mt19937_64& rng) {
  ModalState x{oracle::random_matrix(n, modes, -1, 1, rng)};
  x.coeffs *= norm / x.coeffs.norm();
  return x;
}

bool verified(const CoupledSystem& sys, const ImpulseSchedule& sched, const ModalState& x0, const SteeringResult& r,
              double tol) {
  const ModalState again = simulate(sys, sched, x0, r.controls, r.horizon_k);
  const bool bounded = !r.controls.constrained || r.controls.max_norm() <= 1.0 + 1e-12;
  return bounded && std::abs(l2_norm(again) - r.residual) <= tol;
}

const ImpulseSchedule kUnit({1.0});

// 1. Unobserved-component system: the gap is exactly 2 eps for every horizon.
void unobserved_component_gap(Verdict& v) {
  const auto t0 = Clock::now();
  const Scenario sc = load_scenario(scenario_path("unobserved_component.json"));
  const CoupledSystem sys = sc.system();
  const double eps = sc.parameters["eps"].get<double>();
  v.require(sys.modes() == 32, "truncation N = 32");
  ModalState x0 = ModalState::zero(sys);
  x0.coeffs(0, 0) = 2 * eps;
  for (int k : {1, 5, 20}) {
    const ReachabilityGap g = reachability_gap(sys, sc.schedule(), x0, k, GapOptions(*sc.seed));
    v.require(std::abs(g.lower_bound - 0.5) <= 1e-9 * 0.5, "lower_bound = 0.5 at k = " + std::to_string(k));
    v.require(std::abs(g.achieved - 0.5) <= 1e-9 * 0.5, "achieved = 0.5 at k = " + std::to_string(k));
    v.note << "k=" << k << " lb=" << g.lower_bound << " ach=" << g.achieved << "; ";
  }
  const double secs = seconds_since(t0);
  v.require(secs < 5.0, "runtime < 5 s");
  v.note << secs << " s";
}

// 2. Hypothesis checks, exact booleans.
void hypothesis_checks(Verdict& v) {
  const Scenario sc = load_scenario(scenario_path("unobserved_component.json"));
  const HypothesisVerdict a = hypothesis_verdict(sc.system(), sc.schedule(), 20);
  v.require(!a.rank_ok, "rank_ok false");
  v.require(!a.kalman_ok, "kalman_ok false");
  v.require(a.dissipative, "dissipative true");
  v.require(a.spectral == SpectralPosition::boundary, "spectral boundary");
  const HypothesisVerdict b = hypothesis_verdict(full(Matrix::Zero(2, 2), Matrix::Identity(2, 2), 32), kUnit, 20);
  v.require(b.rank_ok, "heat system rank_ok");
  v.require(b.k_star == std::optional<int>(1), "heat system k* = 1");
  v.note << "unobserved: rank=" << a.rank_ok << " kalman=" << a.kalman_ok << " spectral=" << to_string(a.spectral)
         << "; heat: k*=" << (b.k_star ? *b.k_star : -1);
}

// 3. Full-support synthesis from a state of norm 10.
void gcac_end_to_end(Verdict& v) {
  const auto t0 = Clock::now();
  const auto sys = full(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 32);
  std::mt19937_64 rng(2024);
  const ModalState x0 = random_state(2, 32, 10.0, rng);
  const SteeringResult r = gcac_synthesize(sys, kUnit, x0, 1e-2, 256);
  const double secs = seconds_since(t0);
  v.require(r.certificate == Certificate::epsilon_ball, "certificate epsilon-ball");
  v.require(r.residual <= 1e-2, "residual <= 1e-2");
  v.require(r.controls.max_norm() <= 1.0 + 1e-12, "every |u_j| <= 1");
  v.require(verified(sys, kUnit, x0, r, 1e-10), "independent re-simulation");
  v.require(secs < 10.0, "runtime < 10 s");
  v.note << "k=" << r.horizon_k << " residual=" << r.residual << " max|u|=" << r.controls.max_norm() << " " << secs
         << " s";
}

// 4. Exact null steering with unit-ball impulses, two-phase structure.
void constrained_null(Verdict& v) {
  const auto sys = full(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 32);
  std::mt19937_64 rng(55);
  const ModalState x0 = random_state(2, 32, 5.0, rng);
  const SteeringResult r = constrained_null_synthesize(sys, kUnit, x0, 256);
  v.require(r.certificate == Certificate::exact, "certificate exact");
  v.require(r.residual <= 1e-8 * 5.0, "residual <= 1e-8 |x0|");
  v.require(r.controls.max_norm() <= 1.0 + 1e-12, "every |u_j| <= 1");
  v.require(verified(sys, kUnit, x0, r, 1e-10), "independent re-simulation");
  v.require(r.phases.has_value(), "phase record present");
  if (!r.phases) return;
  const auto& ph = *r.phases;
  v.require(std::abs(ph.epsilon - 1.0 / (ph.semigroup_bound * std::sqrt(ph.obs_constant))) <= 1e-14,
            "eps = 1/(M sqrt C)");
  v.require(ph.padded_horizon % sys.hbar() == 0, "padded horizon is a period multiple");
  v.require(r.horizon_k == ph.padded_horizon + ph.k_star, "exact phase spans k* impulses");
  // Hand-off state, recomputed from the first phase's impulses only.
  ControlSequence first;
  const auto cut = std::min<std::size_t>(r.controls.impulses.size(), static_cast<std::size_t>(ph.padded_horizon));
  first.impulses.assign(r.controls.impulses.begin(), r.controls.impulses.begin() + static_cast<long>(cut));
  const double handoff = l2_norm(simulate(sys, kUnit, x0, first, ph.padded_horizon));
  v.require(std::abs(handoff - ph.handoff_norm) <= 1e-10, "hand-off norm reproduces");
  v.require(handoff <= ph.epsilon, "hand-off inside B_eps");
  v.require(ph.exact_control_l2 <= 1.0, "exact phase energy <= 1");
  v.note << "k*=" << ph.k_star << " C=" << ph.obs_constant << " M=" << ph.semigroup_bound << " eps=" << ph.epsilon
         << " approach=" << ph.approach_horizon << " padded=" << ph.padded_horizon << " handoff=" << handoff
         << " residual=" << r.residual;
}

// 5. Unstable coupling: closed-form threshold and a certified gap beyond it.
void negative_witness(Verdict& v) {
  Matrix p = Matrix::Zero(2, 2);
  p(0, 0) = 1.0 + 0.5;  // lambda_1 + 0.5 with L = pi
  const auto sys = full(p, Matrix::Identity(2, 2), 16);
  const NegativeCertificate c = negative_bound(sys, kUnit, 1.0);
  v.require(c.threshold_ell == 3.0, "threshold_ell = 3");
  const ModalState x0 = ModalState::first_mode(6.0 * c.direction(), sys.modes());
  double worst = INFINITY;
  for (int k = 1; k <= 40; ++k) {
    GapOptions opt(1000 + static_cast<std::uint64_t>(k));
    const ReachabilityGap g = reachability_gap(sys, kUnit, x0, k, opt);
    v.require(g.lower_bound > 1.0, "lower_bound > 1 at k = " + std::to_string(k));
    v.require(g.lower_bound <= g.achieved, "lower_bound <= achieved at k = " + std::to_string(k));
    worst = std::min(worst, g.lower_bound);
  }
  v.note << "threshold=" << c.threshold_ell << " min lower_bound over k<=40: " << worst;
}

// 6. Finite observability constant against a sampled minimum on the circle.
void observability_oracle(Verdict& v) {
  std::mt19937_64 rng(606);
  double worst = 0.0;
  int singular = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Matrix p = oracle::random_matrix(2, 2, -1.5, 1.5, rng);
    Matrix q = oracle::random_matrix(2, 1, -1, 1, rng);
    if (trial % 4 == 3) {
      // Injection along an eigenvector of P: the stack has rank 1.
      p(1, 0) = 0.0;
      q << 1.0, 0.0;
    }
    const std::vector<double> taus = {0.5, 1.0, 1.5};
    std::vector<Matrix> blocks;
    Matrix stack(2, 3);
    for (int j = 0; j < 3; ++j) {
      blocks.push_back(oracle::series_exp(p, -taus[j], 60) * q);
      stack.col(j) = blocks.back();
    }
    const double c = finite_obs_constant(p, {q}, taus).constant;
    const bool deficient = numerical_rank(normalized_columns(stack)) < 2;
    v.require(std::isinf(c) == deficient, "singularity matches rank failure, trial " + std::to_string(trial));
    if (deficient) {
      ++singular;
      continue;
    }
    const double brute = 1.0 / oracle::circle_min(blocks, 10000);
    const double rel = std::abs(c - brute) / brute;
    worst = std::max(worst, rel);
    v.require(rel <= 0.05, "within 5%, trial " + std::to_string(trial));
  }
  v.note << "max relative deviation " << worst << ", singular systems " << singular << "/20";
}

// 7. Composition of delta-observability over periods for the pure heat flow.
void composition(Verdict& v) {
  const auto sys = full(Matrix::Zero(2, 2), Matrix::Identity(2, 2), 4);
  const double delta = 0.1;
  const double e = std::exp(1.0);
  const ObservabilityReport base = delta_obs_constant(sys, kUnit, 1, delta, SamplingOptions(77));
  const ComposedObservability c = compose_obs(base.constant, delta, 1, 2, sys, kUnit);
  v.require(std::abs(c.delta_k - delta * (1 + 1 / e) / (1 + e)) <= 1e-12, "delta_2 closed form");
  v.require(std::abs(c.d_k - base.constant / (1 + e)) <= 1e-12, "D_2 closed form");
  const auto model = detail::build_observation_model(sys, kUnit, 2, 2, sys.modes());
  double worst = -INFINITY;
  for (const auto& z : detail::unit_samples(sys.n() * sys.modes(), 1000, 4242)) {
    const double lhs = model.lhs(z);
    const double rhs = c.d_k * model.obs(z) + c.delta_k;
    worst = std::max(worst, lhs - rhs);
    v.require(lhs <= rhs * (1 + 1e-12), "inequality on fresh samples");
  }
  v.note << "D_op=" << base.constant << " delta_2=" << c.delta_k << " D_2=" << c.d_k
         << " max(lhs - rhs)=" << worst;
}

// 8. Locally supported control on half the interval.
void local_support(Verdict& v) {
  const auto sys = CoupledSystem(Matrix::Zero(2, 2), {Controller{Matrix::Identity(2, 2), {0, kPi / 2}}},
                                 SpectralDomain{kPi, 32});
  std::mt19937_64 rng(808);
  const ModalState x0 = random_state(2, 32, 1.0, rng);
  const SteeringResult r = local_gcac_synthesize(sys, kUnit, x0, 0.1, 256);
  v.require(r.residual <= 0.1, "residual <= 0.1 within k_max = 256");
  v.require(verified(sys, kUnit, x0, r, 1e-10), "independent re-simulation");
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    v.require(r.history[i].residual <= r.history[i - 1].residual, "monotone across doublings");
  }

  const auto whole = full(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 32);
  const ModalState y0 = random_state(2, 32, 3.0, rng);
  const SteeringResult g = gcac_synthesize(whole, kUnit, y0, 1e-2, 256);
  const SteeringResult l = minimize_at_horizon(whole, kUnit, y0, g.horizon_k);
  v.require(l.residual <= 1.1 * g.residual, "full-support residual within 10% of gcac");
  v.require(verified(whole, kUnit, y0, l, 1e-10), "full-support re-simulation");
  v.note << "local k=" << r.horizon_k << " residual=" << r.residual << "; full support k=" << g.horizon_k
         << " gcac=" << g.residual << " local=" << l.residual;
}

// 9. Matrix exponential, semigroup norm and contraction.
void numerical_kernels(Verdict& v) {
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> time(0.0, 3.0);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  double group = 0.0;
  double series = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 4;
    const Matrix m = oracle::random_matrix(n, n, -2, 2, rng);
    const double s = time(rng);
    const double t = time(rng);
    const Matrix whole = mat_exp(m, s + t);
    group = std::max(group, (whole - mat_exp(m, s) * mat_exp(m, t)).norm() / whole.norm());
    const Matrix a = oracle::random_matrix(n, n, -1, 1, rng);
    const double ta = 2.0 * unit(rng) / spectral_norm(a);
    series = std::max(series, (mat_exp(a, ta) - oracle::series_exp(a, ta)).norm());
  }
  v.require(group <= 1e-10, "group-law defect <= 1e-10");
  v.require(series <= 1e-9, "series agreement <= 1e-9");

  const auto flat = full(Matrix::Identity(3, 3), Matrix::Identity(3, 3), 8);
  for (int i = 0; i <= 200; ++i) v.require(semigroup_norm(flat, 0.05 * i) == 1.0, "|e^{At}| = 1 for P = lambda_1 I");

  int samples = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 3;
    const Matrix a = oracle::random_matrix(n, n, -2, 2, rng);
    Matrix p = a - (symmetric_part_max_eig(a) - 1.0) * Matrix::Identity(n, n);
    if (trial % 2) p -= 0.3 * Matrix::Identity(n, n);
    const auto sys = full(p, Matrix::Identity(n, n), 4);
    if (!is_dissipative(sys)) continue;
    ++samples;
    for (int i = 0; i <= 100; ++i) v.require(semigroup_norm(sys, 0.05 * i) <= 1.0 + 1e-10, "contraction");
  }
  v.require(samples == 100, "all seeded samples dissipative");
  v.note << "group defect " << group << ", series deviation " << series << ", dissipative samples " << samples;
}

// 10. Coasting bound between impulses, and automatic schedules for Kalman-controllable pairs.
void schedule_properties(Verdict& v) {
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> frac(0.01, 0.99);
  std::uniform_int_distribution<int> kk(0, 6);
  for (int run = 0; run < 20; ++run) {
    const int hbar = 1 + run % 2;
    const Matrix p = oracle::random_matrix(2, 2, -2, 3, rng);
    std::vector<Controller> cs;
    for (int j = 0; j < hbar; ++j) cs.push_back({oracle::random_matrix(2, 1, -1, 1, rng), {0.2, 2.9}});
    const auto sys = CoupledSystem(p, cs, SpectralDomain{kPi, 8});
    const ImpulseSchedule sched(hbar == 1 ? std::vector<double>{0.8} : std::vector<double>{0.3, 0.9});
    const ModalState x0 = random_state(2, 8, 1.0, rng);
    const int k0 = kk(rng);
    ControlSequence u;
    for (int j = 0; j < k0; ++j) {
      const Matrix w = oracle::random_matrix(1, 8, -1, 1, rng);
      u.impulses.push_back(w / w.norm());
    }
    const double dt = frac(rng) * sched.gap(k0 + 1);
    const double t_mid = sched.time_at(k0) + dt;
    const ModalState mid = apply_semigroup(sys, simulate(sys, sched, x0, u, k0), dt);
    const double T = sched.max_gap();
    double big_m = semigroup_norm(sys, sched.time_at(k0 + 1) - t_mid);
    for (int i = 0; i <= 400; ++i) big_m = std::max(big_m, semigroup_norm(sys, T * i / 400));
    const double eps = big_m * l2_norm(mid);
    const ModalState next = simulate(sys, sched, x0, u, k0 + 1);
    v.require(l2_norm(next) <= eps * (1 + 1e-12), "coasting bound, run " + std::to_string(run));
  }

  int tested = 0;
  int worst_k = 0;
  for (int trial = 0; trial < 200 && tested < 10; ++trial) {
    const int n = 2 + trial % 2;
    const int hbar = 1 + trial % 2;
    const Matrix p = oracle::random_matrix(n, n, -3, 3, rng);
    std::vector<Matrix> qs;
    for (int j = 0; j < hbar; ++j) qs.push_back(oracle::random_matrix(n, 1, -1, 1, rng));
    if (!kalman_rank(p, qs)) continue;
    ++tested;
    const int q = schedule_order(p, qs);
    const auto rc = rank_condition(p, qs, pick_schedule(p, qs), (q + 1) * hbar);
    v.require(rc.holds && rc.k_star && *rc.k_star <= (q + 1) * hbar, "k* <= (q+1) hbar");
    if (rc.k_star) worst_k = std::max(worst_k, *rc.k_star);
  }
  v.require(tested == 10, "ten Kalman-controllable systems");
  v.note << "20 coasting runs; " << tested << " auto schedules, largest k* " << worst_k;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void(Verdict&)>>> criteria = {
      {"unobserved component: gap = 2 eps at k = 1, 5, 20", unobserved_component_gap},
      {"hypothesis checks", hypothesis_checks},
      {"gcac end-to-end, |x0| = 10", gcac_end_to_end},
      {"constrained null steering, |x0| = 5", constrained_null},
      {"negative witness, threshold 3", negative_witness},
      {"finite observability vs sampling", observability_oracle},
      {"delta-observability composition", composition},
      {"local-support synthesis", local_support},
      {"numerical kernels", numerical_kernels},
      {"coasting bound and auto schedules", schedule_properties},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      criteria[i].second(v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.note << "exception: " << e.what();
    }
    std::printf("%s %2zu %s -- %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.note.str().c_str());
    failed += v.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
