#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "impulse_gcac/impulse_gcac.hpp"
#include "oracles.hpp"

using namespace impulse_gcac;

namespace {

Matrix col(double a, double b) {
  Matrix m(2, 1);
  m << a, b;
  return m;
}

Matrix diag2(double a, double b) {
  Matrix m = Matrix::Zero(2, 2);
  m.diagonal() << a, b;
  return m;
}

CoupledSystem full(const Matrix& p, const Matrix& q, int modes = 8) {
  return CoupledSystem(p, {Controller{q, {0, kPi}}}, SpectralDomain{kPi, modes});
}

// P = lambda_1 I, Q = (0,1)^T on (0, pi/2): the first component is never observed.
CoupledSystem unobserved_component_system(int modes = 8) {
  return CoupledSystem(Matrix::Identity(2, 2), {Controller{col(0, 1), {0, kPi / 2}}},
                       SpectralDomain{kPi, modes});
}

const ImpulseSchedule kUnit({1.0});

}  // namespace

TEST(RankCondition, IdentityInjection) {
  const auto rc = rank_condition(Matrix::Zero(3, 3), {Matrix::Identity(3, 3)}, ImpulseSchedule({0.7}), 5);
  EXPECT_TRUE(rc.holds);
  EXPECT_EQ(rc.k_star, 1);
}

TEST(RankCondition, UnobservedComponentFails) {
  const auto rc = rank_condition(Matrix::Identity(2, 2), {col(0, 1)}, kUnit, 20);
  EXPECT_FALSE(rc.holds);
  EXPECT_FALSE(rc.k_star.has_value());
}

TEST(RankCondition, TwoControllersNeedBoth) {
  const auto rc = rank_condition(Matrix::Zero(2, 2), {col(1, 0), col(0, 1)}, ImpulseSchedule({0.5, 1.0}), 10);
  EXPECT_TRUE(rc.holds);
  EXPECT_EQ(rc.k_star, 2);
}

TEST(KalmanRank, Examples) {
  EXPECT_TRUE(kalman_rank(diag2(3, -1), {Matrix::Identity(2, 2)}));
  EXPECT_FALSE(kalman_rank(Matrix::Identity(2, 2), {col(0, 1)}));
  Matrix nil(2, 2);
  nil << 0, 1, 0, 0;
  EXPECT_TRUE(kalman_rank(nil, {col(0, 1)}));
}

TEST(FiniteObsConstant, Examples) {
  EXPECT_DOUBLE_EQ(finite_obs_constant(Matrix::Zero(2, 2), {Matrix::Identity(2, 2)}, {1.0}).constant, 1.0);
  EXPECT_TRUE(std::isinf(finite_obs_constant(Matrix::Identity(2, 2), {col(0, 1)}, {1.0, 2.0, 3.0}).constant));
  EXPECT_DOUBLE_EQ(finite_obs_constant(Matrix::Zero(2, 2), {col(1, 0), col(0, 2)}, {0.5, 1.0}).constant, 1.0);
  const auto r = finite_obs_constant(Matrix::Zero(2, 2), {Matrix::Identity(2, 2)}, {1.0});
  EXPECT_EQ(r.method, ObservabilityMethod::exact_gramian);
  EXPECT_FALSE(r.theta.has_value());
  EXPECT_THROW(finite_obs_constant(Matrix::Zero(2, 2), {Matrix::Identity(2, 2)}, {1.0, 1.0}), Error);
}

TEST(FiniteObsConstantProperty, InfiniteExactlyWhenStackIsRankDeficient) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> dim(1, 3), kind(0, 2);
  int singular = 0, regular = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int n = dim(rng);
    const int k = dim(rng);
    const Matrix p = oracle::random_matrix(n, n, -2, 2, rng);
    std::vector<Matrix> qs;
    std::vector<double> taus;
    const int mode = kind(rng);
    for (int j = 1; j <= k; ++j) {
      Matrix q = oracle::random_matrix(n, 1, -1, 1, rng);
      // mode 1: every injection along e_1, an eigenvector of P, so the stack is rank 1.
      if (mode == 1 && n > 1) {
        q.setZero();
        q(0, 0) = 1.0;
      }
      qs.push_back(q);
      taus.push_back(0.4 * j);
    }
    Matrix pp = p;
    if (mode == 1 && n > 1) pp.col(0).tail(n - 1).setZero();  // e_1 is an eigenvector
    const auto r = finite_obs_constant(pp, qs, taus);
    Matrix stack(n, k);
    for (int j = 0; j < k; ++j) stack.col(j) = oracle::series_exp(pp, -taus[j], 60) * qs[j];
    const bool deficient = numerical_rank(normalized_columns(stack)) < n;
    EXPECT_EQ(std::isinf(r.constant), deficient) << "trial " << trial;
    (deficient ? singular : regular)++;
  }
  EXPECT_GT(singular, 20);
  EXPECT_GT(regular, 20);
}

TEST(FiniteObsConstantProperty, GramianIsPsdAndDefiniteIffRank) {
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 2;
    const Matrix p = oracle::random_matrix(n, n, -1, 1, rng);
    const Matrix q = oracle::random_matrix(n, 1, -1, 1, rng);
    const int k = 1 + trial % 4;
    Matrix w = Matrix::Zero(n, n);
    Matrix stack(n, k);
    for (int j = 1; j <= k; ++j) {
      const Matrix b = oracle::series_exp(p, -0.5 * j, 60) * q;
      w += b * b.transpose();
      stack.col(j - 1) = b;
    }
    EXPECT_LE((w - w.transpose()).norm(), 1e-14 * w.norm());
    Eigen::SelfAdjointEigenSolver<Matrix> es(w);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * es.eigenvalues().maxCoeff());
    const bool rank_ok = numerical_rank(normalized_columns(stack)) == n;
    std::vector<double> taus;
    for (int j = 1; j <= k; ++j) taus.push_back(0.5 * j);
    EXPECT_EQ(std::isfinite(finite_obs_constant(p, {q}, taus).constant), rank_ok);
  }
}

TEST(FiniteObsConstantProperty, MatchesCircleSampling) {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix p = oracle::random_matrix(2, 2, -1, 1, rng);
    const Matrix q = oracle::random_matrix(2, 1, -1, 1, rng);
    const std::vector<double> taus = {0.5, 1.0, 1.5};
    std::vector<Matrix> blocks;
    for (double t : taus) blocks.push_back(oracle::series_exp(p, -t, 60) * q);
    const double lmin = oracle::circle_min(blocks, 10000);
    const double c = finite_obs_constant(p, {q}, taus).constant;
    ASSERT_TRUE(std::isfinite(c));
    EXPECT_NEAR(c * lmin, 1.0, 0.05) << "trial " << trial;
  }
}

TEST(InterpolationEstimate, UnobservedComponentGivesWitness) {
  const auto sys = unobserved_component_system();
  try {
    interpolation_estimate(sys, kUnit, 3, SamplingOptions(1));
    FAIL() << "expected rank failure";
  } catch (const RankDeficientError& e) {
    EXPECT_EQ(e.code(), ErrorCode::rank_deficient);
    ASSERT_EQ(e.witness().size(), 2);
    EXPECT_NEAR(std::abs(e.witness()(0)), 1.0, 1e-12);
    EXPECT_NEAR(e.witness()(1), 0.0, 1e-12);
    // The witness is invisible to every observation at t_{k+1} - t_j.
    for (int j = 1; j <= 3; ++j) {
      const Vector o = col(0, 1).transpose() * oracle::series_exp(Matrix::Identity(2, 2), 4.0 - j) * e.witness();
      EXPECT_NEAR(o.norm(), 0.0, 1e-12);
    }
  }
}

TEST(InterpolationEstimate, FullObservationPushesThetaToTop) {
  const auto sys = full(Matrix::Zero(2, 2), Matrix::Identity(2, 2));
  SamplingOptions opt(2024);
  opt.samples = 2000;
  const auto r = interpolation_estimate(sys, kUnit, 1, opt);
  ASSERT_TRUE(r.theta.has_value());
  EXPECT_DOUBLE_EQ(*r.theta, 0.999);
  EXPECT_LE(r.constant, 1.0);
  EXPECT_EQ(r.method, ObservabilityMethod::sampled_fit);
  EXPECT_EQ(r.seed, 2024u);
}

TEST(InterpolationEstimate, RequiresEnoughSamples) {
  SamplingOptions opt(1);
  opt.samples = 99;
  EXPECT_THROW(interpolation_estimate(full(Matrix::Zero(2, 2), Matrix::Identity(2, 2)), kUnit, 1, opt), Error);
}

TEST(InterpolationEstimateProperty, FitHoldsOnItsSamples) {
  std::mt19937_64 rng(104);
  const Matrix p = oracle::random_matrix(2, 2, -1, 1, rng);
  const auto sys = full(p, col(0.3, 1.0));
  SamplingOptions opt(77);
  opt.samples = 500;
  const auto r = interpolation_estimate(sys, kUnit, 3, opt);
  ASSERT_TRUE(r.theta.has_value());
  EXPECT_GT(*r.theta, 0.0);
  EXPECT_LT(*r.theta, 1.0);
  const auto model = detail::build_observation_model(sys, kUnit, 4, 3, r.modes);
  for (const auto& z : detail::unit_samples(2 * r.modes, opt.samples, opt.seed)) {
    EXPECT_LE(model.lhs(z), r.constant * std::pow(model.obs(z), *r.theta) * (1 + 1e-12));
  }
}

TEST(DeltaObs, LargeDeltaNeedsNoObservation) {
  const auto sys = full(Matrix::Zero(2, 2), Matrix::Identity(2, 2));
  const double norm = semigroup_norm(sys, 1.0);
  const auto r = delta_obs_constant(sys, kUnit, 1, norm, SamplingOptions(5));
  EXPECT_EQ(r.constant, 0.0);
  EXPECT_EQ(r.method, ObservabilityMethod::sampled_fit);
}

TEST(DeltaObs, UnobservedComponentIsInfinite) {
  const auto sys = unobserved_component_system();
  EXPECT_DOUBLE_EQ(semigroup_norm(sys, 3.0), 1.0);
  const auto r = delta_obs_constant(sys, kUnit, 3, 0.5, SamplingOptions(5));
  EXPECT_TRUE(std::isinf(r.constant));
}

TEST(DeltaObs, MatchesGridOnThreeSphere) {
  // P = 0, Q = I, full support, two modes: D = sup over unit z in R^4 of
  // (|e^{A* t_k} z| - delta) / sum_j |e^{A*(t_k - t_j)} z|.
  const auto sys = full(Matrix::Zero(2, 2), Matrix::Identity(2, 2), 2);
  const ImpulseSchedule sched({0.5});
  const int k = 2;
  const double delta = 0.1;
  auto ratio = [&](const Vector& z) {
    const double tk = sched.time_at(k);
    auto flow = [&](double t) {
      double s = 0.0;
      for (int i = 1; i <= 2; ++i) s += std::exp(-2.0 * i * i * t) * z.segment(2 * (i - 1), 2).squaredNorm();
      return std::sqrt(s);
    };
    double obs = 0.0;
    for (int j = 1; j <= k; ++j) obs += flow(tk - sched.time_at(j));
    return (flow(tk) - delta) / obs;
  };
  double grid = 0.0;
  const int g = 48;
  for (int a = 0; a <= g; ++a) {
    for (int b = 0; b <= g; ++b) {
      for (int c = 0; c < 2 * g; ++c) {
        const double t1 = kPi * a / g, t2 = kPi * b / g, t3 = kPi * c / g;
        Vector z(4);
        z << std::cos(t1), std::sin(t1) * std::cos(t2), std::sin(t1) * std::sin(t2) * std::cos(t3),
            std::sin(t1) * std::sin(t2) * std::sin(t3);
        grid = std::max(grid, ratio(z));
      }
    }
  }
  SamplingOptions opt(9);
  opt.modes = 2;
  const auto r = delta_obs_constant(sys, sched, k, delta, opt);
  ASSERT_TRUE(std::isfinite(r.constant));
  EXPECT_GT(grid, 0.0);
  EXPECT_NEAR(r.constant / grid, 1.0, 0.05);
}

TEST(DeltaObsProperty, NonIncreasingInDelta) {
  std::mt19937_64 rng(105);
  for (int trial = 0; trial < 5; ++trial) {
    const auto sys = full(oracle::random_matrix(2, 2, -1, 1, rng), oracle::random_matrix(2, 1, -1, 1, rng), 4);
    SamplingOptions opt(1000 + trial);
    opt.samples = 2000;
    const std::vector<double> deltas = {0.01, 0.05, 0.1, 0.2, 0.4, 0.8};
    const auto curve = delta_obs_curve(sys, kUnit, 2, deltas, opt);
    for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i].constant, curve[i - 1].constant);
  }
}

TEST(ComposeObs, SingleTermIsIdentity) {
  std::mt19937_64 rng(7);
  const auto sys = full(oracle::random_matrix(2, 2, -1, 1, rng), Matrix::Identity(2, 2));
  const auto c = compose_obs(2.5, 0.3, 1, 1, sys, kUnit);
  EXPECT_EQ(c.delta_k, 0.3);
  EXPECT_EQ(c.d_k, 2.5);
}

TEST(ComposeObs, ContractionShrinksDelta) {
  Matrix skew(2, 2);
  skew << 0.5, -2, 2, 0.5;  // symmetric part 0.5 I <= lambda_1
  const auto sys = full(skew, Matrix::Identity(2, 2));
  for (int k = 1; k <= 6; ++k) EXPECT_LE(compose_obs(1.0, 0.2, 2, k, sys, kUnit).delta_k, 0.2 * (1 + 1e-15));
}

TEST(ComposeObs, HeatDecayClosedForm) {
  const auto sys = full(Matrix::Zero(2, 2), Matrix::Identity(2, 2));
  const double e = std::exp(1.0);
  const auto c = compose_obs(0.7, 0.1, 1, 2, sys, kUnit);
  EXPECT_NEAR(c.delta_k, 0.1 * (1 + 1 / e) / (1 + e), 1e-12);
  EXPECT_NEAR(c.d_k, 0.7 / (1 + e), 1e-12);
}

TEST(ComposeObsProperty, ComposedConstantsHoldOnFreshSamples) {
  const auto sys = full(Matrix::Zero(2, 2), Matrix::Identity(2, 2), 4);
  SamplingOptions opt(31);
  const auto base = delta_obs_constant(sys, kUnit, 1, 0.1, opt);
  for (int k = 2; k <= 4; ++k) {
    const auto c = compose_obs(base.constant, 0.1, 1, k, sys, kUnit);
    const auto model = detail::build_observation_model(sys, kUnit, k, k, 4);
    for (const auto& z : detail::unit_samples(8, 1000, 500 + k)) {
      EXPECT_LE(model.lhs(z), (c.d_k * model.obs(z) + c.delta_k) * (1 + 1e-12));
    }
  }
}

TEST(SemigroupNorm, Examples) {
  const auto heat = full(Matrix::Zero(2, 2), Matrix::Identity(2, 2));
  EXPECT_NEAR(semigroup_norm(heat, 1.3), std::exp(-1.3), 1e-15);
  const auto flat = full(Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  for (double t : {0.0, 0.5, 3.0, 100.0}) EXPECT_EQ(semigroup_norm(flat, t), 1.0);
  const auto grow = full(diag2(1.5, 0), Matrix::Identity(2, 2));
  EXPECT_NEAR(semigroup_norm(grow, 1.0), std::exp(0.5), 1e-14);
  EXPECT_THROW(semigroup_norm(heat, -1.0), Error);
}

TEST(SemigroupNormProperty, DissipativeImpliesContraction) {
  std::mt19937_64 rng(106);
  int tested = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 3;
    const Matrix a = oracle::random_matrix(n, n, -2, 2, rng);
    // Shift so the symmetric part tops out at or just below lambda_1 = 1.
    Matrix p = a - (symmetric_part_max_eig(a) - 1.0) * Matrix::Identity(n, n);
    if (trial % 2) p -= 0.3 * Matrix::Identity(n, n);
    const auto sys = CoupledSystem(p, {Controller{Matrix::Identity(n, n), {0, kPi}}}, SpectralDomain{kPi, 4});
    ASSERT_TRUE(is_dissipative(sys));
    ++tested;
    for (int i = 0; i <= 100; ++i) EXPECT_LE(semigroup_norm(sys, 0.05 * i), 1.0 + 1e-10);
  }
  EXPECT_EQ(tested, 100);
}

TEST(HypothesisVerdict, UnobservedComponentSystem) {
  const auto v = hypothesis_verdict(unobserved_component_system(), kUnit, 20);
  EXPECT_FALSE(v.rank_ok);
  EXPECT_FALSE(v.kalman_ok);
  EXPECT_EQ(v.spectral, SpectralPosition::boundary);
  EXPECT_TRUE(v.dissipative);
  EXPECT_FALSE(v.omega_full);
}

TEST(HypothesisVerdict, HeatWithFullControl) {
  const auto v = hypothesis_verdict(full(Matrix::Zero(2, 2), Matrix::Identity(2, 2)), kUnit, 5);
  EXPECT_TRUE(v.rank_ok);
  EXPECT_EQ(v.k_star, 1);
  EXPECT_TRUE(v.kalman_ok);
  EXPECT_EQ(v.spectral, SpectralPosition::strict);
  EXPECT_TRUE(v.dissipative);
  EXPECT_TRUE(v.omega_full);
}

TEST(HypothesisVerdict, UnstableMode) {
  const auto v = hypothesis_verdict(full(diag2(2, 0), Matrix::Identity(2, 2)), kUnit, 5);
  EXPECT_EQ(v.spectral, SpectralPosition::violated);
  EXPECT_FALSE(v.dissipative);
  // A violated spectrum is exactly when the negative bound applies.
  EXPECT_NO_THROW(negative_bound(full(diag2(2, 0), Matrix::Identity(2, 2)), kUnit, 1.0));
}
