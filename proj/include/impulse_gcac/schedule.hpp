#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "impulse_gcac/errors.hpp"
#include "impulse_gcac/linalg.hpp"

namespace impulse_gcac {

/// Periodic impulse instants: t_0 = 0 < t_1 < ... < t_hbar, extended by
/// t_{j + k hbar} = t_j + k t_hbar. Controller nu(j) fires at t_j.
class ImpulseSchedule {
 public:
  explicit ImpulseSchedule(std::vector<double> base_times) : base_(std::move(base_times)) {
    if (base_.empty()) {
      throw Error(ErrorCode::invariant_violation, "schedule needs at least one base time");
    }
    double prev = 0.0;
    for (std::size_t i = 0; i < base_.size(); ++i) {
      if (!std::isfinite(base_[i]) || !(base_[i] > prev)) {
        throw Error(ErrorCode::invariant_violation,
                    "base times must satisfy 0 < t_1 < ... < t_hbar (violated at t_" +
                        std::to_string(i + 1) + ")");
      }
      prev = base_[i];
    }
  }

  int hbar() const noexcept { return static_cast<int>(base_.size()); }
  double period() const noexcept { return base_.back(); }
  const std::vector<double>& base_times() const noexcept { return base_; }

  /// Index in {1..hbar} congruent to j. The bracket in nu(j) = j - [j/hbar] hbar
  /// is the strict floor max{k : k < s}, hence nu(hbar) = hbar.
  int nu(long j) const {
    if (j < 1) throw Error(ErrorCode::invalid_argument, "nu(j) requires j >= 1");
    return static_cast<int>((j - 1) % hbar()) + 1;
  }

  double time_at(long j) const {
    if (j < 0) throw Error(ErrorCode::invalid_argument, "time_at(j) requires j >= 0");
    if (j == 0) return 0.0;
    const int r = nu(j);
    const long cycles = (j - r) / hbar();
    return base_[static_cast<std::size_t>(r - 1)] + static_cast<double>(cycles) * period();
  }

  /// t_j - t_{j-1} for j >= 1; depends only on nu(j).
  double gap(long j) const {
    const int r = nu(j);
    const double lo = r == 1 ? 0.0 : base_[static_cast<std::size_t>(r - 2)];
    return base_[static_cast<std::size_t>(r - 1)] - lo;
  }

  double min_gap() const {
    double g = kInf;
    for (int r = 1; r <= hbar(); ++r) g = std::min(g, gap(r));
    return g;
  }

  /// Largest gap between consecutive impulses.
  double max_gap() const {
    double g = 0.0;
    for (int r = 1; r <= hbar(); ++r) g = std::max(g, gap(r));
    return g;
  }

 private:
  std::vector<double> base_;
};

/// dim span{q, Pq, ..., P^{n-1} q}.
inline int krylov_dim(const Matrix& p, const Vector& q) {
  require_square(p, "krylov_dim");
  if (q.size() != p.rows()) {
    throw Error(ErrorCode::dimension_mismatch, "krylov_dim: vector length does not match P");
  }
  const Eigen::Index n = p.rows();
  Matrix k(n, n);
  k.col(0) = q;
  for (Eigen::Index i = 1; i < n; ++i) k.col(i) = p * k.col(i - 1);
  return numerical_rank(normalized_columns(k));
}

/// Largest Krylov dimension over the columns of Q.
inline int krylov_order(const Matrix& p, const Matrix& q) {
  int best = 0;
  for (Eigen::Index c = 0; c < q.cols(); ++c) best = std::max(best, krylov_dim(p, q.col(c)));
  return best;
}

/// min over sigma(P) of pi / |Im lambda|, with pi / 0 = +inf.
inline double d_min_imag(const Matrix& p) {
  const SpectrumInfo info = spectrum(p);
  if (!std::isfinite(info.min_nonzero_abs_imag)) return kInf;
  double max_imag = 0.0;
  for (const auto& ev : info.eigenvalues) max_imag = std::max(max_imag, std::abs(ev.imag()));
  return kPi / max_imag;
}

/// q = max_j (krylov_order(-P, Q_j) - 1).
inline int schedule_order(const Matrix& p, const std::vector<Matrix>& qs) {
  int q = 0;
  for (const auto& qj : qs) q = std::max(q, krylov_order(-p, qj) - 1);
  return q;
}

/// Period t_hbar = min(1, d_{-P} / (2 max(q, 1))) with equally spaced base
/// times, which keeps q t_hbar strictly below d_{-P}.
inline ImpulseSchedule pick_schedule(const Matrix& p, const std::vector<Matrix>& qs) {
  if (qs.empty()) throw Error(ErrorCode::invalid_argument, "pick_schedule: no controllers");
  const int q = schedule_order(p, qs);
  const double d = d_min_imag(-p);
  const double period = std::min(1.0, d / (2.0 * std::max(q, 1)));
  const int hbar = static_cast<int>(qs.size());
  std::vector<double> base(static_cast<std::size_t>(hbar));
  for (int j = 1; j <= hbar; ++j) base[static_cast<std::size_t>(j - 1)] = j * period / hbar;
  base.back() = period;
  return ImpulseSchedule(std::move(base));
}

}  // namespace impulse_gcac
