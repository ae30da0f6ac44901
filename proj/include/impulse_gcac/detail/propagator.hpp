#pragma once

#include <vector>

#include "impulse_gcac/linalg.hpp"
#include "impulse_gcac/schedule.hpp"
#include "impulse_gcac/spectral.hpp"

namespace impulse_gcac::detail {

// Cached factors for the hbar distinct inter-impulse gaps. States are n x M
// coefficient blocks over the leading M modes. Used by the iterative solvers;
// `simulate` deliberately goes through the public per-step operations instead.
class Propagator {
 public:
  Propagator(const CoupledSystem& sys, const ImpulseSchedule& sched, int modes = 0)
      : sys_(sys), sched_(sched), modes_(modes > 0 ? modes : sys.modes()) {
    if (modes_ > sys.modes()) {
      throw Error(ErrorCode::invalid_argument, "propagator: more modes than the truncation holds");
    }
    if (sched.hbar() != sys.hbar()) {
      throw Error(ErrorCode::dimension_mismatch,
                  "schedule has " + std::to_string(sched.hbar()) + " base times but the system has " +
                      std::to_string(sys.hbar()) + " controllers");
    }
    SpectralDomain d = sys.domain();
    d.modes = modes_;
    for (int r = 1; r <= sched.hbar(); ++r) {
      const double gap = sched.gap(r);
      exp_.push_back(shifted_exp(sys.p(), sys.lambda1(), gap));
      decay_.push_back(relative_decay(d, gap));
      full_.push_back(sys.full_support(r));
      if (modes_ == sys.modes()) {
        overlap_.push_back(sys.overlap(r));
        overlap_sqrt_.push_back(sys.overlap_sqrt(r));
      } else {
        overlap_.push_back(sys.overlap(r).topLeftCorner(modes_, modes_));
        overlap_sqrt_.push_back(psd_sqrt(overlap_.back()));
      }
    }
  }

  int modes() const noexcept { return modes_; }
  const CoupledSystem& system() const noexcept { return sys_; }
  const ImpulseSchedule& schedule() const noexcept { return sched_; }

  // Free evolution over (t_{j-1}, t_j).
  Matrix step(const Matrix& x, long j) const {
    const auto r = index(j);
    return exp_[r] * x * decay_[r].asDiagonal();
  }

  // Adjoint of `step`: e^{A* (t_j - t_{j-1})}.
  Matrix step_adjoint(const Matrix& y, long j) const {
    const auto r = index(j);
    return exp_[r].transpose() * y * decay_[r].asDiagonal();
  }

  // chi Q u in modal coordinates for the controller firing at t_j.
  Matrix inject(const Matrix& u, long j) const {
    const auto r = index(j);
    const Matrix& q = sys_.q(static_cast<int>(r) + 1);
    if (full_[r]) return q * u;
    return q * u * overlap_[r];
  }

  // Adjoint of `inject` under the Frobenius pairing.
  Matrix inject_adjoint(const Matrix& y, long j) const {
    const auto r = index(j);
    const Matrix& q = sys_.q(static_cast<int>(r) + 1);
    if (full_[r]) return q.transpose() * y;
    return q.transpose() * y * overlap_[r];
  }

  // |chi Q^T psi|_{L^2} and the matrix whose Frobenius norm it is.
  Matrix observe_block(const Matrix& y, long j) const {
    const auto r = index(j);
    const Matrix& q = sys_.q(static_cast<int>(r) + 1);
    if (full_[r]) return q.transpose() * y;
    return q.transpose() * y * overlap_sqrt_[r];
  }
  double observe(const Matrix& y, long j) const { return observe_block(y, j).norm(); }

  // Gradient of |chi Q^T psi|^2 / 2 with respect to psi.
  Matrix observe_normal(const Matrix& y, long j) const {
    const auto r = index(j);
    const Matrix& q = sys_.q(static_cast<int>(r) + 1);
    if (full_[r]) return q * (q.transpose() * y);
    return q * (q.transpose() * y) * overlap_[r];
  }

 private:
  std::size_t index(long j) const { return static_cast<std::size_t>(sched_.nu(j) - 1); }

  const CoupledSystem& sys_;
  const ImpulseSchedule& sched_;
  int modes_;
  std::vector<Matrix> exp_;
  std::vector<Vector> decay_;
  std::vector<bool> full_;
  std::vector<Matrix> overlap_;
  std::vector<Matrix> overlap_sqrt_;
};

}  // namespace impulse_gcac::detail
