#pragma once

#include <span>
#include <vector>

#include "tarec/matrix.hpp"

namespace tarec {

/// Discrete DDPM noise schedule. Arrays are indexed by step t in [0, T];
/// slot 0 holds the conventions alpha_bar_0 = 1 and beta_0 = 0.
class NoiseSchedule {
 public:
  /// Linear beta ramp over T steps, both endpoints included.
  static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02);

  int steps() const noexcept { return static_cast<int>(beta_.size()) - 1; }

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;
  double tilde_beta(int t) const;

  /// alpha_bar at a fractional step, by linear interpolation of log alpha_bar
  /// between neighbouring integer steps. Exact at integers.
  double alpha_bar_at(double t) const;

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> tilde_beta_;
};

/// Coefficients of x_{t-1} = c_x0 * x0_hat + c_xt * x_t + sigma * z.
struct ReverseCoefficients {
  double c_x0 = 0.0;
  double c_xt = 0.0;
  double sigma = 0.0;
};

/// Literal per-step coefficients using beta_t, alpha_t and tilde_beta_t.
ReverseCoefficients reverse_coefficients(const NoiseSchedule& sched, int t);

/// Coefficients for a jump between two arbitrary noise levels. The effective
/// step uses alpha = alpha_bar_t / alpha_bar_prev, so a jump straight to
/// alpha_bar_prev = 1 yields c_x0 = 1, c_xt = 0, sigma = 0 exactly.
ReverseCoefficients reverse_coefficients(double alpha_bar_t, double alpha_bar_prev);

/// x_t = sqrt(alpha_bar_t) x + sqrt(1 - alpha_bar_t) z, row-wise.
Matrix forward_diffuse(const Matrix& x, int t, const Matrix& z, const NoiseSchedule& sched);

/// Same, with a separate step per row.
Matrix forward_diffuse(const Matrix& x, std::span<const int> t, const Matrix& z,
                       const NoiseSchedule& sched);

/// One reverse step from t to t - 1. `z` may be null (treated as zero).
Matrix reverse_step(const Matrix& x0_hat, const Matrix& x_t, int t, const Matrix* z,
                    const NoiseSchedule& sched);

/// Reverse step between arbitrary noise levels (used by strided grids).
Matrix reverse_step(const Matrix& x0_hat, const Matrix& x_t, const ReverseCoefficients& coef,
                    const Matrix* z);

}  // namespace tarec
