#include "tarec/schedule.hpp"

#include <cmath>
#include <string>

#include "tarec/error.hpp"

namespace tarec {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("schedule: T must be >= 1, got " + std::to_string(T));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  const auto n = static_cast<std::size_t>(T) + 1;
  s.beta_.assign(n, 0.0);
  s.alpha_.assign(n, 1.0);
  s.alpha_bar_.assign(n, 1.0);
  s.tilde_beta_.assign(n, 0.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
    const auto i = static_cast<std::size_t>(t);
    s.beta_[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha_[i] = 1.0 - s.beta_[i];
    s.alpha_bar_[i] = s.alpha_bar_[i - 1] * s.alpha_[i];
    s.tilde_beta_[i] = (1.0 - s.alpha_bar_[i - 1]) / (1.0 - s.alpha_bar_[i]) * s.beta_[i];
  }
  return s;
}

namespace {

void check_step(const NoiseSchedule& s, int t, int lo) {
  if (t < lo || t > s.steps()) {
    throw ContractViolation("step " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                            std::to_string(s.steps()) + "]");
  }
}

}  // namespace

double NoiseSchedule::beta(int t) const {
  check_step(*this, t, 1);
  return beta_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::alpha(int t) const {
  check_step(*this, t, 1);
  return alpha_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_step(*this, t, 0);
  return alpha_bar_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::tilde_beta(int t) const {
  check_step(*this, t, 1);
  return tilde_beta_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::alpha_bar_at(double t) const {
  if (!(t >= 0.0) || t > static_cast<double>(steps())) {
    throw ContractViolation("fractional step " + std::to_string(t) + " outside [0, T]");
  }
  const double lo = std::floor(t);
  const auto i = static_cast<std::size_t>(lo);
  if (lo == t) return alpha_bar_[i];
  const double w = t - lo;
  return std::exp((1.0 - w) * std::log(alpha_bar_[i]) + w * std::log(alpha_bar_[i + 1]));
}

ReverseCoefficients reverse_coefficients(const NoiseSchedule& sched, int t) {
  if (t < 1) throw ContractViolation("reverse_step requires t >= 1");
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t - 1);
  ReverseCoefficients c;
  c.c_x0 = std::sqrt(ab_prev) * sched.beta(t) / (1.0 - ab);
  c.c_xt = std::sqrt(sched.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
  c.sigma = std::sqrt(sched.tilde_beta(t));
  return c;
}

ReverseCoefficients reverse_coefficients(double alpha_bar_t, double alpha_bar_prev) {
  if (!(alpha_bar_t < alpha_bar_prev) || !(alpha_bar_t > 0.0) || alpha_bar_prev > 1.0) {
    throw ContractViolation("reverse jump needs 0 < alpha_bar_t < alpha_bar_prev <= 1");
  }
  const double a = alpha_bar_t / alpha_bar_prev;
  const double b = 1.0 - a;
  ReverseCoefficients c;
  c.c_x0 = std::sqrt(alpha_bar_prev) * b / (1.0 - alpha_bar_t);
  c.c_xt = std::sqrt(a) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t);
  c.sigma = std::sqrt((1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t) * b);
  return c;
}

Matrix forward_diffuse(const Matrix& x, int t, const Matrix& z, const NoiseSchedule& sched) {
  if (!x.same_shape(z)) throw ShapeError("forward_diffuse: x and z shapes differ");
  const double ab = sched.alpha_bar(t);
  const double sx = std::sqrt(ab), sz = std::sqrt(1.0 - ab);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sx * x[i] + sz * z[i];
  return out;
}

Matrix forward_diffuse(const Matrix& x, std::span<const int> t, const Matrix& z,
                       const NoiseSchedule& sched) {
  if (!x.same_shape(z) || t.size() != x.rows()) {
    throw ShapeError("forward_diffuse: x, z and t disagree on shape");
  }
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double ab = sched.alpha_bar(t[r]);
    const double sx = std::sqrt(ab), sz = std::sqrt(1.0 - ab);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = sx * x(r, c) + sz * z(r, c);
  }
  return out;
}

Matrix reverse_step(const Matrix& x0_hat, const Matrix& x_t, const ReverseCoefficients& coef,
                    const Matrix* z) {
  if (!x0_hat.same_shape(x_t) || (z != nullptr && !z->same_shape(x_t))) {
    throw ShapeError("reverse_step: operand shapes differ");
  }
  Matrix out(x_t.rows(), x_t.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = coef.c_x0 * x0_hat[i] + coef.c_xt * x_t[i];
    if (z != nullptr && coef.sigma != 0.0) out[i] += coef.sigma * (*z)[i];
  }
  return out;
}

Matrix reverse_step(const Matrix& x0_hat, const Matrix& x_t, int t, const Matrix* z,
                    const NoiseSchedule& sched) {
  return reverse_step(x0_hat, x_t, reverse_coefficients(sched, t), z);
}

}  // namespace tarec
