#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tarec/autodiff.hpp"

namespace tarec::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

/// Compares tape gradients of `build` against central differences over every
/// entry of `params`. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(const std::vector<Parameter*>& params,
                                 const std::function<Var(Tape&)>& build, double h = 1e-5,
                                 double floor = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }
  std::vector<Matrix> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto eval = [&] {
    Tape tape;
    return build(tape).item();
  };
  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& v = params[k]->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = eval();
      v[i] = saved - h;
      const double down = eval();
      v[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric);
      out.max_abs_error = std::max(out.max_abs_error, err);
      out.max_rel_error =
          std::max(out.max_rel_error, err / std::max({std::abs(a), std::abs(numeric), floor}));
      ++out.entries;
    }
  }
  return out;
}

}  // namespace tarec::testing
