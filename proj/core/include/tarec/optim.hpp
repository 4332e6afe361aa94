#pragma once

#include <vector>

#include "tarec/autodiff.hpp"

namespace tarec {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);

  void zero_grad();
  /// Applies one update from the accumulated gradients.
  void step();
  long long steps_taken() const noexcept { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions opt_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long long t_ = 0;
};

}  // namespace tarec
