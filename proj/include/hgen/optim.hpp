#pragma once

#include <vector>

#include "hgen/nn.hpp"

namespace hgen {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

/// Adaptive-moment gradient descent over a fixed parameter list.
class Adam {
 public:
  Adam(nn::ParamRefs params, AdamConfig config);

  void zero_grad();
  /// Applies one update with learning rate `config.lr * lr_scale`.
  void step(double lr_scale = 1.0);
  int steps_taken() const { return t_; }

 private:
  nn::ParamRefs params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

}  // namespace hgen
