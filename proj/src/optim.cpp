#include "hgen/optim.hpp"

#include <cmath>

namespace hgen {

Adam::Adam(nn::ParamRefs params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (auto& [name, v] : params_) {
    m_.emplace_back(v->size(), 0.0);
    v_.emplace_back(v->size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& [name, v] : params_) v->zero_grad();
}

void Adam::step(double lr_scale) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, t_);
  const double c2 = 1.0 - std::pow(b2, t_);
  const double lr = config_.lr * lr_scale;
  for (std::size_t p = 0; p < params_.size(); ++p) {
    ag::Var& var = *params_[p].second;
    if (!var.requires_grad()) continue;
    const auto& g = var.grad().data;
    auto& w = var.mutable_value().data;
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

}  // namespace hgen
