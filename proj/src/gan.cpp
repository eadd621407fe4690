#include "hgen/gan.hpp"

#include <algorithm>
#include <cmath>

namespace hgen {
namespace {

void zero_param_grads(const nn::ParamRefs& params) {
  for (const auto& [name, v] : params) v->zero_grad();
}

std::vector<Tensor> take_param_grads(const nn::ParamRefs& params) {
  std::vector<Tensor> out;
  for (const auto& [name, v] : params) {
    out.push_back(v->grad());
    v->zero_grad();
  }
  return out;
}

}  // namespace

ag::Var loss_adversarial_g(const ag::Var& fake_logits) { return ag::mean(ag::softplus(ag::scale(fake_logits, -1.0))); }

ag::Var loss_adversarial_d_terms(const ag::Var& real_logits, const ag::Var& fake_logits) {
  return ag::add(ag::mean(ag::softplus(fake_logits)), ag::mean(ag::softplus(ag::scale(real_logits, -1.0))));
}

R1Result r1_penalty(const Critic& critic, const nn::ParamRefs& params, const Tensor& real, double lambda) {
  const auto saved = take_param_grads(params);
  ag::Var x = ag::variable(real);
  ag::backward(ag::sum(critic(x)));
  R1Result r;
  r.input_grad = x.grad();
  double sq = 0.0;
  for (double g : r.input_grad.data) sq += g * g;
  r.penalty = 0.5 * lambda * sq / real.dim(0);
  // Restore whatever the caller had accumulated.
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].second->zero_grad();
    if (!saved[i].data.empty()) {
      auto& node = *params[i].second->node();
      node.grad_buffer().data = saved[i].data;
    }
  }
  return r;
}

double loss_adversarial_d(const Critic& critic, const nn::ParamRefs& params, const Tensor& real, const Tensor& fake,
                          double lambda) {
  const double terms = loss_adversarial_d_terms(critic(ag::constant(real)), critic(ag::constant(fake))).item();
  return terms + r1_penalty(critic, params, real, lambda).penalty;
}

DiscriminatorLoss discriminator_backward(const Critic& critic, const nn::ParamRefs& params, const Tensor& real,
                                         const Tensor& fake, double lambda, bool with_r1) {
  zero_param_grads(params);
  DiscriminatorLoss out;
  std::vector<Tensor> hvp;
  if (with_r1 && lambda > 0.0) {
    const R1Result r1 = r1_penalty(critic, params, real, lambda);
    out.r1 = r1.penalty;
    double gmax = 0.0;
    for (double g : r1.input_grad.data) gmax = std::max(gmax, std::abs(g));
    if (gmax > 0.0) {
      const double eps = 1e-3 / gmax;
      auto shifted = [&](double sign) {
        Tensor x = real;
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += sign * eps * r1.input_grad.data[i];
        ag::backward(ag::sum(critic(ag::constant(std::move(x)))));
        return take_param_grads(params);
      };
      const auto plus = shifted(1.0), minus = shifted(-1.0);
      const double c = lambda / real.dim(0) / (2 * eps);
      hvp.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        hvp[i] = plus[i];
        for (std::size_t k = 0; k < hvp[i].data.size(); ++k) hvp[i].data[k] = c * (plus[i].data[k] - minus[i].data[k]);
      }
    }
  }
  const ag::Var real_logits = critic(ag::constant(real));
  const ag::Var fake_logits = critic(ag::constant(fake));
  const ag::Var lr = ag::mean(ag::softplus(ag::scale(real_logits, -1.0)));
  const ag::Var lf = ag::mean(ag::softplus(fake_logits));
  out.real = lr.item();
  out.fake = lf.item();
  ag::backward(ag::add(lr, lf));
  for (std::size_t i = 0; i < hvp.size(); ++i) {
    if (!params[i].second->requires_grad()) continue;
    auto& g = params[i].second->node()->grad_buffer().data;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += hvp[i].data[k];
  }
  return out;
}

}  // namespace hgen
