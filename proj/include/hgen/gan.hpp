#pragma once

#include <functional>

#include "hgen/autograd.hpp"
#include "hgen/nn.hpp"

// Non-saturating adversarial losses with an R1 penalty on real inputs.
namespace hgen {

using Critic = std::function<ag::Var(const ag::Var&)>;

/// mean softplus(-logit(fake)).
ag::Var loss_adversarial_g(const ag::Var& fake_logits);
/// mean softplus(logit(fake)) + mean softplus(-logit(real)).
ag::Var loss_adversarial_d_terms(const ag::Var& real_logits, const ag::Var& fake_logits);

/// Per-sample input gradients of the critic at `real` and the penalty
/// lambda/2 * mean_n |grad_n|^2. Parameter gradients are left untouched.
struct R1Result {
  Tensor input_grad;
  double penalty = 0.0;
};
R1Result r1_penalty(const Critic& critic, const nn::ParamRefs& params, const Tensor& real, double lambda);

/// Discriminator objective including R1: softplus terms + lambda/2 * mean |grad|^2.
double loss_adversarial_d(const Critic& critic, const nn::ParamRefs& params, const Tensor& real, const Tensor& fake,
                          double lambda);

struct DiscriminatorLoss {
  double real = 0.0;  ///< mean softplus(-logit(real))
  double fake = 0.0;  ///< mean softplus(logit(fake))
  double r1 = 0.0;
  double total() const { return real + fake + r1; }
};

/// Overwrites the parameter gradients with the gradient of the full
/// discriminator objective. The R1 part's parameter gradient is a central
/// difference of input-gradient directional derivatives:
///   d/dtheta (1/2)|g|^2 = H_theta,x g ~ (dS/dtheta(x + eps g) - dS/dtheta(x - eps g)) / (2 eps)
/// with S the summed logits, which is exact wherever the critic is
/// piecewise linear in its input along the probe. `with_r1 = false` skips
/// the penalty (lazy regularization).
DiscriminatorLoss discriminator_backward(const Critic& critic, const nn::ParamRefs& params, const Tensor& real,
                                         const Tensor& fake, double lambda, bool with_r1);

}  // namespace hgen
