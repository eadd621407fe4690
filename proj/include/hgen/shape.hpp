#pragma once

#include <span>

#include "hgen/config.hpp"
#include "hgen/fields.hpp"
#include "hgen/nn.hpp"
#include "hgen/prior.hpp"
#include "hgen/training.hpp"

// Student shape branch: latent -> F_s -> F_sv, decoded by the teacher's
// frozen SDF decoder.
namespace hgen::shape {

/// Channels 0-2 of F_s carry the predicted normal, channel 3 the depth.
inline constexpr int kNormalChannels = 3;
inline constexpr int kDepthChannel = 3;

struct ShapeFeatures {
  ag::Var f_s;   ///< [N,C_s,H_f,W_f]
  ag::Var f_sv;  ///< [N,C_sv,H_f,W_f]
};

class ShapeGenerator : public nn::Module {
 public:
  ShapeGenerator() = default;
  ShapeGenerator(const ModelConfig& model, Rng& rng);

  /// z [N, latent_dim].
  ShapeFeatures forward(const ag::Var& z) const;
  void collect(nn::ParamRefs& out, const std::string& prefix) override;
  int latent_dim() const { return g_s_.latent_dim(); }

 private:
  nn::StyleGenerator g_s_;
  nn::Hourglass g_sv_;
};

struct ShapeMaps {
  FeatureMap f_s, f_sv;
};
/// Single-latent forward pass; throws ContractError on a length mismatch.
ShapeMaps generate_shape(const ShapeGenerator& gen, std::span<const double> z);

/// Classifier over C_sv x H_f x W_f feature maps.
nn::Discriminator make_shape_discriminator(const ModelConfig& model, Rng& rng);

struct ShapeLossWeights {
  double sdf = 20, sv = 40, normal = 20, depth = 20, adv = 1, reg = 10;
  static ShapeLossWeights from(const ShapeStageConfig& c);
};

/// mean |pred - gt| over M predicted signed distances ([M] or [M,1]).
ag::Var loss_sdf(const ag::Var& pred, const Tensor& gt);
/// mean |F_sv - F_sv_gt|.
ag::Var loss_latent_prior(const ag::Var& f_sv, const Tensor& f_sv_gt);
/// mean |F_s[0:3] - N| over [N,3,H,W].
ag::Var loss_normal(const ag::Var& f_s, const Tensor& normal_gt);
/// mean |F_s[3] - D| over [N,1,H,W].
ag::Var loss_depth(const ag::Var& f_s, const Tensor& depth_gt);
/// lambda_n * loss_normal + lambda_d * loss_depth.
ag::Var loss_normal_depth(const ag::Var& f_s, const Tensor& normal_gt, const Tensor& depth_gt, double lambda_n,
                          double lambda_d);

template <class T>
struct ShapeLossParts {
  T sdf, sv, normal, depth, adv;
};
/// Weighted sum in the order sdf, sv, normal, depth, adv. Throws
/// std::domain_error naming the first non-finite part.
double shape_total_loss(const ShapeLossParts<double>& parts, const ShapeLossWeights& w);
ag::Var shape_total_loss(const ShapeLossParts<ag::Var>& parts, const ShapeLossWeights& w);

/// Mean L1 terms of a fixed validation batch.
struct ShapeValidation {
  double sv = 0, normal = 0, depth = 0;
};
ShapeValidation validate_shape(const ShapeGenerator& gen, const prior::PseudoGTBatch& batch);

struct ShapeStageResult {
  ShapeGenerator generator;
  nn::Discriminator discriminator;
  ShapeValidation initial, final;
};

/// Trains the shape branch against pseudo-GT. Paired synthesized records
/// drive the SDF, feature and normal/depth losses; every training record's
/// F_sv joins the real pool of the discriminator. `f_s` is never updated.
ShapeStageResult train_shape_stage(const prior::PseudoGTDataset& data, const FieldDecoder& f_s,
                                   const RunConfig& config, const TrainHooks& hooks = {});

}  // namespace hgen::shape
