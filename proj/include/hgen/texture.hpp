#pragma once

#include <span>

#include "hgen/shape.hpp"

// Student texture branch: (z_t, F_s) -> F_t -> F_tv, decoded together with
// F_sv by the teacher's frozen color decoder.
namespace hgen::texture {

struct TextureFeatures {
  ag::Var f_t;   ///< [N,C_t,H_f,W_f]
  ag::Var f_tv;  ///< [N,C_tv,H_f,W_f]
};

class TextureGenerator : public nn::Module {
 public:
  TextureGenerator() = default;
  TextureGenerator(const ModelConfig& model, Rng& rng);

  /// z_t [N, latent_dim], f_s [N,C_s,H_f,W_f]. F_tv = g_tv(F_t concat F_s).
  TextureFeatures forward(const ag::Var& z_t, const ag::Var& f_s) const;
  void collect(nn::ParamRefs& out, const std::string& prefix) override;
  int latent_dim() const { return g_t_.latent_dim(); }
  int shape_channels() const { return g_tv_.in_channels() - g_t_.out_channels(); }

 private:
  nn::StyleGenerator g_t_;
  nn::Hourglass g_tv_;
};

struct TextureMaps {
  FeatureMap f_t, f_tv;
};
TextureMaps generate_texture(const TextureGenerator& gen, std::span<const double> z_t, const FeatureMap& f_s);

/// Classifier over concat(F_tv, F_sv).
nn::Discriminator make_texture_discriminator(const ModelConfig& model, Rng& rng);

struct TextureLossWeights {
  double rgb = 20, tv = 40, adv = 1, reg = 10;
  static TextureLossWeights from(const TextureStageConfig& c);
};

/// mean |pred - gt| over all components of M colors ([M,3]).
ag::Var loss_rgb(const ag::Var& pred, const Tensor& gt);
/// mean |F_tv - F_tv_gt|.
ag::Var loss_texture_prior(const ag::Var& f_tv, const Tensor& f_tv_gt);

template <class T>
struct TextureLossParts {
  T rgb, tv, adv;
};
/// Weighted sum in the order rgb, tv, adv; throws std::domain_error naming
/// the first non-finite part.
double texture_total_loss(const TextureLossParts<double>& parts, const TextureLossWeights& w);
ag::Var texture_total_loss(const TextureLossParts<ag::Var>& parts, const TextureLossWeights& w);

struct TextureValidation {
  double tv = 0;
};
TextureValidation validate_texture(const TextureGenerator& gen, const shape::ShapeGenerator& shape,
                                   const prior::PseudoGTBatch& batch);

struct TextureStageResult {
  TextureGenerator generator;
  nn::Discriminator discriminator;
  TextureValidation initial, final;
  int paired_steps = 0, unpaired_steps = 0;
};

/// Trains the texture branch with the shape branch and `f_t` frozen. Paired
/// steps (z_t = z_s = stored latent) use every loss term; unpaired steps draw
/// z_t from N(0, I) and use the adversarial term only.
TextureStageResult train_texture_stage(const prior::PseudoGTDataset& data, const shape::ShapeGenerator& shape,
                                       const FieldDecoder& f_t, const RunConfig& config,
                                       const TrainHooks& hooks = {});

}  // namespace hgen::texture
