#include "hgen/texture.hpp"

#include <cmath>
#include <stdexcept>

#include "hgen/gan.hpp"

namespace hgen::texture {
namespace {

void require_finite_part(double v, const char* name) {
  if (!std::isfinite(v)) throw std::domain_error(std::string("texture loss term '") + name + "' is not finite");
}

ag::Var concat2(const ag::Var& a, const ag::Var& b) {
  const ag::Var parts[2] = {a, b};
  return ag::concat_channels(parts);
}

}  // namespace

TextureGenerator::TextureGenerator(const ModelConfig& m, Rng& rng)
    : g_t_(m.latent_dim, m.style_dim, m.generator_width, m.c_t, m.feature_size, rng),
      g_tv_(m.c_t + m.c_s, m.encoder_width, m.c_tv, rng) {}

TextureFeatures TextureGenerator::forward(const ag::Var& z_t, const ag::Var& f_s) const {
  if (z_t.value().rank() != 2 || z_t.dim(1) != latent_dim())
    throw ContractError("TextureGenerator: expected [N," + std::to_string(latent_dim()) + "] latents, got " +
                        shape_str(z_t.shape()));
  if (f_s.value().rank() != 4 || f_s.dim(0) != z_t.dim(0) || f_s.dim(1) != shape_channels())
    throw ContractError("TextureGenerator: F_s must be [" + std::to_string(z_t.dim(0)) + "," +
                        std::to_string(shape_channels()) + ",H,W], got " + shape_str(f_s.shape()));
  TextureFeatures f;
  f.f_t = g_t_.forward(z_t);
  if (f_s.dim(2) != f.f_t.dim(2) || f_s.dim(3) != f.f_t.dim(3))
    throw ContractError("TextureGenerator: F_s resolution " + shape_str(f_s.shape()) + " differs from F_t " +
                        shape_str(f.f_t.shape()));
  f.f_tv = g_tv_.forward(concat2(f.f_t, f_s));
  return f;
}

void TextureGenerator::collect(nn::ParamRefs& out, const std::string& prefix) {
  g_t_.collect(out, prefix + "g_t.");
  g_tv_.collect(out, prefix + "g_tv.");
}

TextureMaps generate_texture(const TextureGenerator& gen, std::span<const double> z_t, const FeatureMap& f_s) {
  if (static_cast<int>(z_t.size()) != gen.latent_dim())
    throw ContractError("generate_texture: latent has " + std::to_string(z_t.size()) + " entries, expected " +
                        std::to_string(gen.latent_dim()));
  if (f_s.role != FeatureRole::kFs) throw ContractError("generate_texture: expected an F_s map, got " + role_name(f_s.role));
  const auto f = gen.forward(ag::constant(Tensor({1, gen.latent_dim()}, std::vector<double>(z_t.begin(), z_t.end()))),
                             ag::constant(f_s.as_batch()));
  return {FeatureMap::from_batch(f.f_t.value(), 0, FeatureRole::kFt),
          FeatureMap::from_batch(f.f_tv.value(), 0, FeatureRole::kFtv)};
}

nn::Discriminator make_texture_discriminator(const ModelConfig& m, Rng& rng) {
  return nn::Discriminator(m.c_tv + m.c_sv, m.discriminator_width, m.feature_size, rng);
}

TextureLossWeights TextureLossWeights::from(const TextureStageConfig& c) {
  return {c.lambda_rgb, c.lambda_tv, c.lambda_adv, c.lambda_reg};
}

ag::Var loss_rgb(const ag::Var& pred, const Tensor& gt) {
  if (pred.size() == 0) throw ContractError("loss_rgb: no points");
  if (pred.size() != gt.size())
    throw ContractError("loss_rgb: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape));
  return ag::l1_mean(pred, Tensor(pred.shape(), gt.data));
}

ag::Var loss_texture_prior(const ag::Var& f_tv, const Tensor& f_tv_gt) {
  if (f_tv.shape() != f_tv_gt.shape)
    throw ContractError("loss_texture_prior: " + shape_str(f_tv.shape()) + " vs " + shape_str(f_tv_gt.shape));
  return ag::l1_mean(f_tv, f_tv_gt);
}

double texture_total_loss(const TextureLossParts<double>& p, const TextureLossWeights& w) {
  require_finite_part(p.rgb, "rgb");
  require_finite_part(p.tv, "tv");
  require_finite_part(p.adv, "adv");
  double s = 0.0;
  s += w.rgb * p.rgb;
  s += w.tv * p.tv;
  s += w.adv * p.adv;
  return s;
}

ag::Var texture_total_loss(const TextureLossParts<ag::Var>& p, const TextureLossWeights& w) {
  texture_total_loss(TextureLossParts<double>{p.rgb.item(), p.tv.item(), p.adv.item()}, w);
  const ag::Var parts[3] = {p.rgb, p.tv, p.adv};
  const double weights[3] = {w.rgb, w.tv, w.adv};
  return ag::weighted_sum(parts, weights);
}

TextureValidation validate_texture(const TextureGenerator& gen, const shape::ShapeGenerator& shape,
                                   const prior::PseudoGTBatch& batch) {
  if (batch.latents.empty()) throw ContractError("validate_texture: batch has no latents");
  const ag::Var z = ag::constant(batch.latents);
  const auto s = shape.forward(z);
  const auto t = gen.forward(z, ag::detach(s.f_s));
  return {loss_texture_prior(t.f_tv, batch.f_tv).item()};
}

TextureStageResult train_texture_stage(const prior::PseudoGTDataset& data, const shape::ShapeGenerator& shape_in,
                                       const FieldDecoder& f_t_in, const RunConfig& config, const TrainHooks& hooks) {
  const auto& m = config.model;
  const auto& c = config.texture;
  const auto paired = data.select(prior::Source::kSynthesized, false);
  const auto real_pool = data.select(std::nullopt, false);
  if (paired.empty()) throw ContractError("train_texture_stage: dataset has no synthesized training records");
  const auto val_batch = prior::load_batch(data, prior::validation_indices(data, c.validation_size));

  shape::ShapeGenerator shape = shape_in;
  shape.set_trainable(false);
  FieldDecoder f_t = f_t_in;
  f_t.set_trainable(false);
  Rng init = stage_rng(config.seed, "texture.init");
  Rng rng = stage_rng(config.seed, "texture.train");
  TextureStageResult res{TextureGenerator(m, init), make_texture_discriminator(m, init), {}, {}, 0, 0};
  TextureGenerator& gen = res.generator;
  nn::Discriminator& disc = res.discriminator;
  Adam opt_g(gen.parameters(), c.optim.adam());
  Adam opt_d(disc.parameters(), c.optim.adam(c.lr_discriminator));
  const auto d_params = disc.parameters();
  const Critic critic = [&disc](const ag::Var& x) { return disc.forward(x); };
  const TextureLossWeights w = TextureLossWeights::from(c);
  const Camera cam = Camera::frontal(m.image_size);
  const NamedModules modules{{"texture_generator", &gen}, {"texture_discriminator", &disc}};
  const ag::Var zero = ag::constant(Tensor({1}, 0.0));

  auto record_validation = [&](int step) {
    const auto v = validate_texture(gen, shape, val_batch);
    hooks.record(step, "val_tv", v.tv);
    return v;
  };
  res.initial = record_validation(0);

  for (int step = 1; step <= c.steps; ++step) {
    std::vector<std::size_t> idx, real_idx;
    for (int b = 0; b < c.batch; ++b) idx.push_back(paired[rng.below(paired.size())]);
    for (int b = 0; b < c.batch; ++b) real_idx.push_back(real_pool[rng.below(real_pool.size())]);
    const auto batch = prior::load_batch(data, idx);
    const auto real = prior::load_batch(data, real_idx);
    const bool is_paired = !(rng.uniform() < c.unpaired_fraction);

    const ag::Var z_s = ag::constant(batch.latents);
    ag::Var z_t = z_s;
    if (!is_paired) {
      Tensor z({batch.size(), gen.latent_dim()});
      for (auto& v : z.data) v = rng.normal();
      z_t = ag::constant(std::move(z));
    }
    const auto s = shape.forward(z_s);
    const ag::Var f_s = ag::detach(s.f_s), f_sv = ag::detach(s.f_sv);
    const auto t = gen.forward(z_t, f_s);

    const auto dl = discriminator_backward(critic, d_params, concat2(ag::constant(real.f_tv), ag::constant(real.f_sv)).value(),
                                           concat2(t.f_tv, f_sv).value(), w.reg, step % c.r1_every == 0);
    require_finite(dl.total(), "texture discriminator", step, hooks, modules);
    opt_d.step();

    disc.set_trainable(false);
    TextureLossParts<ag::Var> parts{zero, zero, loss_adversarial_g(disc.forward(concat2(t.f_tv, f_sv)))};
    if (is_paired) {
      std::vector<PointQuery> pts;
      for (int n = 0; n < batch.size(); ++n) {
        const auto& r = batch.records[n];
        const auto tp = sample_training_points(r.depth.data, r.mask(), cam, c.points, c.sigma, rng);
        for (std::size_t i = 0; i < tp.points.size(); ++i)
          if (tp.near_surface[i] || tp.uniform_fallback) pts.push_back({n, tp.points[i]});
      }
      const ag::Var gt_maps[2] = {ag::constant(batch.f_tv), ag::constant(batch.f_sv)};
      const Tensor rgb_gt = decode_points(f_t, gt_maps, cam, pts).value();
      const ag::Var maps[2] = {t.f_tv, f_sv};
      parts.rgb = loss_rgb(decode_points(f_t, maps, cam, pts), rgb_gt);
      parts.tv = loss_texture_prior(t.f_tv, batch.f_tv);
    }
    ag::Var total;
    try {
      total = texture_total_loss(parts, w);
    } catch (const std::domain_error& e) {
      require_finite(NAN, e.what(), step, hooks, modules);
    }
    opt_g.zero_grad();
    ag::backward(total);
    opt_g.step();
    disc.set_trainable(true);
    (is_paired ? res.paired_steps : res.unpaired_steps)++;

    hooks.record(step, "paired", is_paired ? 1.0 : 0.0);
    if (is_paired) {
      hooks.record(step, "rgb", parts.rgb.item());
      hooks.record(step, "tv", parts.tv.item());
    }
    hooks.record(step, "adv_g", parts.adv.item());
    hooks.record(step, "total", total.item());
    hooks.record(step, "d_real", dl.real);
    hooks.record(step, "d_fake", dl.fake);
    hooks.record(step, "r1", dl.r1);
    if (step % c.checkpoint_every == 0 && step != c.steps) record_validation(step);
    hooks.maybe_checkpoint(step, modules);
  }
  res.final = record_validation(c.steps);
  gen.set_trainable(false);
  disc.set_trainable(false);
  return res;
}

}  // namespace hgen::texture
