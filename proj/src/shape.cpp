#include "hgen/shape.hpp"

#include <cmath>
#include <stdexcept>

#include "hgen/gan.hpp"

namespace hgen::shape {
namespace {

void require_finite_part(double v, const char* name) {
  if (!std::isfinite(v)) throw std::domain_error(std::string("shape loss term '") + name + "' is not finite");
}

}  // namespace

ShapeGenerator::ShapeGenerator(const ModelConfig& m, Rng& rng)
    : g_s_(m.latent_dim, m.style_dim, m.generator_width, m.c_s, m.feature_size, rng),
      g_sv_(m.c_s, m.encoder_width, m.c_sv, rng) {
  if (m.c_s < kDepthChannel + 1) throw ContractError("ShapeGenerator: c_s must be at least 4");
}

ShapeFeatures ShapeGenerator::forward(const ag::Var& z) const {
  if (z.value().rank() != 2 || z.dim(1) != latent_dim())
    throw ContractError("ShapeGenerator: expected [N," + std::to_string(latent_dim()) + "] latents, got " +
                        shape_str(z.shape()));
  ShapeFeatures f;
  f.f_s = g_s_.forward(z);
  f.f_sv = g_sv_.forward(f.f_s);
  return f;
}

void ShapeGenerator::collect(nn::ParamRefs& out, const std::string& prefix) {
  g_s_.collect(out, prefix + "g_s.");
  g_sv_.collect(out, prefix + "g_sv.");
}

ShapeMaps generate_shape(const ShapeGenerator& gen, std::span<const double> z) {
  if (static_cast<int>(z.size()) != gen.latent_dim())
    throw ContractError("generate_shape: latent has " + std::to_string(z.size()) + " entries, expected " +
                        std::to_string(gen.latent_dim()));
  const auto f = gen.forward(ag::constant(Tensor({1, gen.latent_dim()}, std::vector<double>(z.begin(), z.end()))));
  return {FeatureMap::from_batch(f.f_s.value(), 0, FeatureRole::kFs),
          FeatureMap::from_batch(f.f_sv.value(), 0, FeatureRole::kFsv)};
}

nn::Discriminator make_shape_discriminator(const ModelConfig& m, Rng& rng) {
  return nn::Discriminator(m.c_sv, m.discriminator_width, m.feature_size, rng);
}

ShapeLossWeights ShapeLossWeights::from(const ShapeStageConfig& c) {
  return {c.lambda_sdf, c.lambda_sv, c.lambda_normal, c.lambda_depth, c.lambda_adv, c.lambda_reg};
}

ag::Var loss_sdf(const ag::Var& pred, const Tensor& gt) {
  if (pred.size() == 0) throw ContractError("loss_sdf: no points");
  if (pred.size() != gt.size())
    throw ContractError("loss_sdf: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                        " targets");
  return ag::l1_mean(pred, Tensor(pred.shape(), gt.data));
}

ag::Var loss_latent_prior(const ag::Var& f_sv, const Tensor& f_sv_gt) {
  if (f_sv.shape() != f_sv_gt.shape)
    throw ContractError("loss_latent_prior: " + shape_str(f_sv.shape()) + " vs " + shape_str(f_sv_gt.shape));
  return ag::l1_mean(f_sv, f_sv_gt);
}

ag::Var loss_normal(const ag::Var& f_s, const Tensor& normal_gt) {
  if (f_s.value().rank() != 4 || f_s.dim(1) < kDepthChannel + 1)
    throw ContractError("loss_normal: F_s needs at least 4 channels, got " + shape_str(f_s.shape()));
  const ag::Var n = ag::slice_channels(f_s, 0, kNormalChannels);
  if (n.shape() != normal_gt.shape)
    throw ContractError("loss_normal: " + shape_str(n.shape()) + " vs " + shape_str(normal_gt.shape));
  return ag::l1_mean(n, normal_gt);
}

ag::Var loss_depth(const ag::Var& f_s, const Tensor& depth_gt) {
  if (f_s.value().rank() != 4 || f_s.dim(1) < kDepthChannel + 1)
    throw ContractError("loss_depth: F_s needs at least 4 channels, got " + shape_str(f_s.shape()));
  const ag::Var d = ag::slice_channels(f_s, kDepthChannel, kDepthChannel + 1);
  if (d.shape() != depth_gt.shape)
    throw ContractError("loss_depth: " + shape_str(d.shape()) + " vs " + shape_str(depth_gt.shape));
  return ag::l1_mean(d, depth_gt);
}

ag::Var loss_normal_depth(const ag::Var& f_s, const Tensor& normal_gt, const Tensor& depth_gt, double lambda_n,
                          double lambda_d) {
  const ag::Var parts[2] = {loss_normal(f_s, normal_gt), loss_depth(f_s, depth_gt)};
  const double w[2] = {lambda_n, lambda_d};
  return ag::weighted_sum(parts, w);
}

double shape_total_loss(const ShapeLossParts<double>& p, const ShapeLossWeights& w) {
  require_finite_part(p.sdf, "sdf");
  require_finite_part(p.sv, "sv");
  require_finite_part(p.normal, "normal");
  require_finite_part(p.depth, "depth");
  require_finite_part(p.adv, "adv");
  double s = 0.0;
  s += w.sdf * p.sdf;
  s += w.sv * p.sv;
  s += w.normal * p.normal;
  s += w.depth * p.depth;
  s += w.adv * p.adv;
  return s;
}

ag::Var shape_total_loss(const ShapeLossParts<ag::Var>& p, const ShapeLossWeights& w) {
  shape_total_loss(ShapeLossParts<double>{p.sdf.item(), p.sv.item(), p.normal.item(), p.depth.item(), p.adv.item()},
                   w);
  const ag::Var parts[5] = {p.sdf, p.sv, p.normal, p.depth, p.adv};
  const double weights[5] = {w.sdf, w.sv, w.normal, w.depth, w.adv};
  return ag::weighted_sum(parts, weights);
}

ShapeValidation validate_shape(const ShapeGenerator& gen, const prior::PseudoGTBatch& batch) {
  if (batch.latents.empty()) throw ContractError("validate_shape: batch has no latents");
  const auto f = gen.forward(ag::constant(batch.latents));
  const int hf = f.f_s.dim(2);
  return {loss_latent_prior(f.f_sv, batch.f_sv).item(), loss_normal(f.f_s, downsample_to(batch.normal, hf)).item(),
          loss_depth(f.f_s, downsample_to(batch.depth, hf)).item()};
}

ShapeStageResult train_shape_stage(const prior::PseudoGTDataset& data, const FieldDecoder& f_s_in,
                                   const RunConfig& config, const TrainHooks& hooks) {
  const auto& m = config.model;
  const auto& c = config.shape;
  const auto paired = data.select(prior::Source::kSynthesized, false);
  const auto real_pool = data.select(std::nullopt, false);
  if (paired.empty()) throw ContractError("train_shape_stage: dataset has no synthesized training records");
  const auto val_idx = prior::validation_indices(data, c.validation_size);
  const auto val_batch = prior::load_batch(data, val_idx);

  FieldDecoder f_s = f_s_in;
  f_s.set_trainable(false);
  Rng init = stage_rng(config.seed, "shape.init");
  Rng rng = stage_rng(config.seed, "shape.train");
  ShapeStageResult res{ShapeGenerator(m, init), make_shape_discriminator(m, init), {}, {}};
  ShapeGenerator& gen = res.generator;
  nn::Discriminator& disc = res.discriminator;
  Adam opt_g(gen.parameters(), c.optim.adam());
  Adam opt_d(disc.parameters(), c.optim.adam(c.lr_discriminator));
  const auto d_params = disc.parameters();
  const Critic critic = [&disc](const ag::Var& x) { return disc.forward(x); };
  const ShapeLossWeights w = ShapeLossWeights::from(c);
  const Camera cam = Camera::frontal(m.image_size);
  const NamedModules modules{{"shape_generator", &gen}, {"shape_discriminator", &disc}};

  auto record_validation = [&](int step) {
    const auto v = validate_shape(gen, val_batch);
    hooks.record(step, "val_sv", v.sv);
    hooks.record(step, "val_normal", v.normal);
    hooks.record(step, "val_depth", v.depth);
    return v;
  };
  res.initial = record_validation(0);

  for (int step = 1; step <= c.steps; ++step) {
    std::vector<std::size_t> idx, real_idx;
    for (int b = 0; b < c.batch; ++b) idx.push_back(paired[rng.below(paired.size())]);
    for (int b = 0; b < c.batch; ++b) real_idx.push_back(real_pool[rng.below(real_pool.size())]);
    const auto batch = prior::load_batch(data, idx);
    const Tensor real_f_sv = prior::load_batch(data, real_idx).f_sv;

    const auto f = gen.forward(ag::constant(batch.latents));

    // Teacher signed distances at points around the teacher surface.
    std::vector<PointQuery> pts;
    for (int n = 0; n < batch.size(); ++n) {
      const auto& r = batch.records[n];
      const auto tp = sample_training_points(r.depth.data, r.mask(), cam, c.points, c.sigma, rng);
      for (const Vec3& p : tp.points) pts.push_back({n, p});
    }
    const ag::Var gt_maps[1] = {ag::constant(batch.f_sv)};
    const Tensor sdf_gt = decode_points(f_s, gt_maps, cam, pts).value();

    const auto dl = discriminator_backward(critic, d_params, real_f_sv, f.f_sv.value(), w.reg, step % c.r1_every == 0);
    require_finite(dl.total(), "shape discriminator", step, hooks, modules);
    opt_d.step();

    disc.set_trainable(false);
    const ag::Var maps[1] = {f.f_sv};
    const int hf = m.feature_size;
    ShapeLossParts<ag::Var> parts{loss_sdf(decode_points(f_s, maps, cam, pts), sdf_gt),
                                  loss_latent_prior(f.f_sv, batch.f_sv),
                                  loss_normal(f.f_s, downsample_to(batch.normal, hf)),
                                  loss_depth(f.f_s, downsample_to(batch.depth, hf)),
                                  loss_adversarial_g(disc.forward(f.f_sv))};
    ag::Var total;
    try {
      total = shape_total_loss(parts, w);
    } catch (const std::domain_error& e) {
      require_finite(NAN, e.what(), step, hooks, modules);
    }
    opt_g.zero_grad();
    ag::backward(total);
    opt_g.step();
    disc.set_trainable(true);

    hooks.record(step, "sdf", parts.sdf.item());
    hooks.record(step, "sv", parts.sv.item());
    hooks.record(step, "normal", parts.normal.item());
    hooks.record(step, "depth", parts.depth.item());
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

}  // namespace hgen::shape
