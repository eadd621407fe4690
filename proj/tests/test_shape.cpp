#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "hgen/gan.hpp"
#include "hgen/gradcheck.hpp"
#include "hgen/shape.hpp"

using namespace hgen;
using namespace hgen::shape;
using hgen::testing::random_tensor;
using hgen::testing::toy_prior;

namespace {

double brute_l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / a.size();
}

RunConfig stage_config(int steps) {
  RunConfig c = toy_prior().config;
  c.shape.steps = steps;
  c.shape.batch = 4;
  c.shape.points = 64;
  c.shape.validation_size = 6;
  c.shape.checkpoint_every = 1000;
  return c;
}

const ShapeStageResult& trained() {
  static const ShapeStageResult r = train_shape_stage(toy_prior().data, toy_prior().recon.f_s, stage_config(60));
  return r;
}

}  // namespace

TEST(ShapeLoss, SdfExamples) {
  EXPECT_EQ(loss_sdf(ag::constant(Tensor({2}, std::vector<double>{0.3, -0.4})), Tensor({2}, std::vector<double>{0.3, -0.4}))
                .item(),
            0.0);
  EXPECT_NEAR(loss_sdf(ag::constant(Tensor({2}, std::vector<double>{0.1, -0.2})), Tensor({2}, 0.0)).item(), 0.15, 1e-15);
  Rng rng(1);
  const Tensor p = random_tensor({37, 1}, rng), g = random_tensor({37}, rng);
  EXPECT_NEAR(loss_sdf(ag::constant(p), g).item(), brute_l1(p.data, g.data), 1e-7);
  EXPECT_THROW(loss_sdf(ag::constant(Tensor({0})), Tensor({0})), ContractError);
  EXPECT_THROW(loss_sdf(ag::constant(Tensor({3})), Tensor({2})), ContractError);
}

TEST(ShapeLoss, LatentPriorExamples) {
  Rng rng(2);
  const Tensor a = random_tensor({2, 3, 4, 4}, rng);
  EXPECT_EQ(loss_latent_prior(ag::constant(a), a).item(), 0.0);
  Tensor b = a;
  for (auto& v : b.data) v += 0.5;
  EXPECT_NEAR(loss_latent_prior(ag::constant(a), b).item(), 0.5, 1e-12);
  const Tensor c = random_tensor({2, 3, 4, 4}, rng);
  EXPECT_NEAR(loss_latent_prior(ag::constant(a), c).item(), brute_l1(a.data, c.data), 1e-7);
  EXPECT_THROW(loss_latent_prior(ag::constant(a), Tensor({2, 3, 4, 2})), ContractError);
}

TEST(ShapeLoss, NormalDepthExamples) {
  Rng rng(3);
  const Tensor normal = random_tensor({2, 3, 4, 4}, rng), depth = random_tensor({2, 1, 4, 4}, rng);
  Tensor f_s = random_tensor({2, 6, 4, 4}, rng);
  // Brute force over the designated channels.
  double ln = 0, ld = 0;
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 16; ++k) {
      for (int c = 0; c < 3; ++c) ln += std::abs(f_s.data[(n * 6 + c) * 16 + k] - normal.data[(n * 3 + c) * 16 + k]);
      ld += std::abs(f_s.data[(n * 6 + 3) * 16 + k] - depth.data[n * 16 + k]);
    }
  ln /= 96;
  ld /= 32;
  EXPECT_NEAR(loss_normal_depth(ag::constant(f_s), normal, depth, 20, 20).item(), 20 * ln + 20 * ld, 1e-6);

  const double no_normal = loss_normal_depth(ag::constant(f_s), normal, depth, 0, 20).item();
  Tensor shuffled = f_s;
  for (int c = 0; c < 3; ++c) shuffled.data[c * 16 + 5] += 7.0;
  EXPECT_EQ(loss_normal_depth(ag::constant(shuffled), normal, depth, 0, 20).item(), no_normal);

  Tensor exact = f_s;
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 16; ++k) {
      for (int c = 0; c < 3; ++c) exact.data[(n * 6 + c) * 16 + k] = normal.data[(n * 3 + c) * 16 + k];
      exact.data[(n * 6 + 3) * 16 + k] = depth.data[n * 16 + k];
    }
  EXPECT_EQ(loss_normal_depth(ag::constant(exact), normal, depth, 20, 20).item(), 0.0);
  EXPECT_THROW(loss_normal_depth(ag::constant(Tensor({2, 3, 4, 4})), normal, depth, 1, 1), ContractError);
}

TEST(ShapeLoss, TotalIsWeightedSum) {
  const ShapeLossWeights w;
  EXPECT_EQ(shape_total_loss(ShapeLossParts<double>{0, 0, 0, 0, 0}, w), 0.0);
  EXPECT_EQ(shape_total_loss(ShapeLossParts<double>{1, 1, 1, 1, 1}, w), 101.0);
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    ShapeLossParts<double> p{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const double expect = 20 * p.sdf + 40 * p.sv + 20 * p.normal + 20 * p.depth + 1 * p.adv;
    EXPECT_NEAR(shape_total_loss(p, w), expect, 1e-9);
    const auto v = shape_total_loss(
        ShapeLossParts<ag::Var>{ag::constant(Tensor({1}, p.sdf)), ag::constant(Tensor({1}, p.sv)),
                                ag::constant(Tensor({1}, p.normal)), ag::constant(Tensor({1}, p.depth)),
                                ag::constant(Tensor({1}, p.adv))},
        w);
    EXPECT_EQ(v.item(), shape_total_loss(p, w));
  }
}

TEST(ShapeLoss, NonFiniteTermIsNamed) {
  try {
    shape_total_loss(ShapeLossParts<double>{0, 0, NAN, 0, 0}, ShapeLossWeights{});
    FAIL();
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("normal"), std::string::npos);
  }
}

TEST(ShapeLoss, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  const ag::Var f_s = ag::variable(random_tensor({2, 5, 4, 4}, rng));
  const ag::Var pred = ag::variable(random_tensor({20, 1}, rng));
  const Tensor normal = random_tensor({2, 3, 4, 4}, rng), depth = random_tensor({2, 1, 4, 4}, rng);
  const Tensor sdf = random_tensor({20}, rng), f_sv = random_tensor({2, 5, 4, 4}, rng);
  const auto total = [&] {
    return shape_total_loss(ShapeLossParts<ag::Var>{loss_sdf(pred, sdf), loss_latent_prior(f_s, f_sv),
                                                    loss_normal(f_s, normal), loss_depth(f_s, depth),
                                                    loss_adversarial_g(ag::reshape(ag::global_avg_pool(f_s), {10}))},
                            ShapeLossWeights{});
  };
  const auto r = gradient_check(total, {f_s, pred}, 10, rng);
  EXPECT_LE(r.max_rel_error, 1e-3) << r.worst;
}

TEST(ShapeGenerator, DeterministicAndShaped) {
  const auto m = RunConfig::tiny().model;
  Rng rng(6);
  ShapeGenerator g(m, rng);
  std::vector<double> z(m.latent_dim);
  for (auto& v : z) v = rng.normal();
  const auto a = generate_shape(g, z), b = generate_shape(g, z);
  EXPECT_EQ(a.f_sv.data.data, b.f_sv.data.data);
  EXPECT_EQ(a.f_s.data.shape, (std::vector<int>{m.c_s, m.feature_size, m.feature_size}));
  EXPECT_EQ(a.f_sv.data.shape, (std::vector<int>{m.c_sv, m.feature_size, m.feature_size}));
  EXPECT_EQ(a.f_s.role, FeatureRole::kFs);
  z.push_back(0.0);
  EXPECT_THROW(generate_shape(g, z), ContractError);
}

TEST(ShapeGenerator, RejectsTooFewShapeChannels) {
  auto m = RunConfig::tiny().model;
  m.c_s = 3;
  Rng rng(7);
  EXPECT_THROW(ShapeGenerator(m, rng), ContractError);
}

TEST(ShapeStage, DecoderFrozenAndValidationImproves) {
  const std::uint64_t before = toy_prior().recon.f_s.checksum();
  const auto& r = trained();
  EXPECT_EQ(toy_prior().recon.f_s.checksum(), before);
  EXPECT_LE(r.final.sv, 0.7 * r.initial.sv);
  EXPECT_LE(2.0 * r.final.normal, r.initial.normal);
}

TEST(ShapeStage, SameSeedSameWeights) {
  const auto again = train_shape_stage(toy_prior().data, toy_prior().recon.f_s, stage_config(60));
  EXPECT_EQ(trained().generator.checksum(), again.generator.checksum());
  EXPECT_EQ(trained().discriminator.checksum(), again.discriminator.checksum());
}

TEST(ShapeStage, LogsEveryTermAndCheckpoints) {
  LossLog log;
  std::vector<std::string> names;
  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint_every = 2;
  hooks.checkpoint = [&](int, const std::string&, const NamedModules& mods) {
    for (const auto& [n, _] : mods) names.push_back(n);
    return fs::path();
  };
  train_shape_stage(toy_prior().data, toy_prior().recon.f_s, stage_config(2), hooks);
  EXPECT_EQ(names, (std::vector<std::string>{"shape_generator", "shape_discriminator"}));
  for (const char* t : {"sdf", "sv", "normal", "depth", "adv_g", "total", "d_real", "d_fake", "r1"})
    EXPECT_TRUE(std::isfinite(log.mean(t, 1, 2))) << t;
  EXPECT_TRUE(std::isfinite(log.mean("val_sv", 0, 0)));
}

TEST(ShapeStage, NeedsSynthesizedRecords) {
  auto c = stage_config(1);
  const fs::path dir = hgen::testing::scratch("shape_corpus_only");
  const auto data = prior::extract_pseudo_gt(toy_prior().recon, toy_prior().gen, hgen::testing::small_corpus(), 3, 1,
                                             1, dir, toy_prior().config);
  // Drop the synthesized record from the manifest.
  Json j = read_json(dir / "manifest.json");
  auto& recs = j["records"];
  recs.erase(std::remove_if(recs.begin(), recs.end(), [](const Json& r) { return r["source"] == "synthesized"; }),
             recs.end());
  write_json(dir / "manifest.json", j);
  EXPECT_THROW(train_shape_stage(prior::PseudoGTDataset::open(dir), toy_prior().recon.f_s, c), ContractError);
}

TEST(ShapeStage, TrainedGeneratorYieldsMeshes) {
  const auto& g = trained().generator;
  const Camera cam = Camera::frontal(toy_prior().config.model.image_size);
  Rng rng(8);
  int non_empty = 0;
  for (int k = 0; k < 4; ++k) {
    std::vector<double> z(g.latent_dim());
    for (auto& v : z) v = rng.normal();
    const auto maps = generate_shape(g, z);
    non_empty += !extract_field_mesh(maps.f_sv, toy_prior().recon.f_s, cam, 24).faces.empty();
  }
  EXPECT_GE(non_empty, 3);
}
