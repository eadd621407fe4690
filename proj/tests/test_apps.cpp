#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "hgen/apps.hpp"

using namespace hgen;
using namespace hgen::app;
using hgen::testing::toy_prior;

namespace {

struct Student {
  shape::ShapeGenerator shape;
  texture::TextureGenerator texture;
  refine::RefinerNet refiner;
};

const Student& student() {
  static const Student s = [] {
    RunConfig c = toy_prior().config;
    c.shape.steps = c.texture.steps = 40;
    c.shape.batch = c.texture.batch = 4;
    c.shape.points = c.texture.points = 64;
    c.shape.validation_size = c.texture.validation_size = 4;
    Student out;
    out.shape = shape::train_shape_stage(toy_prior().data, toy_prior().recon.f_s, c).generator;
    out.texture = texture::train_texture_stage(toy_prior().data, out.shape, toy_prior().recon.f_t, c).generator;
    Rng rng(3);
    out.refiner = refine::make_refiner(c.model, rng);
    return out;
  }();
  return s;
}

GeneratorState state(bool with_refiner = false) {
  GeneratorState s;
  s.shape = &student().shape;
  s.texture = &student().texture;
  s.f_s = &toy_prior().recon.f_s;
  s.f_t = &toy_prior().recon.f_t;
  s.refiner = with_refiner ? &student().refiner : nullptr;
  s.image_size = toy_prior().config.model.image_size;
  s.refine_views = 2;
  return s;
}

constexpr int kMeshRes = 20;

InvertConfig quick_invert() {
  InvertConfig c = RunConfig::tiny().invert;
  c.restarts = 2;
  return c;
}

}  // namespace

TEST(Generate, SameLatentsSamePly) {
  Rng rng(1);
  const auto z = sample_latents(state().latent_dim(), rng);
  const auto a = generate(state(), z, kMeshRes), b = generate(state(), z, kMeshRes);
  EXPECT_EQ(ply_string(a.mesh), ply_string(b.mesh));
  EXPECT_EQ(a.mesh.colors.size(), a.mesh.vertices.size());
}

TEST(Generate, RefinementKeepsGeometry) {
  Rng rng(2);
  for (int k = 0; k < 3; ++k) {
    const auto z = sample_latents(state().latent_dim(), rng);
    const auto plain = generate(state(true), z, kMeshRes, false);
    const auto refined = generate(state(true), z, kMeshRes, true);
    EXPECT_EQ(plain.mesh.vertices, refined.mesh.vertices);
    EXPECT_EQ(plain.mesh.faces, refined.mesh.faces);
    EXPECT_EQ(refined.mesh.colors.size(), refined.mesh.vertices.size());
  }
  const auto z = sample_latents(state().latent_dim(), rng);
  EXPECT_THROW(generate(state(false), z, kMeshRes, true), ContractError);
}

TEST(Generate, EmptyFieldReportsEmptyMesh) {
  auto s = state();
  Rng rng(3);
  FieldDecoder outside(toy_prior().config.model.c_sv, {}, FieldKind::kShape, rng);
  auto& layer = outside.mlp().layers()[0];
  std::fill(layer.weight.mutable_value().data.begin(), layer.weight.mutable_value().data.end(), 0.0);
  layer.bias.mutable_value().data = {1.0};
  s.f_s = &outside;
  const auto g = generate(s, sample_latents(s.latent_dim(), rng), kMeshRes, false);
  EXPECT_TRUE(g.empty());
  EXPECT_TRUE(g.mesh.faces.empty());
}

TEST(Generate, RejectsWrongLatentLength) {
  Rng rng(4);
  auto z = sample_latents(state().latent_dim(), rng);
  z.z_t.pop_back();
  EXPECT_THROW(generate(state(), z, kMeshRes), ContractError);
}

TEST(Retexture, SharedGeometryAndDistinctColorings) {
  Rng rng(5);
  const auto z = sample_latents(state().latent_dim(), rng);
  std::vector<std::vector<double>> codes;
  for (int k = 0; k < 5; ++k) codes.push_back(sample_latents(state().latent_dim(), rng).z_t);
  const auto meshes = retexture(state(), z.z_s, codes, kMeshRes);
  ASSERT_EQ(meshes.size(), 5u);
  ASSERT_FALSE(meshes[0].empty());
  int differs = 0;
  for (const auto& m : meshes) {
    EXPECT_EQ(m.mesh.vertices, meshes[0].mesh.vertices);
    EXPECT_EQ(m.mesh.faces, meshes[0].mesh.faces);
    differs += m.mesh.colors != meshes[0].mesh.colors;
  }
  EXPECT_GE(differs, 1);

  const auto twins = retexture(state(), z.z_s, {codes[0], codes[0]}, kMeshRes);
  EXPECT_EQ(ply_string(twins[0].mesh), ply_string(twins[1].mesh));
}

TEST(Retexture, SdfGridIndependentOfTextureCode) {
  Rng rng(6);
  const auto z = sample_latents(state().latent_dim(), rng);
  const auto cam = state().camera();
  std::vector<double> reference;
  for (int k = 0; k < 4; ++k) {
    const auto g = generate(state(), {z.z_s, sample_latents(state().latent_dim(), rng).z_t}, kMeshRes);
    const auto grid = sample_grid_batched(sdf_field(g.shape.f_sv, *state().f_s, cam), 12).values;
    if (k == 0) reference = grid;
    EXPECT_EQ(grid, reference);
  }
}

TEST(Interpolate, LatentScheduleAndEndpoints) {
  Rng rng(7);
  const auto a = sample_latents(4, rng), b = sample_latents(4, rng);
  const auto zs = interpolate_latents(a, b, 5);
  ASSERT_EQ(zs.size(), 5u);
  EXPECT_EQ(zs.front().z_s, a.z_s);
  EXPECT_EQ(zs.back().z_t, b.z_t);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(zs[2].z_s[i], 0.5 * (a.z_s[i] + b.z_s[i]), 1e-15);
  EXPECT_NEAR(zs[1].z_t[3], 0.75 * a.z_t[3] + 0.25 * b.z_t[3], 1e-15);
  EXPECT_THROW(interpolate_latents(a, b, 1), ContractError);
}

TEST(Interpolate, EndpointsAreDirectGeneration) {
  Rng rng(8);
  const auto a = sample_latents(state().latent_dim(), rng), b = sample_latents(state().latent_dim(), rng);
  const auto seq = interpolate(state(), a, b, 4, kMeshRes);
  ASSERT_EQ(seq.size(), 4u);
  EXPECT_EQ(ply_string(seq.front().mesh), ply_string(generate(state(), a, kMeshRes).mesh));
  EXPECT_EQ(ply_string(seq.back().mesh), ply_string(generate(state(), b, kMeshRes).mesh));
}

TEST(Interpolate, FinerScheduleGivesSmallerSteps) {
  Rng rng(9);
  const auto a = sample_latents(state().latent_dim(), rng), b = sample_latents(state().latent_dim(), rng);
  const auto cam = state().camera();
  auto mean_step = [&](int steps) {
    std::vector<std::vector<double>> grids;
    for (const auto& z : interpolate_latents(a, b, steps)) {
      const auto s = shape::generate_shape(student().shape, z.z_s);
      grids.push_back(sample_grid_batched(sdf_field(s.f_sv, *state().f_s, cam), 12).values);
    }
    double total = 0;
    for (std::size_t k = 1; k < grids.size(); ++k)
      for (std::size_t i = 0; i < grids[k].size(); ++i) total += std::abs(grids[k][i] - grids[k - 1][i]);
    return total / ((grids.size() - 1) * grids[0].size());
  };
  EXPECT_LT(mean_step(9), mean_step(3));
}

TEST(Invert, SelfInversionRecoversFeatures) {
  Rng rng(10);
  const auto truth = sample_latents(state().latent_dim(), rng);
  const auto target = generate(state(), truth, kMeshRes);
  const auto res = invert_features(state(), target.shape.f_sv, target.texture.f_tv, RunConfig::tiny().invert, 4, kMeshRes);
  ASSERT_GE(res.chosen, 0);
  const auto& chosen = res.restarts[res.chosen];
  EXPECT_LT(res.loss, 0.1 * chosen.initial) << "initial " << chosen.initial;
  for (const auto& r : res.restarts) {
    ASSERT_TRUE(r.ok) << r.error;
    EXPECT_LT(r.final, r.initial);
  }
  EXPECT_EQ(res.z.z_s.size(), static_cast<std::size_t>(state().latent_dim()));
  EXPECT_EQ(res.z.z_t.size(), static_cast<std::size_t>(state().latent_dim()));
}

TEST(Invert, DeterministicWithReport) {
  Rng rng(11);
  const auto target = generate(state(), sample_latents(state().latent_dim(), rng), kMeshRes);
  auto c = quick_invert();
  c.steps = 20;
  const auto a = invert_features(state(), target.shape.f_sv, target.texture.f_tv, c, 5, kMeshRes);
  const auto b = invert_features(state(), target.shape.f_sv, target.texture.f_tv, c, 5, kMeshRes);
  EXPECT_EQ(a.z.z_s, b.z.z_s);
  EXPECT_EQ(a.report().dump(), b.report().dump());
  EXPECT_EQ(a.report()["restarts"].size(), 2u);
  const auto other = invert_features(state(), target.shape.f_sv, target.texture.f_tv, c, 6, kMeshRes);
  EXPECT_NE(a.z.z_s, other.z.z_s);
}

TEST(Invert, FromReferenceImageUsesTeacherTargets) {
  const auto item = prior::load_item(hgen::testing::small_corpus(), hgen::testing::small_corpus().entries[0]);
  auto c = quick_invert();
  c.steps = 10;
  const auto res = invert(state(), toy_prior().recon, item.image, c, 1, kMeshRes);
  const auto rec = prior::reconstruct(toy_prior().recon, item.image);
  const auto again = invert_features(state(), rec.f_sv, rec.f_tv, c, 1, kMeshRes);
  EXPECT_EQ(res.loss, again.loss);
}

TEST(Invert, AllRestartsFailingThrowsWithDiagnostics) {
  Rng rng(12);
  const auto target = generate(state(), sample_latents(state().latent_dim(), rng), kMeshRes);
  FeatureMap bad = target.shape.f_sv;
  bad.data.data[0] = NAN;
  auto c = quick_invert();
  c.steps = 5;
  try {
    invert_features(state(), bad, target.texture.f_tv, c, 1, kMeshRes);
    FAIL();
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("restart 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("restart 1"), std::string::npos) << msg;
  }
  EXPECT_THROW(invert_features(state(), target.texture.f_tv, target.texture.f_tv, c, 1, kMeshRes), ContractError);
}
