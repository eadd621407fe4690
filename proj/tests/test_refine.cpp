#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "hgen/refine.hpp"

using namespace hgen;
using namespace hgen::refine;
using hgen::testing::random_tensor;
using hgen::testing::toy_prior;

namespace {

constexpr int kRes = 16;

double dome(double u, double v) { return 0.3 * std::cos(std::numbers::pi * u / 2) * std::cos(std::numbers::pi * v / 2); }

// sdf = 0.5 (h(x,y) - z) over a one-channel height map, color constant.
struct HeightField {
  FieldDecoder f_s, f_t;
  TexturedField field;
  Vec3 color{0.2, 0.5, 0.8};

  explicit HeightField(double sdf_bias = 0.0, bool flat = false) {
    Rng rng(1);
    f_s = FieldDecoder(1, {}, FieldKind::kShape, rng);
    f_t = FieldDecoder(2, {}, FieldKind::kTexture, rng);
    auto& ls = f_s.mlp().layers()[0];
    ls.weight.mutable_value().data = {flat ? 0.0 : 0.5, flat ? 0.0 : -0.5};
    ls.bias.mutable_value().data = {sdf_bias};
    auto& lt = f_t.mlp().layers()[0];
    lt.weight.mutable_value().data.assign(9, 0.0);
    for (int c = 0; c < 3; ++c) lt.bias.mutable_value().data[c] = std::log(color[c] / (1 - color[c]));
    Tensor h({1, kRes, kRes});
    const Camera cam = Camera::frontal(kRes);
    for (int i = 0; i < kRes; ++i)
      for (int j = 0; j < kRes; ++j) {
        const Vec3 p = hgen::backproject(pixel_center(i, j), 0.0, cam);
        h.data[i * kRes + j] = dome(p.x(), p.y());
      }
    field = TexturedField{FeatureMap{h, FeatureRole::kFsv}, FeatureMap{Tensor({1, kRes, kRes}), FeatureRole::kFtv},
                          &f_s, &f_t, cam};
  }
};

// Stepped march on the true field with a fine step; first outside-to-inside crossing.
double brute_depth(const TexturedField& f, const Vec2& px, const Camera& cam) {
  const int n = 4000;
  double prev = -1.0;
  if (f.sdf(hgen::backproject(px, prev, cam)) <= 0) return prev;
  for (int s = 1; s <= n; ++s) {
    const double t = -1.0 + 2.0 * s / n;
    if (f.sdf(hgen::backproject(px, t, cam)) <= 0) return t;
    prev = t;
  }
  return corpus::kBackgroundDepth;
}

std::vector<int> brute_nn(std::span<const Vec3> pts, std::span<const Vec3> qs) {
  std::vector<int> out;
  for (const Vec3& q : qs) {
    int best = 0;
    for (std::size_t i = 1; i < pts.size(); ++i)
      if ((pts[i] - q).squaredNorm() < (pts[best] - q).squaredNorm()) best = static_cast<int>(i);
    out.push_back(best);
  }
  return out;
}

RunConfig stage_config(int steps) {
  RunConfig c = toy_prior().config;
  c.refine.steps = steps;
  c.refine.batch = 2;
  c.refine.records = 6;
  c.refine.views = 2;
  c.refine.validation_size = 3;
  c.refine.checkpoint_every = 1000;
  return c;
}

const RefineStageResult& trained() {
  static const RefineStageResult r = train_refine_stage(toy_prior().recon, hgen::testing::small_corpus(), stage_config(40));
  return r;
}

}  // namespace

TEST(RenderFieldImage, AllPositiveFieldIsBlank) {
  const HeightField hf(1.0, true);
  const auto img = render_field_image(hf.field, Camera::orbit(kRes, 0.4), kRes);
  for (auto m : img.mask) EXPECT_EQ(m, 0);
  for (double d : img.depth) EXPECT_EQ(d, 1.0);
  for (double c : img.rgb) EXPECT_EQ(c, 1.0);
  EXPECT_EQ(img.image().shape, (std::vector<int>{3, kRes, kRes}));
}

TEST(RenderFieldImage, FrontalDepthIsTheHeightMap) {
  const HeightField hf;
  const auto img = render_field_image(hf.field, Camera::frontal(kRes), kRes);
  for (int i = 0; i < kRes * kRes; ++i) {
    ASSERT_EQ(img.mask[i], 1);
    EXPECT_NEAR(img.depth[i], hf.field.f_sv.data.data[i], 1e-5);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(img.rgb[3 * i + c], hf.color[c], 1e-12);
  }
}

TEST(RenderFieldImage, OrbitDepthMatchesFineMarchAndLiesOnZeroSet) {
  const HeightField hf;
  for (double az : {0.6, 2.0}) {
    const auto img = render_field_image(hf.field, Camera::orbit(kRes, az), kRes);
    int agree = 0;
    for (int i = 0; i < kRes; ++i)
      for (int j = 0; j < kRes; ++j) {
        const int k = i * kRes + j;
        const double ref = brute_depth(hf.field, pixel_center(i, j), img.view);
        const bool ref_hit = ref < corpus::kBackgroundDepth;
        agree += ref_hit == (img.mask[k] == 1);
        if (!ref_hit || !img.mask[k]) continue;
        EXPECT_NEAR(img.depth[k], ref, 2.0 / kRes) << "pixel " << i << "," << j << " azimuth " << az;
        if (img.depth[k] > -1.0)
          EXPECT_LE(std::abs(hf.field.sdf(hgen::backproject(pixel_center(i, j), img.depth[k], img.view))), 1e-5);
      }
    EXPECT_GE(agree, 0.95 * kRes * kRes);
  }
}

TEST(RenderFieldImage, AgreesWithSphereTracedRender) {
  const HeightField hf;
  const Camera view = Camera::orbit(kRes, 0.9);
  const auto mine = render_field_image(hf.field, view, kRes);
  const auto traced = corpus::render_field([&](const Vec3& p) { return hf.field.sdf(p); },
                                           [&](const Vec3&) { return hf.color; }, view, kRes);
  int agree = 0;
  for (int k = 0; k < kRes * kRes; ++k) {
    agree += mine.mask[k] == traced.mask[k];
    if (mine.mask[k] && traced.mask[k]) EXPECT_NEAR(mine.depth[k], traced.depth[k], 2.0 / kRes);
  }
  EXPECT_GE(agree, 0.95 * kRes * kRes);
}

TEST(RefineLoss, ZeroAtTarget) {
  Rng rng(2);
  const Tensor gt = random_tensor({1, 3, 4, 4}, rng, 0, 1);
  const PerceptualFn phi = [](const ag::Var& x) { return std::vector<ag::Var>{x}; };
  EXPECT_EQ(refine_loss(ag::constant(gt), gt, phi, 1.0, 1.0).item(), 0.0);
}

TEST(RefineLoss, MatchesBruteForce) {
  Rng rng(3);
  const Tensor a = random_tensor({2, 3, 4, 4}, rng, 0, 1), b = random_tensor({2, 3, 4, 4}, rng, 0, 1);
  double l1 = 0, l2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    l1 += std::abs(a.data[i] - b.data[i]) / a.size();
    l2 += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]) / a.size();
  }
  int calls = 0;
  const PerceptualFn phi = [&calls](const ag::Var& x) {
    ++calls;
    return std::vector<ag::Var>{x, ag::scale(x, 2.0)};
  };
  EXPECT_NEAR(refine_loss(ag::constant(a), b, phi, 0.7, 0.0).item(), 0.7 * l1, 1e-12);
  EXPECT_EQ(calls, 0);
  EXPECT_NEAR(refine_loss(ag::constant(a), b, phi, 0.7, 1.3).item(), 0.7 * l1 + 1.3 * 5 * l2, 1e-12);
  EXPECT_THROW(refine_loss(ag::constant(a), Tensor({2, 3, 4, 2}), phi, 1, 1), ContractError);
}

TEST(Backproject, CenterPixelAtZeroDepthIsOrigin) {
  const int r = 5;
  std::vector<double> depth(r * r, 0.0), rgb(3 * r * r, 0.5);
  std::vector<std::uint8_t> mask(r * r, 0);
  mask[2 * r + 2] = 1;
  for (double az : {0.0, 1.1}) {
    const auto cloud = backproject(depth, rgb, mask, Camera::orbit(64, az), r);
    ASSERT_EQ(cloud.size(), 1u);
    EXPECT_LE(cloud.points[0].norm(), 1e-12);
  }
  std::fill(mask.begin(), mask.end(), 0);
  EXPECT_TRUE(backproject(depth, rgb, mask, Camera::frontal(r), r).empty());
  EXPECT_THROW(backproject(depth, rgb, std::vector<std::uint8_t>(3), Camera::frontal(r), r), ContractError);
}

TEST(Backproject, ProjectsBackToPixelAndDepth) {
  Rng rng(4);
  const int r = 12;
  std::vector<double> depth(r * r), rgb(3 * r * r);
  std::vector<std::uint8_t> mask(r * r);
  for (auto& d : depth) d = rng.uniform(-1, 1);
  for (auto& c : rgb) c = rng.uniform();
  for (auto& m : mask) m = rng.uniform() < 0.5;
  const Camera view = Camera::orbit(r, 2.3);
  const auto cloud = backproject(depth, rgb, mask, view, r);
  std::size_t k = 0;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) {
      const int p = i * r + j;
      if (!mask[p]) continue;
      const auto proj = project(cloud.points[k], view);
      EXPECT_NEAR(proj.pixel.x(), j + 0.5, 1e-9);
      EXPECT_NEAR(proj.pixel.y(), i + 0.5, 1e-9);
      EXPECT_NEAR(proj.depth, depth[p], 1e-12);
      EXPECT_EQ(cloud.colors[k], Vec3(rgb[3 * p], rgb[3 * p + 1], rgb[3 * p + 2]));
      ++k;
    }
  EXPECT_EQ(k, cloud.size());
}

TEST(NearestNeighbors, EqualsBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<Vec3> pts, qs;
    const int n = 1 + trial * 300;
    for (int i = 0; i < n; ++i) {
      // Clustered points plus duplicates to exercise ties.
      const double s = i % 3 == 0 ? 0.05 : 1.0;
      pts.push_back({s * rng.uniform(-1, 1), s * rng.uniform(-1, 1), s * rng.uniform(-1, 1)});
      if (i % 7 == 0) pts.push_back(pts.back());
    }
    for (int i = 0; i < 200; ++i) qs.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)});
    for (int i = 0; i < 50; ++i) qs.push_back(pts[rng.below(pts.size())]);
    EXPECT_EQ(nearest_neighbors(pts, qs), brute_nn(pts, qs)) << "trial " << trial;
  }
  // Flat and collinear sets.
  std::vector<Vec3> line, qs;
  for (int i = 0; i < 100; ++i) line.push_back({i * 0.01, 0.0, 0.0});
  for (int i = 0; i < 100; ++i) qs.push_back({rng.uniform(-1, 2), rng.uniform(-1, 1), 0.0});
  EXPECT_EQ(nearest_neighbors(line, qs), brute_nn(line, qs));
  EXPECT_THROW(nearest_neighbors({}, qs), ContractError);
}

TEST(Backproject, CorpusRenderLandsOnBodySurface) {
  const auto& corpus = hgen::testing::small_corpus();
  const int r = corpus.resolution;
  std::size_t total = 0, near = 0;
  for (int k = 0; k < 3; ++k) {
    const auto sample = corpus::load_corpus_sample(corpus, corpus.entries[k]);
    const corpus::Body body(sample.params);
    const auto view = corpus::render_orthographic(sample.params, Camera::orbit(r, 0.8 * k), r);
    const auto cloud = backproject(view.depth, view.rgb, view.mask, view.view, r);
    ASSERT_FALSE(cloud.empty());
    for (const Vec3& p : cloud.points) near += std::abs(body.sdf(p)) <= 2.0 / r;
    total += cloud.size();
  }
  EXPECT_GE(near, 0.95 * total);
}

TEST(PaintVertices, SinglePointPaintsEverything) {
  TexturedMesh mesh;
  mesh.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  mesh.faces = {{0, 1, 2}};
  ColoredCloud cloud{{Vec3(0.3, 0.3, 0.3)}, {Vec3(1, 0, 0)}};
  const auto painted = paint_vertices(mesh, cloud);
  for (const Vec3& c : painted.colors) EXPECT_EQ(c, Vec3(1, 0, 0));
  EXPECT_EQ(painted.vertices, mesh.vertices);
  EXPECT_THROW(paint_vertices(mesh, ColoredCloud{}), ContractError);
}

TEST(PaintVertices, CloudAtVerticesIsRecoveredExactly) {
  Rng rng(6);
  TexturedMesh mesh;
  ColoredCloud cloud;
  for (int i = 0; i < 300; ++i) {
    mesh.vertices.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    cloud.points.push_back(mesh.vertices.back());
    cloud.colors.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
  }
  EXPECT_EQ(paint_vertices(mesh, cloud).colors, cloud.colors);
}

TEST(RefineTexturedMesh, SingleIdentityViewIsRenderBackprojectPaint) {
  const HeightField hf;
  Rng rng(7);
  TexturedMesh mesh;
  for (int i = 0; i < 40; ++i) {
    const double x = rng.uniform(-0.9, 0.9), y = rng.uniform(-0.9, 0.9);
    mesh.vertices.push_back({x, y, dome(x, y)});
  }
  for (int i = 0; i + 2 < 40; i += 3) mesh.faces.push_back({i, i + 1, i + 2});
  const auto out = refine_textured_mesh(mesh, hf.field, nullptr, 1, kRes);
  const auto img = render_field_image(hf.field, Camera::orbit(kRes, 0.0), kRes);
  const auto expect = paint_vertices(mesh, backproject(img.depth, img.rgb, img.mask, img.view, kRes));
  EXPECT_EQ(out.colors, expect.colors);
  EXPECT_EQ(out.vertices, mesh.vertices);
  EXPECT_EQ(out.faces, mesh.faces);
  for (const Vec3& c : out.colors) EXPECT_LE((c - hf.color).norm(), 1e-12);
  EXPECT_THROW(refine_textured_mesh(mesh, hf.field, nullptr, 0, kRes), ContractError);
}

TEST(RefineTexturedMesh, RefinerChangesOnlyColors) {
  const HeightField hf;
  Rng rng(8);
  const auto g_r = make_refiner(RunConfig::tiny().model, rng);
  TexturedMesh mesh;
  mesh.vertices = {{0, 0, dome(0, 0)}, {0.5, 0, dome(0.5, 0)}, {0, 0.5, dome(0, 0.5)}};
  mesh.faces = {{0, 1, 2}};
  const auto out = refine_textured_mesh(mesh, hf.field, &g_r, 3, kRes);
  EXPECT_EQ(out.vertices, mesh.vertices);
  EXPECT_EQ(out.faces, mesh.faces);
  ASSERT_EQ(out.colors.size(), 3u);
  for (const Vec3& c : out.colors)
    for (int ch = 0; ch < 3; ++ch) {
      EXPECT_GE(c[ch], 0.0);
      EXPECT_LE(c[ch], 1.0);
    }
}

TEST(RefineImage, DeterministicAndInUnitRange) {
  Rng rng(9);
  const auto g_r = make_refiner(RunConfig::tiny().model, rng);
  const Tensor img = random_tensor({3, 16, 16}, rng, -0.5, 1.5);
  const Tensor a = refine_image(g_r, img), b = refine_image(g_r, img);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.shape, img.shape);
  for (double v : a.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(refine_image(g_r, Tensor({1, 16, 16})), ContractError);
}

TEST(RefineStage, TeacherFrozenAndHeldOutLossDrops) {
  const std::uint64_t before = toy_prior().recon.checksum();
  const auto& r = trained();
  EXPECT_EQ(toy_prior().recon.checksum(), before);
  EXPECT_LE(r.final, 0.7 * r.initial);
  EXPECT_GT(r.identity, 0.0);
}

TEST(RefineStage, SameSeedSameWeights) {
  const auto again = train_refine_stage(toy_prior().recon, hgen::testing::small_corpus(), stage_config(40));
  EXPECT_EQ(trained().refiner.checksum(), again.refiner.checksum());
  EXPECT_EQ(trained().final, again.final);
}

TEST(RefineStage, LogsAndCheckpointsRefiner) {
  LossLog log;
  std::vector<std::string> names;
  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint_every = 2;
  hooks.checkpoint = [&](int, const std::string&, const NamedModules& mods) {
    for (const auto& [n, _] : mods) names.push_back(n);
    return fs::path();
  };
  train_refine_stage(toy_prior().recon, hgen::testing::small_corpus(), stage_config(2), hooks);
  EXPECT_EQ(names, (std::vector<std::string>{"refiner"}));
  EXPECT_TRUE(std::isfinite(log.mean("loss", 1, 2)));
  EXPECT_TRUE(std::isfinite(log.mean("val_identity", 0, 0)));
}
