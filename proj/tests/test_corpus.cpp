#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>

#include "hgen/corpus.hpp"

using namespace hgen;
using namespace hgen::corpus;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("hgen_corpus_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Unsigned distance from p to triangle (a,b,c), by projecting onto the plane
// and falling back to the three edges.
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  auto seg = [&p](const Vec3& u, const Vec3& v) {
    const Vec3 d = v - u;
    const double t = std::clamp((p - u).dot(d) / std::max(d.squaredNorm(), 1e-300), 0.0, 1.0);
    return (p - (u + t * d)).norm();
  };
  const Vec3 n = (b - a).cross(c - a);
  const double n2 = n.squaredNorm();
  if (n2 > 1e-300) {
    const Vec3 q = p - n * (p - a).dot(n) / n2;
    const double w0 = (b - q).cross(c - q).dot(n), w1 = (c - q).cross(a - q).dot(n), w2 = (a - q).cross(b - q).dot(n);
    if (w0 >= 0 && w1 >= 0 && w2 >= 0) return (p - q).norm();
  }
  return std::min({seg(a, b), seg(b, c), seg(c, a)});
}

}  // namespace

TEST(BodyParams, Deterministic) {
  const auto a = sample_body_params(7), b = sample_body_params(7);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(BodyParams, PositiveAndInsideBox) {
  for (std::uint64_t s = 0; s < 300; ++s) {
    const auto p = sample_body_params(s);
    for (double v : p.limb_lengths) ASSERT_GT(v, 0.0);
    for (double v : p.limb_radii) ASSERT_GT(v, 0.0);
    for (double v : p.torso_dims) ASSERT_GT(v, 0.0);
    for (double v : p.garment_offsets) ASSERT_GE(v, 0.0);
    for (double v : p.pose_angles) ASSERT_LE(std::abs(v), 0.35);
    ASSERT_GE(p.height, 1.4);
    ASSERT_LE(p.height, 2.0);
    const auto [lo, hi] = Body(p).bounds();
    // The smooth union can bulge by at most a quarter of the blend radius.
    const double bulge = Body::kBlendRadius / 4;
    ASSERT_GE(lo.minCoeff() - bulge, -0.95) << "seed " << s;
    ASSERT_LE(hi.maxCoeff() + bulge, 0.95) << "seed " << s;
  }
}

TEST(BodyParams, ColorTuplesAreDistinct) {
  std::set<std::vector<double>> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    std::vector<double> key;
    for (const auto& c : sample_body_params(s).region_colors) key.insert(key.end(), c.data(), c.data() + 3);
    seen.insert(key);
  }
  EXPECT_GE(seen.size(), 990u);
}

TEST(BodySdf, FarAndInterior) {
  const auto p = sample_body_params(1);
  const Body body(p);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    const double v = eval_body_sdf(10.0 * d.normalized(), p);
    EXPECT_GE(v, 8.0);
    EXPECT_LE(v, 10.0);
  }
  for (const auto& c : body.parts())
    if (c.part == Part::kTorso) EXPECT_LT(body.sdf(0.5 * (c.a + c.b)), 0.0);
}

TEST(BodySdf, MatchesHighResolutionMeshDistance) {
  const Body body(sample_body_params(4));
  const auto mesh = extract_mesh([&body](const Vec3& p) { return body.sdf(p); }, 256);
  ASSERT_FALSE(mesh.empty());
  const double tol = 2.0 * (2.0 / 255) * std::sqrt(3.0);
  Rng rng(9);
  for (int i = 0; i < 24; ++i) {
    // Half the probes near the surface, where the distance is most informative.
    Vec3 p;
    if (i % 2 == 0) {
      const auto& v = mesh.vertices[rng.below(mesh.vertices.size())];
      p = v + Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.05;
    } else {
      p = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    }
    double best = 1e30;
    for (const auto& f : mesh.faces)
      best = std::min(best, point_triangle_distance(p, mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]));
    EXPECT_NEAR(std::abs(body.sdf(p)), best, tol) << "probe " << i;
  }
}

TEST(BodyColor, SurfaceColorsAreRegionColors) {
  const auto params = sample_body_params(12);
  const Body body(params);
  const auto mesh = extract_mesh([&body](const Vec3& p) { return body.sdf(p); }, 96);
  Rng rng(1);
  const auto cloud = sample_surface(mesh, 10000, rng);
  for (const auto& p : cloud.points) {
    const Vec3 c = body.color(p);
    bool member = false;
    for (const auto& rc : params.region_colors) member |= (rc == c);
    ASSERT_TRUE(member);
  }
}

TEST(BodyColor, HeadAndShirtRegions) {
  const auto params = sample_body_params(3);
  const Body body(params);
  for (const auto& c : body.parts()) {
    const Vec3 surf = 0.5 * (c.a + c.b) + Vec3(0, 0, -c.radius);
    if (c.part == Part::kHead) {
      const Region r = body.region(surf);
      EXPECT_TRUE(r == Region::kSkin || r == Region::kHair);
      const Vec3 top = c.b + Vec3(0, c.radius, 0);
      EXPECT_EQ(body.region(top), Region::kHair);
    }
    if (c.part == Part::kTorso) {
      ASSERT_GT(params.garment_offsets[0], 0.0);
      EXPECT_EQ(body.color(0.5 * (c.a + c.b) + Vec3(0, 0, -c.radius)), params.region_colors[2]);
    }
  }
}

class RenderTest : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(RenderTest, MaskDepthNormalConsistency) {
  const int R = 128;
  const auto params = sample_body_params(GetParam());
  const Body body(params);
  const Camera cam = Camera::frontal(R);
  const auto s = render_orthographic(params, cam, R);
  const double frac = static_cast<double>(s.foreground_pixels()) / (R * R);
  EXPECT_GT(frac, 0.05);
  EXPECT_LT(frac, 0.6);

  int agree = 0, total = 0;
  for (int row = 0; row < R; ++row)
    for (int col = 0; col < R; ++col) {
      const std::size_t i = static_cast<std::size_t>(row) * R + col;
      ASSERT_EQ(s.mask[i] != 0, s.depth[i] < kBackgroundDepth);
      if (!s.mask[i]) continue;
      const Vec3 n(s.normal[i * 3], s.normal[i * 3 + 1], s.normal[i * 3 + 2]);
      ASSERT_NEAR(n.norm(), 1.0, 1e-4);
      const Vec3 p = backproject(pixel_center(row, col), s.depth[i], cam);
      ASSERT_LT(std::abs(body.sdf(p)), 2.0 / R);
      Vec3 g;
      const double h = 1e-4;
      for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Zero();
        e[a] = h;
        g[a] = body.sdf(p + e) - body.sdf(p - e);
      }
      const double cosang = (cam.rotation * g.normalized()).dot(n);
      agree += cosang > std::cos(5.0 * std::numbers::pi / 180);
      ++total;
      for (int a = 0; a < 3; ++a) ASSERT_EQ(s.rgb[i * 3 + a], body.color(p)[a]);
    }
  EXPECT_GE(agree, 0.99 * total);
}

INSTANTIATE_TEST_SUITE_P(Seeds, RenderTest, ::testing::Values(0, 17, 123));

TEST(Render, OffBodyCameraIsBackground) {
  auto s = render_field([](const Vec3& q) { return (q - Vec3(5, 5, 5)).norm() - 0.1; },
                        [](const Vec3&) { return Vec3(1, 0, 0); }, Camera::frontal(64), 64);
  EXPECT_EQ(s.foreground_pixels(), 0u);
  for (double v : s.depth) ASSERT_EQ(v, kBackgroundDepth);
  for (double v : s.rgb) ASSERT_EQ(v, 1.0);
}

TEST(Render, OrbitViewsSeeTheBody) {
  const auto params = sample_body_params(8);
  for (int v = 0; v < 8; ++v) {
    const auto s = render_orthographic(params, Camera::orbit(64, v * std::numbers::pi / 4), 64);
    EXPECT_GT(s.foreground_pixels(), 64u * 64u / 50);
  }
}

TEST(Split, Rule) {
  EXPECT_EQ(eval_count(2000), 100);
  EXPECT_EQ(eval_count(1), 0);
  EXPECT_EQ(eval_count(2), 1);
  EXPECT_EQ(eval_count(10), 1);
  EXPECT_EQ(eval_count(21), 2);
}

TEST(GenerateCorpus, ByteIdenticalReruns) {
  const auto a = scratch("a"), b = scratch("b");
  generate_corpus(10, 3, a, 64);
  generate_corpus(10, 3, b, 64);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
  }
  const auto m = load_corpus_manifest(a);
  EXPECT_EQ(m.split(false).size(), 9u);
  ASSERT_EQ(m.split(true).size(), 1u);
  EXPECT_EQ(m.split(true)[0].index, 9);
  const auto s = load_corpus_sample(m, m.entries[4]);
  const auto direct = render_orthographic(sample_body_params(m.entries[4].seed), Camera::frontal(64), 64);
  ASSERT_EQ(s.mask, direct.mask);
  for (std::size_t i = 0; i < s.depth.size(); ++i) EXPECT_EQ(s.depth[i], static_cast<float>(direct.depth[i]));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(GenerateCorpus, SingleSampleHasNoEvalSplit) {
  const auto d = scratch("one");
  const auto m = generate_corpus(1, 0, d, 64);
  EXPECT_EQ(m.split(false).size(), 1u);
  EXPECT_TRUE(m.split(true).empty());
  const auto j = read_json(d / "manifest.json");
  EXPECT_EQ(j["split"]["train"], 1);
  EXPECT_EQ(j["split"]["eval"], 0);
  fs::remove_all(d);
}

TEST(GenerateCorpus, SplitSeedsDisjoint) {
  std::set<std::uint64_t> train, eval;
  const int n = 2000, n_eval = eval_count(n);
  for (int i = 0; i < n; ++i) (i >= n - n_eval ? eval : train).insert(sample_seed(1, i));
  EXPECT_EQ(train.size(), 1900u);
  EXPECT_EQ(eval.size(), 100u);
  for (auto s : eval) EXPECT_FALSE(train.count(s));
}

TEST(GenerateCorpus, UnwritableDirectoryNamesPath) {
  const fs::path blocker = scratch("blocker");
  { std::ofstream(blocker) << "x"; }
  try {
    generate_corpus(1, 0, blocker / "sub", 64);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find(blocker.string()), std::string::npos) << e.what();
  }
  fs::remove(blocker);
}
