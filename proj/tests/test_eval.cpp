#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "hgen/eval.hpp"

using namespace hgen;
using namespace hgen::eval;
using hgen::testing::small_corpus;
using hgen::testing::toy_prior;

namespace {

Cloud random_cloud(int n, Rng& rng, double scale = 1.0) {
  Cloud c;
  for (int i = 0; i < n; ++i) c.push_back({scale * rng.uniform(-1, 1), scale * rng.uniform(-1, 1), scale * rng.uniform(-1, 1)});
  return c;
}

double brute_chamfer(const Cloud& a, const Cloud& b) {
  auto directed = [](const Cloud& x, const Cloud& y) {
    double s = 0;
    for (const Vec3& p : x) {
      double best = INFINITY;
      for (const Vec3& q : y) best = std::min(best, (p - q).squaredNorm());
      s += best;
    }
    return s / x.size();
  };
  return directed(a, b) + directed(b, a);
}

double brute_coverage(const std::vector<Cloud>& g, const std::vector<Cloud>& r) {
  std::vector<int> matched(r.size(), 0);
  for (const auto& gi : g) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < r.size(); ++j)
      if (brute_chamfer(gi, r[j]) < brute_chamfer(gi, r[best])) best = j;
    matched[best] = 1;
  }
  double n = 0;
  for (int m : matched) n += m;
  return n / r.size();
}

double brute_mmd(const std::vector<Cloud>& g, const std::vector<Cloud>& r) {
  double s = 0;
  for (const auto& rj : r) {
    double best = INFINITY;
    for (const auto& gi : g) best = std::min(best, brute_chamfer(gi, rj));
    s += best;
  }
  return s / r.size();
}

GaussianStats stats(std::vector<double> mean, Eigen::MatrixXd cov) {
  return {Eigen::Map<Eigen::VectorXd>(mean.data(), mean.size()), std::move(cov)};
}

Eigen::MatrixXd random_psd(int d, Rng& rng) {
  Eigen::MatrixXd a(d, d + 2);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform(-1, 1);
  return a * a.transpose() / (d + 2);
}

std::vector<Cloud> body_clouds(int first, int count, int points) {
  std::vector<Cloud> out;
  Rng rng(11);
  for (int k = first; k < first + count; ++k) {
    const corpus::Body body(corpus::sample_body_params(corpus::sample_seed(9, k)));
    const auto mesh = extract_mesh([&body](const Vec3& p) { return body.sdf(p); }, 24);
    out.push_back(sample_surface(mesh, points, rng).points);
  }
  return out;
}

TexturedMesh triangle(double z, Vec3 color) {
  TexturedMesh m;
  m.vertices = {{-0.8, -0.8, z}, {0.8, -0.8, z}, {0.0, 0.8, z}};
  m.faces = {{0, 1, 2}};
  m.colors = {color, color, color};
  return m;
}

std::vector<Tensor> corpus_images(std::size_t first, std::size_t count) {
  std::vector<Tensor> out;
  const auto& c = small_corpus();
  for (std::size_t k = first; k < first + count; ++k) {
    const auto s = corpus::load_corpus_sample(c, c.entries[k]);
    out.push_back(hwc_to_chw(s.rgb, s.resolution, s.resolution, 3));
  }
  return out;
}

}  // namespace

TEST(Chamfer, Examples) {
  Rng rng(1);
  const Cloud a = random_cloud(30, rng);
  EXPECT_EQ(chamfer(a, a), 0.0);
  EXPECT_EQ(chamfer(Cloud{{0, 0, 0}}, Cloud{{1, 0, 0}}), 2.0);
  EXPECT_THROW(chamfer(Cloud{}, a), ContractError);
}

TEST(Chamfer, EqualsBruteForce) {
  Rng rng(2);
  for (int k = 0; k < 5; ++k) {
    const Cloud a = random_cloud(50, rng), b = random_cloud(50, rng, 0.5);
    EXPECT_EQ(chamfer(a, b), brute_chamfer(a, b));
    EXPECT_EQ(chamfer(a, b), chamfer(b, a));
  }
}

TEST(Coverage, Examples) {
  Rng rng(3);
  std::vector<Cloud> r;
  for (int k = 0; k < 6; ++k) r.push_back(random_cloud(20, rng));
  EXPECT_EQ(coverage(r, r), 1.0);
  EXPECT_EQ(coverage(std::vector<Cloud>{r[2]}, r), 1.0 / 6);
  EXPECT_THROW(coverage(std::vector<Cloud>{}, r), ContractError);
}

TEST(Mmd, Examples) {
  Rng rng(4);
  std::vector<Cloud> r;
  for (int k = 0; k < 5; ++k) r.push_back(random_cloud(20, rng));
  EXPECT_EQ(mmd(r, r), 0.0);
  const Cloud g = random_cloud(20, rng);
  double mean = 0;
  for (const auto& c : r) mean += chamfer(g, c) / r.size();
  EXPECT_NEAR(mmd(std::vector<Cloud>{g}, r), mean, 1e-15);
  EXPECT_THROW(mmd(r, std::vector<Cloud>{}), ContractError);
}

TEST(SetMetrics, EqualBruteForceOnSmallSets) {
  Rng rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<Cloud> g, r;
    for (int k = 0; k < 3 + trial * 2; ++k) g.push_back(random_cloud(10 + 10 * trial, rng));
    for (int k = 0; k < 10 - trial; ++k) r.push_back(random_cloud(100 - 20 * trial, rng, 0.8));
    EXPECT_EQ(coverage(g, r), brute_coverage(g, r));
    EXPECT_EQ(mmd(g, r), brute_mmd(g, r));
    const double cov = coverage(g, r);
    EXPECT_GE(cov, 0.0);
    EXPECT_LE(cov, 1.0);
    EXPECT_GT(mmd(g, r), 0.0);
  }
}

TEST(Frechet, AnalyticCases) {
  const auto i2 = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_NEAR(frechet(stats({1, 2}, i2), stats({1, 2}, i2)), 0.0, 1e-6);
  EXPECT_NEAR(frechet(stats({0, 0}, i2), stats({3, 4}, i2)), 25.0, 1e-6);
  EXPECT_NEAR(frechet(stats({0, 0}, 4 * i2), stats({0, 0}, i2)), 2.0, 1e-6);
}

TEST(Frechet, SymmetricAndNonNegative) {
  Rng rng(6);
  for (int k = 0; k < 10; ++k) {
    const int d = 2 + k;
    std::vector<double> ma(d), mb(d);
    for (auto& v : ma) v = rng.normal();
    for (auto& v : mb) v = rng.normal();
    const auto a = stats(ma, random_psd(d, rng)), b = stats(mb, random_psd(d, rng));
    EXPECT_NEAR(frechet(a, b), frechet(b, a), 1e-8);
    EXPECT_GE(frechet(a, b), 0.0);
    EXPECT_NEAR(frechet(a, a), 0.0, 1e-6);
  }
}

TEST(Frechet, RejectsBadInputs) {
  const auto i2 = Eigen::MatrixXd::Identity(2, 2), i3 = Eigen::MatrixXd::Identity(3, 3);
  EXPECT_THROW(frechet(stats({0, 0}, i2), stats({0, 0, 0}, i3)), ContractError);
  Eigen::MatrixXd neg = i2;
  neg(1, 1) = -0.5;
  EXPECT_THROW(frechet(stats({0, 0}, neg), stats({0, 0}, i2)), std::domain_error);
  Eigen::MatrixXd tiny_neg = i2;
  tiny_neg(1, 1) = -1e-9;
  EXPECT_NO_THROW(frechet(stats({0, 0}, tiny_neg), stats({0, 0}, i2)));
}

TEST(FitGaussian, MatchesDefinitionAndNeedsEnoughSamples) {
  Eigen::MatrixXd x(4, 2);
  x << 1, 2, 3, 4, 5, 0, -1, 2;
  const auto s = fit_gaussian(x);
  EXPECT_NEAR(s.mean[0], 2.0, 1e-15);
  EXPECT_NEAR(s.mean[1], 2.0, 1e-15);
  // var_x = (1+1+9+9)/3, cov_xy = (-1*0 + 1*2 + 3*-2 + -3*0)/3
  EXPECT_NEAR(s.covariance(0, 0), 20.0 / 3, 1e-12);
  EXPECT_NEAR(s.covariance(0, 1), -4.0 / 3, 1e-12);
  EXPECT_EQ(s.covariance(0, 1), s.covariance(1, 0));
  EXPECT_THROW(fit_gaussian(Eigen::MatrixXd(2, 2)), ContractError);
}

TEST(Descriptor, LayoutAndEmptyCloud) {
  const Cloud c{{1, 0, 0}, {-1, 0, 0}};
  const auto d = cloud_descriptor(c);
  ASSERT_EQ(d.size(), kDescriptorDim);
  EXPECT_EQ(d.head(3), Eigen::Vector3d::Zero());
  EXPECT_EQ(d[3], 1.0);  // std x
  EXPECT_EQ(d[6 + 10], 1.0);  // both points at radius 1 -> bin floor(1/1.5*16) = 10
  EXPECT_EQ(d[kDescriptorDim - 1], 0.0);  // degenerate box
  const auto e = cloud_descriptor(Cloud{});
  EXPECT_EQ(e, cloud_descriptor(Cloud{{0, 0, 0}}));
}

TEST(Fpd, IdenticalTranslatedAndOrdering) {
  const auto a = body_clouds(0, 40, 256), b = body_clouds(40, 40, 256);
  EXPECT_NEAR(fpd(a, a), 0.0, 1e-6);
  auto shifted = a;
  for (auto& c : shifted)
    for (auto& p : c) p.x() += 0.5;
  EXPECT_GT(fpd(shifted, a), 0.1);
  Rng rng(7);
  std::vector<Cloud> noise;
  for (int k = 0; k < 40; ++k) noise.push_back(random_cloud(256, rng));
  EXPECT_LT(fpd(a, b), fpd(a, noise));
  EXPECT_THROW(fpd(std::vector<Cloud>(a.begin(), a.begin() + 10), b), ContractError);
}

TEST(Fid, IdenticalOrderingAndDimension) {
  const auto& teacher = toy_prior().recon;
  const auto a = corpus_images(0, 24), b = corpus_images(24, 24);
  EXPECT_EQ(image_features(teacher, a).cols(), teacher.pooled_width());
  EXPECT_EQ(image_features(teacher, a).rows(), 24);
  EXPECT_NEAR(fid(teacher, a, a), 0.0, 1e-6);
  Rng rng(8);
  std::vector<Tensor> noise;
  for (int k = 0; k < 24; ++k) noise.push_back(hgen::testing::random_tensor({3, 32, 32}, rng, 0, 1));
  EXPECT_LT(fid(teacher, a, b), fid(teacher, a, noise));
}

TEST(Rasterize, EmptyMeshIsWhite) {
  const Tensor img = rasterize(TexturedMesh{}, Camera::frontal(16), 16);
  EXPECT_EQ(img.shape, (std::vector<int>{3, 16, 16}));
  for (double v : img.data) EXPECT_EQ(v, 1.0);
}

TEST(Rasterize, NearerTriangleWinsAndColorsInterpolate) {
  TexturedMesh m = triangle(0.5, {0, 0, 1});
  const TexturedMesh front = triangle(-0.5, {1, 0, 0});
  for (const auto& v : front.vertices) m.vertices.push_back(v);
  m.faces.push_back({3, 4, 5});
  for (const auto& c : front.colors) m.colors.push_back(c);
  const int r = 16;
  const auto img = rasterize(m, Camera::frontal(r), r);
  const int center = (r / 2) * r + r / 2;
  EXPECT_EQ(img.data[center], 1.0);
  EXPECT_EQ(img.data[r * r + center], 0.0);
  EXPECT_EQ(img.data[2 * r * r + center], 0.0);
  EXPECT_EQ(img.data[0], 1.0);  // corner stays background
  EXPECT_EQ(img.data[r * r], 1.0);
  // Order of faces does not matter.
  std::swap(m.faces[0], m.faces[1]);
  EXPECT_EQ(rasterize(m, Camera::frontal(r), r).data, img.data);
}

TEST(Rasterize, SphereSilhouetteMatchesDisk) {
  const double radius = 0.6;
  const auto mesh = paint_mesh(extract_mesh([&](const Vec3& p) { return p.norm() - radius; }, 48),
                               [](const Vec3&) { return Vec3(0.2, 0.4, 0.6); });
  const int r = 32;
  const Camera cam = Camera::orbit(r, 0.7);
  const auto img = rasterize(mesh, cam, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) {
      const Vec3 p = hgen::backproject(pixel_center(i, j), 0.0, cam);
      const double d = p.norm();  // p is on the plane through the origin orthogonal to the view
      const bool painted = img.data[i * r + j] != 1.0;
      if (d < radius - 2.0 / r) EXPECT_TRUE(painted) << i << "," << j;
      if (d > radius + 2.0 / r) EXPECT_FALSE(painted) << i << "," << j;
    }
}

TEST(Fid3d, DeterministicAndFiniteForViewCounts) {
  const auto& teacher = toy_prior().recon;
  std::vector<TexturedMesh> meshes;
  std::vector<corpus::CorpusSample> samples;
  for (int k = 0; k < 20; ++k) {
    const auto s = corpus::load_corpus_sample(small_corpus(), small_corpus().entries[k]);
    const corpus::Body body(s.params);
    meshes.push_back(paint_mesh(extract_mesh([&body](const Vec3& p) { return body.sdf(p); }, 24),
                                [&body](const Vec3& p) { return body.color(p); }));
    samples.push_back(s);
  }
  for (int views : {1, 4}) {
    const auto ref = reference_renders(samples, 32, views);
    EXPECT_EQ(ref.size(), samples.size() * views);
    const double a = fid3d(teacher, meshes, ref, views), b = fid3d(teacher, meshes, ref, views);
    EXPECT_EQ(a, b);
    EXPECT_TRUE(std::isfinite(a));
  }
}

TEST(MetricReport, JsonRoundTripAndCsv) {
  MetricReport r{0.25, 0.5, 1.5, 2.5, 3.5, 40, 35, 1, "abc"};
  const auto back = MetricReport::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_EQ(r.csv_row(), "abc,40,35,1,0.25,0.5,1.5,2.5,3.5");
  const fs::path dir = hgen::testing::scratch("metric_report");
  write_report(dir, r);
  EXPECT_EQ(read_json(dir / "metrics.json"), r.to_json());
  EXPECT_EQ(read_text(dir / "metrics.csv"), MetricReport::csv_header() + "\n" + r.csv_row() + "\n");
}
