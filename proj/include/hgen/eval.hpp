#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hgen/apps.hpp"
#include "hgen/corpus.hpp"

// Set-level generation metrics: Chamfer coverage and minimum matching,
// Frechet distances over point-cloud descriptors and image features, and
// the 3D variant over rasterized textured meshes.
namespace hgen::eval {

using Cloud = std::vector<Vec3>;

/// Mean squared nearest distance in both directions, summed.
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b);
/// d[g][r] = chamfer(G[g], R[r]).
std::vector<std::vector<double>> chamfer_matrix(std::span<const Cloud> g, std::span<const Cloud> r);

/// Fraction of references that are the Chamfer-nearest reference of some
/// generated cloud (ties to the lowest reference index).
double coverage(std::span<const Cloud> g, std::span<const Cloud> r);
double coverage(const std::vector<std::vector<double>>& d);
/// Mean over references of the distance to the closest generated cloud.
double mmd(std::span<const Cloud> g, std::span<const Cloud> r);
double mmd(const std::vector<std::vector<double>>& d);

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  int dim() const { return static_cast<int>(mean.size()); }
};
/// Rows are samples; unbiased covariance. Needs more rows than columns.
GaussianStats fit_gaussian(const Eigen::MatrixXd& samples);
/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), clamped at 0.
/// Throws ContractError on a dimension mismatch and std::domain_error when
/// a covariance has an eigenvalue below -1e-6.
double frechet(const GaussianStats& a, const GaussianStats& b);

inline constexpr int kDescriptorDim = 33;
inline constexpr int kRadialBins = 16;
inline constexpr double kRadialMax = 1.5;
/// centroid (3), axis standard deviations (3), radial histogram about the
/// centroid (16), central moments xx yy zz xy xz yz xxx yyy zzz and mean
/// radius (10), bounding-box surface area (1). An empty cloud is treated
/// as a single point at the origin.
Eigen::VectorXd cloud_descriptor(std::span<const Vec3> cloud);
double fpd(std::span<const Cloud> g, std::span<const Cloud> r);

/// Teacher pooled features, one row per [3,H,W] image.
Eigen::MatrixXd image_features(const prior::Reconstructor& teacher, std::span<const Tensor> images);
double fid(const prior::Reconstructor& teacher, std::span<const Tensor> g, std::span<const Tensor> r);

/// Z-buffered orthographic rasterization with barycentric vertex colors
/// on a white background; returns [3,H,W].
Tensor rasterize(const TexturedMesh& mesh, const Camera& view, int resolution);
/// Azimuths 2 pi k / views.
std::vector<Camera> orbit_views(int resolution, int views);

/// Rasterizes every mesh from every view and compares against the
/// reference renders.
double fid3d(const prior::Reconstructor& teacher, std::span<const TexturedMesh> meshes, std::span<const Tensor> reference,
             int views);
/// Corpus renders of `entries` from the same orbit views.
std::vector<Tensor> reference_renders(std::span<const corpus::CorpusSample> samples, int resolution, int views);

struct MetricReport {
  double cov = 0, mmd = 0, fpd = 0, fid = 0, fid3d = 0;
  int generated = 0, reference = 0, empty_meshes = 0;
  std::string config_hash;

  Json to_json() const;
  static MetricReport from_json(const Json& j);
  static std::string csv_header();
  std::string csv_row() const;
  /// One human-readable table row.
  std::string table_row() const;
};

struct EvalInputs {
  app::GeneratorState state;
  const prior::Reconstructor* teacher = nullptr;
  const corpus::CorpusManifest* corpus = nullptr;
};

/// Samples `eval.samples` latent pairs from the eval seed, generates
/// (refined when a refiner is present) meshes and images, and scores them
/// against the corpus eval split. Empty meshes contribute an origin cloud.
MetricReport evaluate_model(const EvalInputs& in, const RunConfig& config);
void write_report(const fs::path& dir, const MetricReport& report);

}  // namespace hgen::eval
