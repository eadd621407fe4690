#pragma once

#include <span>
#include <string>
#include <vector>

#include "hgen/autograd.hpp"
#include "hgen/camera.hpp"
#include "hgen/mesh.hpp"
#include "hgen/nn.hpp"

// Pixel-aligned implicit fields: a 2D feature map is sampled at the image
// projection of a 3D point and an MLP maps (feature, depth) to a value.
namespace hgen {

enum class FeatureRole { kFs, kFt, kFsv, kFtv };

std::string role_name(FeatureRole role);

/// One C x H x W map aligned with the canonical box the same way the camera
/// aligns the image: pixel coordinates scale by H / image_size.
struct FeatureMap {
  Tensor data;  ///< [C,H,W]
  FeatureRole role = FeatureRole::kFsv;

  int channels() const { return data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
  void validate() const;

  /// Batch item `n` of a [N,C,H,W] tensor.
  static FeatureMap from_batch(const Tensor& batch, int n, FeatureRole role);
  /// [1,C,H,W] view for network code.
  Tensor as_batch() const;
};

/// Bilinear interpolation at feature-pixel coordinates (center of pixel
/// (i,j) at (j+0.5, i+0.5)), zero outside the map.
std::vector<double> sample_bilinear(const FeatureMap& f, const Vec2& x);

enum class FieldKind { kShape, kTexture };

/// MLP from (sampled features, camera depth) to a signed distance or an
/// RGB triple. Texture outputs pass through a sigmoid clamped to [0,1].
class FieldDecoder : public nn::Module {
 public:
  FieldDecoder() = default;
  FieldDecoder(int feature_channels, std::vector<int> hidden, FieldKind kind, Rng& rng);

  /// x [P, feature_channels + 1] -> [P, 1] or [P, 3].
  ag::Var forward(const ag::Var& x) const;
  void collect(nn::ParamRefs& out, const std::string& prefix) override;

  int input_dim() const { return mlp_.input_dim(); }
  int feature_channels() const { return mlp_.input_dim() - 1; }
  int output_dim() const { return mlp_.output_dim(); }
  FieldKind kind() const { return kind_; }
  nn::Mlp& mlp() { return mlp_; }

 private:
  nn::Mlp mlp_;
  FieldKind kind_ = FieldKind::kShape;
};

/// A 3D query point attached to one batch item of a feature batch.
struct PointQuery {
  int batch = 0;
  Vec3 p;
};

/// Differentiable decoding of many points: samples each map in `maps`
/// (each [N,C_i,H,W]) at the projections, concatenates the features in
/// order, appends depth and runs the decoder. `camera` is the image camera.
ag::Var decode_points(const FieldDecoder& decoder, std::span<const ag::Var> maps, const Camera& camera,
                      std::span<const PointQuery> points);

double query_sdf(const FeatureMap& f_sv, const FieldDecoder& f_s, const Camera& camera, const Vec3& p);
Vec3 query_color(const FeatureMap& f_tv, const FeatureMap& f_sv, const FieldDecoder& f_t, const Camera& camera,
                 const Vec3& p);

/// Batched field evaluators over fixed features, for grid sampling and
/// painting. The returned callables keep references to the arguments.
SdfBatchFunction sdf_field(const FeatureMap& f_sv, const FieldDecoder& f_s, const Camera& camera);
std::vector<Vec3> query_colors(const FeatureMap& f_tv, const FeatureMap& f_sv, const FieldDecoder& f_t,
                               const Camera& camera, std::span<const Vec3> points);

/// Samples the SDF of (f_sv, f_s) on a grid and runs marching cubes.
TexturedMesh extract_field_mesh(const FeatureMap& f_sv, const FieldDecoder& f_s, const Camera& camera,
                                int resolution);
/// Colors every vertex from (f_tv, f_sv, f_t).
TexturedMesh paint_field_mesh(TexturedMesh mesh, const FeatureMap& f_tv, const FeatureMap& f_sv,
                              const FieldDecoder& f_t, const Camera& camera);

struct TrainingPoints {
  std::vector<Vec3> points;
  std::vector<bool> near_surface;
  /// Set when the mask was empty and every point was drawn uniformly.
  bool uniform_fallback = false;
};

/// Half the points back-project random foreground pixels and jitter them
/// along the viewing axis by Normal(0, sigma); the other half are uniform in
/// the canonical box. `depth` and `mask` are row-major at camera.image_size.
TrainingPoints sample_training_points(std::span<const double> depth, std::span<const std::uint8_t> mask,
                                      const Camera& camera, int m_total, double sigma, Rng& rng);

}  // namespace hgen
