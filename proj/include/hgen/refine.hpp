#pragma once

#include <functional>
#include <span>

#include "hgen/config.hpp"
#include "hgen/corpus.hpp"
#include "hgen/fields.hpp"
#include "hgen/prior.hpp"
#include "hgen/training.hpp"

// Appearance refinement: field renders are sharpened by an image-to-image
// network and painted back onto mesh vertices from several views.
namespace hgen::refine {

/// Fixed feature maps plus the decoders that turn them into a textured
/// field. The maps are aligned with `feature_camera` (the frontal image
/// camera), whatever view the field is rendered from.
struct TexturedField {
  FeatureMap f_sv, f_tv;
  const FieldDecoder* f_s = nullptr;
  const FieldDecoder* f_t = nullptr;
  Camera feature_camera;

  double sdf(const Vec3& p) const;
  SdfBatchFunction sdf_batch() const;
  std::vector<Vec3> colors(std::span<const Vec3> points) const;
};

struct FieldImage {
  int resolution = 0;
  std::vector<double> rgb;    ///< row-major HWC, white background
  std::vector<double> depth;  ///< camera-frame depth, 1 on background
  std::vector<std::uint8_t> mask;
  Camera view;  ///< at `resolution`

  /// [3,H,W] network layout of `rgb`.
  Tensor image() const;
};

/// Marches all pixel rays together in fixed steps to bracket the first
/// outside-to-inside crossing, then bisects each bracket.
FieldImage render_field_image(const TexturedField& field, const Camera& view, int resolution);

using RefinerNet = nn::UNet;
RefinerNet make_refiner(const ModelConfig& model, Rng& rng);
/// [3,H,W] -> [3,H,W] in [0,1].
Tensor refine_image(const RefinerNet& g_r, const Tensor& image);

/// Multi-level image features for the perceptual term.
using PerceptualFn = std::function<std::vector<ag::Var>(const ag::Var&)>;
/// The frozen teacher's encoder taps.
PerceptualFn perceptual_extractor(const prior::Reconstructor& teacher);

/// lambda_r * mean|I_r - I_gt| + lambda_p * sum_l mean (phi_l(I_r) - phi_l(I_gt))^2.
ag::Var refine_loss(const ag::Var& refined, const Tensor& gt, const PerceptualFn& phi, double lambda_r,
                    double lambda_p);

/// Field render of a corpus sample's teacher fields paired with the true
/// render from the same view.
struct RefinePair {
  Tensor input;   ///< [3,H,W]
  Tensor target;  ///< [3,H,W]
};
std::vector<RefinePair> make_refine_pairs(const prior::Reconstructor& teacher, const corpus::CorpusManifest& corpus,
                                          std::span<const corpus::CorpusEntry> entries, int views);

struct RefineStageResult {
  RefinerNet refiner;
  double initial = 0;   ///< held-out loss of the untrained refiner
  double final = 0;     ///< held-out loss after training
  double identity = 0;  ///< held-out loss of the unrefined field renders
};

/// Trains only the refiner; the teacher supplies both the fields and the
/// perceptual features and is never updated.
RefineStageResult train_refine_stage(const prior::Reconstructor& teacher, const corpus::CorpusManifest& corpus,
                                     const RunConfig& config, const TrainHooks& hooks = {});
double evaluate_refiner(const RefinerNet* g_r, std::span<const RefinePair> pairs, const PerceptualFn& phi,
                        const RefineStageConfig& c);

using ColoredCloud = PointCloud;

/// One point per foreground pixel: the pixel center at its depth, in
/// canonical coordinates. `view` may be at any resolution; it is resized to
/// the image.
ColoredCloud backproject(std::span<const double> depth, std::span<const double> rgb,
                         std::span<const std::uint8_t> mask, const Camera& view, int resolution);

/// Index of the nearest point for every query (Euclidean, ties to the
/// lowest index), accelerated with a uniform grid.
std::vector<int> nearest_neighbors(std::span<const Vec3> points, std::span<const Vec3> queries);

/// Gives each vertex the color of its nearest cloud point; throws
/// ContractError on an empty cloud.
TexturedMesh paint_vertices(TexturedMesh mesh, const ColoredCloud& cloud);

/// Renders `n_views` orbit views of the field, refines each (identity when
/// `g_r` is null), merges the back-projected clouds and repaints the mesh.
/// Geometry is returned unchanged.
TexturedMesh refine_textured_mesh(const TexturedMesh& mesh, const TexturedField& field, const RefinerNet* g_r,
                                  int n_views, int resolution);

}  // namespace hgen::refine
