#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hgen/refine.hpp"
#include "hgen/shape.hpp"
#include "hgen/texture.hpp"

// Downstream uses of a trained student: sampling, re-texturing, latent
// interpolation and inversion against teacher features.
namespace hgen::app {

/// Borrowed pointers to the trained modules. `refiner` may be null.
struct GeneratorState {
  const shape::ShapeGenerator* shape = nullptr;
  const texture::TextureGenerator* texture = nullptr;
  const FieldDecoder* f_s = nullptr;
  const FieldDecoder* f_t = nullptr;
  const refine::RefinerNet* refiner = nullptr;
  int image_size = 0;
  int refine_views = 8;

  int latent_dim() const;
  /// Frontal camera the feature maps are aligned with.
  Camera camera() const;
  /// Throws ContractError when a required module is missing.
  void validate(bool need_refiner = false) const;
};

struct Latents {
  std::vector<double> z_s, z_t;
};
Latents sample_latents(int latent_dim, Rng& rng);

struct Generated {
  TexturedMesh mesh;  ///< empty when the field has no zero crossing
  shape::ShapeMaps shape;
  texture::TextureMaps texture;
  bool empty() const { return mesh.empty(); }
  refine::TexturedField field(const GeneratorState& state) const;
};

/// Shape forward, marching cubes, per-vertex field colors, and the
/// multi-view refinement repaint when `refine` is set. An empty mesh is
/// returned as such rather than thrown.
Generated generate(const GeneratorState& state, const Latents& z, int mesh_resolution, bool refine = false);

/// One mesh per texture code over the shared geometry of `z_s`.
std::vector<Generated> retexture(const GeneratorState& state, std::span<const double> z_s,
                                 const std::vector<std::vector<double>>& z_t_list, int mesh_resolution,
                                 bool refine = false);

/// z(t) = (1-t) z_a + t z_b for t = k/(steps-1) on both codes.
std::vector<Latents> interpolate_latents(const Latents& a, const Latents& b, int steps);
std::vector<Generated> interpolate(const GeneratorState& state, const Latents& a, const Latents& b, int steps,
                                   int mesh_resolution, bool refine = false);

struct RestartReport {
  int index = 0;
  bool ok = false;
  double initial = 0;
  double final = 0;
  std::string error;
};

struct InversionResult {
  Latents z;
  double loss = 0;  ///< objective at the returned codes
  int chosen = -1;
  std::vector<RestartReport> restarts;
  Generated generated;
  Json report() const;
};

/// Field-feature objective: mean|F_sv(z_s) - F_sv*| + mean|F_tv(z_t) - F_tv*|.
ag::Var inversion_objective(const GeneratorState& state, const ag::Var& z_s, const ag::Var& z_t,
                            const Tensor& f_sv_target, const Tensor& f_tv_target);

/// Adam on (z_s, z_t) with cosine-decayed learning rate over
/// `config.restarts` independent starts; the lowest final objective wins.
/// A restart whose objective goes non-finite is abandoned; if all are,
/// throws std::runtime_error listing each restart's failure.
InversionResult invert_features(const GeneratorState& state, const FeatureMap& f_sv_target,
                                const FeatureMap& f_tv_target, const InvertConfig& config, std::uint64_t seed,
                                int mesh_resolution);

/// Targets are the teacher's reconstruction of `reference` ([3,H,W]).
InversionResult invert(const GeneratorState& state, const prior::Reconstructor& teacher, const Tensor& reference,
                       const InvertConfig& config, std::uint64_t seed, int mesh_resolution);

}  // namespace hgen::app
