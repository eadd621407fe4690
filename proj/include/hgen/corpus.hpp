#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "hgen/camera.hpp"
#include "hgen/io.hpp"
#include "hgen/mesh.hpp"

// Procedural "capsule humans": analytic signed-distance and color fields
// plus orthographic renders of them. Stands in for scanned training data.
namespace hgen::corpus {

enum class Region { kSkin = 0, kHair = 1, kShirt = 2, kPants = 3, kShoes = 4 };

struct BodyParams {
  double height = 1.7;                     ///< scene units, [1.4, 2.0]
  std::array<double, 8> limb_lengths{};    ///< L/R upper arm, L/R lower arm, L/R upper leg, L/R lower leg
  std::array<double, 6> limb_radii{};      ///< head, upper arm, lower arm, upper leg, lower leg, shoe
  std::array<double, 3> torso_dims{};      ///< radius, spine length, shoulder half-width
  std::array<double, 10> pose_angles{};    ///< shoulder abd L/R, elbow L/R, hip abd L/R, knee L/R, shoulder flex L/R
  std::array<double, 4> garment_offsets{};  ///< shirt, sleeve, trouser (upper), trouser (lower)
  std::array<Vec3, 5> region_colors{};     ///< indexed by Region
  std::uint64_t seed = 0;

  Json to_json() const;
};

BodyParams sample_body_params(std::uint64_t seed);

enum class Part { kHead, kTorso, kUpperArmL, kUpperArmR, kLowerArmL, kLowerArmR, kUpperLegL, kUpperLegR,
                  kLowerLegL, kLowerLegR, kShoeL, kShoeR };

struct Capsule {
  Vec3 a, b;
  double radius = 0.0;
  Part part = Part::kTorso;
  Region region = Region::kSkin;

  double distance(const Vec3& p) const;
};

/// Normalized body: capsules in canonical coordinates, unioned by a
/// polynomial smooth minimum.
class Body {
 public:
  static constexpr double kBlendRadius = 0.02;

  explicit Body(const BodyParams& params);

  double sdf(const Vec3& p) const;
  Vec3 color(const Vec3& p) const;
  Region region(const Vec3& p) const;
  const std::vector<Capsule>& parts() const { return parts_; }
  /// Axis-aligned bounds of the capsules (before blending).
  std::pair<Vec3, Vec3> bounds() const;
  const BodyParams& params() const { return params_; }

 private:
  BodyParams params_;
  std::vector<Capsule> parts_;
  Vec3 head_top_;
  double head_radius_ = 0.0;
};

double eval_body_sdf(const Vec3& p, const BodyParams& params);
Vec3 eval_body_color(const Vec3& p, const BodyParams& params);

/// Row-major H*W(*3) images.
struct CorpusSample {
  BodyParams params;
  int resolution = 0;
  std::vector<double> rgb;
  std::vector<double> depth;  ///< camera-frame depth, background = kBackgroundDepth
  std::vector<double> normal;  ///< camera frame, background (0,0,1)
  std::vector<std::uint8_t> mask;
  Camera view;

  std::size_t foreground_pixels() const;
};

inline constexpr double kBackgroundDepth = 1.0;
inline constexpr int kMaxMarchSteps = 256;

CorpusSample render_orthographic(const BodyParams& params, const Camera& camera, int resolution);
/// Sphere-traces an arbitrary field the same way as the corpus renderer.
CorpusSample render_field(const SdfFunction& sdf, const ColorFunction& color, const Camera& camera,
                          int resolution);

/// Number of evaluation samples for a corpus of size n: the last
/// ceil(5% of n) seeds, keeping at least one training sample.
int eval_count(int n);

struct CorpusEntry {
  int index = 0;
  std::uint64_t seed = 0;
  bool eval = false;
  std::string dir;
};

struct CorpusManifest {
  int resolution = 0;
  std::uint64_t seed = 0;
  std::vector<CorpusEntry> entries;
  fs::path root;

  std::vector<CorpusEntry> split(bool eval) const;
};

std::uint64_t sample_seed(std::uint64_t corpus_seed, int index);

/// Writes n frontal samples and manifest.json under out_dir.
CorpusManifest generate_corpus(int n, std::uint64_t seed, const fs::path& out_dir, int resolution = 128,
                               const std::string& config_hash = "");
CorpusManifest load_corpus_manifest(const fs::path& dir);
CorpusSample load_corpus_sample(const CorpusManifest& manifest, const CorpusEntry& entry);

}  // namespace hgen::corpus
