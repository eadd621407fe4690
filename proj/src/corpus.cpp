#include "hgen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hgen/rng.hpp"

namespace hgen::corpus {
namespace {

constexpr double kBaseArmAbduction = 0.40;
constexpr double kSceneToCanonical = 0.9;  // a 2.0-unit body spans 1.8 canonical units
constexpr double kMaxHalfExtent = 0.94;

double smooth_min(double a, double b, double k) {
  const double h = std::max(k - std::abs(a - b), 0.0) / k;
  return std::min(a, b) - h * h * k * 0.25;
}

Vec3 rotate_frontal(const Vec3& v, double angle) {
  // Rotation in the image plane (about +z).
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y(), v.z()};
}

Vec3 rotate_forward(const Vec3& v, double angle) {
  // Swing toward the viewer (about +x); the viewer sits on the -z side.
  const double c = std::cos(angle), s = std::sin(angle);
  return {v.x(), c * v.y() + s * v.z(), -s * v.y() + c * v.z()};
}

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

}  // namespace

Json BodyParams::to_json() const {
  Json colors = Json::array();
  for (const auto& c : region_colors) colors.push_back(vec_json(c));
  return {{"height", height},
          {"limb_lengths", limb_lengths},
          {"limb_radii", limb_radii},
          {"torso_dims", torso_dims},
          {"pose_angles", pose_angles},
          {"garment_offsets", garment_offsets},
          {"region_colors", colors},
          {"seed", seed}};
}

BodyParams sample_body_params(std::uint64_t seed) {
  Rng rng(seed);
  BodyParams p;
  p.seed = seed;
  p.height = rng.uniform(1.4, 2.0);
  const double h = p.height;
  const double build = rng.uniform(0.85, 1.2);
  const double arm = rng.uniform(0.92, 1.08), leg = rng.uniform(0.92, 1.08);
  for (int side = 0; side < 2; ++side) {
    p.limb_lengths[0 + side] = 0.170 * h * arm * rng.uniform(0.97, 1.03);
    p.limb_lengths[2 + side] = 0.165 * h * arm * rng.uniform(0.97, 1.03);
    p.limb_lengths[4 + side] = 0.235 * h * leg * rng.uniform(0.97, 1.03);
    p.limb_lengths[6 + side] = 0.225 * h * leg * rng.uniform(0.97, 1.03);
  }
  p.limb_radii = {0.060 * h * rng.uniform(0.9, 1.1), 0.024 * h * build, 0.019 * h * build,
                  0.037 * h * build, 0.027 * h * build, 0.032 * h * rng.uniform(0.9, 1.1)};
  p.torso_dims = {0.07 * h * build, 0.19 * h * rng.uniform(0.92, 1.08), 0.088 * h * build * rng.uniform(0.95, 1.05)};
  for (double& a : p.pose_angles) a = rng.uniform(-0.35, 0.35);
  p.garment_offsets = {rng.uniform(0.004, 0.02) * h, rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.003, 0.012) * h,
                       rng.uniform(0.004, 0.02) * h, rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.003, 0.012) * h};
  for (auto& c : p.region_colors) c = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
  return p;
}

double Capsule::distance(const Vec3& p) const {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm() - radius;
}

Body::Body(const BodyParams& params) : params_(params) {
  const auto& L = params.limb_lengths;
  const auto& R = params.limb_radii;
  const auto& T = params.torso_dims;
  const auto& A = params.pose_angles;
  const auto& G = params.garment_offsets;
  const double shoe_r = R[5];
  const double hip_y = shoe_r + std::max(L[4] + L[6], L[5] + L[7]);
  const double hip_w = 0.75 * T[0];
  const double neck_y = hip_y + T[1] + 0.6 * T[0];
  const double shoulder_y = neck_y - 0.6 * T[0];

  auto add = [this](Vec3 a, Vec3 b, double r, Part part, Region region) {
    parts_.push_back({a, b, r, part, region});
  };
  const Region shirt = G[0] > 0.0 ? Region::kShirt : Region::kSkin;
  add({0, hip_y + 0.3 * T[0], 0}, {0, neck_y - 0.3 * T[0], 0}, T[0] + G[0], Part::kTorso, shirt);
  head_radius_ = R[0];
  const Vec3 head_a(0, neck_y + 0.7 * T[0] + 0.8 * R[0], 0), head_b = head_a + Vec3(0, 0.5 * R[0], 0);
  head_top_ = head_b;
  add(head_a, head_b, R[0], Part::kHead, Region::kSkin);

  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? -1.0 : 1.0;  // left limb on -x
    // Arms: hang down, abducted outward, elbow bends further out, optional
    // forward swing.
    const Vec3 shoulder(sx * T[2], shoulder_y, 0);
    const double abd = kBaseArmAbduction + A[0 + side];
    Vec3 up_dir = rotate_frontal(Vec3(0, -1, 0), sx * abd);
    up_dir = rotate_forward(up_dir, A[8 + side]);
    const Vec3 elbow = shoulder + L[0 + side] * up_dir;
    Vec3 low_dir = rotate_frontal(Vec3(0, -1, 0), sx * (abd + 0.5 * A[2 + side]));
    low_dir = rotate_forward(low_dir, A[8 + side]);
    const Vec3 wrist = elbow + L[2 + side] * low_dir;
    add(shoulder, elbow, R[1] + G[1], side ? Part::kUpperArmR : Part::kUpperArmL,
        G[1] > 0.0 ? Region::kShirt : Region::kSkin);
    add(elbow, wrist, R[2], side ? Part::kLowerArmR : Part::kLowerArmL, Region::kSkin);

    // Legs: small abduction, the knee adds a little more.
    const Vec3 hip(sx * hip_w, hip_y, 0);
    const double hip_abd = 0.25 * A[4 + side];
    const Vec3 knee = hip + L[4 + side] * rotate_frontal(Vec3(0, -1, 0), sx * hip_abd);
    const Vec3 ankle = knee + L[6 + side] * rotate_frontal(Vec3(0, -1, 0), sx * (hip_abd + 0.15 * A[6 + side]));
    add(hip, knee, R[3] + G[2], side ? Part::kUpperLegR : Part::kUpperLegL,
        G[2] > 0.0 ? Region::kPants : Region::kSkin);
    add(knee, ankle, R[4] + G[3], side ? Part::kLowerLegR : Part::kLowerLegL,
        G[3] > 0.0 ? Region::kPants : Region::kSkin);
    const Vec3 toe = ankle + Vec3(0, 0, -0.6 * shoe_r);
    add(toe, toe, shoe_r, side ? Part::kShoeR : Part::kShoeL, Region::kShoes);
  }

  // Normalize: fixed scene-to-canonical scale (shrunk further only when a
  // wide pose would leave the box), centred on the bounding box.
  auto [lo, hi] = bounds();
  const Vec3 center = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo).maxCoeff();
  const double s = std::min(kSceneToCanonical, kMaxHalfExtent / half);
  for (auto& c : parts_) {
    c.a = (c.a - center) * s;
    c.b = (c.b - center) * s;
    c.radius *= s;
  }
  head_top_ = (head_top_ - center) * s;
  head_radius_ *= s;
}

std::pair<Vec3, Vec3> Body::bounds() const {
  Vec3 lo = Vec3::Constant(1e30), hi = Vec3::Constant(-1e30);
  for (const auto& c : parts_) {
    lo = lo.cwiseMin(c.a.cwiseMin(c.b) - Vec3::Constant(c.radius));
    hi = hi.cwiseMax(c.a.cwiseMax(c.b) + Vec3::Constant(c.radius));
  }
  return {lo, hi};
}

double Body::sdf(const Vec3& p) const {
  double d = parts_[0].distance(p);
  for (std::size_t i = 1; i < parts_.size(); ++i) d = smooth_min(d, parts_[i].distance(p), kBlendRadius);
  return d;
}

Region Body::region(const Vec3& p) const {
  std::size_t best = 0;
  double best_d = parts_[0].distance(p);
  for (std::size_t i = 1; i < parts_.size(); ++i) {
    const double d = parts_[i].distance(p);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  const Capsule& c = parts_[best];
  if (c.part == Part::kHead) {
    // Hair covers the crown and the back of the head (the side away from the viewer).
    const Vec3 rel = p - head_top_;
    return (rel.y() > -0.25 * head_radius_ || (rel.z() > 0.45 * head_radius_ && rel.y() > -0.9 * head_radius_))
               ? Region::kHair
               : Region::kSkin;
  }
  return c.region;
}

Vec3 Body::color(const Vec3& p) const { return params_.region_colors[static_cast<int>(region(p))]; }

double eval_body_sdf(const Vec3& p, const BodyParams& params) { return Body(params).sdf(p); }
Vec3 eval_body_color(const Vec3& p, const BodyParams& params) { return Body(params).color(p); }

std::size_t CorpusSample::foreground_pixels() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

CorpusSample render_field(const SdfFunction& sdf, const ColorFunction& color, const Camera& camera, int resolution) {
  const Camera cam = camera.resized(resolution);
  CorpusSample s;
  s.resolution = resolution;
  s.view = cam;
  const std::size_t n = static_cast<std::size_t>(resolution) * resolution;
  s.rgb.assign(n * 3, 1.0);
  s.depth.assign(n, kBackgroundDepth);
  s.normal.assign(n * 3, 0.0);
  s.mask.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) s.normal[i * 3 + 2] = 1.0;

  constexpr double kHitEps = 1e-5, kGradStep = 1e-3;
  for (int row = 0; row < resolution; ++row)
    for (int col = 0; col < resolution; ++col) {
      const Vec2 px = pixel_center(row, col);
      double t = -1.0;
      bool hit = false;
      for (int step = 0; step < kMaxMarchSteps && t <= 1.0; ++step) {
        const double d = sdf(backproject(px, t, cam));
        if (d < kHitEps) {
          hit = true;
          break;
        }
        t += d;
      }
      if (!hit) continue;
      const Vec3 p = backproject(px, t, cam);
      Vec3 g;
      for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Zero();
        e[a] = kGradStep;
        g[a] = (sdf(p + e) - sdf(p - e)) / (2 * kGradStep);
      }
      if (!(g.norm() > 0.0)) continue;
      const Vec3 n_cam = cam.rotation * g.normalized();
      const std::size_t i = static_cast<std::size_t>(row) * resolution + col;
      s.mask[i] = 1;
      s.depth[i] = t;
      const Vec3 c = color(p);
      for (int a = 0; a < 3; ++a) {
        s.rgb[i * 3 + a] = c[a];
        s.normal[i * 3 + a] = n_cam[a];
      }
    }
  return s;
}

CorpusSample render_orthographic(const BodyParams& params, const Camera& camera, int resolution) {
  if (resolution < 8)
    throw ContractError("render_orthographic: unsupported resolution " + std::to_string(resolution));
  const Body body(params);
  CorpusSample s = render_field([&body](const Vec3& p) { return body.sdf(p); },
                                [&body](const Vec3& p) { return body.color(p); }, camera, resolution);
  s.params = params;
  return s;
}

int eval_count(int n) {
  if (n <= 1) return 0;
  return std::min(static_cast<int>(std::ceil(0.05 * n - 1e-9)), n - 1);
}

std::uint64_t sample_seed(std::uint64_t corpus_seed, int index) {
  return corpus_seed * 1000003ULL + static_cast<std::uint64_t>(index);
}

std::vector<CorpusEntry> CorpusManifest::split(bool eval) const {
  std::vector<CorpusEntry> out;
  for (const auto& e : entries)
    if (e.eval == eval) out.push_back(e);
  return out;
}

namespace {

Json array_spec(std::vector<int> shape, const char* dtype, const char* file) {
  return {{"file", file}, {"shape", shape}, {"dtype", dtype}, {"byte_order", "little"}};
}

}  // namespace

CorpusManifest generate_corpus(int n, std::uint64_t seed, const fs::path& out_dir, int resolution,
                               const std::string& config_hash) {
  if (n < 1) throw ContractError("generate_corpus: n must be >= 1");
  ensure_directory(out_dir);
  CorpusManifest m;
  m.resolution = resolution;
  m.seed = seed;
  m.root = out_dir;
  const int n_eval = eval_count(n);
  const Camera cam = Camera::frontal(resolution);
  const int R = resolution;
  Json samples = Json::array();
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d", i);
    CorpusEntry e{i, sample_seed(seed, i), i >= n - n_eval, name};
    const CorpusSample s = render_orthographic(sample_body_params(e.seed), cam, resolution);
    const fs::path dir = out_dir / name;
    ensure_directory(dir);
    write_f32(dir / "rgb.f32", s.rgb);
    write_f32(dir / "depth.f32", s.depth);
    write_f32(dir / "normal.f32", s.normal);
    write_u8(dir / "mask.u8", s.mask);
    Json meta = {{"index", i},
                 {"seed", e.seed},
                 {"split", e.eval ? "eval" : "train"},
                 {"camera", cam.to_json()},
                 {"params", s.params.to_json()},
                 {"arrays",
                  {{"rgb", array_spec({R, R, 3}, "float32", "rgb.f32")},
                   {"depth", array_spec({R, R}, "float32", "depth.f32")},
                   {"normal", array_spec({R, R, 3}, "float32", "normal.f32")},
                   {"mask", array_spec({R, R}, "uint8", "mask.u8")}}}};
    write_json(dir / "sample.json", meta);
    samples.push_back({{"index", i}, {"seed", e.seed}, {"split", e.eval ? "eval" : "train"}, {"dir", name}});
    m.entries.push_back(e);
  }
  Json manifest = {{"format", "hgen-corpus"},
                   {"version", 1},
                   {"config_hash", config_hash},
                   {"n", n},
                   {"seed", seed},
                   {"resolution", resolution},
                   {"blend_radius", Body::kBlendRadius},
                   {"depth_background", kBackgroundDepth},
                   {"camera", cam.to_json()},
                   {"split", {{"train", n - n_eval}, {"eval", n_eval}}},
                   {"samples", samples}};
  write_json(out_dir / "manifest.json", manifest);
  return m;
}

CorpusManifest load_corpus_manifest(const fs::path& dir) {
  const Json j = read_json(dir / "manifest.json");
  if (j.value("format", "") != "hgen-corpus") throw IoError(dir.string() + ": not a corpus manifest");
  CorpusManifest m;
  m.root = dir;
  m.resolution = j.at("resolution").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& s : j.at("samples"))
    m.entries.push_back({s.at("index").get<int>(), s.at("seed").get<std::uint64_t>(),
                         s.at("split").get<std::string>() == "eval", s.at("dir").get<std::string>()});
  return m;
}

CorpusSample load_corpus_sample(const CorpusManifest& manifest, const CorpusEntry& entry) {
  const fs::path dir = manifest.root / entry.dir;
  const std::size_t n = static_cast<std::size_t>(manifest.resolution) * manifest.resolution;
  CorpusSample s;
  s.resolution = manifest.resolution;
  s.params = sample_body_params(entry.seed);
  s.view = Camera::frontal(manifest.resolution);
  s.rgb = read_f32(dir / "rgb.f32", n * 3);
  s.depth = read_f32(dir / "depth.f32", n);
  s.normal = read_f32(dir / "normal.f32", n * 3);
  s.mask = read_u8(dir / "mask.u8", n);
  return s;
}

}  // namespace hgen::corpus
