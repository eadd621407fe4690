#include "hgen/fields.hpp"

#include <algorithm>
#include <cmath>

namespace hgen {
namespace {

constexpr std::size_t kChunk = 4096;

void require_role(const FeatureMap& f, FeatureRole role, const char* what) {
  if (f.role != role)
    throw ContractError(std::string(what) + ": expected a " + role_name(role) + " map, got " + role_name(f.role));
}

std::vector<ag::PixelQuery> pixel_queries(const Camera& camera, int map_size, std::span<const PointQuery> points) {
  const Camera cam = camera.resized(map_size);
  std::vector<ag::PixelQuery> q(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec2 x = project(points[i].p, cam).pixel;
    q[i] = {points[i].batch, x.x(), x.y()};
  }
  return q;
}

}  // namespace

std::string role_name(FeatureRole role) {
  switch (role) {
    case FeatureRole::kFs: return "F_s";
    case FeatureRole::kFt: return "F_t";
    case FeatureRole::kFsv: return "F_sv";
    case FeatureRole::kFtv: return "F_tv";
  }
  return "?";
}

void FeatureMap::validate() const {
  if (data.rank() != 3) throw ContractError("FeatureMap: expected [C,H,W], got " + shape_str(data.shape));
  if (data.dim(1) != data.dim(2)) throw ContractError("FeatureMap: maps must be square");
  for (double v : data.data)
    if (!std::isfinite(v)) throw ContractError("FeatureMap: non-finite entry in " + role_name(role));
}

FeatureMap FeatureMap::from_batch(const Tensor& batch, int n, FeatureRole role) {
  if (batch.rank() != 4 || n < 0 || n >= batch.dim(0))
    throw ContractError("FeatureMap::from_batch: bad batch " + shape_str(batch.shape) + " / item " + std::to_string(n));
  const std::size_t item = numel({batch.dim(1), batch.dim(2), batch.dim(3)});
  FeatureMap f;
  f.role = role;
  f.data = Tensor({batch.dim(1), batch.dim(2), batch.dim(3)},
                  std::vector<double>(batch.data.begin() + n * item, batch.data.begin() + (n + 1) * item));
  return f;
}

Tensor FeatureMap::as_batch() const { return Tensor({1, channels(), height(), width()}, data.data); }

std::vector<double> sample_bilinear(const FeatureMap& f, const Vec2& x) {
  const ag::PixelQuery q{0, x.x(), x.y()};
  const ag::Var out = ag::gather_bilinear(ag::constant(f.as_batch()), std::span(&q, 1));
  return out.value().data;
}

FieldDecoder::FieldDecoder(int feature_channels, std::vector<int> hidden, FieldKind kind, Rng& rng) : kind_(kind) {
  std::vector<int> sizes{feature_channels + 1};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(kind == FieldKind::kShape ? 1 : 3);
  mlp_ = nn::Mlp(sizes, kind == FieldKind::kShape ? nn::Activation::kNone : nn::Activation::kSigmoid, rng);
}

ag::Var FieldDecoder::forward(const ag::Var& x) const {
  const ag::Var y = mlp_.forward(x);
  return kind_ == FieldKind::kTexture ? ag::clamp01(y) : y;
}

void FieldDecoder::collect(nn::ParamRefs& out, const std::string& prefix) { mlp_.collect(out, prefix); }

ag::Var decode_points(const FieldDecoder& decoder, std::span<const ag::Var> maps, const Camera& camera,
                      std::span<const PointQuery> points) {
  if (points.empty()) throw ContractError("decode_points: no points");
  int channels = 0;
  std::vector<ag::Var> parts;
  for (const auto& m : maps) {
    if (m.value().rank() != 4) throw ContractError("decode_points: feature maps must be [N,C,H,W]");
    channels += m.dim(1);
    const auto q = pixel_queries(camera, m.dim(2), points);
    parts.push_back(ag::gather_bilinear(m, q));
  }
  if (channels != decoder.feature_channels())
    throw ContractError("decode_points: decoder expects " + std::to_string(decoder.feature_channels()) +
                        " feature channels, maps provide " + std::to_string(channels));
  Tensor depth({static_cast<int>(points.size()), 1});
  for (std::size_t i = 0; i < points.size(); ++i) depth.data[i] = project(points[i].p, camera).depth;
  parts.push_back(ag::constant(std::move(depth)));
  return decoder.forward(ag::concat_channels(parts));
}

double query_sdf(const FeatureMap& f_sv, const FieldDecoder& f_s, const Camera& camera, const Vec3& p) {
  require_role(f_sv, FeatureRole::kFsv, "query_sdf");
  if (f_s.kind() != FieldKind::kShape) throw ContractError("query_sdf: decoder is not a shape decoder");
  const ag::Var map = ag::constant(f_sv.as_batch());
  const PointQuery q{0, p};
  return decode_points(f_s, std::span(&map, 1), camera, std::span(&q, 1)).item();
}

Vec3 query_color(const FeatureMap& f_tv, const FeatureMap& f_sv, const FieldDecoder& f_t, const Camera& camera,
                 const Vec3& p) {
  const Vec3 pts[1] = {p};
  return query_colors(f_tv, f_sv, f_t, camera, pts).front();
}

SdfBatchFunction sdf_field(const FeatureMap& f_sv, const FieldDecoder& f_s, const Camera& camera) {
  require_role(f_sv, FeatureRole::kFsv, "sdf_field");
  if (f_s.kind() != FieldKind::kShape) throw ContractError("sdf_field: decoder is not a shape decoder");
  return [map = ag::constant(f_sv.as_batch()), &f_s, camera](std::span<const Vec3> pts, std::span<double> out) {
    std::vector<PointQuery> q;
    for (std::size_t begin = 0; begin < pts.size(); begin += kChunk) {
      const std::size_t end = std::min(pts.size(), begin + kChunk);
      q.clear();
      for (std::size_t i = begin; i < end; ++i) q.push_back({0, pts[i]});
      const ag::Var s = decode_points(f_s, std::span(&map, 1), camera, q);
      std::copy(s.value().data.begin(), s.value().data.end(), out.begin() + begin);
    }
  };
}

std::vector<Vec3> query_colors(const FeatureMap& f_tv, const FeatureMap& f_sv, const FieldDecoder& f_t,
                               const Camera& camera, std::span<const Vec3> points) {
  require_role(f_tv, FeatureRole::kFtv, "query_color");
  require_role(f_sv, FeatureRole::kFsv, "query_color");
  if (f_t.kind() != FieldKind::kTexture) throw ContractError("query_color: decoder is not a texture decoder");
  const ag::Var maps[2] = {ag::constant(f_tv.as_batch()), ag::constant(f_sv.as_batch())};
  std::vector<Vec3> colors(points.size());
  std::vector<PointQuery> q;
  for (std::size_t begin = 0; begin < points.size(); begin += kChunk) {
    const std::size_t end = std::min(points.size(), begin + kChunk);
    q.clear();
    for (std::size_t i = begin; i < end; ++i) q.push_back({0, points[i]});
    const ag::Var out = decode_points(f_t, maps, camera, q);
    const auto& c = out.value().data;
    for (std::size_t i = begin; i < end; ++i)
      colors[i] = Vec3(c[(i - begin) * 3], c[(i - begin) * 3 + 1], c[(i - begin) * 3 + 2]);
  }
  return colors;
}

TexturedMesh extract_field_mesh(const FeatureMap& f_sv, const FieldDecoder& f_s, const Camera& camera,
                                int resolution) {
  return marching_cubes(sample_grid_batched(sdf_field(f_sv, f_s, camera), resolution));
}

TexturedMesh paint_field_mesh(TexturedMesh mesh, const FeatureMap& f_tv, const FeatureMap& f_sv,
                              const FieldDecoder& f_t, const Camera& camera) {
  if (mesh.vertices.empty()) return mesh;
  mesh.colors = query_colors(f_tv, f_sv, f_t, camera, mesh.vertices);
  return mesh;
}

TrainingPoints sample_training_points(std::span<const double> depth, std::span<const std::uint8_t> mask,
                                      const Camera& camera, int m_total, double sigma, Rng& rng) {
  if (m_total <= 0 || m_total % 2 != 0) throw ContractError("sample_training_points: m_total must be even and > 0");
  const int R = camera.image_size;
  const std::size_t n = static_cast<std::size_t>(R) * R;
  if (depth.size() != n || mask.size() != n)
    throw ContractError("sample_training_points: depth/mask size does not match the camera resolution");
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) fg.push_back(i);

  TrainingPoints out;
  out.uniform_fallback = fg.empty();
  const int n_near = fg.empty() ? 0 : m_total / 2;
  for (int k = 0; k < n_near; ++k) {
    const std::size_t i = fg[rng.below(fg.size())];
    const int row = static_cast<int>(i / R), col = static_cast<int>(i % R);
    const double d = depth[i] + sigma * rng.normal();
    out.points.push_back(backproject(pixel_center(row, col), d, camera));
    out.near_surface.push_back(true);
  }
  while (static_cast<int>(out.points.size()) < m_total) {
    const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1), z = rng.uniform(-1, 1);
    out.points.emplace_back(x, y, z);
    out.near_surface.push_back(false);
  }
  return out;
}

}  // namespace hgen
