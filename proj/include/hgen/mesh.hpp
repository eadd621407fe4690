#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "hgen/rng.hpp"

namespace hgen {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Triangle mesh with per-vertex RGB. `colors` is either empty (unpainted)
/// or parallel to `vertices`.
struct TexturedMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Vec3> colors;

  bool empty() const { return faces.empty(); }
  /// Throws ContractError on out-of-range indices, NaN vertices or colors
  /// outside [0,1].
  void validate() const;
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Scalar field sampled on resolution^3 points spanning the canonical box
/// [-1,1]^3 inclusive; index (i,j,k) runs along (x,y,z) with x fastest.
struct SDFGrid {
  int resolution = 0;
  std::vector<double> values;

  double at(int i, int j, int k) const {
    return values[(static_cast<std::size_t>(k) * resolution + j) * resolution + i];
  }
  double spacing() const { return 2.0 / (resolution - 1); }
  Vec3 point(int i, int j, int k) const {
    const double h = spacing();
    return {-1.0 + h * i, -1.0 + h * j, -1.0 + h * k};
  }
  /// Trilinear interpolation; points outside the box clamp to the border.
  double interpolate(const Vec3& p) const;
};

using SdfFunction = std::function<double(const Vec3&)>;
/// Fills `out[i]` with the field at `points[i]`.
using SdfBatchFunction = std::function<void(std::span<const Vec3> points, std::span<double> out)>;
using ColorFunction = std::function<Vec3(const Vec3&)>;

SDFGrid sample_grid(const SdfFunction& sdf, int resolution);
/// Evaluates in z-slabs so batch callers can amortize per-call overhead.
SDFGrid sample_grid_batched(const SdfBatchFunction& sdf, int resolution);

/// Marching cubes at iso-level 0 with linear edge interpolation. Triangles
/// are wound so their normals face the positive (outside) side. A grid
/// without a sign change yields an empty mesh.
TexturedMesh marching_cubes(const SDFGrid& grid);
TexturedMesh extract_mesh(const SdfFunction& sdf, int resolution);

/// vertex_colors[v] = color(vertices[v]); geometry untouched.
TexturedMesh paint_mesh(TexturedMesh mesh, const ColorFunction& color);

/// Signed enclosed volume via the divergence theorem.
double mesh_volume(const TexturedMesh& mesh);
double mesh_area(const TexturedMesh& mesh);
/// Area-weighted uniform surface sampling; colors are interpolated when the
/// mesh is painted.
PointCloud sample_surface(const TexturedMesh& mesh, int count, Rng& rng);

/// ASCII PLY with float xyz and uchar RGB (colors default to mid grey when
/// the mesh is unpainted).
void write_ply(const std::filesystem::path& path, const TexturedMesh& mesh);
std::string ply_string(const TexturedMesh& mesh);
TexturedMesh read_ply(const std::filesystem::path& path);

}  // namespace hgen
