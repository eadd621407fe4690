#include "hgen/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "hgen/io.hpp"
#include "hgen/tensor.hpp"

namespace hgen {
namespace {

// Cube corner c sits at offset (c&1, (c>>1)&1, (c>>2)&1).
constexpr int corner_bit(int c, int axis) { return (c >> axis) & 1; }

struct CubeTables {
  std::array<std::array<int, 2>, 12> edge_corners{};
  std::array<int, 12> edge_axis{};
  // Per configuration: flat list of edge-index triples.
  std::array<std::vector<int>, 256> triangles;
};

// Builds the triangulation for all 256 inside/outside patterns by walking
// the six cube faces. On each face, viewed from outside with corners in
// counter-clockwise order, every crossing that enters the inside region is
// joined to the next crossing that leaves it. Ambiguous faces therefore
// always separate their two inside corners, and since the rule depends only
// on the face's own corners, neighbouring cubes agree and the surface is
// closed. Each crossing has one successor and one predecessor, so the
// segments form disjoint loops, which are fanned into triangles.
CubeTables build_tables() {
  CubeTables t;
  int e = 0;
  int edge_id[8][8];
  for (auto& row : edge_id) std::fill(std::begin(row), std::end(row), -1);
  for (int a = 0; a < 8; ++a)
    for (int axis = 0; axis < 3; ++axis) {
      if (corner_bit(a, axis)) continue;
      const int b = a | (1 << axis);
      t.edge_corners[e] = {a, b};
      t.edge_axis[e] = axis;
      edge_id[a][b] = edge_id[b][a] = e;
      ++e;
    }

  std::vector<std::array<int, 4>> faces;
  for (int axis = 0; axis < 3; ++axis)
    for (int side = 0; side < 2; ++side) {
      const int u = axis == 0 ? 1 : 0;
      const int w = axis == 2 ? 1 : 2;
      std::array<int, 4> cyc{};
      const int uw[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
      for (int k = 0; k < 4; ++k) cyc[k] = (side << axis) | (uw[k][0] << u) | (uw[k][1] << w);
      Vec3 eu = Vec3::Zero(), ew = Vec3::Zero(), outward = Vec3::Zero();
      eu[u] = 1.0;
      ew[w] = 1.0;
      outward[axis] = side ? 1.0 : -1.0;
      if (eu.cross(ew).dot(outward) < 0.0) std::reverse(cyc.begin(), cyc.end());
      faces.push_back(cyc);
    }

  for (int config = 0; config < 256; ++config) {
    auto inside = [config](int c) { return (config >> c) & 1; };
    std::array<int, 12> next;
    next.fill(-1);
    for (const auto& cyc : faces) {
      int kind[4];  // +1 entry, -1 exit, 0 none
      int edge[4];
      for (int k = 0; k < 4; ++k) {
        const int ci = cyc[k], cj = cyc[(k + 1) % 4];
        edge[k] = edge_id[ci][cj];
        kind[k] = inside(ci) == inside(cj) ? 0 : (inside(cj) ? 1 : -1);
      }
      for (int k = 0; k < 4; ++k) {
        if (kind[k] != 1) continue;
        for (int s = 1; s < 4; ++s) {
          const int m = (k + s) % 4;
          if (kind[m] == -1) {
            next[edge[k]] = edge[m];
            break;
          }
        }
      }
    }
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
      if (next[start] < 0 || used[start]) continue;
      std::vector<int> loop;
      for (int cur = start; !used[cur]; cur = next[cur]) {
        used[cur] = true;
        loop.push_back(cur);
      }
      for (std::size_t k = 1; k + 1 < loop.size(); ++k) {
        t.triangles[config].push_back(loop[0]);
        t.triangles[config].push_back(loop[k]);
        t.triangles[config].push_back(loop[k + 1]);
      }
    }
  }

  // Fix the global winding with the single-inside-corner case: the normal
  // must point away from the inside corner 0.
  const auto& tri = t.triangles[1];
  auto mid = [&](int edge) {
    Vec3 p = Vec3::Zero();
    for (int c : t.edge_corners[edge])
      for (int a = 0; a < 3; ++a) p[a] += 0.5 * corner_bit(c, a);
    return p;
  };
  const Vec3 n = (mid(tri[1]) - mid(tri[0])).cross(mid(tri[2]) - mid(tri[0]));
  if (n.dot(Vec3(1, 1, 1)) < 0.0)
    for (auto& list : t.triangles)
      for (std::size_t k = 0; k < list.size(); k += 3) std::swap(list[k + 1], list[k + 2]);
  return t;
}

const CubeTables& tables() {
  static const CubeTables t = build_tables();
  return t;
}

}  // namespace

void TexturedMesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& v : vertices)
    if (!v.allFinite()) throw ContractError("mesh: non-finite vertex");
  for (const auto& f : faces)
    for (int idx : f)
      if (idx < 0 || idx >= n) throw ContractError("mesh: face index out of range");
  if (!colors.empty()) {
    if (colors.size() != vertices.size()) throw ContractError("mesh: color count differs from vertex count");
    for (const auto& c : colors)
      if (!(c.minCoeff() >= 0.0 && c.maxCoeff() <= 1.0)) throw ContractError("mesh: color outside [0,1]");
  }
}

double SDFGrid::interpolate(const Vec3& p) const {
  const double h = spacing();
  double f[3];
  int i0[3];
  for (int a = 0; a < 3; ++a) {
    const double u = std::clamp((p[a] + 1.0) / h, 0.0, static_cast<double>(resolution - 1));
    i0[a] = std::min(static_cast<int>(u), resolution - 2);
    f[a] = u - i0[a];
  }
  double v = 0.0;
  for (int c = 0; c < 8; ++c) {
    double w = 1.0;
    for (int a = 0; a < 3; ++a) w *= corner_bit(c, a) ? f[a] : 1.0 - f[a];
    if (w != 0.0) v += w * at(i0[0] + corner_bit(c, 0), i0[1] + corner_bit(c, 1), i0[2] + corner_bit(c, 2));
  }
  return v;
}

SDFGrid sample_grid(const SdfFunction& sdf, int resolution) {
  return sample_grid_batched(
      [&sdf](std::span<const Vec3> pts, std::span<double> out) {
        for (std::size_t i = 0; i < pts.size(); ++i) out[i] = sdf(pts[i]);
      },
      resolution);
}

SDFGrid sample_grid_batched(const SdfBatchFunction& sdf, int resolution) {
  if (resolution < 8) throw ContractError("grid resolution must be >= 8, got " + std::to_string(resolution));
  SDFGrid g;
  g.resolution = resolution;
  g.values.resize(static_cast<std::size_t>(resolution) * resolution * resolution);
  std::vector<Vec3> slab(static_cast<std::size_t>(resolution) * resolution);
  for (int k = 0; k < resolution; ++k) {
    for (int j = 0; j < resolution; ++j)
      for (int i = 0; i < resolution; ++i) slab[static_cast<std::size_t>(j) * resolution + i] = g.point(i, j, k);
    sdf(slab, std::span<double>(g.values.data() + static_cast<std::size_t>(k) * slab.size(), slab.size()));
  }
  for (double v : g.values)
    if (!std::isfinite(v)) throw ContractError("grid: field returned a non-finite value");
  return g;
}

TexturedMesh marching_cubes(const SDFGrid& grid) {
  const auto& tab = tables();
  const int R = grid.resolution;
  TexturedMesh mesh;
  std::unordered_map<std::uint64_t, int> vertex_of_edge;
  auto vertex = [&](int i, int j, int k, int edge) {
    const auto [a, b] = tab.edge_corners[edge];
    const int ia = i + corner_bit(a, 0), ja = j + corner_bit(a, 1), ka = k + corner_bit(a, 2);
    const std::uint64_t key =
        ((static_cast<std::uint64_t>(ka) * R + ja) * R + ia) * 3 + static_cast<std::uint64_t>(tab.edge_axis[edge]);
    auto [it, inserted] = vertex_of_edge.try_emplace(key, static_cast<int>(mesh.vertices.size()));
    if (inserted) {
      const int ib = i + corner_bit(b, 0), jb = j + corner_bit(b, 1), kb = k + corner_bit(b, 2);
      const double va = grid.at(ia, ja, ka), vb = grid.at(ib, jb, kb);
      const double t = va / (va - vb);
      mesh.vertices.push_back(grid.point(ia, ja, ka) + t * (grid.point(ib, jb, kb) - grid.point(ia, ja, ka)));
    }
    return it->second;
  };
  for (int k = 0; k + 1 < R; ++k)
    for (int j = 0; j + 1 < R; ++j)
      for (int i = 0; i + 1 < R; ++i) {
        int config = 0;
        for (int c = 0; c < 8; ++c)
          if (grid.at(i + corner_bit(c, 0), j + corner_bit(c, 1), k + corner_bit(c, 2)) < 0.0) config |= 1 << c;
        const auto& tri = tab.triangles[config];
        for (std::size_t t = 0; t < tri.size(); t += 3)
          mesh.faces.push_back({vertex(i, j, k, tri[t]), vertex(i, j, k, tri[t + 1]), vertex(i, j, k, tri[t + 2])});
      }
  return mesh;
}

TexturedMesh extract_mesh(const SdfFunction& sdf, int resolution) {
  return marching_cubes(sample_grid(sdf, resolution));
}

TexturedMesh paint_mesh(TexturedMesh mesh, const ColorFunction& color) {
  mesh.colors.resize(mesh.vertices.size());
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
    mesh.colors[v] = color(mesh.vertices[v]).cwiseMax(0.0).cwiseMin(1.0);
  return mesh;
}

double mesh_volume(const TexturedMesh& mesh) {
  double v = 0.0;
  for (const auto& f : mesh.faces)
    v += mesh.vertices[f[0]].dot(mesh.vertices[f[1]].cross(mesh.vertices[f[2]]));
  return v / 6.0;
}

double mesh_area(const TexturedMesh& mesh) {
  double a = 0.0;
  for (const auto& f : mesh.faces)
    a += 0.5 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]).norm();
  return a;
}

PointCloud sample_surface(const TexturedMesh& mesh, int count, Rng& rng) {
  PointCloud cloud;
  if (mesh.faces.empty() || count <= 0) return cloud;
  std::vector<double> cdf(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    total += 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]).norm();
    cdf[f] = total;
  }
  const bool painted = mesh.colors.size() == mesh.vertices.size();
  cloud.points.reserve(count);
  for (int s = 0; s < count; ++s) {
    const double r = rng.uniform() * total;
    const std::size_t f = std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin(),
                                                mesh.faces.size() - 1);
    double a = rng.uniform(), b = rng.uniform();
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    const auto& t = mesh.faces[f];
    cloud.points.push_back((1 - a - b) * mesh.vertices[t[0]] + a * mesh.vertices[t[1]] + b * mesh.vertices[t[2]]);
    if (painted) cloud.colors.push_back((1 - a - b) * mesh.colors[t[0]] + a * mesh.colors[t[1]] + b * mesh.colors[t[2]]);
  }
  return cloud;
}

std::string ply_string(const TexturedMesh& mesh) {
  std::ostringstream s;
  s << "ply\nformat ascii 1.0\n";
  s << "element vertex " << mesh.vertices.size() << "\n";
  s << "property float x\nproperty float y\nproperty float z\n";
  s << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  s << "element face " << mesh.faces.size() << "\n";
  s << "property list uchar int vertex_indices\nend_header\n";
  const bool painted = mesh.colors.size() == mesh.vertices.size();
  char buf[160];
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const Vec3 c = painted ? mesh.colors[v] : Vec3(0.5, 0.5, 0.5);
    auto u8 = [](double x) { return static_cast<int>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d %d %d\n", mesh.vertices[v].x(), mesh.vertices[v].y(),
                  mesh.vertices[v].z(), u8(c.x()), u8(c.y()), u8(c.z()));
    s << buf;
  }
  for (const auto& f : mesh.faces) s << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  return s.str();
}

void write_ply(const std::filesystem::path& path, const TexturedMesh& mesh) { write_text(path, ply_string(mesh)); }

TexturedMesh read_ply(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::size_t nv = 0, nf = 0;
  bool header_ok = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string w;
    ls >> w;
    if (w == "element") {
      std::string kind;
      std::size_t n;
      ls >> kind >> n;
      (kind == "vertex" ? nv : nf) = n;
    } else if (w == "format" && line.find("ascii") == std::string::npos) {
      throw IoError(path.string() + ": only ASCII PLY is supported");
    } else if (w == "end_header") {
      header_ok = true;
      break;
    }
  }
  if (!header_ok) throw IoError(path.string() + ": missing PLY header");
  TexturedMesh mesh;
  mesh.vertices.resize(nv);
  mesh.colors.resize(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    double x, y, z;
    int r, g, b;
    if (!(in >> x >> y >> z >> r >> g >> b)) throw IoError(path.string() + ": truncated vertex list");
    mesh.vertices[v] = {x, y, z};
    mesh.colors[v] = Vec3(r, g, b) / 255.0;
  }
  mesh.faces.resize(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    int n;
    if (!(in >> n >> mesh.faces[f][0] >> mesh.faces[f][1] >> mesh.faces[f][2]) || n != 3)
      throw IoError(path.string() + ": only triangle faces are supported");
  }
  mesh.validate();
  return mesh;
}

}  // namespace hgen
