#include "hgen/refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace hgen::refine {
namespace {
constexpr int kBisections = 20;
}  // namespace

double TexturedField::sdf(const Vec3& p) const { return query_sdf(f_sv, *f_s, feature_camera, p); }

SdfBatchFunction TexturedField::sdf_batch() const { return sdf_field(f_sv, *f_s, feature_camera); }

std::vector<Vec3> TexturedField::colors(std::span<const Vec3> points) const {
  return query_colors(f_tv, f_sv, *f_t, feature_camera, points);
}

Tensor FieldImage::image() const { return hwc_to_chw(rgb, resolution, resolution, 3); }

FieldImage render_field_image(const TexturedField& field, const Camera& view, int resolution) {
  if (!field.f_s || !field.f_t) throw ContractError("render_field_image: decoders missing");
  if (resolution < 1) throw ContractError("render_field_image: resolution must be positive");
  FieldImage out;
  out.resolution = resolution;
  out.view = view.resized(resolution);
  const std::size_t n = static_cast<std::size_t>(resolution) * resolution;
  out.rgb.assign(3 * n, 1.0);
  out.depth.assign(n, corpus::kBackgroundDepth);
  out.mask.assign(n, 0);

  auto point_at = [&](std::size_t p, double t) {
    return hgen::backproject(pixel_center(static_cast<int>(p / resolution), static_cast<int>(p % resolution)), t,
                             out.view);
  };
  const auto sdf = field.sdf_batch();
  const int n_steps = 2 * std::clamp(resolution, 16, 64);
  const double step = 2.0 / n_steps;

  std::vector<std::size_t> active(n);
  for (std::size_t p = 0; p < n; ++p) active[p] = p;
  std::vector<std::size_t> pix;
  std::vector<double> lo, hi;
  std::vector<Vec3> pts;
  std::vector<double> vals;
  for (int s = 0; s <= n_steps && !active.empty(); ++s) {
    const double t = -1.0 + s * step;
    pts.resize(active.size());
    vals.resize(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) pts[k] = point_at(active[k], t);
    sdf(pts, vals);
    std::size_t keep = 0;
    for (std::size_t k = 0; k < active.size(); ++k) {
      if (vals[k] <= 0.0) {
        pix.push_back(active[k]);
        lo.push_back(s == 0 ? t : t - step);
        hi.push_back(t);
      } else {
        active[keep++] = active[k];
      }
    }
    active.resize(keep);
  }
  if (pix.empty()) return out;

  auto point_of = [&](std::size_t k, double t) { return point_at(pix[k], t); };
  pts.resize(pix.size());
  vals.resize(pix.size());
  for (int it = 0; it < kBisections; ++it) {
    for (std::size_t k = 0; k < pix.size(); ++k) pts[k] = point_of(k, 0.5 * (lo[k] + hi[k]));
    sdf(pts, vals);
    for (std::size_t k = 0; k < pix.size(); ++k) (vals[k] > 0.0 ? lo[k] : hi[k]) = 0.5 * (lo[k] + hi[k]);
  }
  for (std::size_t k = 0; k < pix.size(); ++k) pts[k] = point_of(k, 0.5 * (lo[k] + hi[k]));
  const auto colors = field.colors(pts);
  for (std::size_t k = 0; k < pix.size(); ++k) {
    const std::size_t p = pix[k];
    out.mask[p] = 1;
    out.depth[p] = 0.5 * (lo[k] + hi[k]);
    for (int a = 0; a < 3; ++a) out.rgb[3 * p + a] = colors[k][a];
  }
  return out;
}

RefinerNet make_refiner(const ModelConfig& model, Rng& rng) { return RefinerNet(3, model.refiner_width, rng); }

Tensor refine_image(const RefinerNet& g_r, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ContractError("refine_image: expected [3,H,W], got " + shape_str(image.shape));
  return unstack(g_r.forward(ag::constant(stack({image}))).value(), 0);
}

PerceptualFn perceptual_extractor(const prior::Reconstructor& teacher) {
  return [&teacher](const ag::Var& image) { return teacher.perceptual_taps(image); };
}

ag::Var refine_loss(const ag::Var& refined, const Tensor& gt, const PerceptualFn& phi, double lambda_r,
                    double lambda_p) {
  if (refined.shape() != gt.shape)
    throw ContractError("refine_loss: " + shape_str(refined.shape()) + " vs " + shape_str(gt.shape));
  std::vector<ag::Var> parts{ag::l1_mean(refined, gt)};
  std::vector<double> weights{lambda_r};
  if (lambda_p != 0.0) {
    const auto a = phi(refined);
    const auto b = phi(ag::constant(gt));
    for (std::size_t l = 0; l < a.size(); ++l) {
      parts.push_back(ag::mse_mean(a[l], ag::detach(b[l])));
      weights.push_back(lambda_p);
    }
  }
  return ag::weighted_sum(parts, weights);
}

std::vector<RefinePair> make_refine_pairs(const prior::Reconstructor& teacher, const corpus::CorpusManifest& corpus,
                                          std::span<const corpus::CorpusEntry> entries, int views) {
  const int R = teacher.image_size();
  const Camera feature_camera = Camera::frontal(R);
  std::vector<RefinePair> pairs;
  for (const auto& e : entries) {
    const auto item = prior::load_item(corpus, e);
    const auto rec = prior::reconstruct(teacher, item.image);
    const TexturedField field{rec.f_sv, rec.f_tv, &teacher.f_s, &teacher.f_t, feature_camera};
    for (int v = 0; v < views; ++v) {
      const Camera view = Camera::orbit(R, 2.0 * std::numbers::pi * v / views);
      const auto gt = corpus::render_orthographic(item.sample.params, view, R);
      pairs.push_back({render_field_image(field, view, R).image(), hwc_to_chw(gt.rgb, R, R, 3)});
    }
  }
  return pairs;
}

double evaluate_refiner(const RefinerNet* g_r, std::span<const RefinePair> pairs, const PerceptualFn& phi,
                        const RefineStageConfig& c) {
  double total = 0.0;
  for (const auto& p : pairs) {
    const ag::Var in = ag::constant(stack({p.input}));
    const ag::Var out = g_r ? g_r->forward(in) : in;
    total += refine_loss(out, stack({p.target}), phi, c.lambda_r, c.lambda_p).item();
  }
  return pairs.empty() ? 0.0 : total / pairs.size();
}

RefineStageResult train_refine_stage(const prior::Reconstructor& teacher, const corpus::CorpusManifest& corpus,
                                     const RunConfig& config, const TrainHooks& hooks) {
  const auto& c = config.refine;
  if (corpus.resolution != config.model.image_size)
    throw ContractError("train_refine_stage: corpus resolution differs from model.image_size");
  auto train = corpus.split(false);
  auto held = corpus.split(true);
  if (train.empty() || held.empty()) throw ContractError("train_refine_stage: corpus needs train and eval samples");
  train.resize(std::min<std::size_t>(train.size(), c.records));
  held.resize(std::min<std::size_t>(held.size(), c.validation_size));
  const auto pairs = make_refine_pairs(teacher, corpus, train, c.views);
  const auto held_pairs = make_refine_pairs(teacher, corpus, held, c.views);
  const PerceptualFn phi = perceptual_extractor(teacher);

  Rng init = stage_rng(config.seed, "refine.init");
  Rng rng = stage_rng(config.seed, "refine.train");
  RefineStageResult res{make_refiner(config.model, init), 0, 0, 0};
  RefinerNet& g_r = res.refiner;
  Adam opt(g_r.parameters(), c.optim.adam());
  const NamedModules modules{{"refiner", &g_r}};

  res.identity = evaluate_refiner(nullptr, held_pairs, phi, c);
  res.initial = evaluate_refiner(&g_r, held_pairs, phi, c);
  hooks.record(0, "val_identity", res.identity);
  hooks.record(0, "val_loss", res.initial);
  for (int step = 1; step <= c.steps; ++step) {
    std::vector<Tensor> in, gt;
    for (int b = 0; b < c.batch; ++b) {
      const auto& p = pairs[rng.below(pairs.size())];
      in.push_back(p.input);
      gt.push_back(p.target);
    }
    const ag::Var loss = refine_loss(g_r.forward(ag::constant(stack(in))), stack(gt), phi, c.lambda_r, c.lambda_p);
    hooks.record(step, "loss", loss.item());
    require_finite(loss.item(), "refine", step, hooks, modules);
    opt.zero_grad();
    ag::backward(loss);
    opt.step();
    if (step % c.checkpoint_every == 0 && step != c.steps)
      hooks.record(step, "val_loss", evaluate_refiner(&g_r, held_pairs, phi, c));
    hooks.maybe_checkpoint(step, modules);
  }
  res.final = evaluate_refiner(&g_r, held_pairs, phi, c);
  hooks.record(c.steps, "val_loss", res.final);
  g_r.set_trainable(false);
  return res;
}

ColoredCloud backproject(std::span<const double> depth, std::span<const double> rgb,
                         std::span<const std::uint8_t> mask, const Camera& view, int resolution) {
  const std::size_t n = static_cast<std::size_t>(resolution) * resolution;
  if (depth.size() != n || mask.size() != n || rgb.size() != 3 * n)
    throw ContractError("backproject: depth, rgb and mask must all be " + std::to_string(resolution) + "x" +
                        std::to_string(resolution));
  const Camera cam = view.resized(resolution);
  ColoredCloud cloud;
  for (int row = 0; row < resolution; ++row)
    for (int col = 0; col < resolution; ++col) {
      const std::size_t i = static_cast<std::size_t>(row) * resolution + col;
      if (!mask[i]) continue;
      cloud.points.push_back(hgen::backproject(pixel_center(row, col), depth[i], cam));
      cloud.colors.emplace_back(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
    }
  return cloud;
}

std::vector<int> nearest_neighbors(std::span<const Vec3> points, std::span<const Vec3> queries) {
  if (points.empty()) throw ContractError("nearest_neighbors: empty point set");
  Vec3 lo = points[0], hi = points[0];
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 extent = (hi - lo).cwiseMax(Vec3::Constant(1e-9));
  const double cell = std::max(std::cbrt(extent.prod() / std::max<std::size_t>(points.size() / 2, 1)),
                               extent.maxCoeff() / 256.0);
  int dims[3];
  for (int a = 0; a < 3; ++a) dims[a] = std::max(1, static_cast<int>(std::ceil(extent[a] / cell)));
  auto cell_of = [&](const Vec3& p, int a) {
    return std::clamp(static_cast<int>(std::floor((p[a] - lo[a]) / cell)), 0, dims[a] - 1);
  };
  auto flat = [&](int x, int y, int z) { return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x; };

  // Counting sort of point indices into cells keeps each cell's list ascending.
  std::vector<std::size_t> start(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] + 1, 0);
  std::vector<std::size_t> cell_id(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    cell_id[i] = flat(cell_of(points[i], 0), cell_of(points[i], 1), cell_of(points[i], 2));
    ++start[cell_id[i] + 1];
  }
  for (std::size_t c = 1; c < start.size(); ++c) start[c] += start[c - 1];
  std::vector<int> order(points.size());
  {
    std::vector<std::size_t> fill(start.begin(), start.end() - 1);
    for (std::size_t i = 0; i < points.size(); ++i) order[fill[cell_id[i]]++] = static_cast<int>(i);
  }

  std::vector<int> result(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const Vec3& x = queries[q];
    const int c[3] = {cell_of(x, 0), cell_of(x, 1), cell_of(x, 2)};
    double best = std::numeric_limits<double>::infinity();
    int best_i = -1;
    const int max_r = std::max({dims[0], dims[1], dims[2]});
    for (int r = 0; r <= max_r; ++r) {
      for (int z = c[2] - r; z <= c[2] + r; ++z) {
        if (z < 0 || z >= dims[2]) continue;
        for (int y = c[1] - r; y <= c[1] + r; ++y) {
          if (y < 0 || y >= dims[1]) continue;
          for (int xx = c[0] - r; xx <= c[0] + r; ++xx) {
            if (xx < 0 || xx >= dims[0]) continue;
            if (std::max({std::abs(xx - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) != r) continue;
            const std::size_t id = flat(xx, y, z);
            for (std::size_t k = start[id]; k < start[id + 1]; ++k) {
              const int i = order[k];
              const double d = (points[i] - x).squaredNorm();
              if (d < best || (d == best && i < best_i)) {
                best = d;
                best_i = i;
              }
            }
          }
        }
      }
      // Distance from x to the nearest cell outside the searched block.
      double bound = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 3; ++a) {
        if (c[a] - r > 0) bound = std::min(bound, x[a] - (lo[a] + (c[a] - r) * cell));
        if (c[a] + r < dims[a] - 1) bound = std::min(bound, lo[a] + (c[a] + r + 1) * cell - x[a]);
      }
      if (bound == std::numeric_limits<double>::infinity()) break;
      if (best_i >= 0 && bound > 0 && best < bound * bound * (1.0 - 1e-12)) break;
    }
    result[q] = best_i;
  }
  return result;
}

TexturedMesh paint_vertices(TexturedMesh mesh, const ColoredCloud& cloud) {
  if (cloud.empty()) throw ContractError("paint_vertices: empty point cloud");
  const auto nn = nearest_neighbors(cloud.points, mesh.vertices);
  mesh.colors.resize(mesh.vertices.size());
  for (std::size_t v = 0; v < nn.size(); ++v) mesh.colors[v] = cloud.colors[nn[v]];
  return mesh;
}

TexturedMesh refine_textured_mesh(const TexturedMesh& mesh, const TexturedField& field, const RefinerNet* g_r,
                                  int n_views, int resolution) {
  if (n_views < 1) throw ContractError("refine_textured_mesh: n_views must be >= 1");
  if (mesh.vertices.empty()) return mesh;
  ColoredCloud merged;
  for (int v = 0; v < n_views; ++v) {
    const Camera view = Camera::orbit(resolution, 2.0 * std::numbers::pi * v / n_views);
    const FieldImage img = render_field_image(field, view, resolution);
    std::vector<double> rgb = img.rgb;
    if (g_r) rgb = chw_to_hwc(refine_image(*g_r, img.image()));
    const auto cloud = backproject(img.depth, rgb, img.mask, img.view, resolution);
    merged.points.insert(merged.points.end(), cloud.points.begin(), cloud.points.end());
    merged.colors.insert(merged.colors.end(), cloud.colors.begin(), cloud.colors.end());
  }
  return paint_vertices(mesh, merged);
}

}  // namespace hgen::refine
