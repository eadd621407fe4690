#include "hgen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace hgen::eval {
namespace {

constexpr double kEigenTolerance = 1e-6;

double directed(std::span<const Vec3> a, std::span<const Vec3> b) {
  const auto nn = refine::nearest_neighbors(b, a);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[nn[i]]).squaredNorm();
  return s / a.size();
}

void require_sets(std::size_t g, std::size_t r, const char* what) {
  if (g == 0 || r == 0) throw ContractError(std::string(what) + ": empty set");
}

// Symmetric PSD square root with small negative eigenvalues clamped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] < -kEigenTolerance)
      throw std::domain_error(std::string("frechet: ") + what + " has eigenvalue " + std::to_string(ev[i]));
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Cloud cloud_or_origin(const TexturedMesh& mesh, int points, Rng& rng) {
  if (mesh.empty()) return {Vec3::Zero()};
  return sample_surface(mesh, points, rng).points;
}

}  // namespace

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw ContractError("chamfer: empty point cloud");
  return directed(a, b) + directed(b, a);
}

std::vector<std::vector<double>> chamfer_matrix(std::span<const Cloud> g, std::span<const Cloud> r) {
  require_sets(g.size(), r.size(), "chamfer_matrix");
  std::vector<std::vector<double>> d(g.size(), std::vector<double>(r.size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < r.size(); ++j) d[i][j] = chamfer(g[i], r[j]);
  return d;
}

double coverage(const std::vector<std::vector<double>>& d) {
  require_sets(d.size(), d.empty() ? 0 : d[0].size(), "coverage");
  std::vector<bool> hit(d[0].size(), false);
  for (const auto& row : d) hit[std::min_element(row.begin(), row.end()) - row.begin()] = true;
  return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / hit.size();
}

double coverage(std::span<const Cloud> g, std::span<const Cloud> r) { return coverage(chamfer_matrix(g, r)); }

double mmd(const std::vector<std::vector<double>>& d) {
  require_sets(d.size(), d.empty() ? 0 : d[0].size(), "mmd");
  double s = 0.0;
  for (std::size_t j = 0; j < d[0].size(); ++j) {
    double best = d[0][j];
    for (std::size_t i = 1; i < d.size(); ++i) best = std::min(best, d[i][j]);
    s += best;
  }
  return s / d[0].size();
}

double mmd(std::span<const Cloud> g, std::span<const Cloud> r) { return mmd(chamfer_matrix(g, r)); }

GaussianStats fit_gaussian(const Eigen::MatrixXd& samples) {
  const auto n = samples.rows();
  if (n < samples.cols() + 1)
    throw ContractError("fit_gaussian: " + std::to_string(n) + " samples for dimension " +
                        std::to_string(samples.cols()) + "; need at least dimension + 1");
  GaussianStats s;
  s.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - s.mean.transpose();
  s.covariance = centered.transpose() * centered / static_cast<double>(n - 1);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose()).eval();
  return s;
}

double frechet(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim() || a.covariance.rows() != a.dim() || b.covariance.rows() != b.dim())
    throw ContractError("frechet: dimension mismatch " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  const Eigen::MatrixXd sa = psd_sqrt(a.covariance, "first covariance");
  psd_sqrt(b.covariance, "second covariance");
  // (S_a S_b)^(1/2) has the same trace as (S_a^(1/2) S_b S_a^(1/2))^(1/2).
  const Eigen::MatrixXd cross = psd_sqrt(sa * b.covariance * sa, "covariance product");
  const double v = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross.trace();
  return std::max(v, 0.0);
}

Eigen::VectorXd cloud_descriptor(std::span<const Vec3> cloud) {
  static const Vec3 origin = Vec3::Zero();
  if (cloud.empty()) cloud = std::span<const Vec3>(&origin, 1);
  const double n = static_cast<double>(cloud.size());
  Eigen::VectorXd d = Eigen::VectorXd::Zero(kDescriptorDim);
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : cloud) c += p;
  c /= n;
  Vec3 lo = cloud[0], hi = cloud[0];
  double m[9] = {0};
  double mean_r = 0;
  for (const Vec3& p : cloud) {
    const Vec3 q = p - c;
    m[0] += q.x() * q.x();
    m[1] += q.y() * q.y();
    m[2] += q.z() * q.z();
    m[3] += q.x() * q.y();
    m[4] += q.x() * q.z();
    m[5] += q.y() * q.z();
    m[6] += q.x() * q.x() * q.x();
    m[7] += q.y() * q.y() * q.y();
    m[8] += q.z() * q.z() * q.z();
    const double r = q.norm();
    mean_r += r;
    const int bin = std::min(kRadialBins - 1, static_cast<int>(r / kRadialMax * kRadialBins));
    d[6 + bin] += 1.0 / n;
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  for (double& v : m) v /= n;
  for (int a = 0; a < 3; ++a) {
    d[a] = c[a];
    d[3 + a] = std::sqrt(m[a]);
  }
  for (int k = 0; k < 9; ++k) d[6 + kRadialBins + k] = m[k];
  d[6 + kRadialBins + 9] = mean_r / n;
  const Vec3 e = hi - lo;
  d[kDescriptorDim - 1] = 2.0 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
  return d;
}

double fpd(std::span<const Cloud> g, std::span<const Cloud> r) {
  auto stats = [](std::span<const Cloud> set) {
    Eigen::MatrixXd rows(set.size(), kDescriptorDim);
    for (std::size_t i = 0; i < set.size(); ++i) rows.row(i) = cloud_descriptor(set[i]).transpose();
    return fit_gaussian(rows);
  };
  return frechet(stats(g), stats(r));
}

Eigen::MatrixXd image_features(const prior::Reconstructor& teacher, std::span<const Tensor> images) {
  Eigen::MatrixXd rows(images.size(), teacher.pooled_width());
  constexpr std::size_t kChunk = 16;
  for (std::size_t s = 0; s < images.size(); s += kChunk) {
    const std::vector<Tensor> chunk(images.begin() + s, images.begin() + std::min(images.size(), s + kChunk));
    const Tensor f = teacher.pooled_features(ag::constant(stack(chunk))).value();
    for (std::size_t i = 0; i < chunk.size(); ++i)
      for (int k = 0; k < f.dim(1); ++k) rows(s + i, k) = f.data[i * f.dim(1) + k];
  }
  return rows;
}

double fid(const prior::Reconstructor& teacher, std::span<const Tensor> g, std::span<const Tensor> r) {
  return frechet(fit_gaussian(image_features(teacher, g)), fit_gaussian(image_features(teacher, r)));
}

Tensor rasterize(const TexturedMesh& mesh, const Camera& view, int resolution) {
  const Camera cam = view.resized(resolution);
  const std::size_t n = static_cast<std::size_t>(resolution) * resolution;
  std::vector<double> rgb(3 * n, 1.0), zbuf(n, std::numeric_limits<double>::infinity());
  std::vector<Projection> proj;
  proj.reserve(mesh.vertices.size());
  for (const Vec3& v : mesh.vertices) proj.push_back(project(v, cam));
  const bool painted = mesh.colors.size() == mesh.vertices.size();
  const Vec3 grey(0.5, 0.5, 0.5);
  for (const auto& f : mesh.faces) {
    const Vec2 &a = proj[f[0]].pixel, &b = proj[f[1]].pixel, &c = proj[f[2]].pixel;
    const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
    if (area == 0.0) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    const int x1 = std::min(resolution - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    const int y1 = std::min(resolution - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}) - 0.5)));
    for (int row = y0; row <= y1; ++row)
      for (int col = x0; col <= x1; ++col) {
        const Vec2 p = pixel_center(row, col);
        const double w0 = ((b - p).x() * (c - p).y() - (b - p).y() * (c - p).x()) / area;
        const double w1 = ((c - p).x() * (a - p).y() - (c - p).y() * (a - p).x()) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double z = w0 * proj[f[0]].depth + w1 * proj[f[1]].depth + w2 * proj[f[2]].depth;
        const std::size_t k = static_cast<std::size_t>(row) * resolution + col;
        if (z >= zbuf[k]) continue;
        zbuf[k] = z;
        const Vec3 color = painted ? Vec3(w0 * mesh.colors[f[0]] + w1 * mesh.colors[f[1]] + w2 * mesh.colors[f[2]]) : grey;
        for (int ch = 0; ch < 3; ++ch) rgb[3 * k + ch] = std::clamp(color[ch], 0.0, 1.0);
      }
  }
  return hwc_to_chw(rgb, resolution, resolution, 3);
}

std::vector<Camera> orbit_views(int resolution, int views) {
  if (views < 1) throw ContractError("orbit_views: views must be >= 1");
  std::vector<Camera> out;
  for (int v = 0; v < views; ++v) out.push_back(Camera::orbit(resolution, 2.0 * std::numbers::pi * v / views));
  return out;
}

double fid3d(const prior::Reconstructor& teacher, std::span<const TexturedMesh> meshes, std::span<const Tensor> reference,
             int views) {
  const int res = teacher.image_size();
  std::vector<Tensor> images;
  for (const auto& mesh : meshes)
    for (const Camera& cam : orbit_views(res, views)) images.push_back(rasterize(mesh, cam, res));
  return fid(teacher, images, reference);
}

std::vector<Tensor> reference_renders(std::span<const corpus::CorpusSample> samples, int resolution, int views) {
  std::vector<Tensor> out;
  for (const auto& s : samples)
    for (const Camera& cam : orbit_views(resolution, views)) {
      const auto r = corpus::render_orthographic(s.params, cam, resolution);
      out.push_back(hwc_to_chw(r.rgb, resolution, resolution, 3));
    }
  return out;
}

Json MetricReport::to_json() const {
  return {{"cov", cov},       {"mmd", mmd},           {"fpd", fpd},
          {"fid", fid},       {"fid3d", fid3d},       {"generated", generated},
          {"reference", reference}, {"empty_meshes", empty_meshes}, {"config_hash", config_hash}};
}

MetricReport MetricReport::from_json(const Json& j) {
  MetricReport r;
  r.cov = j.at("cov");
  r.mmd = j.at("mmd");
  r.fpd = j.at("fpd");
  r.fid = j.at("fid");
  r.fid3d = j.at("fid3d");
  r.generated = j.at("generated");
  r.reference = j.at("reference");
  r.empty_meshes = j.at("empty_meshes");
  r.config_hash = j.at("config_hash");
  return r;
}

std::string MetricReport::csv_header() { return "config_hash,generated,reference,empty_meshes,cov,mmd,fpd,fid,fid3d"; }

std::string MetricReport::csv_row() const {
  std::ostringstream s;
  s << std::setprecision(17) << config_hash << ',' << generated << ',' << reference << ',' << empty_meshes << ','
    << cov << ',' << mmd << ',' << fpd << ',' << fid << ',' << fid3d;
  return s.str();
}

std::string MetricReport::table_row() const {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << "COV " << 100.0 * cov << "%  MMD " << std::setprecision(4) << mmd
    << "  FPD " << fpd << "  FID " << fid << "  FID3D " << fid3d;
  return s.str();
}

MetricReport evaluate_model(const EvalInputs& in, const RunConfig& config) {
  in.state.validate();
  if (!in.teacher || !in.corpus) throw ContractError("evaluate_model: teacher and corpus are required");
  const auto& ec = config.eval;
  const int res = in.state.image_size;
  const bool refine = in.state.refiner != nullptr;

  std::vector<corpus::CorpusSample> ref_samples;
  for (const auto& e : in.corpus->split(true)) ref_samples.push_back(corpus::load_corpus_sample(*in.corpus, e));
  if (ref_samples.empty()) throw ContractError("evaluate_model: corpus has no eval split");

  Rng cloud_rng = stage_rng(ec.seed, "eval.clouds");
  std::vector<Cloud> ref_clouds;
  std::vector<Tensor> ref_images;
  for (const auto& s : ref_samples) {
    const corpus::Body body(s.params);
    ref_clouds.push_back(
        cloud_or_origin(extract_mesh([&body](const Vec3& p) { return body.sdf(p); }, config.model.mesh_resolution),
                        ec.cloud_points, cloud_rng));
    ref_images.push_back(hwc_to_chw(s.rgb, s.resolution, s.resolution, 3));
  }

  Rng latent_rng = stage_rng(ec.seed, "eval.latents");
  std::vector<Cloud> gen_clouds;
  std::vector<Tensor> gen_images;
  std::vector<TexturedMesh> meshes;
  MetricReport report;
  for (int k = 0; k < ec.samples; ++k) {
    const auto z = app::sample_latents(in.state.latent_dim(), latent_rng);
    auto g = app::generate(in.state, z, config.model.mesh_resolution, refine);
    report.empty_meshes += g.empty();
    gen_clouds.push_back(cloud_or_origin(g.mesh, ec.cloud_points, cloud_rng));
    Tensor img = refine::render_field_image(g.field(in.state), Camera::frontal(res), res).image();
    if (refine) img = refine::refine_image(*in.state.refiner, img);
    gen_images.push_back(std::move(img));
    meshes.push_back(std::move(g.mesh));
  }

  const auto d = chamfer_matrix(gen_clouds, ref_clouds);
  report.cov = coverage(d);
  report.mmd = mmd(d);
  report.fpd = fpd(gen_clouds, ref_clouds);
  report.fid = fid(*in.teacher, gen_images, ref_images);
  report.fid3d = fid3d(*in.teacher, meshes, reference_renders(ref_samples, res, ec.fid_views), ec.fid_views);
  report.generated = ec.samples;
  report.reference = static_cast<int>(ref_samples.size());
  report.config_hash = config.hash();
  return report;
}

void write_report(const fs::path& dir, const MetricReport& report) {
  fs::create_directories(dir);
  write_json(dir / "metrics.json", report.to_json());
  std::ofstream csv(dir / "metrics.csv");
  csv << MetricReport::csv_header() << '\n' << report.csv_row() << '\n';
  if (!csv) throw std::runtime_error("write_report: cannot write " + (dir / "metrics.csv").string());
}

}  // namespace hgen::eval
