#include "hgen/checks.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

#include "hgen/gan.hpp"
#include "hgen/gradcheck.hpp"
#include "hgen/pipeline.hpp"

namespace hgen::checks {
namespace {

std::string num(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// Named comparisons; a criterion passes when none of them failed.
class Tally {
 public:
  void close(const std::string& what, double got, double want, double tol) {
    ++count_;
    const double err = std::abs(got - want);
    if (err > worst_ || std::isnan(err)) worst_ = err;
    if (!(err <= tol)) fail(what + ": got " + num(got, 17) + ", want " + num(want, 17));
  }
  void exact(const std::string& what, double got, double want) {
    ++count_;
    if (!(got == want)) fail(what + ": got " + num(got, 17) + ", want exactly " + num(want, 17));
  }
  void expect(const std::string& what, bool ok) {
    ++count_;
    if (!ok) fail(what);
  }
  void fail(std::string msg) { failures_.push_back(std::move(msg)); }

  bool ok() const { return failures_.empty(); }
  int count() const { return count_; }
  double worst() const { return worst_; }
  std::string failures() const {
    std::string out = std::to_string(failures_.size()) + " of " + std::to_string(count_) + " failed: ";
    for (std::size_t i = 0; i < failures_.size() && i < 3; ++i) out += (i ? "; " : "") + failures_[i];
    return out;
  }

 private:
  int count_ = 0;
  double worst_ = 0.0;
  std::vector<std::string> failures_;
};

CheckResult finish(int id, std::string name, const Tally& t, std::string pass_detail) {
  return {id, std::move(name), t.ok(), t.ok() ? std::move(pass_detail) : t.failures(), 0.0};
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

ag::Var c(const Tensor& t) { return ag::constant(t); }

double brute_l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / a.size();
}

double brute_mse(const std::vector<double>& a, const std::vector<double>& b, double scale = 1.0) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (scale * a[i] - scale * b[i]) * (scale * a[i] - scale * b[i]);
  return s / a.size();
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// R1 penalty from central differences of the summed logits.
double brute_r1(const Critic& critic, const Tensor& real, double lambda) {
  const double h = 1e-6;
  const int n = real.dim(0);
  Tensor x = real;
  auto summed = [&] {
    const Tensor l = critic(ag::constant(x)).value();
    double s = 0;
    for (double v : l.data) s += v;
    return s;
  };
  double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x.data[i];
    x.data[i] = orig + h;
    const double up = summed();
    x.data[i] = orig - h;
    const double down = summed();
    x.data[i] = orig;
    const double g = (up - down) / (2 * h);
    total += g * g;
  }
  return 0.5 * lambda * total / n;
}

// ---------------------------------------------------------------- losses

void loss_terms(Tally& t, Rng& rng) {
  const double tol = 1e-6;
  {
    const Tensor pred = random_tensor({37, 1}, rng), gt = random_tensor({37}, rng);
    t.close("loss_sdf", shape::loss_sdf(c(pred), gt).item(), brute_l1(pred.data, gt.data), tol);
  }
  {
    const Tensor a = random_tensor({2, 5, 4, 4}, rng), b = random_tensor({2, 5, 4, 4}, rng);
    t.close("loss_latent_prior", shape::loss_latent_prior(c(a), b).item(), brute_l1(a.data, b.data), tol);
    t.close("loss_texture_prior", texture::loss_texture_prior(c(a), b).item(), brute_l1(a.data, b.data), tol);
    t.close("l1_mean", ag::l1_mean(c(a), b).item(), brute_l1(a.data, b.data), tol);
    t.close("mse_mean", ag::mse_mean(c(a), c(b)).item(), brute_mse(a.data, b.data), tol);
  }
  {
    const Tensor p = random_tensor({10, 3}, rng, 0, 1), g = random_tensor({10, 3}, rng, 0, 1);
    t.close("loss_rgb", texture::loss_rgb(c(p), g).item(), brute_l1(p.data, g.data), tol);
  }
  {
    const Tensor f_s = random_tensor({2, 6, 4, 4}, rng);
    const Tensor normal = random_tensor({2, 3, 4, 4}, rng), depth = random_tensor({2, 1, 4, 4}, rng);
    double ln = 0, ld = 0;
    for (int n = 0; n < 2; ++n)
      for (int k = 0; k < 16; ++k) {
        for (int ch = 0; ch < 3; ++ch)
          ln += std::abs(f_s.data[(n * 6 + ch) * 16 + k] - normal.data[(n * 3 + ch) * 16 + k]);
        ld += std::abs(f_s.data[(n * 6 + 3) * 16 + k] - depth.data[n * 16 + k]);
      }
    ln /= 96;
    ld /= 32;
    t.close("loss_normal", shape::loss_normal(c(f_s), normal).item(), ln, tol);
    t.close("loss_depth", shape::loss_depth(c(f_s), depth).item(), ld, tol);
    t.close("loss_normal_depth", shape::loss_normal_depth(c(f_s), normal, depth, 20, 20).item(), 20 * ln + 20 * ld,
            tol);
  }
  {
    const Tensor real = random_tensor({6}, rng, -3, 3), fake = random_tensor({6}, rng, -3, 3);
    double g = 0, dr = 0, df = 0;
    for (int i = 0; i < 6; ++i) {
      g += softplus(-fake.data[i]);
      df += softplus(fake.data[i]);
      dr += softplus(-real.data[i]);
    }
    t.close("loss_adversarial_g", loss_adversarial_g(c(fake)).item(), g / 6, tol);
    t.close("loss_adversarial_d_terms", loss_adversarial_d_terms(c(real), c(fake)).item(), df / 6 + dr / 6, tol);
  }
  {
    // Linear critic: every per-sample input gradient is w.
    ag::Var w = ag::variable(random_tensor({1, 32}, rng)), b = ag::variable(Tensor({1}, 0.3));
    const Critic linear = [&](const ag::Var& x) {
      const int n = x.dim(0);
      return ag::reshape(ag::linear(ag::reshape(x, {n, static_cast<int>(x.size()) / n}), w, b), {n});
    };
    double w2 = 0;
    for (double v : w.value().data) w2 += v * v;
    const Tensor real = random_tensor({3, 2, 4, 4}, rng);
    t.close("r1_penalty linear critic", r1_penalty(linear, {{"w", &w}, {"b", &b}}, real, 10.0).penalty,
            5.0 * w2, tol);
  }
  {
    nn::Discriminator d(2, 4, 8, rng);
    const Critic critic = [&d](const ag::Var& x) { return d.forward(x); };
    const Tensor real = random_tensor({2, 2, 8, 8}, rng, 0, 1), fake = random_tensor({2, 2, 8, 8}, rng, 0, 1);
    const double r1 = brute_r1(critic, real, 10.0);
    t.close("r1_penalty conv critic", r1_penalty(critic, d.parameters(), real, 10.0).penalty, r1, tol);
    const Tensor lr = d.forward(c(real)).value(), lf = d.forward(c(fake)).value();
    double terms = 0;
    for (int i = 0; i < 2; ++i) terms += softplus(lf.data[i]) / 2;
    for (int i = 0; i < 2; ++i) terms += softplus(-lr.data[i]) / 2;
    t.close("loss_adversarial_d", loss_adversarial_d(critic, d.parameters(), real, fake, 10.0), terms + r1, tol);
  }
  {
    const Tensor r = random_tensor({1, 3, 8, 8}, rng, 0, 1), g = random_tensor({1, 3, 8, 8}, rng, 0, 1);
    const refine::PerceptualFn phi = [](const ag::Var& x) { return std::vector<ag::Var>{x, ag::scale(x, 2.0)}; };
    const double expect = 0.7 * brute_l1(r.data, g.data) + 1.3 * (brute_mse(r.data, g.data) + brute_mse(r.data, g.data, 2));
    t.close("refine_loss", refine::refine_loss(c(r), g, phi, 0.7, 1.3).item(), expect, tol);
  }
}

void weighted_totals(Tally& t, Rng& rng) {
  const shape::ShapeLossWeights sw;
  t.expect("shape weights are {20,40,20,20,1}",
           sw.sdf == 20 && sw.sv == 40 && sw.normal == 20 && sw.depth == 20 && sw.adv == 1);
  const auto from_cfg = shape::ShapeLossWeights::from(ShapeStageConfig{});
  t.expect("shape config defaults match", from_cfg.sdf == 20 && from_cfg.sv == 40 && from_cfg.normal == 20 &&
                                              from_cfg.depth == 20 && from_cfg.adv == 1);
  t.exact("shape total at unit parts", shape::shape_total_loss(shape::ShapeLossParts<double>{1, 1, 1, 1, 1}, sw), 101);
  const texture::TextureLossWeights tw;
  t.expect("texture weights are {20,40,1}", tw.rgb == 20 && tw.tv == 40 && tw.adv == 1);
  const auto tw_cfg = texture::TextureLossWeights::from(TextureStageConfig{});
  t.expect("texture config defaults match", tw_cfg.rgb == 20 && tw_cfg.tv == 40 && tw_cfg.adv == 1);
  t.exact("texture total at unit parts", texture::texture_total_loss(texture::TextureLossParts<double>{1, 1, 1}, tw), 61);
  const RefineStageConfig rc;
  t.expect("refine weights are {1,1}", rc.lambda_r == 1 && rc.lambda_p == 1);

  auto scalar = [](double v) { return ag::constant(Tensor({1}, v)); };
  for (int k = 0; k < 20; ++k) {
    const shape::ShapeLossParts<double> p{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const double hand = 20 * p.sdf + 40 * p.sv + 20 * p.normal + 20 * p.depth + 1 * p.adv;
    t.exact("shape total", shape::shape_total_loss(p, sw), hand);
    t.exact("shape total (graph)",
            shape::shape_total_loss(shape::ShapeLossParts<ag::Var>{scalar(p.sdf), scalar(p.sv), scalar(p.normal),
                                                                   scalar(p.depth), scalar(p.adv)},
                                    sw)
                .item(),
            hand);
    const texture::TextureLossParts<double> q{rng.uniform(), rng.uniform(), rng.uniform()};
    const double thand = 20 * q.rgb + 40 * q.tv + 1 * q.adv;
    t.exact("texture total", texture::texture_total_loss(q, tw), thand);
    t.exact("texture total (graph)",
            texture::texture_total_loss(texture::TextureLossParts<ag::Var>{scalar(q.rgb), scalar(q.tv), scalar(q.adv)}, tw)
                .item(),
            thand);
  }

  const Tensor r = random_tensor({1, 3, 8, 8}, rng, 0, 1), g = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  const refine::PerceptualFn phi = [](const ag::Var& x) { return std::vector<ag::Var>{ag::sigmoid(x), ag::scale(x, 3.0)}; };
  const auto a = phi(c(r)), b = phi(c(g));
  const double l1 = ag::l1_mean(c(r), g).item(), m0 = ag::mse_mean(a[0], b[0]).item(), m1 = ag::mse_mean(a[1], b[1]).item();
  t.exact("refine total", refine::refine_loss(c(r), g, phi, rc.lambda_r, rc.lambda_p).item(), 1 * l1 + 1 * m0 + 1 * m1);
}

void reconstructor_total(Tally& t) {
  const fs::path dir = fs::temp_directory_path() / "hgen_checks_corpus";
  fs::remove_all(dir);
  const auto corpus = corpus::generate_corpus(2, 4, dir, 32);
  const RunConfig cfg = RunConfig::tiny();
  Rng rng(5);
  prior::Reconstructor r(cfg.model, rng);
  Adam opt(r.parameters(), cfg.prior.reconstructor_optim.adam());
  const std::vector<prior::CorpusBatchItem> batch{prior::load_item(corpus, corpus.entries[0]),
                                                  prior::load_item(corpus, corpus.entries[1])};
  const auto& w = cfg.prior;
  const auto l = prior::reconstructor_step(r, opt, batch, w, rng);
  t.exact("reconstructor total",
          l.total, w.weight_normal * l.normal + w.weight_depth * l.depth + w.weight_sdf * l.sdf + w.weight_color * l.color);
  fs::remove_all(dir);
}

// ------------------------------------------------------------- gradients

struct GradCase {
  std::string name;
  GradCheckResult result;
};

GradCheckResult discriminator_objective(Rng& rng) {
  nn::Discriminator d(2, 4, 8, rng);
  const Critic critic = [&d](const ag::Var& x) { return d.forward(x); };
  const auto params = d.parameters();
  const Tensor real = random_tensor({3, 2, 8, 8}, rng, 0, 1), fake = random_tensor({3, 2, 8, 8}, rng, 0, 1);
  const double lambda = 10.0, h = 1e-4;
  discriminator_backward(critic, params, real, fake, lambda, true);
  GradCheckResult out;
  for (int k = 0; k < 10; ++k) {
    const auto& [name, v] = params[rng.below(params.size())];
    const std::size_t i = rng.below(v->size());
    const double analytic = v->grad().data[i], orig = v->value().data[i];
    v->mutable_value().data[i] = orig + h;
    const double up = loss_adversarial_d(critic, params, real, fake, lambda);
    v->mutable_value().data[i] = orig - h;
    const double down = loss_adversarial_d(critic, params, real, fake, lambda);
    v->mutable_value().data[i] = orig;
    const double numeric = (up - down) / (2 * h);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    ++out.probes;
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = name + "[" + std::to_string(i) + "]: analytic " + num(analytic) + ", numeric " + num(numeric);
    }
  }
  return out;
}

std::vector<ag::Var> with_params(std::vector<ag::Var> leaves, nn::Module& m) {
  for (auto& [n, v] : m.parameters()) leaves.push_back(*v);
  return leaves;
}

}  // namespace

std::string format_result(const CheckResult& r) {
  return std::string(r.passed ? "[PASS] " : "[FAIL] ") + std::to_string(r.id) + " " + r.name + " (" +
         num(r.seconds, 3) + " s): " + r.detail;
}

CheckResult check_losses() {
  Tally t;
  Rng rng(101);
  loss_terms(t, rng);
  weighted_totals(t, rng);
  reconstructor_total(t);
  return finish(1, "loss oracles", t,
                std::to_string(t.count()) + " comparisons; worst brute-force gap " + num(t.worst(), 3) +
                    "; totals exact for {20,40,20,20,1}, {20,40,1}, {1,1}");
}

CheckResult check_gradients() {
  Rng rng(202);
  const double step = 1e-4;
  std::vector<GradCase> cases;
  {
    const ag::Var f_s = ag::variable(random_tensor({2, 5, 4, 4}, rng));
    const ag::Var pred = ag::variable(random_tensor({20, 1}, rng));
    const Tensor normal = random_tensor({2, 3, 4, 4}, rng), depth = random_tensor({2, 1, 4, 4}, rng);
    const Tensor sdf = random_tensor({20}, rng), f_sv = random_tensor({2, 5, 4, 4}, rng);
    const auto total = [&] {
      return shape::shape_total_loss(
          shape::ShapeLossParts<ag::Var>{shape::loss_sdf(pred, sdf), shape::loss_latent_prior(f_s, f_sv),
                                         shape::loss_normal(f_s, normal), shape::loss_depth(f_s, depth),
                                         loss_adversarial_g(ag::reshape(ag::global_avg_pool(f_s), {10}))},
          shape::ShapeLossWeights{});
    };
    cases.push_back({"shape total", gradient_check(total, {f_s, pred}, 10, rng, step)});
  }
  {
    const ag::Var f_tv = ag::variable(random_tensor({2, 3, 4, 4}, rng));
    const ag::Var rgb = ag::variable(random_tensor({10, 3}, rng, 0, 1));
    const Tensor f_tv_gt = random_tensor({2, 3, 4, 4}, rng), rgb_gt = random_tensor({10, 3}, rng, 0, 1);
    const auto total = [&] {
      return texture::texture_total_loss(
          texture::TextureLossParts<ag::Var>{texture::loss_rgb(rgb, rgb_gt), texture::loss_texture_prior(f_tv, f_tv_gt),
                                             loss_adversarial_g(ag::reshape(ag::global_avg_pool(f_tv), {6}))},
          texture::TextureLossWeights{});
    };
    cases.push_back({"texture total", gradient_check(total, {f_tv, rgb}, 10, rng, step)});
  }
  const Camera cam = Camera::frontal(32);
  std::vector<PointQuery> pts;
  for (int i = 0; i < 16; ++i) pts.push_back({i % 2, Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1))});
  {
    const ag::Var maps = ag::variable(random_tensor({2, 3, 8, 8}, rng));
    FieldDecoder dec(3, {8}, FieldKind::kShape, rng);
    const Tensor gt = random_tensor({16, 1}, rng, -0.2, 0.2);
    const auto loss = [&] { return ag::l1_mean(decode_points(dec, std::span(&maps, 1), cam, pts), gt); };
    cases.push_back({"sdf field", gradient_check(loss, with_params({maps}, dec), 10, rng, step)});
  }
  {
    const ag::Var maps[2] = {ag::variable(random_tensor({2, 3, 8, 8}, rng)), ag::variable(random_tensor({2, 2, 8, 8}, rng))};
    FieldDecoder dec(5, {8}, FieldKind::kTexture, rng);
    const Tensor gt = random_tensor({16, 3}, rng, 0, 1);
    const auto loss = [&] { return ag::l1_mean(decode_points(dec, maps, cam, pts), gt); };
    cases.push_back({"color field", gradient_check(loss, with_params({maps[0], maps[1]}, dec), 10, rng, step)});
  }
  {
    nn::Discriminator d(2, 4, 8, rng);
    const ag::Var fake = ag::variable(random_tensor({3, 2, 8, 8}, rng, 0, 1));
    const auto g = [&] { return loss_adversarial_g(d.forward(fake)); };
    cases.push_back({"adversarial G", gradient_check(g, with_params({fake}, d), 10, rng, step)});
    const Tensor real = random_tensor({3, 2, 8, 8}, rng, 0, 1);
    const auto dt = [&] { return loss_adversarial_d_terms(d.forward(ag::constant(real)), d.forward(fake)); };
    cases.push_back({"adversarial D terms", gradient_check(dt, with_params({}, d), 10, rng, step)});
  }
  cases.push_back({"discriminator with R1", discriminator_objective(rng)});
  {
    const RunConfig cfg = RunConfig::tiny();
    prior::Reconstructor teacher(cfg.model, rng);
    teacher.set_trainable(false);
    const int R = cfg.model.image_size;
    const ag::Var refined = ag::variable(random_tensor({1, 3, R, R}, rng, 0.1, 0.9));
    const Tensor gt = random_tensor({1, 3, R, R}, rng, 0, 1);
    const auto phi = refine::perceptual_extractor(teacher);
    const auto loss = [&] { return refine::refine_loss(refined, gt, phi, 1.0, 1.0); };
    cases.push_back({"refine loss", gradient_check(loss, {refined}, 10, rng, step)});
  }
  Tally t;
  double worst = 0;
  for (const auto& k : cases) {
    worst = std::max(worst, k.result.max_rel_error);
    t.expect(k.name + " relative error " + num(k.result.max_rel_error, 3) + " (" + k.result.worst + ")",
             k.result.probes == 10 && k.result.max_rel_error <= 1e-3);
  }
  return finish(2, "gradient checks", t,
                std::to_string(cases.size()) + " losses x 10 probes at step 1e-4; worst relative error " + num(worst, 3));
}

CheckResult check_geometry() {
  const double r = 0.5;
  const auto sphere = [r](const Vec3& p) { return p.norm() - r; };
  auto radial = [r](const TexturedMesh& m) {
    double e = 0;
    for (const auto& v : m.vertices) e = std::max(e, std::abs(v.norm() - r));
    return e;
  };
  const auto m64 = extract_mesh(sphere, 64), m32 = extract_mesh(sphere, 32);
  const double e64 = radial(m64), e32 = radial(m32);
  const double bound = 2.0 * (2.0 / 64) * std::sqrt(3.0);
  const double exact = 4.0 / 3.0 * std::numbers::pi * r * r * r;
  const double vol_err = std::abs(mesh_volume(m64) - exact) / exact;
  Tally t;
  t.expect("mesh at 64 is non-empty", !m64.empty());
  t.expect("radial error " + num(e64) + " <= " + num(bound), e64 <= bound);
  t.expect("volume error " + num(vol_err) + " <= 5%", vol_err <= 0.05);
  t.expect("error ratio 32->64 " + num(e32 / e64) + " > 1.4", e32 / e64 > 1.4);
  return finish(3, "marching cubes", t,
                "radial error " + num(e64, 3) + " (bound " + num(bound, 3) + "), volume error " + num(100 * vol_err, 3) +
                    "%, error ratio 32->64 " + num(e32 / e64, 3));
}

CheckResult check_metrics() {
  using eval::Cloud;
  Rng rng(404);
  auto cloud = [&rng](int n, double scale) {
    Cloud out;
    for (int i = 0; i < n; ++i) out.push_back(scale * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
    return out;
  };
  auto chamfer = [](const Cloud& a, const Cloud& b) {
    auto directed = [](const Cloud& x, const Cloud& y) {
      double s = 0;
      for (const Vec3& p : x) {
        double best = INFINITY;
        for (const Vec3& q : y) best = std::min(best, (p - q).squaredNorm());
        s += best;
      }
      return s / x.size();
    };
    return directed(a, b) + directed(b, a);
  };
  Tally t;
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<Cloud> g, r;
    for (int k = 0; k < 4 + 2 * trial; ++k) g.push_back(cloud(10 + 5 * trial, 1.0));
    for (int k = 0; k < 10 - trial; ++k) r.push_back(cloud(30 + 10 * trial, 0.8));
    std::vector<std::vector<double>> d(g.size(), std::vector<double>(r.size()));
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = 0; j < r.size(); ++j) {
        d[i][j] = chamfer(g[i], r[j]);
        t.exact("chamfer", eval::chamfer(g[i], r[j]), d[i][j]);
      }
    std::vector<int> matched(r.size(), 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < r.size(); ++j)
        if (d[i][j] < d[i][best]) best = j;
      matched[best] = 1;
    }
    double covered = 0, mmd = 0;
    for (int m : matched) covered += m;
    for (std::size_t j = 0; j < r.size(); ++j) {
      double best = INFINITY;
      for (std::size_t i = 0; i < g.size(); ++i) best = std::min(best, d[i][j]);
      mmd += best;
    }
    t.exact("coverage", eval::coverage(g, r), covered / r.size());
    t.exact("mmd", eval::mmd(g, r), mmd / r.size());
  }
  auto stats = [](std::vector<double> mean, Eigen::MatrixXd cov) {
    return eval::GaussianStats{Eigen::Map<Eigen::VectorXd>(mean.data(), mean.size()), std::move(cov)};
  };
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  t.close("frechet identical", eval::frechet(stats({1, 2}, i2), stats({1, 2}, i2)), 0.0, 1e-6);
  t.close("frechet mean shift", eval::frechet(stats({0, 0}, i2), stats({3, 4}, i2)), 25.0, 1e-6);
  t.close("frechet covariance", eval::frechet(stats({0, 0}, 4 * i2), stats({0, 0}, i2)), 2.0, 1e-6);
  double asym = 0;
  for (int k = 0; k < 10; ++k) {
    const int dim = 2 + k;
    auto psd = [&] {
      Eigen::MatrixXd a(dim, dim + 2);
      for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform(-1, 1);
      return Eigen::MatrixXd(a * a.transpose() / (dim + 2));
    };
    std::vector<double> ma(dim), mb(dim);
    for (auto& v : ma) v = rng.normal();
    for (auto& v : mb) v = rng.normal();
    const auto a = stats(ma, psd()), b = stats(mb, psd());
    const double ab = eval::frechet(a, b), ba = eval::frechet(b, a);
    asym = std::max(asym, std::abs(ab - ba));
    t.close("frechet symmetry", ab, ba, 1e-8);
  }
  return finish(4, "set metrics", t,
                "chamfer, coverage and mmd equal brute force on up to 10x10 sets; frechet cases 0/25/2 within 1e-6; "
                "max asymmetry " +
                    num(asym, 3));
}

// ------------------------------------------------------- pipeline checks

namespace {

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = file_bytes(e.path());
  return out;
}

struct PipelineRun {
  pipeline::RunDir run;
  RunConfig config;
  Json shape, texture, refine;
  eval::MetricReport report;
  std::vector<std::string> drifted;  ///< checkpoint files rewritten by a later stage
  std::size_t checkpoint_files = 0;
};

// Drives the stages one by one, hashing each module file when it is
// written and again after every later stage.
PipelineRun run_tracked(const fs::path& root, const RunConfig& config) {
  PipelineRun p{{root}, config, {}, {}, {}, {}, {}, 0};
  fs::remove_all(root);
  std::map<fs::path, std::uint64_t> written;
  auto remember = [&](const fs::path& dir, std::initializer_list<const char*> names) {
    for (const char* n : names) {
      const fs::path f = fs::path(pipeline::module_stem(dir, n)).concat(".bin");
      written[f] = fnv1a64(file_bytes(f));
    }
  };
  auto recheck = [&](const std::string& after) {
    for (const auto& [f, h] : written)
      if (fnv1a64(file_bytes(f)) != h) p.drifted.push_back(f.filename().string() + " changed by " + after);
  };
  pipeline::run_corpus_gen(p.run, config);
  pipeline::run_train_prior(p.run, config);
  remember(p.run.prior(), {"reconstructor", "generator"});
  pipeline::run_extract_priors(p.run, config);
  recheck("extract-priors");
  pipeline::run_train_shape(p.run, config);
  recheck("train-shape");
  remember(p.run.shape(), {"generator"});
  pipeline::run_train_texture(p.run, config);
  recheck("train-texture");
  remember(p.run.texture(), {"generator"});
  pipeline::run_train_refine(p.run, config);
  recheck("train-refine");
  p.report = pipeline::run_evaluate(p.run, config);
  recheck("evaluate");
  p.checkpoint_files = written.size();
  p.shape = p.run.require_stage(p.run.shape())["summary"];
  p.texture = p.run.require_stage(p.run.texture())["summary"];
  p.refine = p.run.require_stage(p.run.refine())["summary"];
  return p;
}

CheckResult check_independence(const PipelineRun& p) {
  const auto m = pipeline::load_models(p.run, p.config, true, false);
  const auto state = m.state(p.config);
  const int res = p.config.model.mesh_resolution;
  Rng rng = stage_rng(p.config.seed, "check.independence");
  Tally t;
  int non_empty = 0, recolored = 0;
  for (int k = 0; k < 16; ++k) {
    const auto z = app::sample_latents(state.latent_dim(), rng);
    const auto other = app::sample_latents(state.latent_dim(), rng).z_t;
    const auto a = app::generate(state, z, res), b = app::generate(state, {z.z_s, other}, res);
    const auto ga = sample_grid_batched(sdf_field(a.shape.f_sv, *state.f_s, state.camera()), res).values;
    const auto gb = sample_grid_batched(sdf_field(b.shape.f_sv, *state.f_s, state.camera()), res).values;
    t.expect("pair " + std::to_string(k) + " SDF grid identical", ga == gb);
    t.expect("pair " + std::to_string(k) + " mesh geometry identical",
             a.mesh.vertices == b.mesh.vertices && a.mesh.faces == b.mesh.faces);
    non_empty += !a.empty();
    recolored += a.mesh.colors != b.mesh.colors;
  }
  return finish(5, "shape independence", t,
                "16 pairs with a fixed shape code: SDF grids (" + std::to_string(res) + "^3) and meshes bit-identical; " +
                    std::to_string(non_empty) + " non-empty, " + std::to_string(recolored) + " recolored");
}

CheckResult check_frozen(const PipelineRun& p) {
  Tally t;
  int modules = 0;
  for (const auto& [stage, summary] : {std::pair{"train-shape", &p.shape}, std::pair{"train-texture", &p.texture},
                                       std::pair{"train-refine", &p.refine}}) {
    if (!summary->contains("frozen")) {
      t.fail(std::string(stage) + " recorded no frozen checksums");
      continue;
    }
    for (const auto& [name, e] : (*summary)["frozen"].items()) {
      ++modules;
      t.expect(name + " checksum changed during " + stage + " (" + e["before"].get<std::string>() + " -> " +
                   e["after"].get<std::string>() + ")",
               e["before"] == e["after"]);
    }
  }
  t.expect("every stage froze its modules", modules == 2 + 3 + 3);
  for (const auto& d : p.drifted) t.fail(d);
  return finish(6, "frozen modules", t,
                std::to_string(modules) + " module checksums unchanged across train-shape (f_s, f_t), train-texture "
                "(f_s, f_t, shape) and train-refine (teacher, shape, texture); " +
                    std::to_string(p.checkpoint_files) + " checkpoint files never rewritten");
}

CheckResult check_smoke(const PipelineRun& p) {
  const auto corpus = corpus::load_corpus_manifest(p.run.corpus());
  const auto untrained_models = pipeline::untrained_models(p.run, p.config);
  const auto untrained =
      eval::evaluate_model({untrained_models.state(p.config), &untrained_models.teacher, &corpus}, p.config);
  const double sv0 = p.shape["val_sv_initial"], sv1 = p.shape["val_sv_final"];
  const double tv0 = p.texture["val_tv_initial"], tv1 = p.texture["val_tv_final"];
  const auto m = pipeline::load_models(p.run, p.config, true, false);
  const auto state = m.state(p.config);
  Rng rng = stage_rng(p.config.seed, "check.latents");
  int non_empty = 0;
  for (int k = 0; k < 16; ++k)
    non_empty += !app::generate(state, app::sample_latents(state.latent_dim(), rng), p.config.model.mesh_resolution).empty();
  const auto& tr = p.report;
  Tally t;
  t.expect("(a) L_sv " + num(sv0) + " -> " + num(sv1) + " drops >= 30%", sv1 <= 0.7 * sv0);
  t.expect("(a) L_tv " + num(tv0) + " -> " + num(tv1) + " drops >= 30%", tv1 <= 0.7 * tv0);
  t.expect("(b) MMD " + num(tr.mmd) + " <= 0.5 x " + num(untrained.mmd), tr.mmd <= 0.5 * untrained.mmd);
  t.expect("(c) FID " + num(tr.fid) + " < " + num(untrained.fid), tr.fid < untrained.fid);
  t.expect("(d) " + std::to_string(non_empty) + "/16 non-empty meshes", non_empty >= 15);
  return finish(7, "end-to-end smoke", t,
                "(a) L_sv " + num(sv0, 3) + " -> " + num(sv1, 3) + ", L_tv " + num(tv0, 3) + " -> " + num(tv1, 3) +
                    "; (b) MMD " + num(tr.mmd, 3) + " vs untrained " + num(untrained.mmd, 3) + "; (c) FID " +
                    num(tr.fid, 3) + " vs untrained " + num(untrained.fid, 3) + "; (d) " + std::to_string(non_empty) +
                    "/16 non-empty [corpus n=" + std::to_string(p.config.corpus.n) + ", " +
                    std::to_string(p.config.model.image_size) + " px, " + std::to_string(p.config.shape.steps) +
                    "/" + std::to_string(p.config.texture.steps) + " student steps]");
}

CheckResult check_applications(const PipelineRun& p) {
  const auto m = pipeline::load_models(p.run, p.config, true, true);
  const auto state = m.state(p.config);
  const int res = p.config.model.mesh_resolution;
  Rng rng = stage_rng(p.config.seed, "check.applications");
  Tally t;

  const auto a = app::sample_latents(state.latent_dim(), rng), b = app::sample_latents(state.latent_dim(), rng);
  const auto seq = app::interpolate(state, a, b, 5, res, true);
  t.expect("interpolation start equals direct generation",
           ply_string(seq.front().mesh) == ply_string(app::generate(state, a, res, true).mesh));
  t.expect("interpolation end equals direct generation",
           ply_string(seq.back().mesh) == ply_string(app::generate(state, b, res, true).mesh));

  const auto truth = app::sample_latents(state.latent_dim(), rng);
  const auto target = app::generate(state, truth, res);
  const auto inv = app::invert_features(state, target.shape.f_sv, target.texture.f_tv, p.config.invert, p.config.seed, res);
  double ratio = INFINITY;
  if (inv.chosen >= 0) ratio = inv.loss / inv.restarts[inv.chosen].initial;
  t.expect("self-inversion loss ratio " + num(ratio) + " < 0.1", ratio < 0.1);

  const auto z = app::sample_latents(state.latent_dim(), rng);
  std::vector<std::vector<double>> codes;
  for (int k = 0; k < 5; ++k) codes.push_back(app::sample_latents(state.latent_dim(), rng).z_t);
  const auto meshes = app::retexture(state, z.z_s, codes, res);
  std::vector<std::vector<Vec3>> distinct;
  bool same_geometry = true;
  for (const auto& g : meshes) {
    same_geometry = same_geometry && g.mesh.vertices == meshes[0].mesh.vertices && g.mesh.faces == meshes[0].mesh.faces;
    bool seen = false;
    for (const auto& d : distinct) seen = seen || d == g.mesh.colors;
    if (!seen) distinct.push_back(g.mesh.colors);
  }
  t.expect("retexture geometry identical", same_geometry && !meshes[0].empty());
  t.expect("retexture gives " + std::to_string(distinct.size()) + " distinct colorings (need >= 2)", distinct.size() >= 2);
  return finish(8, "applications", t,
                "interpolation endpoints bit-exact; self-inversion loss ratio " + num(ratio, 3) + " (" +
                    std::to_string(p.config.invert.restarts) + " restarts x " + std::to_string(p.config.invert.steps) +
                    " steps); retexture " + std::to_string(distinct.size()) + "/5 distinct colorings on one geometry");
}

CheckResult check_determinism(const PipelineRun& p, const fs::path& second_root) {
  fs::remove_all(second_root);
  const pipeline::RunDir second{second_root};
  pipeline::run_all(second, p.config);
  const auto fa = tree_files(p.run.root), fb = tree_files(second_root);
  Tally t;
  std::size_t bytes = 0;
  for (const auto& [name, data] : fa) {
    const auto it = fb.find(name);
    if (it == fb.end())
      t.fail(name + " missing from the second run");
    else
      t.expect(name + " differs", it->second == data);
    bytes += data.size();
  }
  for (const auto& [name, data] : fb)
    if (!fa.count(name)) t.fail(name + " only in the second run");

  const auto ma = pipeline::load_models(p.run, p.config, true, true);
  const auto mb = pipeline::load_models(second, p.config, true, true);
  Rng rng = stage_rng(p.config.seed, "check.determinism");
  for (int k = 0; k < 3; ++k) {
    const auto z = app::sample_latents(ma.state(p.config).latent_dim(), rng);
    t.expect("mesh " + std::to_string(k) + " differs between runs",
             ply_string(app::generate(ma.state(p.config), z, p.config.model.mesh_resolution, true).mesh) ==
                 ply_string(app::generate(mb.state(p.config), z, p.config.model.mesh_resolution, true).mesh));
  }
  t.expect("metric reports equal", file_bytes(p.run.eval() / "metrics.json") == file_bytes(second.eval() / "metrics.json"));
  return finish(9, "determinism", t,
                std::to_string(fa.size()) + " files (" + std::to_string(bytes / 1024) +
                    " KiB: checkpoints, corpus, pseudo-GT, logs, metric reports) and 3 refined meshes byte-identical "
                    "across two runs");
}

template <class F>
CheckResult timed(int id, const std::string& name, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = f();
  } catch (const std::exception& e) {
    r = {id, name, false, std::string("threw: ") + e.what(), 0.0};
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

std::vector<CheckResult> run_suite(const SuiteOptions& options, const std::function<void(const CheckResult&)>& report) {
  std::vector<CheckResult> out;
  auto add = [&](CheckResult r) {
    if (report) report(r);
    out.push_back(std::move(r));
  };
  add(timed(1, "loss oracles", check_losses));
  add(timed(2, "gradient checks", check_gradients));
  add(timed(3, "marching cubes", check_geometry));
  add(timed(4, "set metrics", check_metrics));
  if (!options.pipeline) return out;

  const fs::path work = options.work_dir.empty() ? fs::temp_directory_path() / "hgen_selftest" : options.work_dir;
  std::optional<PipelineRun> run;
  std::string error;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    run = run_tracked(work / "run_a", options.config);
  } catch (const std::exception& e) {
    error = e.what();
  }
  const double pipeline_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::pair<int, const char*> names[] = {{5, "shape independence"}, {6, "frozen modules"}, {7, "end-to-end smoke"},
                                               {8, "applications"},       {9, "determinism"}};
  if (!run) {
    for (const auto& [id, name] : names) add({id, name, false, "pipeline run failed: " + error, 0.0});
    return out;
  }
  add(timed(5, names[0].second, [&] { return check_independence(*run); }));
  auto frozen = timed(6, names[1].second, [&] { return check_frozen(*run); });
  frozen.seconds += pipeline_seconds;
  add(frozen);
  add(timed(7, names[2].second, [&] { return check_smoke(*run); }));
  add(timed(8, names[3].second, [&] { return check_applications(*run); }));
  add(timed(9, names[4].second, [&] { return check_determinism(*run, work / "run_b"); }));
  return out;
}

}  // namespace hgen::checks
