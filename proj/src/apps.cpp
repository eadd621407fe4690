#include "hgen/apps.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace hgen::app {
namespace {

Tensor row(std::span<const double> z) { return Tensor({1, static_cast<int>(z.size())}, std::vector<double>(z.begin(), z.end())); }

Generated build(const GeneratorState& state, shape::ShapeMaps shape, texture::TextureMaps texture, int mesh_resolution,
                bool refine) {
  Generated g;
  g.shape = std::move(shape);
  g.texture = std::move(texture);
  const Camera cam = state.camera();
  g.mesh = extract_field_mesh(g.shape.f_sv, *state.f_s, cam, mesh_resolution);
  if (g.mesh.empty()) return g;
  g.mesh = paint_field_mesh(std::move(g.mesh), g.texture.f_tv, g.shape.f_sv, *state.f_t, cam);
  if (refine)
    g.mesh = refine::refine_textured_mesh(g.mesh, g.field(state), state.refiner, state.refine_views, state.image_size);
  return g;
}

}  // namespace

int GeneratorState::latent_dim() const { return shape->latent_dim(); }

Camera GeneratorState::camera() const { return Camera::frontal(image_size); }

void GeneratorState::validate(bool need_refiner) const {
  if (!shape || !texture || !f_s || !f_t) throw ContractError("generator state: shape, texture and decoders are required");
  if (need_refiner && !refiner) throw ContractError("generator state: refinement requested without a refiner");
  if (image_size < 1) throw ContractError("generator state: image_size must be positive");
  if (shape->latent_dim() != texture->latent_dim())
    throw ContractError("generator state: shape and texture latent sizes differ");
}

Latents sample_latents(int latent_dim, Rng& rng) {
  Latents z{std::vector<double>(latent_dim), std::vector<double>(latent_dim)};
  for (auto& v : z.z_s) v = rng.normal();
  for (auto& v : z.z_t) v = rng.normal();
  return z;
}

refine::TexturedField Generated::field(const GeneratorState& state) const {
  return {shape.f_sv, texture.f_tv, state.f_s, state.f_t, state.camera()};
}

Generated generate(const GeneratorState& state, const Latents& z, int mesh_resolution, bool refine) {
  state.validate(refine);
  auto shape = shape::generate_shape(*state.shape, z.z_s);
  auto texture = texture::generate_texture(*state.texture, z.z_t, shape.f_s);
  return build(state, std::move(shape), std::move(texture), mesh_resolution, refine);
}

std::vector<Generated> retexture(const GeneratorState& state, std::span<const double> z_s,
                                 const std::vector<std::vector<double>>& z_t_list, int mesh_resolution, bool refine) {
  state.validate(refine);
  const auto shape = shape::generate_shape(*state.shape, z_s);
  std::vector<Generated> out;
  for (const auto& z_t : z_t_list)
    out.push_back(build(state, shape, texture::generate_texture(*state.texture, z_t, shape.f_s), mesh_resolution, refine));
  return out;
}

std::vector<Latents> interpolate_latents(const Latents& a, const Latents& b, int steps) {
  if (steps < 2) throw ContractError("interpolate: steps must be >= 2");
  if (a.z_s.size() != b.z_s.size() || a.z_t.size() != b.z_t.size())
    throw ContractError("interpolate: endpoint latent sizes differ");
  std::vector<Latents> out;
  for (int k = 0; k < steps; ++k) {
    if (k == 0) {
      out.push_back(a);
      continue;
    }
    if (k == steps - 1) {
      out.push_back(b);
      continue;
    }
    const double t = static_cast<double>(k) / (steps - 1);
    Latents z = a;
    for (std::size_t i = 0; i < z.z_s.size(); ++i) z.z_s[i] = (1 - t) * a.z_s[i] + t * b.z_s[i];
    for (std::size_t i = 0; i < z.z_t.size(); ++i) z.z_t[i] = (1 - t) * a.z_t[i] + t * b.z_t[i];
    out.push_back(std::move(z));
  }
  return out;
}

std::vector<Generated> interpolate(const GeneratorState& state, const Latents& a, const Latents& b, int steps,
                                   int mesh_resolution, bool refine) {
  std::vector<Generated> out;
  for (const auto& z : interpolate_latents(a, b, steps)) out.push_back(generate(state, z, mesh_resolution, refine));
  return out;
}

ag::Var inversion_objective(const GeneratorState& state, const ag::Var& z_s, const ag::Var& z_t,
                            const Tensor& f_sv_target, const Tensor& f_tv_target) {
  const auto s = state.shape->forward(z_s);
  const auto t = state.texture->forward(z_t, s.f_s);
  return ag::add(ag::l1_mean(s.f_sv, f_sv_target), ag::l1_mean(t.f_tv, f_tv_target));
}

Json InversionResult::report() const {
  Json restarts_json = Json::array();
  for (const auto& r : restarts) {
    Json j{{"index", r.index}, {"ok", r.ok}};
    if (r.ok) {
      j["initial"] = r.initial;
      j["final"] = r.final;
    } else {
      j["error"] = r.error;
    }
    restarts_json.push_back(j);
  }
  return {{"chosen", chosen}, {"loss", loss}, {"z_s", z.z_s}, {"z_t", z.z_t}, {"restarts", restarts_json},
          {"mesh_empty", generated.empty()}};
}

InversionResult invert_features(const GeneratorState& state, const FeatureMap& f_sv_target,
                                const FeatureMap& f_tv_target, const InvertConfig& config, std::uint64_t seed,
                                int mesh_resolution) {
  state.validate();
  if (config.steps < 1 || config.restarts < 1) throw ContractError("invert: steps and restarts must be >= 1");
  if (f_sv_target.role != FeatureRole::kFsv || f_tv_target.role != FeatureRole::kFtv)
    throw ContractError("invert: targets must be F_sv and F_tv maps");
  const Tensor sv = f_sv_target.as_batch(), tv = f_tv_target.as_batch();
  const int dim = state.latent_dim();

  InversionResult res;
  for (int r = 0; r < config.restarts; ++r) {
    RestartReport rep;
    rep.index = r;
    Rng rng = stage_rng(seed, "invert.restart." + std::to_string(r));
    const Latents init = sample_latents(dim, rng);
    ag::Var z_s = ag::variable(row(init.z_s)), z_t = ag::variable(row(init.z_t));
    Adam opt({{"z_s", &z_s}, {"z_t", &z_t}}, AdamConfig{config.lr, 0.9, 0.999, 1e-8});
    try {
      for (int step = 0; step < config.steps; ++step) {
        const ag::Var loss = inversion_objective(state, z_s, z_t, sv, tv);
        if (!std::isfinite(loss.item())) throw std::runtime_error("objective not finite at step " + std::to_string(step));
        if (step == 0) rep.initial = loss.item();
        opt.zero_grad();
        ag::backward(loss);
        opt.step(0.5 * (1.0 + std::cos(std::numbers::pi * step / config.steps)));
      }
      rep.final = inversion_objective(state, ag::constant(z_s.value()), ag::constant(z_t.value()), sv, tv).item();
      if (!std::isfinite(rep.final)) throw std::runtime_error("final objective not finite");
      rep.ok = true;
      if (res.chosen < 0 || rep.final < res.loss) {
        res.chosen = r;
        res.loss = rep.final;
        res.z = {z_s.value().data, z_t.value().data};
      }
    } catch (const std::runtime_error& e) {
      rep.error = e.what();
    }
    res.restarts.push_back(rep);
  }
  if (res.chosen < 0) {
    std::ostringstream msg;
    msg << "invert: all " << config.restarts << " restarts failed";
    for (const auto& r : res.restarts) msg << "; restart " << r.index << ": " << r.error;
    throw std::runtime_error(msg.str());
  }
  res.generated = generate(state, res.z, mesh_resolution);
  return res;
}

InversionResult invert(const GeneratorState& state, const prior::Reconstructor& teacher, const Tensor& reference,
                       const InvertConfig& config, std::uint64_t seed, int mesh_resolution) {
  const auto rec = prior::reconstruct(teacher, reference);
  return invert_features(state, rec.f_sv, rec.f_tv, config, seed, mesh_resolution);
}

}  // namespace hgen::app
