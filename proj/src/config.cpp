#include "hgen/config.hpp"

#include <type_traits>

namespace hgen {
namespace {

template <class T>
constexpr bool is_struct_v = std::is_class_v<T> && !std::is_same_v<T, std::string> &&
                             !std::is_same_v<T, std::vector<int>>;

struct Writer {
  Json& j;
  template <class T>
  void operator()(const char* key, T& value) {
    if constexpr (is_struct_v<T>) {
      Json sub = Json::object();
      Writer w{sub};
      value.fields(w);
      j[key] = std::move(sub);
    } else {
      j[key] = value;
    }
  }
};

struct Reader {
  const Json& j;
  std::string path;

  template <class T>
  void operator()(const char* key, T& value) {
    if (!j.contains(key)) return;
    const Json& v = j.at(key);
    const std::string where = path.empty() ? key : path + "." + key;
    if constexpr (is_struct_v<T>) {
      if (!v.is_object()) throw ConfigError(where + ": expected an object");
      read_struct(v, value, where);
    } else {
      try {
        if constexpr (std::is_integral_v<T>) {
          if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
          if constexpr (std::is_unsigned_v<T>)
            if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(where + ": must be >= 0");
        } else if constexpr (std::is_floating_point_v<T>) {
          if (!v.is_number()) throw ConfigError(where + ": expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
          if (!v.is_string()) throw ConfigError(where + ": expected a string");
        }
        value = v.get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + ": " + e.what());
      }
    }
  }

  template <class S>
  static void read_struct(const Json& obj, S& s, const std::string& path) {
    // Collect the known keys first so unknown ones can be named.
    Json known = Json::object();
    Writer w{known};
    s.fields(w);
    for (const auto& [k, _] : obj.items())
      if (!known.contains(k)) throw ConfigError("unknown config key: " + (path.empty() ? k : path + "." + k));
    Reader r{obj, path};
    s.fields(r);
  }
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

RunConfig RunConfig::tiny() {
  RunConfig c;
  c.model.image_size = 32;
  c.model.feature_size = 16;
  c.model.mesh_resolution = 32;
  c.model.latent_dim = 16;
  c.model.style_dim = 32;
  c.model.c_s = 8;
  c.model.c_t = 8;
  c.model.c_sv = 8;
  c.model.c_tv = 8;
  c.model.generator_width = 16;
  c.model.encoder_width = 16;
  c.model.discriminator_width = 16;
  c.model.prior_width = 16;
  c.model.refiner_width = 8;
  c.model.decoder_hidden = {32, 32};
  c.corpus.n = 700;
  c.prior.reconstructor_steps = 600;
  c.prior.generator_steps = 600;
  c.prior.generator_optim.lr = 1e-3;
  c.prior.lr_discriminator = 1e-3;
  c.prior.points = 256;
  c.prior.n_corpus = 60;
  c.prior.n_synth = 120;
  c.prior.checkpoint_every = 200;
  c.shape.steps = 300;
  c.shape.optim.lr = 1e-3;
  c.shape.lr_discriminator = 1e-3;
  c.shape.points = 256;
  c.shape.validation_size = 8;
  c.shape.checkpoint_every = 100;
  c.texture.steps = 300;
  c.texture.optim.lr = 1e-3;
  c.texture.lr_discriminator = 1e-3;
  c.texture.points = 256;
  c.texture.validation_size = 8;
  c.texture.checkpoint_every = 100;
  c.refine.steps = 200;
  c.refine.optim.lr = 1e-3;
  c.refine.records = 24;
  c.refine.validation_size = 8;
  c.refine.checkpoint_every = 100;
  c.eval.samples = 40;
  c.eval.cloud_points = 512;
  c.eval.fid_views = 2;
  return c;
}

void RunConfig::validate() const {
  const auto& m = model;
  require(power_of_two(m.image_size) && m.image_size >= 16, "model.image_size must be a power of two >= 16");
  require(power_of_two(m.feature_size) && m.feature_size >= 8 && m.feature_size <= m.image_size,
          "model.feature_size must be a power of two in [8, image_size]");
  require(m.mesh_resolution >= 8, "model.mesh_resolution must be >= 8");
  require(m.latent_dim > 0 && m.style_dim > 0, "model.latent_dim and model.style_dim must be > 0");
  require(m.c_s >= 5, "model.c_s must be >= 5 (normal, depth and at least one free channel)");
  require(m.c_t > 0 && m.c_sv > 0 && m.c_tv > 0, "model channel counts must be > 0");
  require(m.generator_width > 0 && m.encoder_width > 0 && m.discriminator_width > 0 && m.prior_width > 0 &&
              m.refiner_width > 0,
          "model widths must be > 0");
  for (int h : m.decoder_hidden) require(h > 0, "model.decoder_hidden entries must be > 0");
  require(corpus.n >= 1, "corpus.n must be >= 1");

  auto check_adam = [](const AdamSettings& a, const std::string& where) {
    require(a.lr > 0, where + ".lr must be > 0");
    require(a.beta1 >= 0 && a.beta1 < 1 && a.beta2 >= 0 && a.beta2 < 1, where + " betas must lie in [0,1)");
  };
  check_adam(prior.reconstructor_optim, "prior.reconstructor_optim");
  check_adam(prior.generator_optim, "prior.generator_optim");
  check_adam(shape.optim, "shape.optim");
  check_adam(texture.optim, "texture.optim");
  check_adam(refine.optim, "refine.optim");

  require(prior.reconstructor_steps >= 0 && prior.generator_steps >= 0, "prior step counts must be >= 0");
  require(prior.batch > 0 && shape.batch > 0 && texture.batch > 0 && refine.batch > 0, "batch sizes must be > 0");
  require(prior.points > 0 && prior.points % 2 == 0, "prior.points must be even and > 0");
  require(shape.points > 0 && shape.points % 2 == 0, "shape.points must be even and > 0");
  require(texture.points > 0 && texture.points % 2 == 0, "texture.points must be even and > 0");
  require(prior.sigma >= 0 && shape.sigma >= 0 && texture.sigma >= 0, "sigma must be >= 0");
  require(prior.weight_normal >= 0 && prior.weight_depth >= 0 && prior.weight_sdf >= 0 && prior.weight_color >= 0,
          "prior loss weights must be >= 0");
  require(prior.n_corpus >= 0 && prior.n_synth >= 1, "prior.n_synth must be >= 1 and prior.n_corpus >= 0");
  require(prior.fg_min >= 0 && prior.fg_min < prior.fg_max && prior.fg_max <= 1, "prior.fg_min < prior.fg_max in [0,1]");
  require(prior.max_attempts_per_synth >= 1, "prior.max_attempts_per_synth must be >= 1");
  require(prior.lambda_reg >= 0 && prior.r1_every >= 1, "prior R1 settings invalid");

  require(shape.steps >= 0 && texture.steps >= 0 && refine.steps >= 0, "stage step counts must be >= 0");
  for (double w : {shape.lambda_sdf, shape.lambda_sv, shape.lambda_normal, shape.lambda_depth, shape.lambda_adv,
                   shape.lambda_reg})
    require(w >= 0, "shape loss weights must be >= 0");
  for (double w : {texture.lambda_rgb, texture.lambda_tv, texture.lambda_adv, texture.lambda_reg})
    require(w >= 0, "texture loss weights must be >= 0");
  require(shape.r1_every >= 1 && texture.r1_every >= 1, "r1_every must be >= 1");
  require(texture.unpaired_fraction >= 0 && texture.unpaired_fraction <= 1, "texture.unpaired_fraction must be in [0,1]");
  require(shape.validation_size >= 1 && texture.validation_size >= 1 && refine.validation_size >= 1,
          "validation sizes must be >= 1");
  require(refine.lambda_r >= 0 && refine.lambda_p >= 0, "refine loss weights must be >= 0");
  require(refine.views >= 1 && refine.records >= 1, "refine.views and refine.records must be >= 1");
  require(shape.checkpoint_every >= 1 && texture.checkpoint_every >= 1 && refine.checkpoint_every >= 1 &&
              prior.checkpoint_every >= 1,
          "checkpoint intervals must be >= 1");
  require(eval.cloud_points >= 1 && eval.fid_views >= 1, "eval sizes must be >= 1");
  // Fitting a Gaussian to the 33-dimensional cloud descriptor needs 34 clouds.
  require(eval.samples >= 34, "eval.samples must be >= 34");
  require(invert.steps >= 1 && invert.lr > 0 && invert.restarts >= 1, "invert settings invalid");
}

Json config_to_json(const RunConfig& c) {
  Json j = Json::object();
  Writer w{j};
  const_cast<RunConfig&>(c).fields(w);
  return j;
}

std::string RunConfig::hash() const {
  Json j = config_to_json(*this);
  j.erase("run_dir");
  return hex64(fnv1a64(j.dump()));
}

RunConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  RunConfig c;
  Reader::read_struct(j, c, "");
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  Json j;
  try {
    j = read_json(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return config_from_json(j);
}

void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = Json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace hgen
