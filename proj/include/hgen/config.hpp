#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hgen/io.hpp"
#include "hgen/optim.hpp"

namespace hgen {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every config struct lists its fields once through `fields(v)`; JSON
// reading, writing and unknown-key rejection are driven from that list.

struct ModelConfig {
  int image_size = 128;
  int feature_size = 64;
  int mesh_resolution = 128;
  int latent_dim = 64;
  int style_dim = 64;
  int c_s = 16;
  int c_t = 16;
  int c_sv = 32;
  int c_tv = 32;
  int generator_width = 64;
  int encoder_width = 64;
  int discriminator_width = 32;
  int prior_width = 32;
  int refiner_width = 32;
  std::vector<int> decoder_hidden = {128, 128, 128, 128};

  template <class V>
  void fields(V& v) {
    v("image_size", image_size);
    v("feature_size", feature_size);
    v("mesh_resolution", mesh_resolution);
    v("latent_dim", latent_dim);
    v("style_dim", style_dim);
    v("c_s", c_s);
    v("c_t", c_t);
    v("c_sv", c_sv);
    v("c_tv", c_tv);
    v("generator_width", generator_width);
    v("encoder_width", encoder_width);
    v("discriminator_width", discriminator_width);
    v("prior_width", prior_width);
    v("refiner_width", refiner_width);
    v("decoder_hidden", decoder_hidden);
  }
};

struct CorpusConfig {
  int n = 2000;
  std::uint64_t seed = 1;

  template <class V>
  void fields(V& v) {
    v("n", n);
    v("seed", seed);
  }
};

struct AdamSettings {
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;

  AdamConfig adam(double lr_override = -1.0) const {
    return {lr_override > 0 ? lr_override : lr, beta1, beta2, 1e-8};
  }
  template <class V>
  void fields(V& v) {
    v("lr", lr);
    v("beta1", beta1);
    v("beta2", beta2);
  }
};

struct PriorConfig {
  int reconstructor_steps = 20000;
  int generator_steps = 20000;
  int batch = 8;
  AdamSettings reconstructor_optim{1e-3, 0.9, 0.999};
  AdamSettings generator_optim;
  double lr_discriminator = 2e-4;
  double weight_normal = 1.0;
  double weight_depth = 1.0;
  double weight_sdf = 10.0;
  double weight_color = 1.0;
  double lambda_reg = 10.0;
  int r1_every = 1;
  int points = 512;
  double sigma = 0.03;
  int n_corpus = 500;
  int n_synth = 1500;
  double fg_min = 0.05;
  double fg_max = 0.6;
  int max_attempts_per_synth = 20;
  int checkpoint_every = 1000;

  template <class V>
  void fields(V& v) {
    v("reconstructor_steps", reconstructor_steps);
    v("generator_steps", generator_steps);
    v("batch", batch);
    v("reconstructor_optim", reconstructor_optim);
    v("generator_optim", generator_optim);
    v("lr_discriminator", lr_discriminator);
    v("weight_normal", weight_normal);
    v("weight_depth", weight_depth);
    v("weight_sdf", weight_sdf);
    v("weight_color", weight_color);
    v("lambda_reg", lambda_reg);
    v("r1_every", r1_every);
    v("points", points);
    v("sigma", sigma);
    v("n_corpus", n_corpus);
    v("n_synth", n_synth);
    v("fg_min", fg_min);
    v("fg_max", fg_max);
    v("max_attempts_per_synth", max_attempts_per_synth);
    v("checkpoint_every", checkpoint_every);
  }
};

struct ShapeStageConfig {
  int steps = 20000;
  int batch = 8;
  AdamSettings optim;
  double lr_discriminator = 2e-4;
  double lambda_sdf = 20.0;
  double lambda_sv = 40.0;
  double lambda_normal = 20.0;
  double lambda_depth = 20.0;
  double lambda_adv = 1.0;
  double lambda_reg = 10.0;
  int r1_every = 1;
  int points = 512;
  double sigma = 0.03;
  int validation_size = 16;
  int checkpoint_every = 1000;

  template <class V>
  void fields(V& v) {
    v("steps", steps);
    v("batch", batch);
    v("optim", optim);
    v("lr_discriminator", lr_discriminator);
    v("lambda_sdf", lambda_sdf);
    v("lambda_sv", lambda_sv);
    v("lambda_normal", lambda_normal);
    v("lambda_depth", lambda_depth);
    v("lambda_adv", lambda_adv);
    v("lambda_reg", lambda_reg);
    v("r1_every", r1_every);
    v("points", points);
    v("sigma", sigma);
    v("validation_size", validation_size);
    v("checkpoint_every", checkpoint_every);
  }
};

struct TextureStageConfig {
  int steps = 20000;
  int batch = 8;
  AdamSettings optim;
  double lr_discriminator = 2e-4;
  double lambda_rgb = 20.0;
  double lambda_tv = 40.0;
  double lambda_adv = 1.0;
  double lambda_reg = 10.0;
  int r1_every = 1;
  double unpaired_fraction = 0.5;
  int points = 512;
  double sigma = 0.03;
  int validation_size = 16;
  int checkpoint_every = 1000;

  template <class V>
  void fields(V& v) {
    v("steps", steps);
    v("batch", batch);
    v("optim", optim);
    v("lr_discriminator", lr_discriminator);
    v("lambda_rgb", lambda_rgb);
    v("lambda_tv", lambda_tv);
    v("lambda_adv", lambda_adv);
    v("lambda_reg", lambda_reg);
    v("r1_every", r1_every);
    v("unpaired_fraction", unpaired_fraction);
    v("points", points);
    v("sigma", sigma);
    v("validation_size", validation_size);
    v("checkpoint_every", checkpoint_every);
  }
};

struct RefineStageConfig {
  int steps = 5000;
  int batch = 4;
  AdamSettings optim{2e-4, 0.9, 0.99};
  double lambda_r = 1.0;
  double lambda_p = 1.0;
  int views = 8;
  int records = 200;
  int validation_size = 16;
  int checkpoint_every = 1000;

  template <class V>
  void fields(V& v) {
    v("steps", steps);
    v("batch", batch);
    v("optim", optim);
    v("lambda_r", lambda_r);
    v("lambda_p", lambda_p);
    v("views", views);
    v("records", records);
    v("validation_size", validation_size);
    v("checkpoint_every", checkpoint_every);
  }
};

struct EvalConfig {
  int samples = 100;
  int cloud_points = 2048;
  int fid_views = 4;
  std::uint64_t seed = 7;

  template <class V>
  void fields(V& v) {
    v("samples", samples);
    v("cloud_points", cloud_points);
    v("fid_views", fid_views);
    v("seed", seed);
  }
};

struct InvertConfig {
  int steps = 500;
  double lr = 0.05;
  int restarts = 4;

  template <class V>
  void fields(V& v) {
    v("steps", steps);
    v("lr", lr);
    v("restarts", restarts);
  }
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string run_dir;  ///< excluded from the hash
  ModelConfig model;
  CorpusConfig corpus;
  PriorConfig prior;
  ShapeStageConfig shape;
  TextureStageConfig texture;
  RefineStageConfig refine;
  EvalConfig eval;
  InvertConfig invert;

  template <class V>
  void fields(V& v) {
    v("seed", seed);
    v("run_dir", run_dir);
    v("model", model);
    v("corpus", corpus);
    v("prior", prior);
    v("shape", shape);
    v("texture", texture);
    v("refine", refine);
    v("eval", eval);
    v("invert", invert);
  }

  /// Desk-scale settings used by the test suite: 32px images, 16px
  /// features and a few hundred steps per stage.
  static RunConfig tiny();

  /// Throws ConfigError naming the first offending field.
  void validate() const;
  /// FNV-1a of the canonical JSON without `run_dir`, as 16 hex digits.
  std::string hash() const;
};

Json config_to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys and type mismatches throw
/// ConfigError with the dotted key path. The result is validated.
RunConfig config_from_json(const Json& j);
RunConfig load_config(const fs::path& path);
/// Applies `a.b.c=value` style overrides (value parsed as JSON, falling
/// back to a string).
void apply_override(Json& j, const std::string& assignment);

}  // namespace hgen
