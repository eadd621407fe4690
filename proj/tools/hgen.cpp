#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "hgen/checks.hpp"
#include "hgen/pipeline.hpp"

using namespace hgen;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitMissing = 2;
constexpr int kExitConfig = 3;

struct Common {
  std::string out;
  std::string config_path;
  std::string preset;
  std::vector<std::string> overrides;
};

void log(const std::string& line) { std::cerr << "hgen: " << line << std::endl; }

std::string default_run_dir() {
  const char* env = std::getenv("HGEN_RUN_DIR");
  return env && *env ? env : "hgen_run";
}

// Base JSON, in priority order: --preset, the run's own config.json (unless
// starting a new run), built-in defaults. Then --config is merged on top,
// followed by --set overrides and `extra`.
RunConfig resolve_config(const Common& c, const pipeline::RunDir& run, bool fresh,
                         const std::vector<std::string>& extra = {}) {
  Json j;
  if (!c.preset.empty()) {
    if (c.preset == "tiny")
      j = config_to_json(RunConfig::tiny());
    else if (c.preset == "default")
      j = config_to_json(RunConfig{});
    else
      throw ConfigError("unknown preset '" + c.preset + "' (expected default or tiny)");
  } else if (!fresh && fs::exists(run.config())) {
    j = read_json(run.config());
  } else {
    j = config_to_json(RunConfig{});
  }
  if (!c.config_path.empty()) {
    Json file;
    try {
      file = read_json(c.config_path);
    } catch (const Json::exception& e) {
      throw ConfigError(c.config_path + ": " + e.what());
    }
    if (!file.is_object()) throw ConfigError(c.config_path + ": top level must be an object");
    j.merge_patch(file);
  }
  for (const auto& s : c.overrides) apply_override(j, s);
  for (const auto& s : extra) apply_override(j, s);
  return config_from_json(j);
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  std::string elapsed() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return buf;
  }
};

void print_summary(const pipeline::RunDir& run, const fs::path& stage_dir) {
  const Json stage = run.require_stage(stage_dir);
  std::cout << stage["stage"].get<std::string>() << " " << stage["config_hash"].get<std::string>() << " "
            << stage["summary"].dump() << "\n";
}

// Writes `<outputs>/<name>.ply` and a sidecar `<name>.json` recording how
// it was produced.
void write_mesh_output(const pipeline::RunDir& run, const std::string& name, const app::Generated& g, Json meta) {
  ensure_directory(run.outputs());
  const fs::path ply = run.outputs() / (name + ".ply");
  write_ply(ply, g.mesh);
  meta["vertices"] = g.mesh.vertices.size();
  meta["faces"] = g.mesh.faces.size();
  meta["empty"] = g.empty();
  write_json(run.outputs() / (name + ".json"), meta);
  if (g.empty()) log("warning: " + name + " produced an empty mesh");
  std::cout << ply.string() << "\n";
}

Json output_meta(const std::string& command, const RunConfig& config) {
  return {{"command", command}, {"config_hash", config.hash()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hgen: two-branch textured 3D human generator trained from 2D priors"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  common.out = default_run_dir();
  app.add_option("--out", common.out, "Run directory (default $HGEN_RUN_DIR or ./hgen_run)");
  app.add_option("--config", common.config_path, "JSON config merged over the run's config");
  app.add_option("--preset", common.preset, "Base settings: default or tiny");
  app.add_option("--set", common.overrides, "Override one config key, e.g. --set shape.steps=500");

  std::function<int()> action;

  // Stage commands.
  auto* corpus_gen = app.add_subcommand("corpus-gen", "Render the synthetic corpus and start a run directory");
  std::optional<int> corpus_n;
  std::optional<std::uint64_t> corpus_seed;
  corpus_gen->add_option("--n", corpus_n, "Number of samples");
  corpus_gen->add_option("--seed", corpus_seed, "Corpus seed");
  corpus_gen->callback([&] {
    action = [&] {
      const pipeline::RunDir run{common.out};
      std::vector<std::string> extra;
      if (corpus_n) extra.push_back("corpus.n=" + std::to_string(*corpus_n));
      if (corpus_seed) extra.push_back("corpus.seed=" + std::to_string(*corpus_seed));
      const auto config = resolve_config(common, run, true, extra);
      Timer t;
      const auto m = pipeline::run_corpus_gen(run, config);
      log("corpus-gen: " + std::to_string(m.split(false).size()) + " train / " + std::to_string(m.split(true).size()) +
          " eval samples in " + t.elapsed());
      print_summary(run, run.corpus());
      return 0;
    };
  });

  std::optional<std::uint64_t> stage_seed;
  auto stage = [&](const char* name, const char* help, std::function<void(const pipeline::RunDir&, const RunConfig&)> run_fn,
                   std::function<fs::path(const pipeline::RunDir&)> dir) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("--seed", stage_seed, "Run seed (config key `seed`)");
    cmd->callback([&, name, run_fn, dir] {
      action = [&, name, run_fn, dir] {
        const pipeline::RunDir run{common.out};
        std::vector<std::string> extra;
        if (stage_seed) extra.push_back("seed=" + std::to_string(*stage_seed));
        const auto config = resolve_config(common, run, false, extra);
        Timer t;
        log(std::string(name) + ": config " + config.hash());
        run_fn(run, config);
        log(std::string(name) + ": done in " + t.elapsed());
        print_summary(run, dir(run));
        return 0;
      };
    });
  };
  stage("train-prior", "Train the teacher reconstructor and the 2D image generator",
        [](auto& r, auto& c) { pipeline::run_train_prior(r, c); }, [](auto& r) { return r.prior(); });
  stage("extract-priors", "Build the pseudo ground-truth set from the frozen teacher",
        [](auto& r, auto& c) { pipeline::run_extract_priors(r, c); }, [](auto& r) { return r.pseudo_gt(); });
  stage("train-shape", "Train the shape branch", [](auto& r, auto& c) { pipeline::run_train_shape(r, c); },
        [](auto& r) { return r.shape(); });
  stage("train-texture", "Train the texture branch", [](auto& r, auto& c) { pipeline::run_train_texture(r, c); },
        [](auto& r) { return r.texture(); });
  stage("train-refine", "Train the image refiner", [](auto& r, auto& c) { pipeline::run_train_refine(r, c); },
        [](auto& r) { return r.refine(); });

  auto* evaluate = app.add_subcommand("evaluate", "Compute COV, MMD, FPD, FID and FID3D for the trained model");
  evaluate->callback([&] {
    action = [&] {
      const pipeline::RunDir run{common.out};
      const auto config = resolve_config(common, run, false);
      Timer t;
      const auto report = pipeline::run_evaluate(run, config);
      log("evaluate: done in " + t.elapsed() + ", report in " + run.eval().string());
      std::cout << report.table_row() << "  [" << report.config_hash << "]\n";
      return 0;
    };
  });

  // Application commands.
  std::uint64_t gen_seed = 0;
  int mesh_res = 0;
  bool no_refine = false;
  auto mesh_options = [&](CLI::App* cmd) {
    cmd->add_option("--resolution", mesh_res, "Marching-cubes grid resolution (default model.mesh_resolution)");
    cmd->add_flag("--no-refine", no_refine, "Paint with raw field colors even when a refiner is trained");
  };
  auto with_models = [&](const std::function<void(const pipeline::RunDir&, const RunConfig&, const pipeline::Models&,
                                                  app::GeneratorState, int, bool)>& fn) {
    const pipeline::RunDir run{common.out};
    const auto config = resolve_config(common, run, false);
    const auto models = pipeline::load_models(run, config, true, false);
    const auto state = models.state(config);
    const bool refine = !no_refine && models.refiner;
    fn(run, config, models, state, mesh_res > 0 ? mesh_res : config.model.mesh_resolution, refine);
  };

  auto* generate = app.add_subcommand("generate", "Sample latents and write a textured PLY mesh");
  generate->add_option("--seed", gen_seed, "Latent seed");
  int count = 1;
  generate->add_option("--count", count, "Number of meshes (seeds seed, seed+1, ...)")->check(CLI::PositiveNumber);
  mesh_options(generate);
  generate->callback([&] {
    action = [&] {
      with_models([&](auto& run, auto& config, auto&, auto state, int res, bool refine) {
        for (int k = 0; k < count; ++k) {
          const std::uint64_t seed = gen_seed + k;
          Rng rng = stage_rng(seed, "generate");
          const auto g = app::generate(state, app::sample_latents(state.latent_dim(), rng), res, refine);
          Json meta = output_meta("generate", config);
          meta["seed"] = seed;
          meta["refined"] = refine;
          meta["resolution"] = res;
          write_mesh_output(run, "generate_s" + std::to_string(seed) + "_" + config.hash(), g, meta);
        }
      });
      return 0;
    };
  });

  auto* retex = app.add_subcommand("retexture", "Several colorings of one generated shape");
  int codes = 5;
  retex->add_option("--seed", gen_seed, "Shape latent seed");
  retex->add_option("--codes", codes, "Number of texture codes")->check(CLI::PositiveNumber);
  mesh_options(retex);
  retex->callback([&] {
    action = [&] {
      with_models([&](auto& run, auto& config, auto&, auto state, int res, bool refine) {
        Rng rng = stage_rng(gen_seed, "generate");
        const auto z = app::sample_latents(state.latent_dim(), rng);
        Rng code_rng = stage_rng(gen_seed, "retexture.codes");
        std::vector<std::vector<double>> zt;
        for (int k = 0; k < codes; ++k) zt.push_back(app::sample_latents(state.latent_dim(), code_rng).z_t);
        const auto meshes = app::retexture(state, z.z_s, zt, res, refine);
        for (int k = 0; k < codes; ++k) {
          Json meta = output_meta("retexture", config);
          meta["seed"] = gen_seed;
          meta["code"] = k;
          meta["refined"] = refine;
          write_mesh_output(run, "retexture_s" + std::to_string(gen_seed) + "_t" + std::to_string(k) + "_" + config.hash(),
                            meshes[k], meta);
        }
      });
      return 0;
    };
  });

  auto* interp = app.add_subcommand("interpolate", "Meshes along a straight line between two latent pairs");
  std::uint64_t from = 0, to = 1;
  int steps = 5;
  interp->add_option("--from", from, "Start latent seed");
  interp->add_option("--to", to, "End latent seed");
  interp->add_option("--steps", steps, "Number of meshes including both ends")->check(CLI::Range(2, 1000));
  mesh_options(interp);
  interp->callback([&] {
    action = [&] {
      with_models([&](auto& run, auto& config, auto&, auto state, int res, bool refine) {
        Rng ra = stage_rng(from, "generate"), rb = stage_rng(to, "generate");
        const auto a = app::sample_latents(state.latent_dim(), ra), b = app::sample_latents(state.latent_dim(), rb);
        const auto seq = app::interpolate(state, a, b, steps, res, refine);
        for (int k = 0; k < steps; ++k) {
          Json meta = output_meta("interpolate", config);
          meta["from"] = from;
          meta["to"] = to;
          meta["t"] = static_cast<double>(k) / (steps - 1);
          meta["refined"] = refine;
          write_mesh_output(run,
                            "interpolate_" + std::to_string(from) + "_" + std::to_string(to) + "_" + std::to_string(k) +
                                "_" + config.hash(),
                            seq[k], meta);
        }
      });
      return 0;
    };
  });

  auto* inv = app.add_subcommand("invert", "Recover latents for a reference image and write a JSON report");
  std::string image_path;
  std::optional<int> eval_index;
  std::optional<std::uint64_t> inv_seed;
  auto* image_opt = inv->add_option("--image", image_path, "Reference PNG at the model's image size");
  inv->add_option("--index", eval_index, "Use this entry of the corpus evaluation split instead")->excludes(image_opt);
  inv->add_option("--seed", inv_seed, "Restart seed (default: run seed)");
  mesh_options(inv);
  inv->callback([&] {
    action = [&] {
      if (image_path.empty() && !eval_index) throw CLI::ValidationError("invert", "give --image or --index");
      with_models([&](auto& run, auto& config, auto& models, auto state, int res, bool refine) {
        Tensor image;
        std::string tag;
        if (eval_index) {
          run.require_stage(run.corpus());
          const auto corpus = corpus::load_corpus_manifest(run.corpus());
          const auto split = corpus.split(true);
          if (*eval_index < 0 || *eval_index >= static_cast<int>(split.size()))
            throw ConfigError("--index " + std::to_string(*eval_index) + " outside the evaluation split of " +
                              std::to_string(split.size()));
          image = prior::load_item(corpus, split[*eval_index]).image;
          tag = "eval" + std::to_string(*eval_index);
        } else {
          const auto png = read_png(image_path);
          image = hwc_to_chw(png.rgb, png.height, png.width, 3);
          tag = fs::path(image_path).stem().string();
        }
        const std::uint64_t seed = inv_seed ? *inv_seed : config.seed;
        auto result = app::invert(state, models.teacher, image, config.invert, seed, res);
        if (refine) result.generated = app::generate(state, result.z, res, true);
        Json report = output_meta("invert", config);
        report["reference"] = eval_index ? Json("eval split entry " + std::to_string(*eval_index)) : Json(image_path);
        report["seed"] = seed;
        report["result"] = result.report();
        report["z_s"] = result.z.z_s;
        report["z_t"] = result.z.z_t;
        const std::string name = "invert_" + tag + "_" + config.hash();
        ensure_directory(run.outputs());
        write_json(run.outputs() / (name + "_report.json"), report);
        write_mesh_output(run, name, result.generated, output_meta("invert", config));
        std::cout << (run.outputs() / (name + "_report.json")).string() << "\n";
        log("invert: field loss " + std::to_string(result.loss) + " from restart " + std::to_string(result.chosen));
      });
      return 0;
    };
  });

  auto* selftest = app.add_subcommand("selftest", "Run the acceptance suite and print one line per property");
  bool full = false;
  std::string work;
  selftest->add_flag("--full", full, "Include the criteria that train the toy pipeline twice (minutes)");
  selftest->add_option("--work", work, "Scratch directory for the pipeline criteria");
  selftest->callback([&] {
    action = [&] {
      checks::SuiteOptions opts;
      opts.pipeline = full;
      opts.work_dir = work;
      if (full) {
        Common c = common;
        if (c.preset.empty() && c.config_path.empty()) c.preset = "tiny";
        opts.config = resolve_config(c, pipeline::RunDir{work}, true);
      }
      bool ok = true;
      checks::run_suite(opts, [&ok](const checks::CheckResult& r) {
        ok = ok && r.passed;
        std::cout << checks::format_result(r) << std::endl;
      });
      return ok ? 0 : kExitFailure;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return action();
  } catch (const pipeline::MissingPrerequisite& e) {
    std::cerr << "hgen: missing prerequisite: " << e.artifact().string() << "\n";
    return kExitMissing;
  } catch (const ConfigError& e) {
    std::cerr << "hgen: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "hgen: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "hgen: error: " << e.what() << "\n";
    return kExitFailure;
  }
}
