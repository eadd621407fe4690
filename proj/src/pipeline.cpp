#include "hgen/pipeline.hpp"

namespace hgen::pipeline {
namespace {

Json stage_meta(const std::string& stage, const RunConfig& config) {
  return {{"stage", stage}, {"config_hash", config.hash()}};
}

TrainHooks hooks_for(const fs::path& stage_dir, const std::string& stage, const RunConfig& config, LossLog& log,
                     int every) {
  TrainHooks h;
  h.log = &log;
  h.checkpoint_every = every;
  h.checkpoint = [stage_dir, stage, &config](int step, const std::string& tag, const NamedModules& modules) {
    const fs::path dir = stage_dir / "checkpoints" / (tag + "_" + std::to_string(step));
    ensure_directory(dir);
    Json meta = stage_meta(stage, config);
    meta["step"] = step;
    for (const auto& [name, module] : modules) save_checkpoint(dir / name, *module, meta);
    return dir;
  };
  return h;
}

void save_module(const fs::path& stage_dir, const std::string& name, nn::Module& m, const std::string& stage,
                 const RunConfig& config) {
  save_checkpoint(module_stem(stage_dir, name), m, stage_meta(stage, config));
}

void load_module(const fs::path& stage_dir, const std::string& name, nn::Module& m) {
  const fs::path stem = module_stem(stage_dir, name);
  if (!fs::exists(fs::path(stem).concat(".bin"))) throw MissingPrerequisite(fs::path(stem).concat(".bin"));
  load_checkpoint(stem, m);
}

void finish_stage(const fs::path& dir, const std::string& stage, const RunConfig& config, const LossLog* log,
                  Json summary = Json::object()) {
  if (log) log->write_csv(dir / "losses.csv");
  Json j = stage_meta(stage, config);
  j["summary"] = std::move(summary);
  write_json(dir / "stage.json", j);
}

// Checksums of modules a stage must leave untouched, taken before training
// and compared afterwards.
class FrozenSet {
 public:
  void add(const std::string& name, const nn::Module& m) { entries_.push_back({name, &m, m.checksum()}); }
  Json report() const {
    Json j = Json::object();
    for (const auto& e : entries_) j[e.name] = {{"before", hex64(e.before)}, {"after", hex64(e.module->checksum())}};
    return j;
  }

 private:
  struct Entry {
    std::string name;
    const nn::Module* module;
    std::uint64_t before;
  };
  std::vector<Entry> entries_;
};

corpus::CorpusManifest require_corpus(const RunDir& run) {
  run.require_stage(run.corpus());
  return corpus::load_corpus_manifest(run.corpus());
}

void require_teacher(const RunDir& run, const RunConfig& config, prior::Reconstructor& teacher) {
  run.require_stage(run.prior());
  Rng rng = stage_rng(config.seed, "prior.reconstructor.init");
  teacher = prior::Reconstructor(config.model, rng);
  load_module(run.prior(), "reconstructor", teacher);
  teacher.set_trainable(false);
}

}  // namespace

MissingPrerequisite::MissingPrerequisite(const fs::path& artifact)
    : std::runtime_error("missing prerequisite: " + artifact.string()), artifact_(artifact) {}

Json RunDir::require_stage(const fs::path& dir) const {
  const fs::path p = dir / "stage.json";
  if (!fs::exists(p)) throw MissingPrerequisite(p);
  return read_json(p);
}

fs::path module_stem(const fs::path& stage_dir, const std::string& name) { return stage_dir / name; }

corpus::CorpusManifest run_corpus_gen(const RunDir& run, const RunConfig& config) {
  ensure_directory(run.root);
  write_json(run.config(), config_to_json(config));
  auto m = corpus::generate_corpus(config.corpus.n, config.corpus.seed, run.corpus(), config.model.image_size,
                                   config.hash());
  finish_stage(run.corpus(), "corpus", config, nullptr,
               {{"n", config.corpus.n}, {"eval", m.split(true).size()}, {"train", m.split(false).size()}});
  return m;
}

void run_train_prior(const RunDir& run, const RunConfig& config) {
  const auto corpus = require_corpus(run);
  ensure_directory(run.prior());
  LossLog log;
  const auto hooks = hooks_for(run.prior(), "prior", config, log, config.prior.checkpoint_every);
  auto recon = prior::train_reconstructor(corpus, config, hooks);
  save_module(run.prior(), "reconstructor", recon, "prior", config);
  auto gen = prior::train_2d_generator(corpus, config, hooks);
  save_module(run.prior(), "generator", gen, "prior", config);
  const int rs = config.prior.reconstructor_steps, gs = config.prior.generator_steps;
  finish_stage(run.prior(), "prior", config, &log,
               {{"reconstructor_final_normal", log.mean("normal", std::max(1, rs - 19), rs)},
                {"reconstructor_final_sdf", log.mean("sdf", std::max(1, rs - 19), rs)},
                {"generator_steps", gs}});
}

prior::PseudoGTDataset run_extract_priors(const RunDir& run, const RunConfig& config) {
  const auto corpus = require_corpus(run);
  prior::Reconstructor teacher;
  require_teacher(run, config, teacher);
  Rng rng = stage_rng(config.seed, "prior.generator.init");
  prior::Toy2DGenerator gen(config.model, rng);
  load_module(run.prior(), "generator", gen);
  gen.set_trainable(false);
  auto data = prior::extract_pseudo_gt(teacher, gen, corpus, config.prior.n_corpus, config.prior.n_synth,
                                       config.seed, run.pseudo_gt(), config);
  finish_stage(run.pseudo_gt(), "pseudo_gt", config, nullptr, {{"records", data.size()}});
  return data;
}

shape::ShapeStageResult run_train_shape(const RunDir& run, const RunConfig& config) {
  prior::Reconstructor teacher;
  require_teacher(run, config, teacher);
  run.require_stage(run.pseudo_gt());
  const auto data = prior::PseudoGTDataset::open(run.pseudo_gt());
  ensure_directory(run.shape());
  FrozenSet frozen;
  frozen.add("f_s", teacher.f_s);
  frozen.add("f_t", teacher.f_t);
  LossLog log;
  auto res = shape::train_shape_stage(data, teacher.f_s, config,
                                      hooks_for(run.shape(), "shape", config, log, config.shape.checkpoint_every));
  save_module(run.shape(), "generator", res.generator, "shape", config);
  save_module(run.shape(), "discriminator", res.discriminator, "shape", config);
  finish_stage(run.shape(), "shape", config, &log,
               {{"val_sv_initial", res.initial.sv}, {"val_sv_final", res.final.sv},
                {"val_normal_initial", res.initial.normal}, {"val_normal_final", res.final.normal},
                {"val_depth_initial", res.initial.depth}, {"val_depth_final", res.final.depth},
                {"frozen", frozen.report()}});
  return res;
}

texture::TextureStageResult run_train_texture(const RunDir& run, const RunConfig& config) {
  prior::Reconstructor teacher;
  require_teacher(run, config, teacher);
  run.require_stage(run.shape());
  run.require_stage(run.pseudo_gt());
  Rng rng = stage_rng(config.seed, "shape.init");
  shape::ShapeGenerator shape(config.model, rng);
  load_module(run.shape(), "generator", shape);
  shape.set_trainable(false);
  const auto data = prior::PseudoGTDataset::open(run.pseudo_gt());
  ensure_directory(run.texture());
  FrozenSet frozen;
  frozen.add("f_s", teacher.f_s);
  frozen.add("f_t", teacher.f_t);
  frozen.add("shape", shape);
  LossLog log;
  auto res = texture::train_texture_stage(
      data, shape, teacher.f_t, config, hooks_for(run.texture(), "texture", config, log, config.texture.checkpoint_every));
  save_module(run.texture(), "generator", res.generator, "texture", config);
  save_module(run.texture(), "discriminator", res.discriminator, "texture", config);
  finish_stage(run.texture(), "texture", config, &log,
               {{"val_tv_initial", res.initial.tv}, {"val_tv_final", res.final.tv},
                {"paired_steps", res.paired_steps}, {"unpaired_steps", res.unpaired_steps},
                {"frozen", frozen.report()}});
  return res;
}

refine::RefineStageResult run_train_refine(const RunDir& run, const RunConfig& config) {
  const auto corpus = require_corpus(run);
  Models m = load_models(run, config, true, false);
  ensure_directory(run.refine());
  FrozenSet frozen;
  frozen.add("teacher", m.teacher);
  frozen.add("shape", m.shape);
  frozen.add("texture", m.texture);
  LossLog log;
  auto res = refine::train_refine_stage(m.teacher, corpus, config,
                                        hooks_for(run.refine(), "refine", config, log, config.refine.checkpoint_every));
  save_module(run.refine(), "refiner", res.refiner, "refine", config);
  finish_stage(run.refine(), "refine", config, &log,
               {{"val_initial", res.initial}, {"val_final", res.final}, {"val_identity", res.identity},
                 {"frozen", frozen.report()}});
  return res;
}

app::GeneratorState Models::state(const RunConfig& config) const {
  app::GeneratorState s;
  s.shape = &shape;
  s.texture = &texture;
  s.f_s = &teacher.f_s;
  s.f_t = &teacher.f_t;
  s.refiner = refiner.get();
  s.image_size = config.model.image_size;
  s.refine_views = config.refine.views;
  return s;
}

Models load_models(const RunDir& run, const RunConfig& config, bool need_texture, bool need_refiner) {
  Models m;
  require_teacher(run, config, m.teacher);
  run.require_stage(run.shape());
  Rng rs = stage_rng(config.seed, "shape.init");
  m.shape = shape::ShapeGenerator(config.model, rs);
  load_module(run.shape(), "generator", m.shape);
  m.shape.set_trainable(false);
  Rng rt = stage_rng(config.seed, "texture.init");
  m.texture = texture::TextureGenerator(config.model, rt);
  if (need_texture || fs::exists(run.texture() / "stage.json")) {
    run.require_stage(run.texture());
    load_module(run.texture(), "generator", m.texture);
  }
  m.texture.set_trainable(false);
  if (need_refiner || fs::exists(run.refine() / "stage.json")) {
    run.require_stage(run.refine());
    Rng rr = stage_rng(config.seed, "refine.init");
    m.refiner = std::make_unique<refine::RefinerNet>(refine::make_refiner(config.model, rr));
    load_module(run.refine(), "refiner", *m.refiner);
    m.refiner->set_trainable(false);
  }
  return m;
}

Models untrained_models(const RunDir& run, const RunConfig& config) {
  Models m;
  require_teacher(run, config, m.teacher);
  Rng rs = stage_rng(config.seed, "shape.init");
  m.shape = shape::ShapeGenerator(config.model, rs);
  Rng rt = stage_rng(config.seed, "texture.init");
  m.texture = texture::TextureGenerator(config.model, rt);
  m.shape.set_trainable(false);
  m.texture.set_trainable(false);
  return m;
}

eval::MetricReport run_evaluate(const RunDir& run, const RunConfig& config) {
  const auto corpus = require_corpus(run);
  const Models m = load_models(run, config, true, false);
  const auto report = eval::evaluate_model({m.state(config), &m.teacher, &corpus}, config);
  eval::write_report(run.eval(), report);
  finish_stage(run.eval(), "eval", config, nullptr, report.to_json());
  return report;
}

eval::MetricReport run_all(const RunDir& run, const RunConfig& config) {
  run_corpus_gen(run, config);
  run_train_prior(run, config);
  run_extract_priors(run, config);
  run_train_shape(run, config);
  run_train_texture(run, config);
  run_train_refine(run, config);
  return run_evaluate(run, config);
}

}  // namespace hgen::pipeline
