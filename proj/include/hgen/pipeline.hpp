#pragma once

#include <memory>
#include <stdexcept>

#include "hgen/apps.hpp"
#include "hgen/eval.hpp"

// Stage drivers over one run directory:
//   config.json
//   corpus/     manifest.json + samples
//   prior/      reconstructor, generator
//   pseudo_gt/  manifest.json + records
//   shape/      generator, discriminator
//   texture/    generator, discriminator
//   refine/     refiner
//   eval/       metrics.json, metrics.csv
//   outputs/    meshes and reports from the application commands
// Every stage directory holds stage.json (stage name, config hash, summary
// numbers) and losses.csv; periodic checkpoints go to <stage>/checkpoints.
namespace hgen::pipeline {

/// A stage was asked to run before an output it depends on exists.
class MissingPrerequisite : public std::runtime_error {
 public:
  explicit MissingPrerequisite(const fs::path& artifact);
  const fs::path& artifact() const { return artifact_; }

 private:
  fs::path artifact_;
};

struct RunDir {
  fs::path root;

  fs::path config() const { return root / "config.json"; }
  fs::path corpus() const { return root / "corpus"; }
  fs::path prior() const { return root / "prior"; }
  fs::path pseudo_gt() const { return root / "pseudo_gt"; }
  fs::path shape() const { return root / "shape"; }
  fs::path texture() const { return root / "texture"; }
  fs::path refine() const { return root / "refine"; }
  fs::path eval() const { return root / "eval"; }
  fs::path outputs() const { return root / "outputs"; }
  /// `<dir>/stage.json`; throws MissingPrerequisite when absent.
  Json require_stage(const fs::path& dir) const;
};

/// Writes config.json and the corpus.
corpus::CorpusManifest run_corpus_gen(const RunDir& run, const RunConfig& config);
void run_train_prior(const RunDir& run, const RunConfig& config);
prior::PseudoGTDataset run_extract_priors(const RunDir& run, const RunConfig& config);
shape::ShapeStageResult run_train_shape(const RunDir& run, const RunConfig& config);
texture::TextureStageResult run_train_texture(const RunDir& run, const RunConfig& config);
refine::RefineStageResult run_train_refine(const RunDir& run, const RunConfig& config);
eval::MetricReport run_evaluate(const RunDir& run, const RunConfig& config);
/// Every stage in order.
eval::MetricReport run_all(const RunDir& run, const RunConfig& config);

/// Trained modules restored from a run directory.
struct Models {
  prior::Reconstructor teacher;
  shape::ShapeGenerator shape;
  texture::TextureGenerator texture;
  std::unique_ptr<refine::RefinerNet> refiner;

  app::GeneratorState state(const RunConfig& config) const;
};
/// Loads the teacher plus whichever student stages exist; throws
/// MissingPrerequisite for absent required ones.
Models load_models(const RunDir& run, const RunConfig& config, bool need_texture = true, bool need_refiner = false);
/// The same architecture at its seeded initialization (no training).
Models untrained_models(const RunDir& run, const RunConfig& config);

/// Checkpoint file stem for module `name` of a stage directory.
fs::path module_stem(const fs::path& stage_dir, const std::string& name);

}  // namespace hgen::pipeline
