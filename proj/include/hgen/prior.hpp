#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hgen/config.hpp"
#include "hgen/corpus.hpp"
#include "hgen/fields.hpp"
#include "hgen/nn.hpp"
#include "hgen/training.hpp"

// The frozen teacher: a pixel-aligned single-view reconstructor and a small
// style-based image generator, plus the pseudo ground truth they emit.
namespace hgen::prior {

/// Teacher depth below this value counts as foreground.
inline constexpr double kForegroundDepth = 0.9;

struct ReconstructorOutput {
  ag::Var normal;  ///< [N,3,H,W], tanh range
  ag::Var depth;   ///< [N,1,H,W], tanh range
  ag::Var f_sv;    ///< [N,C_sv,H_f,H_f]
  ag::Var f_tv;    ///< [N,C_tv,H_f,H_f]
};

/// Image encoder with normal/depth heads at image resolution and shape /
/// texture feature heads at feature resolution, plus its field decoders.
class Reconstructor : public nn::Module {
 public:
  Reconstructor() = default;
  Reconstructor(const ModelConfig& model, Rng& rng);

  /// image [N,3,H,W] in [0,1].
  ReconstructorOutput forward(const ag::Var& image) const;
  /// Stem, hourglass bottleneck and hourglass output features.
  std::vector<ag::Var> perceptual_taps(const ag::Var& image) const;
  /// Hourglass output averaged over pixels: [N, width].
  ag::Var pooled_features(const ag::Var& image) const;
  void collect(nn::ParamRefs& out, const std::string& prefix) override;

  int image_size() const { return image_size_; }
  int feature_size() const { return feature_size_; }
  int pooled_width() const { return hourglass_.out_channels(); }

  FieldDecoder f_s, f_t;

 private:
  struct Trunk {
    std::vector<ag::Var> skips;
    std::vector<ag::Var> taps;
    ag::Var features;
  };
  Trunk trunk(const ag::Var& image) const;

  int image_size_ = 0;
  int feature_size_ = 0;
  nn::Conv2d stem_;
  std::vector<nn::Conv2d> downs_, ups_;
  nn::Hourglass hourglass_;
  nn::Conv2d head_sv_, head_tv_, head_out_;
};

/// Style-based image generator with a sigmoid output.
class Toy2DGenerator : public nn::Module {
 public:
  Toy2DGenerator() = default;
  Toy2DGenerator(const ModelConfig& model, Rng& rng);
  /// z [N, latent_dim] -> [N,3,H,W] in [0,1].
  ag::Var forward(const ag::Var& z) const;
  void collect(nn::ParamRefs& out, const std::string& prefix) override;
  int latent_dim() const { return net_.latent_dim(); }

 private:
  nn::StyleGenerator net_;
};

/// Row-major corpus arrays converted to network layout.
struct CorpusBatchItem {
  Tensor image;   ///< [3,H,W]
  Tensor normal;  ///< [3,H,W]
  Tensor depth;   ///< [1,H,W]
  corpus::CorpusSample sample;
};
CorpusBatchItem load_item(const corpus::CorpusManifest& manifest, const corpus::CorpusEntry& entry);

/// Loss terms of one reconstructor step (unweighted).
struct ReconstructorLoss {
  double normal = 0, depth = 0, sdf = 0, color = 0, total = 0;
};

/// One optimization step on the given batch; exposed for tests.
ReconstructorLoss reconstructor_step(Reconstructor& r, Adam& opt, const std::vector<CorpusBatchItem>& batch,
                                     const PriorConfig& cfg, Rng& rng);

/// Jointly trains encoder, f_s and f_t on the corpus training split
/// (at least 500 samples) and returns the frozen teacher.
Reconstructor train_reconstructor(const corpus::CorpusManifest& corpus, const RunConfig& config,
                                  const TrainHooks& hooks = {});

struct Reconstruction {
  Tensor normal;  ///< [3,H,W]
  Tensor depth;   ///< [1,H,W]
  FeatureMap f_sv, f_tv;
};
/// Deterministic forward pass on one [3,H,W] image.
Reconstruction reconstruct(const Reconstructor& r, const Tensor& image);
std::vector<Reconstruction> reconstruct_batch(const Reconstructor& r, const Tensor& images);

/// Non-saturating GAN with R1 on frontal corpus renders (at least 500).
Toy2DGenerator train_2d_generator(const corpus::CorpusManifest& corpus, const RunConfig& config,
                                  const TrainHooks& hooks = {});

enum class Source { kCorpus, kSynthesized };

struct PseudoGT {
  Tensor image;   ///< [3,H,W]
  Tensor normal;  ///< [3,H,W]
  Tensor depth;   ///< [1,H,W]
  FeatureMap f_sv_gt, f_tv_gt;
  std::optional<std::vector<double>> latent;  ///< present iff synthesized
  Source source = Source::kCorpus;
  std::uint64_t seed = 0;  ///< corpus body seed or latent draw index
  bool eval = false;

  /// Teacher foreground (depth below kForegroundDepth) as a row-major mask.
  std::vector<std::uint8_t> mask() const;
  double foreground_fraction() const;
};

struct PseudoGTEntry {
  std::string dir;
  Source source = Source::kCorpus;
  bool eval = false;
  std::uint64_t seed = 0;
};

/// On-disk pseudo-GT collection; records are read from disk on demand.
class PseudoGTDataset {
 public:
  static PseudoGTDataset open(const fs::path& dir);

  std::size_t size() const { return entries_.size(); }
  const PseudoGTEntry& entry(std::size_t i) const { return entries_[i]; }
  PseudoGT load(std::size_t i) const;
  /// Indices of records matching the filter.
  std::vector<std::size_t> select(std::optional<Source> source, std::optional<bool> eval) const;
  const Json& manifest() const { return manifest_; }

 private:
  fs::path root_;
  Json manifest_;
  std::vector<PseudoGTEntry> entries_;
  std::vector<int> shape_;  ///< image, feature size, c_sv, c_tv, latent_dim
};

/// Several records stacked for one training step.
struct PseudoGTBatch {
  std::vector<PseudoGT> records;
  Tensor latents;  ///< [N, latent_dim]; empty unless every record has a latent
  Tensor normal;   ///< [N,3,H,W]
  Tensor depth;    ///< [N,1,H,W]
  Tensor f_sv;     ///< [N,C_sv,H_f,W_f]
  Tensor f_tv;     ///< [N,C_tv,H_f,W_f]
  int size() const { return static_cast<int>(records.size()); }
};
PseudoGTBatch load_batch(const PseudoGTDataset& data, std::span<const std::size_t> indices);

/// Up to `n` synthesized records for validation: eval-split records first,
/// then training records from the end of the list.
std::vector<std::size_t> validation_indices(const PseudoGTDataset& data, int n);

void write_pseudo_gt(const fs::path& dir, const PseudoGT& record, const std::string& config_hash);
PseudoGT read_pseudo_gt(const fs::path& dir);

/// Reconstructs `n_corpus` training-split corpus images and `n_synth`
/// generator samples (latents drawn from N(0,I), rounded to float32, kept
/// when the teacher foreground fraction lies in (fg_min, fg_max)) and
/// writes them with a per-source train/eval split.
PseudoGTDataset extract_pseudo_gt(const Reconstructor& r, const Toy2DGenerator& g2d,
                                  const corpus::CorpusManifest& corpus, int n_corpus, int n_synth,
                                  std::uint64_t seed, const fs::path& out_dir, const RunConfig& config);

}  // namespace hgen::prior
