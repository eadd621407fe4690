#pragma once

#include <functional>
#include <stdexcept>
#include <string>

#include "hgen/autograd.hpp"
#include "hgen/io.hpp"
#include "hgen/nn.hpp"
#include "hgen/rng.hpp"

// Shared plumbing for the training loops: divergence handling, periodic
// checkpoints and image layout helpers.
namespace hgen {

/// Raised when a loss term turns non-finite. The weights from before the
/// failing step have been written to `checkpoint` (if a directory was
/// configured).
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& term, int step, fs::path checkpoint);
  const std::string& term() const { return term_; }
  int step() const { return step_; }
  const fs::path& checkpoint() const { return checkpoint_; }

 private:
  std::string term_;
  int step_;
  fs::path checkpoint_;
};

using NamedModules = std::vector<std::pair<std::string, nn::Module*>>;

/// Persists the given modules under names derived from (step, tag) and
/// returns the directory or stem written.
using CheckpointFn = std::function<fs::path(int step, const std::string& tag, const NamedModules& modules)>;

/// Optional observers for a training loop.
struct TrainHooks {
  LossLog* log = nullptr;
  CheckpointFn checkpoint;
  int checkpoint_every = 0;  ///< 0 disables periodic checkpoints

  void record(int step, const std::string& term, double value) const {
    if (log) log->add(step, term, value);
  }
  void maybe_checkpoint(int step, const NamedModules& modules) const {
    if (checkpoint && checkpoint_every > 0 && step > 0 && step % checkpoint_every == 0)
      checkpoint(step, "step", modules);
  }
};

/// Throws DivergenceError when `value` is not finite, after saving `modules`
/// (still holding the weights from before the failing update) with tag
/// "abort".
void require_finite(double value, const std::string& term, int step, const TrainHooks& hooks,
                    const NamedModules& modules);

/// Independent random stream for one named purpose under a run seed.
Rng stage_rng(std::uint64_t seed, std::string_view purpose);

/// [H*W*C] interleaved -> [C,H,W].
Tensor hwc_to_chw(std::span<const double> hwc, int height, int width, int channels);
/// [C,H,W] -> [H*W*C] interleaved.
std::vector<double> chw_to_hwc(const Tensor& chw);
/// Stacks equally shaped [C,H,W] tensors into [N,C,H,W].
Tensor stack(const std::vector<Tensor>& items);
/// Batch item `n` of [N,...] as [...].
Tensor unstack(const Tensor& batch, int n);
/// Repeated 2x average pooling of [N,C,H,W] down to `size`.
Tensor downsample_to(const Tensor& nchw, int size);

}  // namespace hgen
