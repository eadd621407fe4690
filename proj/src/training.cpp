#include "hgen/training.hpp"

#include <cmath>

namespace hgen {

DivergenceError::DivergenceError(const std::string& term, int step, fs::path checkpoint)
    : std::runtime_error("loss term '" + term + "' became non-finite at step " + std::to_string(step) +
                         (checkpoint.empty() ? std::string() : "; last weights saved to " + checkpoint.string())),
      term_(term),
      step_(step),
      checkpoint_(std::move(checkpoint)) {}

void require_finite(double value, const std::string& term, int step, const TrainHooks& hooks,
                    const NamedModules& modules) {
  if (std::isfinite(value)) return;
  fs::path where;
  if (hooks.checkpoint) where = hooks.checkpoint(step, "abort", modules);
  throw DivergenceError(term, step, where);
}

Rng stage_rng(std::uint64_t seed, std::string_view purpose) { return Rng(Rng::mix(seed) ^ fnv1a64(purpose)); }

Tensor hwc_to_chw(std::span<const double> hwc, int height, int width, int channels) {
  if (hwc.size() != static_cast<std::size_t>(height) * width * channels)
    throw ContractError("hwc_to_chw: size mismatch");
  Tensor out({channels, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        out.data[(static_cast<std::size_t>(c) * height + y) * width + x] =
            hwc[(static_cast<std::size_t>(y) * width + x) * channels + c];
  return out;
}

std::vector<double> chw_to_hwc(const Tensor& chw) {
  if (chw.rank() != 3) throw ContractError("chw_to_hwc: expected [C,H,W]");
  const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  std::vector<double> out(chw.size());
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        out[(static_cast<std::size_t>(y) * W + x) * C + c] = chw.data[(static_cast<std::size_t>(c) * H + y) * W + x];
  return out;
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw ContractError("stack: no items");
  std::vector<int> shape{static_cast<int>(items.size())};
  shape.insert(shape.end(), items[0].shape.begin(), items[0].shape.end());
  Tensor out(shape);
  const std::size_t n = items[0].size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    require_same_shape(items[i], items[0], "stack");
    std::copy(items[i].data.begin(), items[i].data.end(), out.data.begin() + i * n);
  }
  return out;
}

Tensor unstack(const Tensor& batch, int n) {
  if (batch.rank() < 2 || n < 0 || n >= batch.dim(0)) throw ContractError("unstack: bad index");
  std::vector<int> shape(batch.shape.begin() + 1, batch.shape.end());
  const std::size_t sz = numel(shape);
  return Tensor(shape, std::vector<double>(batch.data.begin() + n * sz, batch.data.begin() + (n + 1) * sz));
}

Tensor downsample_to(const Tensor& nchw, int size) {
  if (nchw.rank() != 4) throw ContractError("downsample_to: expected [N,C,H,W]");
  ag::Var v = ag::constant(nchw);
  while (v.dim(2) > size) v = ag::avgpool2x(v);
  if (v.dim(2) != size) throw ContractError("downsample_to: size must divide the input by a power of two");
  return v.value();
}

}  // namespace hgen
