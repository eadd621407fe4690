#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hgen/autograd.hpp"
#include "hgen/rng.hpp"

namespace hgen::nn {

using ag::Var;

/// Ordered (name, parameter) references; the order defines checkpoint
/// layout and checksums.
using ParamRefs = std::vector<std::pair<std::string, Var*>>;

class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(ParamRefs& out, const std::string& prefix) = 0;

  ParamRefs parameters(const std::string& prefix = "");
  /// Frozen parameters still pass gradients to their inputs but never
  /// accumulate their own.
  void set_trainable(bool trainable);
  std::size_t parameter_count() const;
  /// FNV-1a over the raw bytes of every parameter, in collection order.
  std::uint64_t checksum() const;
};

class Linear : public Module {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, double gain = 1.0);
  Var forward(const Var& x) const { return ag::linear(x, weight, bias); }
  void collect(ParamRefs& out, const std::string& prefix) override;

  Var weight, bias;
};

class Conv2d : public Module {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, Rng& rng, int stride = 1, double gain = 1.0);
  Var forward(const Var& x) const { return ag::conv2d(x, weight, bias, stride_, kernel_ / 2); }
  void collect(ParamRefs& out, const std::string& prefix) override;
  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }

  Var weight, bias;

 private:
  int kernel_ = 1;
  int stride_ = 1;
};

enum class Activation { kNone, kLeakyRelu, kSigmoid, kTanh };

Var activate(const Var& x, Activation a);

/// Fully connected stack. `sizes` lists every layer width including input
/// and output; hidden layers use leaky ReLU.
class Mlp : public Module {
 public:
  Mlp() = default;
  Mlp(const std::vector<int>& sizes, Activation output, Rng& rng);
  Var forward(const Var& x) const;
  void collect(ParamRefs& out, const std::string& prefix) override;
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  std::vector<Linear>& layers() { return layers_; }

 private:
  std::vector<int> sizes_;
  std::vector<Linear> layers_;
  Activation output_ = Activation::kNone;
};

/// Style-based generator: an MLP maps the latent to a style vector, a learned
/// 4x4 constant is upsampled through style-modulated 3x3 convolutions, and a
/// 1x1 convolution emits `out_channels` maps at `out_res`.
class StyleGenerator : public Module {
 public:
  StyleGenerator() = default;
  StyleGenerator(int latent_dim, int style_dim, int width, int out_channels, int out_res, Rng& rng,
                 int mapping_layers = 4);
  /// z [N, latent_dim] -> [N, out_channels, out_res, out_res].
  Var forward(const Var& z) const;
  void collect(ParamRefs& out, const std::string& prefix) override;
  int latent_dim() const { return mapping_.input_dim(); }
  int out_channels() const { return to_out_.out_channels(); }

 private:
  Mlp mapping_;
  Var constant_;
  std::vector<Linear> styles_;
  std::vector<Conv2d> convs_;
  Conv2d to_out_;
};

/// Two-level hourglass: full-resolution features, two pooled levels, and
/// upsampling back with additive skips. Spatial size must be divisible by 4.
class Hourglass : public Module {
 public:
  Hourglass() = default;
  Hourglass(int in_channels, int width, int out_channels, Rng& rng);
  Var forward(const Var& x) const;
  /// The full-resolution stem, bottleneck and output features.
  std::vector<Var> taps(const Var& x) const;
  /// Output projection applied to the last tap; forward(x) == head(taps(x).back()).
  Var head(const Var& last_tap) const { return out_.forward(last_tap); }
  void collect(ParamRefs& out, const std::string& prefix) override;
  int in_channels() const { return in_.in_channels(); }
  int out_channels() const { return out_.out_channels(); }

 private:
  Conv2d in_, down1_, down2_, up1_, up2_, out_;
};

/// Convolutional classifier producing one logit per batch item.
class Discriminator : public Module {
 public:
  Discriminator() = default;
  Discriminator(int in_channels, int width, int resolution, Rng& rng);
  /// x [N,C,R,R] -> [N].
  Var forward(const Var& x) const;
  void collect(ParamRefs& out, const std::string& prefix) override;
  int in_channels() const { return convs_.front().in_channels(); }

 private:
  std::vector<Conv2d> convs_;
  Linear head_;
};

/// Encoder-decoder with concatenated skips; predicts a residual that is
/// added to the input image and clamped to [0,1].
class UNet : public Module {
 public:
  UNet() = default;
  UNet(int channels, int width, Rng& rng);
  Var forward(const Var& image) const;
  void collect(ParamRefs& out, const std::string& prefix) override;
  Conv2d& output_layer() { return out_; }

 private:
  Conv2d enc0_, enc1_, enc2_, dec1_, dec0_, out_;
};

/// Copies parameter values between two modules of identical layout.
void copy_parameters(Module& from, Module& to);

}  // namespace hgen::nn
