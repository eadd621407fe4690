#include "hgen/nn.hpp"

#include <cmath>
#include <cstring>

namespace hgen::nn {
namespace {

Tensor he_normal(std::vector<int> shape, int fan_in, double gain, Rng& rng) {
  Tensor t(std::move(shape));
  const double std = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.normal(0.0, std);
  return t;
}

}  // namespace

ParamRefs Module::parameters(const std::string& prefix) {
  ParamRefs refs;
  collect(refs, prefix);
  return refs;
}

void Module::set_trainable(bool trainable) {
  for (auto& [name, v] : parameters()) {
    v->set_requires_grad(trainable);
    if (!trainable) v->zero_grad();
  }
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, v] : const_cast<Module*>(this)->parameters()) n += v->size();
  return n;
}

std::uint64_t Module::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto& [name, v] : const_cast<Module*>(this)->parameters()) {
    for (double x : v->value().data) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &x, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

void copy_parameters(Module& from, Module& to) {
  auto src = from.parameters();
  auto dst = to.parameters();
  if (src.size() != dst.size()) throw ContractError("copy_parameters: layout mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].second->shape() != dst[i].second->shape())
      throw ContractError("copy_parameters: shape mismatch at " + src[i].first);
    dst[i].second->mutable_value().data = src[i].second->value().data;
  }
}

Linear::Linear(int in, int out, Rng& rng, double gain)
    : weight(ag::variable(he_normal({out, in}, in, gain, rng))), bias(ag::variable(Tensor({out}, 0.0))) {}

void Linear::collect(ParamRefs& out, const std::string& prefix) {
  out.emplace_back(prefix + "weight", &weight);
  out.emplace_back(prefix + "bias", &bias);
}

Conv2d::Conv2d(int in, int out, int kernel, Rng& rng, int stride, double gain)
    : weight(ag::variable(he_normal({out, in, kernel, kernel}, in * kernel * kernel, gain, rng))),
      bias(ag::variable(Tensor({out}, 0.0))),
      kernel_(kernel),
      stride_(stride) {}

void Conv2d::collect(ParamRefs& out, const std::string& prefix) {
  out.emplace_back(prefix + "weight", &weight);
  out.emplace_back(prefix + "bias", &bias);
}

Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return ag::leaky_relu(x, 0.2);
    case Activation::kSigmoid: return ag::sigmoid(x);
    case Activation::kTanh: return ag::tanh(x);
    case Activation::kNone: break;
  }
  return x;
}

Mlp::Mlp(const std::vector<int>& sizes, Activation output, Rng& rng) : sizes_(sizes), output_(output) {
  if (sizes.size() < 2) throw ContractError("Mlp: need at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    layers_.emplace_back(sizes[i], sizes[i + 1], rng, last ? 0.5 : 1.0);
  }
}

Var Mlp::forward(const Var& x) const {
  if (x.value().rank() != 2 || x.dim(1) != input_dim())
    throw ContractError("Mlp: expected [N," + std::to_string(input_dim()) + "], got " + shape_str(x.shape()));
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    h = activate(h, i + 1 == layers_.size() ? output_ : Activation::kLeakyRelu);
  }
  return h;
}

void Mlp::collect(ParamRefs& out, const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + "fc" + std::to_string(i) + ".");
}

StyleGenerator::StyleGenerator(int latent_dim, int style_dim, int width, int out_channels, int out_res, Rng& rng,
                               int mapping_layers) {
  if (out_res < 4 || (out_res & (out_res - 1)) != 0)
    throw ContractError("StyleGenerator: output resolution must be a power of two >= 4");
  std::vector<int> sizes{latent_dim};
  for (int i = 0; i < mapping_layers; ++i) sizes.push_back(style_dim);
  mapping_ = Mlp(sizes, Activation::kLeakyRelu, rng);
  Tensor c({1, width, 4, 4});
  for (double& v : c.data) v = rng.normal();
  constant_ = ag::variable(std::move(c));
  for (int res = 4; res <= out_res; res *= 2) {
    Linear style(style_dim, width, rng, 0.1);
    std::fill(style.bias.mutable_value().data.begin(), style.bias.mutable_value().data.end(), 1.0);
    styles_.push_back(std::move(style));
    convs_.emplace_back(width, width, 3, rng);
  }
  to_out_ = Conv2d(width, out_channels, 1, rng, 1, 0.5);
}

Var StyleGenerator::forward(const Var& z) const {
  const Var w = mapping_.forward(z);
  const int n = z.dim(0);
  Var x = ag::repeat_batch(constant_, n);
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (i > 0) x = ag::upsample2x(x);
    x = ag::scale_channels(x, styles_[i].forward(w));
    x = ag::leaky_relu(convs_[i].forward(x));
  }
  return to_out_.forward(x);
}

void StyleGenerator::collect(ParamRefs& out, const std::string& prefix) {
  mapping_.collect(out, prefix + "mapping.");
  out.emplace_back(prefix + "const", &constant_);
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    styles_[i].collect(out, prefix + "style" + std::to_string(i) + ".");
    convs_[i].collect(out, prefix + "conv" + std::to_string(i) + ".");
  }
  to_out_.collect(out, prefix + "to_out.");
}

Hourglass::Hourglass(int in_channels, int width, int out_channels, Rng& rng)
    : in_(in_channels, width, 3, rng),
      down1_(width, width, 3, rng),
      down2_(width, width, 3, rng),
      up1_(width, width, 3, rng),
      up2_(width, width, 3, rng),
      out_(width, out_channels, 1, rng, 1, 0.5) {}

std::vector<Var> Hourglass::taps(const Var& x) const {
  if (x.value().rank() != 4 || x.dim(1) != in_channels())
    throw ContractError("Hourglass: expected " + std::to_string(in_channels()) + " channels, got " +
                        shape_str(x.shape()));
  if (x.dim(2) % 4 || x.dim(3) % 4) throw ContractError("Hourglass: spatial size must be divisible by 4");
  const Var f0 = ag::leaky_relu(in_.forward(x));
  const Var f1 = ag::leaky_relu(down1_.forward(ag::avgpool2x(f0)));
  const Var f2 = ag::leaky_relu(down2_.forward(ag::avgpool2x(f1)));
  const Var u1 = ag::add(ag::leaky_relu(up1_.forward(ag::upsample2x(f2))), f1);
  const Var u0 = ag::add(ag::leaky_relu(up2_.forward(ag::upsample2x(u1))), f0);
  return {f0, f2, u0};
}

Var Hourglass::forward(const Var& x) const { return out_.forward(taps(x).back()); }

void Hourglass::collect(ParamRefs& out, const std::string& prefix) {
  in_.collect(out, prefix + "in.");
  down1_.collect(out, prefix + "down1.");
  down2_.collect(out, prefix + "down2.");
  up1_.collect(out, prefix + "up1.");
  up2_.collect(out, prefix + "up2.");
  out_.collect(out, prefix + "out.");
}

Discriminator::Discriminator(int in_channels, int width, int resolution, Rng& rng) {
  convs_.emplace_back(in_channels, width, 3, rng);
  int res = resolution;
  while (res > 4) {
    convs_.emplace_back(width, width, 3, rng);
    res /= 2;
  }
  head_ = Linear(width * res * res, 1, rng, 0.5);
}

Var Discriminator::forward(const Var& x) const {
  if (x.value().rank() != 4 || x.dim(1) != in_channels())
    throw ContractError("Discriminator: expected " + std::to_string(in_channels()) + " channels, got " +
                        shape_str(x.shape()));
  Var h = ag::leaky_relu(convs_[0].forward(x));
  for (std::size_t i = 1; i < convs_.size(); ++i) h = ag::leaky_relu(convs_[i].forward(ag::avgpool2x(h)));
  const int n = x.dim(0);
  h = ag::reshape(h, {n, static_cast<int>(h.size()) / n});
  return ag::reshape(head_.forward(h), {n});
}

void Discriminator::collect(ParamRefs& out, const std::string& prefix) {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(out, prefix + "conv" + std::to_string(i) + ".");
  head_.collect(out, prefix + "head.");
}

UNet::UNet(int channels, int width, Rng& rng)
    : enc0_(channels, width, 3, rng),
      enc1_(width, width, 3, rng),
      enc2_(width, width, 3, rng),
      dec1_(2 * width, width, 3, rng),
      dec0_(2 * width, width, 3, rng),
      out_(width, channels, 1, rng, 1, 0.1) {}

Var UNet::forward(const Var& image) const {
  if (image.value().rank() != 4 || image.dim(2) % 4 || image.dim(3) % 4)
    throw ContractError("UNet: expected [N,C,H,W] with H,W divisible by 4, got " + shape_str(image.shape()));
  const Var e0 = ag::leaky_relu(enc0_.forward(image));
  const Var e1 = ag::leaky_relu(enc1_.forward(ag::avgpool2x(e0)));
  const Var e2 = ag::leaky_relu(enc2_.forward(ag::avgpool2x(e1)));
  const Var d1 = ag::leaky_relu(dec1_.forward(ag::concat_channels(std::vector<Var>{ag::upsample2x(e2), e1})));
  const Var d0 = ag::leaky_relu(dec0_.forward(ag::concat_channels(std::vector<Var>{ag::upsample2x(d1), e0})));
  return ag::clamp01(ag::add(image, out_.forward(d0)));
}

void UNet::collect(ParamRefs& out, const std::string& prefix) {
  enc0_.collect(out, prefix + "enc0.");
  enc1_.collect(out, prefix + "enc1.");
  enc2_.collect(out, prefix + "enc2.");
  dec1_.collect(out, prefix + "dec1.");
  dec0_.collect(out, prefix + "dec0.");
  out_.collect(out, prefix + "out.");
}

}  // namespace hgen::nn
