#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "hgen/tensor.hpp"

// Minimal tape-free reverse-mode differentiation. Every op returns a Var
// whose node remembers its inputs and a closure that pushes the node's
// gradient into them. Nodes that depend on nothing trainable carry no
// closure, so inference through frozen weights records no graph.
namespace hgen::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.data.size() != value.data.size()) grad = Tensor(value.shape, 0.0);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const std::vector<int>& shape() const { return node_->value.shape; }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.data.at(0); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Gradient accumulated by backward(); zeros if none has reached this node.
  const Tensor& grad() const { return node_->grad_buffer(); }
  void zero_grad() {
    if (!node_->grad.data.empty()) std::fill(node_->grad.data.begin(), node_->grad.data.end(), 0.0);
  }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  bool defined() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor t);
/// Leaf that accumulates gradients.
Var variable(Tensor t);
Var detach(const Var& v);

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node that
/// requires a gradient. `root` must hold a single element.
void backward(const Var& root);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var leaky_relu(const Var& a, double slope = 0.2);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var softplus(const Var& a);
/// Clamp to [0,1]; gradient passes only where the input is inside the range.
Var clamp01(const Var& a);

// Reductions and losses.
Var sum(const Var& a);
Var mean(const Var& a);
Var l1_mean(const Var& a, const Var& b);
Var l1_mean(const Var& a, const Tensor& target);
Var mse_mean(const Var& a, const Var& b);
Var weighted_sum(std::span<const Var> parts, std::span<const double> weights);

// Layers.
/// x [N,in], w [out,in], b [out] -> [N,out].
Var linear(const Var& x, const Var& w, const Var& b);
/// x [N,C,H,W], w [O,C,k,k], b [O] -> [N,O,Ho,Wo].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample2x(const Var& x);
Var avgpool2x(const Var& x);
/// x [N,C,H,W] * s [N,C] broadcast over pixels.
Var scale_channels(const Var& x, const Var& s);
/// Tiles a [1,...] tensor along the batch dimension.
Var repeat_batch(const Var& x, int n);
/// Concatenates along dimension 1; all other dimensions must agree.
Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& x, int begin, int end);
Var reshape(const Var& x, std::vector<int> shape);
/// [N,C,H,W] -> [N,C].
Var global_avg_pool(const Var& x);

/// A feature lookup at continuous pixel coordinates of batch item `batch`.
/// Pixel (row i, col j) has its center at (x=j+0.5, y=i+0.5).
struct PixelQuery {
  int batch = 0;
  double x = 0.0;
  double y = 0.0;
};

/// Bilinear lookups with zero padding outside the map: F [N,C,H,W] -> [P,C].
Var gather_bilinear(const Var& features, std::span<const PixelQuery> queries);

}  // namespace hgen::ag
