#include "hgen/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace hgen::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (const auto& v : inputs) n->inputs.push_back(v.shared());
    n->backward = std::move(fn);
  }
  return Var(std::move(n));
}

// Gradient buffer of input `i` of `n`, or nullptr when it needs none.
Tensor* in_grad(Node& n, std::size_t i) {
  Node* in = n.inputs[i].get();
  return in->requires_grad ? &in->grad_buffer() : nullptr;
}

void check_rank(const Var& v, int rank, const char* op) {
  if (v.value().rank() != rank)
    throw ContractError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_str(v.shape()));
}

template <class F, class G>
Var unary(const Var& a, F forward, G derivative) {
  Tensor out(a.shape());
  const auto& x = a.value().data;
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = forward(x[i]);
  return make_node(std::move(out), {a}, [derivative](Node& n) {
    Tensor* ga = in_grad(n, 0);
    if (!ga) return;
    const auto& x = n.inputs[0]->value.data;
    const auto& y = n.value.data;
    for (std::size_t i = 0; i < x.size(); ++i) ga->data[i] += n.grad.data[i] * derivative(x[i], y[i]);
  });
}

void im2col(const double* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            double* cols) {
  const int plane = Ho * Wo;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        double* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * plane;
        const double* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          double* dst = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[ox] = (ix < 0 || ix >= W) ? 0.0 : xc[iy * W + ix];
          }
        }
      }
}

void col2im(const double* cols, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            double* dx) {
  const int plane = Ho * Wo;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const double* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * plane;
        double* xc = dx + static_cast<std::size_t>(c) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) xc[iy * W + ix] += row[oy * Wo + ox];
          }
        }
      }
}

}  // namespace

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

Var variable(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var detach(const Var& v) { return constant(v.value()); }

void backward(const Var& root) {
  if (root.size() != 1) throw ContractError("backward: root must be a scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Intermediate gradients start from zero on every call; leaves accumulate.
  for (Node* n : order)
    if (n->backward) n->grad = Tensor(n->value.shape, 0.0);
  root.node()->grad_buffer().data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] + b.value().data[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Tensor* g = in_grad(n, k))
        for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += n.grad.data[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] - b.value().data[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    if (Tensor* g = in_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += n.grad.data[i];
    if (Tensor* g = in_grad(n, 1))
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] -= n.grad.data[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] * b.value().data[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    const auto& x = n.inputs[0]->value.data;
    const auto& y = n.inputs[1]->value.data;
    if (Tensor* g = in_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += n.grad.data[i] * y[i];
    if (Tensor* g = in_grad(n, 1))
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += n.grad.data[i] * x[i];
  });
}

Var scale(const Var& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var clamp01(const Var& a) {
  return unary(
      a, [](double x) { return std::clamp(x, 0.0, 1.0); },
      [](double x, double) { return (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return make_node(Tensor({1}, s), {a}, [](Node& n) {
    if (Tensor* g = in_grad(n, 0))
      for (double& v : g->data) v += n.grad.data[0];
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var l1_mean(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "l1_mean");
  if (a.size() == 0) throw ContractError("l1_mean: empty tensor");
  const auto& x = a.value().data;
  const auto& y = b.value().data;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
  const double inv = 1.0 / static_cast<double>(x.size());
  return make_node(Tensor({1}, s * inv), {a, b}, [inv](Node& n) {
    const auto& x = n.inputs[0]->value.data;
    const auto& y = n.inputs[1]->value.data;
    const double g0 = n.grad.data[0] * inv;
    Tensor* ga = in_grad(n, 0);
    Tensor* gb = in_grad(n, 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - y[i];
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (ga) ga->data[i] += g0 * sgn;
      if (gb) gb->data[i] -= g0 * sgn;
    }
  });
}

Var l1_mean(const Var& a, const Tensor& target) { return l1_mean(a, constant(target)); }

Var mse_mean(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mse_mean");
  if (a.size() == 0) throw ContractError("mse_mean: empty tensor");
  const auto& x = a.value().data;
  const auto& y = b.value().data;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  const double inv = 1.0 / static_cast<double>(x.size());
  return make_node(Tensor({1}, s * inv), {a, b}, [inv](Node& n) {
    const auto& x = n.inputs[0]->value.data;
    const auto& y = n.inputs[1]->value.data;
    const double g0 = 2.0 * n.grad.data[0] * inv;
    Tensor* ga = in_grad(n, 0);
    Tensor* gb = in_grad(n, 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - y[i];
      if (ga) ga->data[i] += g0 * d;
      if (gb) gb->data[i] -= g0 * d;
    }
  });
}

Var weighted_sum(std::span<const Var> parts, std::span<const double> weights) {
  if (parts.size() != weights.size() || parts.empty())
    throw ContractError("weighted_sum: parts/weights size mismatch");
  std::vector<double> w(weights.begin(), weights.end());
  double s = 0.0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].size() != 1) throw ContractError("weighted_sum: parts must be scalars");
    s += w[i] * parts[i].item();
  }
  return make_node(Tensor({1}, s), std::vector<Var>(parts.begin(), parts.end()), [w](Node& n) {
    for (std::size_t i = 0; i < w.size(); ++i)
      if (Tensor* g = in_grad(n, i)) g->data[0] += w[i] * n.grad.data[0];
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  check_rank(x, 2, "linear");
  check_rank(w, 2, "linear");
  const int N = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in || b.size() != static_cast<std::size_t>(out))
    throw ContractError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  Tensor y({N, out});
  CMapMat X(x.value().ptr(), N, in);
  CMapMat Wm(w.value().ptr(), out, in);
  MapMat Y(y.ptr(), N, out);
  Y.noalias() = X * Wm.transpose();
  Eigen::Map<const Eigen::RowVectorXd> bv(b.value().ptr(), out);
  Y.rowwise() += bv;
  return make_node(std::move(y), {x, w, b}, [N, in, out](Node& n) {
    CMapMat dY(n.grad.ptr(), N, out);
    if (Tensor* gx = in_grad(n, 0)) {
      CMapMat Wm(n.inputs[1]->value.ptr(), out, in);
      MapMat(gx->ptr(), N, in).noalias() += dY * Wm;
    }
    if (Tensor* gw = in_grad(n, 1)) {
      CMapMat X(n.inputs[0]->value.ptr(), N, in);
      MapMat(gw->ptr(), out, in).noalias() += dY.transpose() * X;
    }
    if (Tensor* gb = in_grad(n, 2)) {
      // Plain loops: Eigen's vectorized reductions depend on buffer alignment.
      for (int r = 0; r < N; ++r)
        for (int o = 0; o < out; ++o) gb->data[o] += dY(r, o);
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  check_rank(x, 4, "conv2d");
  check_rank(w, 4, "conv2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C || w.dim(3) != k || b.size() != static_cast<std::size_t>(O))
    throw ContractError("conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ContractError("conv2d: empty output for " + shape_str(x.shape()));
  const int ckk = C * k * k, plane = Ho * Wo;

  Tensor y({N, O, Ho, Wo});
  std::vector<double> cols(static_cast<std::size_t>(ckk) * plane);
  CMapMat Wm(w.value().ptr(), O, ckk);
  Eigen::Map<const Eigen::VectorXd> bv(b.value().ptr(), O);
  for (int s = 0; s < N; ++s) {
    im2col(x.value().ptr() + static_cast<std::size_t>(s) * C * H * W, C, H, W, k, stride, pad, Ho, Wo,
           cols.data());
    MapMat Y(y.ptr() + static_cast<std::size_t>(s) * O * plane, O, plane);
    Y.noalias() = Wm * CMapMat(cols.data(), ckk, plane);
    Y.colwise() += bv;
  }
  return make_node(std::move(y), {x, w, b}, [=](Node& n) {
    Tensor* gx = in_grad(n, 0);
    Tensor* gw = in_grad(n, 1);
    Tensor* gb = in_grad(n, 2);
    CMapMat Wm(n.inputs[1]->value.ptr(), O, ckk);
    std::vector<double> cols(static_cast<std::size_t>(ckk) * plane);
    RowMat dcols;
    for (int s = 0; s < N; ++s) {
      CMapMat dY(n.grad.ptr() + static_cast<std::size_t>(s) * O * plane, O, plane);
      if (gb)
        for (int o = 0; o < O; ++o) {
          double acc = 0.0;
          for (int q = 0; q < plane; ++q) acc += dY(o, q);
          gb->data[o] += acc;
        }
      if (gw) {
        im2col(n.inputs[0]->value.ptr() + static_cast<std::size_t>(s) * C * H * W, C, H, W, k, stride,
               pad, Ho, Wo, cols.data());
        MapMat(gw->ptr(), O, ckk).noalias() += dY * CMapMat(cols.data(), ckk, plane).transpose();
      }
      if (gx) {
        dcols.noalias() = Wm.transpose() * dY;
        col2im(dcols.data(), C, H, W, k, stride, pad, Ho, Wo,
               gx->ptr() + static_cast<std::size_t>(s) * C * H * W);
      }
    }
  });
}

Var upsample2x(const Var& x) {
  check_rank(x, 4, "upsample2x");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y({N, C, 2 * H, 2 * W});
  const auto& xv = x.value().data;
  for (int p = 0; p < N * C; ++p)
    for (int i = 0; i < 2 * H; ++i)
      for (int j = 0; j < 2 * W; ++j)
        y.data[(static_cast<std::size_t>(p) * 2 * H + i) * 2 * W + j] =
            xv[(static_cast<std::size_t>(p) * H + i / 2) * W + j / 2];
  return make_node(std::move(y), {x}, [=](Node& n) {
    Tensor* g = in_grad(n, 0);
    if (!g) return;
    for (int p = 0; p < N * C; ++p)
      for (int i = 0; i < 2 * H; ++i)
        for (int j = 0; j < 2 * W; ++j)
          g->data[(static_cast<std::size_t>(p) * H + i / 2) * W + j / 2] +=
              n.grad.data[(static_cast<std::size_t>(p) * 2 * H + i) * 2 * W + j];
  });
}

Var avgpool2x(const Var& x) {
  check_rank(x, 4, "avgpool2x");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ContractError("avgpool2x: odd spatial size " + shape_str(x.shape()));
  const int h = H / 2, w = W / 2;
  Tensor y({N, C, h, w});
  const auto& xv = x.value().data;
  for (int p = 0; p < N * C; ++p)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const std::size_t base = (static_cast<std::size_t>(p) * H + 2 * i) * W + 2 * j;
        y.data[(static_cast<std::size_t>(p) * h + i) * w + j] =
            0.25 * (xv[base] + xv[base + 1] + xv[base + W] + xv[base + W + 1]);
      }
  return make_node(std::move(y), {x}, [=](Node& n) {
    Tensor* g = in_grad(n, 0);
    if (!g) return;
    for (int p = 0; p < N * C; ++p)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const double d = 0.25 * n.grad.data[(static_cast<std::size_t>(p) * h + i) * w + j];
          const std::size_t base = (static_cast<std::size_t>(p) * H + 2 * i) * W + 2 * j;
          g->data[base] += d;
          g->data[base + 1] += d;
          g->data[base + W] += d;
          g->data[base + W + 1] += d;
        }
  });
}

Var scale_channels(const Var& x, const Var& s) {
  check_rank(x, 4, "scale_channels");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (s.shape() != std::vector<int>{N, C})
    throw ContractError("scale_channels: scale " + shape_str(s.shape()) + " vs input " + shape_str(x.shape()));
  Tensor y(x.shape());
  for (int p = 0; p < N * C; ++p) {
    const double f = s.value().data[p];
    for (int q = 0; q < HW; ++q)
      y.data[static_cast<std::size_t>(p) * HW + q] = x.value().data[static_cast<std::size_t>(p) * HW + q] * f;
  }
  return make_node(std::move(y), {x, s}, [=](Node& n) {
    Tensor* gx = in_grad(n, 0);
    Tensor* gs = in_grad(n, 1);
    const auto& xv = n.inputs[0]->value.data;
    const auto& sv = n.inputs[1]->value.data;
    for (int p = 0; p < N * C; ++p) {
      double acc = 0.0;
      for (int q = 0; q < HW; ++q) {
        const std::size_t i = static_cast<std::size_t>(p) * HW + q;
        if (gx) gx->data[i] += n.grad.data[i] * sv[p];
        acc += n.grad.data[i] * xv[i];
      }
      if (gs) gs->data[p] += acc;
    }
  });
}

Var repeat_batch(const Var& x, int count) {
  if (x.value().rank() < 1 || x.dim(0) != 1) throw ContractError("repeat_batch: leading dim must be 1");
  std::vector<int> shape = x.shape();
  shape[0] = count;
  Tensor y(shape);
  const std::size_t m = x.size();
  for (int i = 0; i < count; ++i)
    std::copy(x.value().data.begin(), x.value().data.end(), y.data.begin() + i * m);
  return make_node(std::move(y), {x}, [count, m](Node& n) {
    Tensor* g = in_grad(n, 0);
    if (!g) return;
    for (int i = 0; i < count; ++i)
      for (std::size_t j = 0; j < m; ++j) g->data[j] += n.grad.data[i * m + j];
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const auto& s0 = parts[0].shape();
  if (s0.size() < 2) throw ContractError("concat_channels: rank must be >= 2");
  const int N = s0[0];
  std::size_t inner = 1;
  for (std::size_t d = 2; d < s0.size(); ++d) inner *= s0[d];
  std::vector<int> widths;
  int total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size() && s[0] == N;
    for (std::size_t d = 2; ok && d < s.size(); ++d) ok = s[d] == s0[d];
    if (!ok) throw ContractError("concat_channels: incompatible " + shape_str(s) + " vs " + shape_str(s0));
    widths.push_back(s[1]);
    total += s[1];
  }
  std::vector<int> shape = s0;
  shape[1] = total;
  Tensor y(shape);
  for (int b = 0; b < N; ++b) {
    std::size_t offset = static_cast<std::size_t>(b) * total * inner;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::size_t len = widths[k] * inner;
      const double* src = parts[k].value().ptr() + b * len;
      std::copy(src, src + len, y.data.begin() + offset);
      offset += len;
    }
  }
  return make_node(std::move(y), std::vector<Var>(parts.begin(), parts.end()),
                   [N, inner, widths, total](Node& n) {
                     for (int b = 0; b < N; ++b) {
                       std::size_t offset = static_cast<std::size_t>(b) * total * inner;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         const std::size_t len = widths[k] * inner;
                         if (Tensor* g = in_grad(n, k))
                           for (std::size_t j = 0; j < len; ++j) g->data[b * len + j] += n.grad.data[offset + j];
                         offset += len;
                       }
                     }
                   });
}

Var slice_channels(const Var& x, int begin, int end) {
  const auto& s = x.shape();
  if (s.size() < 2 || begin < 0 || end > s[1] || begin >= end)
    throw ContractError("slice_channels: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                        ") for " + shape_str(s));
  const int N = s[0], C = s[1];
  std::size_t inner = 1;
  for (std::size_t d = 2; d < s.size(); ++d) inner *= s[d];
  std::vector<int> shape = s;
  shape[1] = end - begin;
  Tensor y(shape);
  const std::size_t len = (end - begin) * inner;
  for (int b = 0; b < N; ++b) {
    const double* src = x.value().ptr() + (static_cast<std::size_t>(b) * C + begin) * inner;
    std::copy(src, src + len, y.data.begin() + b * len);
  }
  return make_node(std::move(y), {x}, [=](Node& n) {
    Tensor* g = in_grad(n, 0);
    if (!g) return;
    for (int b = 0; b < N; ++b)
      for (std::size_t j = 0; j < len; ++j)
        g->data[(static_cast<std::size_t>(b) * C + begin) * inner + j] += n.grad.data[b * len + j];
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  if (numel(shape) != x.size())
    throw ContractError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor y(std::move(shape), x.value().data);
  return make_node(std::move(y), {x}, [](Node& n) {
    Tensor* g = in_grad(n, 0);
    if (!g) return;
    for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += n.grad.data[i];
  });
}

Var global_avg_pool(const Var& x) {
  check_rank(x, 4, "global_avg_pool");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor y({N, C});
  for (int p = 0; p < N * C; ++p) {
    double s = 0.0;
    for (int q = 0; q < HW; ++q) s += x.value().data[static_cast<std::size_t>(p) * HW + q];
    y.data[p] = s / HW;
  }
  return make_node(std::move(y), {x}, [=](Node& n) {
    Tensor* g = in_grad(n, 0);
    if (!g) return;
    for (int p = 0; p < N * C; ++p)
      for (int q = 0; q < HW; ++q) g->data[static_cast<std::size_t>(p) * HW + q] += n.grad.data[p] / HW;
  });
}

namespace {

struct Tap {
  int index[4];
  double weight[4];
};

Tap bilinear_tap(const PixelQuery& q, int H, int W) {
  const double u = q.x - 0.5, v = q.y - 0.5;
  const double j0f = std::floor(u), i0f = std::floor(v);
  const double fu = u - j0f, fv = v - i0f;
  const int j0 = static_cast<int>(j0f), i0 = static_cast<int>(i0f);
  Tap t{};
  const int ii[4] = {i0, i0, i0 + 1, i0 + 1};
  const int jj[4] = {j0, j0 + 1, j0, j0 + 1};
  const double ww[4] = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
  for (int c = 0; c < 4; ++c) {
    const bool inside = ii[c] >= 0 && ii[c] < H && jj[c] >= 0 && jj[c] < W && ww[c] != 0.0;
    t.index[c] = inside ? ii[c] * W + jj[c] : -1;
    t.weight[c] = inside ? ww[c] : 0.0;
  }
  return t;
}

}  // namespace

Var gather_bilinear(const Var& features, std::span<const PixelQuery> queries) {
  check_rank(features, 4, "gather_bilinear");
  const int N = features.dim(0), C = features.dim(1), H = features.dim(2), W = features.dim(3);
  const int P = static_cast<int>(queries.size());
  std::vector<Tap> taps(P);
  std::vector<int> batch(P);
  Tensor y({P, C});
  const auto& F = features.value().data;
  for (int p = 0; p < P; ++p) {
    const auto& q = queries[p];
    if (q.batch < 0 || q.batch >= N) throw ContractError("gather_bilinear: batch index out of range");
    if (!std::isfinite(q.x) || !std::isfinite(q.y)) throw ContractError("gather_bilinear: non-finite query");
    taps[p] = bilinear_tap(q, H, W);
    batch[p] = q.batch;
    const std::size_t base = static_cast<std::size_t>(q.batch) * C * H * W;
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      bool first = true;
      for (int k = 0; k < 4; ++k) {
        if (taps[p].index[k] < 0) continue;
        const double v = taps[p].weight[k] * F[base + static_cast<std::size_t>(c) * H * W + taps[p].index[k]];
        acc = first ? v : acc + v;
        first = false;
      }
      y.data[static_cast<std::size_t>(p) * C + c] = acc;
    }
  }
  return make_node(std::move(y), {features},
                   [taps = std::move(taps), batch = std::move(batch), C, H, W](Node& n) {
                     Tensor* g = in_grad(n, 0);
                     if (!g) return;
                     for (std::size_t p = 0; p < taps.size(); ++p) {
                       const std::size_t base = static_cast<std::size_t>(batch[p]) * C * H * W;
                       for (int c = 0; c < C; ++c) {
                         const double d = n.grad.data[p * C + c];
                         for (int k = 0; k < 4; ++k)
                           if (taps[p].index[k] >= 0)
                             g->data[base + static_cast<std::size_t>(c) * H * W + taps[p].index[k]] +=
                                 taps[p].weight[k] * d;
                       }
                     }
                   });
}

}  // namespace hgen::ag
