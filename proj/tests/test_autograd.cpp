#include <gtest/gtest.h>

#include <cmath>

#include "hgen/autograd.hpp"
#include "hgen/gradcheck.hpp"
#include "hgen/nn.hpp"
#include "hgen/optim.hpp"

using namespace hgen;
using ag::Var;

namespace {

Var random_leaf(std::vector<int> shape, Rng& rng, double s = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = s * rng.normal();
  return ag::variable(std::move(t));
}

void expect_grad_ok(const std::function<Var()>& f, const std::vector<Var>& leaves, std::uint64_t seed = 1) {
  Rng rng(seed);
  const auto r = gradient_check(f, leaves, 10, rng);
  EXPECT_LE(r.max_rel_error, 1e-3) << r.worst;
}

}  // namespace

TEST(Autograd, ElementwiseGradients) {
  Rng rng(1);
  Var a = random_leaf({3, 4}, rng), b = random_leaf({3, 4}, rng);
  expect_grad_ok([&] { return ag::sum(ag::mul(ag::add(a, b), ag::sub(a, ag::scale(b, 0.3)))); }, {a, b});
  expect_grad_ok([&] { return ag::mean(ag::sigmoid(ag::add_scalar(a, 0.1))); }, {a});
  expect_grad_ok([&] { return ag::mean(ag::tanh(a)); }, {a});
  expect_grad_ok([&] { return ag::mean(ag::softplus(a)); }, {a});
  expect_grad_ok([&] { return ag::sum(ag::leaky_relu(a)); }, {a});
  expect_grad_ok([&] { return ag::mse_mean(a, b); }, {a, b});
  expect_grad_ok([&] { return ag::l1_mean(a, b); }, {a, b});
}

TEST(Autograd, LayerGradients) {
  Rng rng(2);
  Var x = random_leaf({2, 3, 8, 8}, rng);
  Var w = random_leaf({4, 3, 3, 3}, rng, 0.3), b = random_leaf({4}, rng);
  expect_grad_ok([&] { return ag::mean(ag::tanh(ag::conv2d(x, w, b, 1, 1))); }, {x, w, b});
  expect_grad_ok([&] { return ag::mean(ag::tanh(ag::conv2d(x, w, b, 2, 1))); }, {x, w, b});
  Var s = random_leaf({2, 3}, rng);
  expect_grad_ok([&] { return ag::mean(ag::tanh(ag::scale_channels(ag::upsample2x(ag::avgpool2x(x)), s))); },
                 {x, s});
  expect_grad_ok([&] { return ag::mean(ag::tanh(ag::global_avg_pool(x))); }, {x});
  Var lx = random_leaf({5, 6}, rng), lw = random_leaf({2, 6}, rng), lb = random_leaf({2}, rng);
  expect_grad_ok([&] { return ag::mean(ag::tanh(ag::linear(lx, lw, lb))); }, {lx, lw, lb});
  Var y = random_leaf({2, 2, 8, 8}, rng);
  expect_grad_ok(
      [&] {
        const Var parts[2] = {x, y};
        return ag::mean(ag::tanh(ag::slice_channels(ag::concat_channels(parts), 2, 4)));
      },
      {x, y});
  Var one = random_leaf({1, 3, 4, 4}, rng);
  expect_grad_ok([&] { return ag::mean(ag::tanh(ag::repeat_batch(one, 3))); }, {one});
}

TEST(Autograd, BilinearGatherGradientAndExactness) {
  Rng rng(3);
  Var f = random_leaf({2, 3, 5, 5}, rng);
  std::vector<ag::PixelQuery> q;
  for (int i = 0; i < 12; ++i) q.push_back({i % 2, rng.uniform(-1, 6), rng.uniform(-1, 6)});
  expect_grad_ok([&] { return ag::mean(ag::tanh(ag::gather_bilinear(f, q))); }, {f});

  std::vector<ag::PixelQuery> centers;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) centers.push_back({1, j + 0.5, i + 0.5});
  const auto out = ag::gather_bilinear(f, centers).value();
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      for (int c = 0; c < 3; ++c)
        ASSERT_EQ(out.data[(i * 5 + j) * 3 + c], f.value().data[((1 * 3 + c) * 5 + i) * 5 + j]);
}

TEST(Autograd, FrozenInputsRecordNoGraph) {
  Rng rng(4);
  Var a = ag::constant(Tensor({2, 2}, 1.0));
  Var b = ag::tanh(ag::scale(a, 2.0));
  EXPECT_FALSE(b.requires_grad());
  EXPECT_EQ(b.node()->inputs.size(), 0u);
}

TEST(Autograd, BackwardAccumulatesIntoLeaves) {
  Var a = ag::variable(Tensor({1}, 2.0));
  ag::backward(ag::mul(a, a));
  ag::backward(ag::mul(a, a));
  EXPECT_DOUBLE_EQ(a.grad().data[0], 8.0);
}

TEST(Adam, DescendsQuadratic) {
  nn::Linear lin;
  lin.weight = ag::variable(Tensor({1, 1}, 3.0));
  lin.bias = ag::variable(Tensor({1}, -2.0));
  Adam opt(lin.parameters(), {.lr = 0.05});
  for (int i = 0; i < 400; ++i) {
    opt.zero_grad();
    ag::backward(ag::add(ag::mul(lin.weight, lin.weight), ag::reshape(ag::mul(lin.bias, lin.bias), {1, 1})));
    opt.step();
  }
  EXPECT_LT(std::abs(lin.weight.item()), 0.05);
  EXPECT_LT(std::abs(lin.bias.item()), 0.05);
}

TEST(Modules, NetworkGradients) {
  Rng rng(5);
  nn::StyleGenerator g(4, 8, 6, 5, 8, rng, 2);
  Var z = random_leaf({2, 4}, rng);
  auto gp = g.parameters();
  std::vector<Var> leaves{z};
  for (auto& [n, v] : gp) leaves.push_back(*v);
  expect_grad_ok([&] { return ag::mean(ag::tanh(g.forward(z))); }, leaves);

  nn::Hourglass h(3, 6, 4, rng);
  nn::Discriminator d(3, 6, 8, rng);
  nn::UNet u(3, 6, rng);
  Var x = random_leaf({2, 3, 8, 8}, rng, 0.5);
  expect_grad_ok([&] { return ag::mean(ag::tanh(h.forward(x))); }, {x});
  expect_grad_ok([&] { return ag::mean(d.forward(x)); }, {x});
  Var img = ag::variable(Tensor({1, 3, 8, 8}, 0.5));
  expect_grad_ok([&] { return ag::mean(ag::tanh(u.forward(img))); }, {img});
  EXPECT_EQ(d.forward(x).shape(), (std::vector<int>{2}));
}

TEST(Modules, ChecksumTracksWeights) {
  Rng rng(6);
  nn::Mlp a({3, 4, 1}, nn::Activation::kNone, rng);
  Rng rng2(7);
  nn::Mlp b({3, 4, 1}, nn::Activation::kNone, rng2);
  EXPECT_NE(a.checksum(), b.checksum());
  nn::copy_parameters(a, b);
  EXPECT_EQ(a.checksum(), b.checksum());
  b.layers()[0].weight.mutable_value().data[0] += 1e-12;
  EXPECT_NE(a.checksum(), b.checksum());
}
