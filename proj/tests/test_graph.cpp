#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bitlab/errors.hpp"
#include "bitlab/graph.hpp"
#include "bitlab/rng.hpp"
#include "ref_ops.hpp"

using namespace bitlab;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.f, float hi = 1.f) {
  Tensor t(std::move(shape));
  for (auto& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

// conv -> relu -> maxpool -> conv -> relu -> gap -> linear -> xent
struct SmallNet {
  Graph g;
  int logits = -1, loss = -1;
};

SmallNet make_small_net(Rng& rng, bool bias = true) {
  SmallNet net;
  net.g.add_param("c1.w", random_tensor({4, 1, 3, 3}, rng, -0.5f, 0.5f));
  if (bias) net.g.add_param("c1.b", random_tensor({4}, rng, -0.1f, 0.1f));
  net.g.add_param("c2.w", random_tensor({6, 4, 3, 3}, rng, -0.3f, 0.3f));
  if (bias) net.g.add_param("c2.b", random_tensor({6}, rng, -0.1f, 0.1f));
  net.g.add_param("fc.w", random_tensor({3, 6}, rng, -0.5f, 0.5f));
  if (bias) net.g.add_param("fc.b", random_tensor({3}, rng, -0.1f, 0.1f));
  int x = net.g.add_input({1, 10, 10}, "input");
  int c1 = net.g.add_conv2d(x, "c1.w", bias ? "c1.b" : "", 1, 1, "c1");
  int r1 = net.g.add_relu(c1, "r1");
  int p1 = net.g.add_maxpool2(r1, "p1");
  int c2 = net.g.add_conv2d(p1, "c2.w", bias ? "c2.b" : "", 2, 0, "c2");
  int r2 = net.g.add_relu(c2, "r2");
  int gap = net.g.add_global_avg_pool(r2, "gap");
  net.logits = net.g.add_linear(gap, "fc.w", bias ? "fc.b" : "", "fc");
  int xe = net.g.add_softmax_xent(net.logits, "xent");
  net.loss = net.g.add_loss_sum({xe}, "loss");
  return net;
}

}  // namespace

TEST_CASE("zero input through a bias-free linear layer gives zero logits") {
  Graph g;
  Rng rng(1);
  g.add_param("w", random_tensor({5, 8}, rng));
  int x = g.add_input({8}, "input");
  int y = g.add_linear(x, "w", "", "fc");
  Workspace ws;
  g.start(ws, Tensor({2, 8}));
  const Tensor& out = g.eval(ws, y);
  for (float v : out.v) CHECK(v == 0.f);
}

TEST_CASE("1x1 convolution with identity kernel reproduces the input") {
  Graph g;
  Tensor w({1, 1, 1, 1});
  w[0] = 1.f;
  g.add_param("w", w);
  int x = g.add_input({1, 4, 4}, "input");
  int y = g.add_conv2d(x, "w", "", 1, 0, "conv");
  Rng rng(2);
  Tensor in = random_tensor({3, 1, 4, 4}, rng);
  Workspace ws;
  g.start(ws, in);
  const Tensor& out = g.eval(ws, y);
  REQUIRE(out.shape == in.shape);
  for (size_t i = 0; i < out.v.size(); ++i) CHECK(out.v[i] == in.v[i]);
}

TEST_CASE("3x3 all-ones kernel computes window sums (brute-force oracle)") {
  Graph g;
  g.add_param("w", Tensor::full({1, 1, 3, 3}, 1.f));
  int x = g.add_input({1, 4, 4}, "input");
  int y = g.add_conv2d(x, "w", "", 1, 0, "conv");
  Rng rng(3);
  Tensor in = random_tensor({1, 1, 4, 4}, rng, 0.f, 1.f);
  Workspace ws;
  g.start(ws, in);
  const Tensor& out = g.eval(ws, y);
  REQUIRE(out.shape == std::vector<int>({1, 1, 2, 2}));
  for (int oy = 0; oy < 2; ++oy)
    for (int ox = 0; ox < 2; ++ox) {
      double sum = 0.0;  // independent nested-loop summation
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) sum += in.v[static_cast<size_t>((oy + i) * 4 + ox + j)];
      CHECK(out.v[static_cast<size_t>(oy * 2 + ox)] == doctest::Approx(sum).epsilon(1e-5));
    }
}

TEST_CASE("forward is deterministic and does not mutate parameters") {
  Rng rng(4);
  SmallNet net = make_small_net(rng);
  Tensor in = random_tensor({2, 1, 10, 10}, rng, 0.f, 1.f);
  std::vector<float> before = net.g.param("c1.w").value->v;
  Workspace ws;
  ws.labels = {0, 2};
  ws.loss_weights = {1.f};
  net.g.start(ws, in);
  float l1 = net.g.eval(ws, net.loss)[0];
  Workspace ws2;
  ws2.labels = {0, 2};
  ws2.loss_weights = {1.f};
  net.g.start(ws2, in);
  float l2 = net.g.eval(ws2, net.loss)[0];
  CHECK(l1 == l2);
  CHECK(net.g.param("c1.w").value->v == before);
}

TEST_CASE("linearity: forward(ax) = a*forward(x) for bias-free linear graphs") {
  Graph g;
  Rng rng(5);
  g.add_param("c.w", random_tensor({3, 1, 3, 3}, rng));
  g.add_param("fc.w", random_tensor({4, 3}, rng));
  int x = g.add_input({1, 6, 6}, "input");
  int c = g.add_conv2d(x, "c.w", "", 1, 0, "conv");
  int gap = g.add_global_avg_pool(c, "gap");
  int y = g.add_linear(gap, "fc.w", "", "fc");
  Tensor in = random_tensor({1, 1, 6, 6}, rng);
  const float alpha = 2.625f;  // exactly representable
  Tensor scaled = in;
  for (auto& v : scaled.v) v *= alpha;
  Workspace ws;
  g.start(ws, in);
  Tensor base = g.eval(ws, y);
  g.start(ws, scaled);
  const Tensor& out = g.eval(ws, y);
  for (size_t i = 0; i < out.v.size(); ++i)
    CHECK(out.v[i] == doctest::Approx(alpha * base.v[i]).epsilon(1e-5));
}

TEST_CASE("shape mismatch is rejected and names the offending node") {
  Graph g;
  Rng rng(6);
  g.add_param("w", random_tensor({4, 2, 3, 3}, rng));
  int x = g.add_input({1, 8, 8}, "input");
  CHECK_THROWS_WITH_AS(g.add_conv2d(x, "w", "", 1, 0, "stem"),
                       doctest::Contains("stem"), NumericError);
  Workspace ws;
  CHECK_THROWS_WITH_AS(g.start(ws, Tensor({2, 3, 8, 8})), doctest::Contains("input"),
                       NumericError);
}

TEST_CASE("backward before forward is rejected") {
  Rng rng(7);
  SmallNet net = make_small_net(rng);
  Workspace ws;
  ws.labels = {1};
  ws.loss_weights = {1.f};
  net.g.start(ws, Tensor({1, 1, 10, 10}));
  CHECK_THROWS_AS(net.g.backward(ws, net.loss), NumericError);  // loss never evaluated
}

TEST_CASE("gradient of an unused parameter is zero") {
  Graph g;
  Rng rng(8);
  g.add_param("used.w", random_tensor({2, 3}, rng));
  g.add_param("unused.w", random_tensor({2, 3}, rng));
  int x = g.add_input({3}, "input");
  int y = g.add_linear(x, "used.w", "", "fc");
  int xe = g.add_softmax_xent(y, "xent");
  Workspace ws;
  ws.labels = {0};
  g.start(ws, random_tensor({1, 3}, rng));
  g.eval(ws, xe);
  g.zero_grads();
  g.backward(ws, xe);
  for (float v : g.param("unused.w").grad->v) CHECK(v == 0.f);
  bool any = false;
  for (float v : g.param("used.w").grad->v) any = any || v != 0.f;
  CHECK(any);
}

TEST_CASE("single affine layer y = w.x: gradient of y w.r.t. w is x") {
  Graph g;
  Rng rng(9);
  g.add_param("w", random_tensor({1, 3}, rng));
  int x = g.add_input({3}, "input");
  int y = g.add_linear(x, "w", "", "fc");
  Tensor in = random_tensor({1, 3}, rng);
  Workspace ws;
  g.start(ws, in);
  g.eval(ws, y);
  g.zero_grads();
  g.backward(ws, y);  // seed dy = 1
  const Tensor& gw = *g.param("w").grad;
  for (int i = 0; i < 3; ++i) CHECK(gw[i] == doctest::Approx(in[i]).epsilon(1e-6));
}

TEST_CASE("frozen parameters receive no gradients") {
  Rng rng(10);
  SmallNet net = make_small_net(rng);
  net.g.param("c1.w").trainable = false;
  Tensor in = random_tensor({2, 1, 10, 10}, rng, 0.f, 1.f);
  Workspace ws;
  ws.labels = {0, 1};
  ws.loss_weights = {1.f};
  net.g.start(ws, in);
  net.g.eval(ws, net.loss);
  net.g.zero_grads();
  net.g.backward(ws, net.loss);
  for (float v : net.g.param("c1.w").grad->v) CHECK(v == 0.f);
  bool any = false;
  for (float v : net.g.param("c2.w").grad->v) any = any || v != 0.f;
  CHECK(any);
}

TEST_CASE("analytic gradients match central finite differences per op chain") {
  Rng rng(11);
  SmallNet net = make_small_net(rng);
  Tensor in = random_tensor({3, 1, 10, 10}, rng, 0.f, 1.f);
  std::vector<int> labels = {0, 1, 2};
  std::vector<float> weights = {1.f};

  Workspace ws;
  ws.labels = labels;
  ws.loss_weights = weights;
  net.g.start(ws, in);
  net.g.eval(ws, net.loss);
  net.g.zero_grads();
  net.g.backward(ws, net.loss, {.frozen_params = false, .input_grad = true});

  auto pv = refops::snapshot_params(net.g);
  // engine loss agrees with the double reference
  const double ref = refops::ref_loss(net.g, pv, in, labels, weights, net.loss);
  CHECK(std::fabs(ws.act[static_cast<size_t>(net.loss)][0] - ref) < 1e-4);

  int checked = 0, skipped = 0;
  double max_err = 0.0;
  for (const auto& [name, p] : net.g.params()) {
    Rng pick(Rng::mix(12, static_cast<uint64_t>(p.value->numel())));
    for (int t = 0; t < 8; ++t) {
      const size_t idx = static_cast<size_t>(pick.uniform_int(static_cast<int>(p.value->numel())));
      const auto fd = refops::fd_param_stable(net.g, pv, name, idx, in, labels, weights, net.loss);
      if (!fd) {
        ++skipped;  // coordinate sits on a kink; FD itself is invalid there
        continue;
      }
      max_err = std::max(max_err, refops::rel_err(p.grad->v[idx], *fd));
      ++checked;
    }
  }
  CHECK(checked >= 40);
  CHECK(skipped <= 4);
  CHECK(max_err <= 1e-3);

  // input gradient agrees too
  const Tensor& gin = ws.grad[static_cast<size_t>(net.g.input_node())];
  REQUIRE(gin.numel() == in.numel());
  Rng pick(13);
  double max_in_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    const size_t idx = static_cast<size_t>(pick.uniform_int(static_cast<int>(in.numel())));
    const auto fd = refops::fd_input_stable(net.g, pv, in, idx, labels, weights, net.loss);
    if (!fd) continue;
    max_in_err = std::max(max_in_err, refops::rel_err(gin.v[idx], *fd));
  }
  CHECK(max_in_err <= 1e-3);
}

TEST_CASE("residual add and loss weights propagate gradients correctly") {
  Graph g;
  Rng rng(14);
  g.add_param("c1.w", random_tensor({2, 2, 3, 3}, rng, -0.4f, 0.4f));
  g.add_param("fc1.w", random_tensor({3, 2}, rng));
  g.add_param("fc2.w", random_tensor({3, 2}, rng));
  int x = g.add_input({2, 6, 6}, "input");
  int c1 = g.add_conv2d(x, "c1.w", "", 1, 1, "c1");
  int r = g.add_relu(c1, "r");
  int add = g.add_add(r, x, "skip");
  int gap = g.add_global_avg_pool(add, "gap");
  int h1 = g.add_linear(gap, "fc1.w", "", "fc1");
  int h2 = g.add_linear(gap, "fc2.w", "", "fc2");
  int xe1 = g.add_softmax_xent(h1, "xe1");
  int xe2 = g.add_softmax_xent(h2, "xe2");
  int loss = g.add_loss_sum({xe1, xe2}, "loss");

  Tensor in = random_tensor({2, 2, 6, 6}, rng, 0.f, 1.f);
  std::vector<int> labels = {1, 2};
  std::vector<float> weights = {0.75f, 1.5f};
  Workspace ws;
  ws.labels = labels;
  ws.loss_weights = weights;
  g.start(ws, in);
  g.eval(ws, loss);
  g.zero_grads();
  g.backward(ws, loss);

  auto pv = refops::snapshot_params(g);
  double max_err = 0.0;
  int skipped = 0;
  for (const auto& [name, p] : g.params()) {
    for (int64_t idx = 0; idx < p.value->numel(); ++idx) {
      const auto fd = refops::fd_param_stable(g, pv, name, static_cast<size_t>(idx), in, labels,
                                              weights, loss);
      if (!fd) {
        ++skipped;
        continue;
      }
      max_err = std::max(max_err, refops::rel_err(p.grad->v[static_cast<size_t>(idx)], *fd));
    }
  }
  CHECK(max_err <= 1e-3);
  CHECK(skipped <= 3);
}

TEST_CASE("lazy evaluation computes only requested ancestors") {
  Rng rng(15);
  SmallNet net = make_small_net(rng);
  Tensor in = random_tensor({1, 1, 10, 10}, rng, 0.f, 1.f);
  Workspace ws;
  net.g.start(ws, in);
  // evaluate only the first conv; nothing deeper should be materialized
  int first_conv = 1;
  REQUIRE(net.g.node(first_conv).op == Op::Conv2d);
  net.g.eval(ws, first_conv);
  CHECK(ws.ready[static_cast<size_t>(first_conv)]);
  CHECK(!ws.ready[static_cast<size_t>(net.logits)]);
  CHECK(!ws.ready[static_cast<size_t>(net.loss)]);
}
