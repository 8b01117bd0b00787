#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "bitlab/errors.hpp"
#include "bitlab/rng.hpp"
#include "bitlab/training.hpp"

using namespace bitlab;

namespace {

ShallowDeepNet tiny_net(uint64_t seed, int in_c = 1, int hw = 14) {
  ModelConfig cfg;
  cfg.family = Family::MiniResNet;
  cfg.in_channels = in_c;
  cfg.in_h = hw;
  cfg.in_w = hw;
  return build_model(cfg, seed);
}

Dataset tiny_data(int n, uint64_t seed) {
  Dataset full = synth_digits(n, seed);
  // shrink to 14x14 by 2x2 average pooling to keep the tests fast
  Dataset out;
  out.classes = full.classes;
  out.labels = full.labels;
  out.source_hash = full.source_hash;
  out.images = Tensor({n, 1, 14, 14});
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < 14; ++y)
      for (int x = 0; x < 14; ++x) {
        const float* src = full.images.v.data() + static_cast<int64_t>(i) * 28 * 28;
        out.images.v[(static_cast<size_t>(i) * 14 + y) * 14 + x] =
            0.25f * (src[(2 * y) * 28 + 2 * x] + src[(2 * y) * 28 + 2 * x + 1] +
                     src[(2 * y + 1) * 28 + 2 * x] + src[(2 * y + 1) * 28 + 2 * x + 1]);
      }
  return out;
}

std::map<std::string, std::vector<float>> snapshot(const ShallowDeepNet& net) {
  std::map<std::string, std::vector<float>> out;
  for (const auto& [name, p] : net.graph.params()) out[name] = p.value->v;
  return out;
}

bool group_unchanged(const ShallowDeepNet& net,
                     const std::map<std::string, std::vector<float>>& before, ParamGroup g) {
  for (const auto& [name, grp] : net.groups)
    if (grp == g && net.graph.param(name).value->v != before.at(name)) return false;
  return true;
}

}  // namespace

TEST_CASE("zero epochs leaves the net unchanged") {
  auto net = tiny_net(1);
  auto before = snapshot(net);
  TrainConfig cfg = desk_base_config(1);
  cfg.epochs = 0;
  auto log = train_base(net, tiny_data(64, 2), cfg);
  CHECK(log.epoch_loss.empty());
  for (const auto& [name, p] : net.graph.params()) CHECK(p.value->v == before.at(name));
}

TEST_CASE("base training keeps IC parameters bitwise unchanged") {
  auto net = tiny_net(3);
  auto before = snapshot(net);
  TrainConfig cfg = desk_base_config(3);
  cfg.epochs = 1;
  train_base(net, tiny_data(128, 4), cfg);
  CHECK(group_unchanged(net, before, ParamGroup::Ics));
  CHECK(!group_unchanged(net, before, ParamGroup::Backbone));
  CHECK(!group_unchanged(net, before, ParamGroup::FinalHead));
}

TEST_CASE("train_base rejects non-base regimes and empty data") {
  auto net = tiny_net(5);
  TrainConfig cfg = desk_base_config(5);
  cfg.regime = Regime::Nor;
  CHECK_THROWS_AS(train_base(net, tiny_data(16, 6), cfg), ConfigError);
}

TEST_CASE("nonfinite loss aborts with epoch/batch coordinates") {
  auto net = tiny_net(7);
  net.graph.param("final.fc.w").value->v[0] = std::numeric_limits<float>::infinity();
  TrainConfig cfg = desk_base_config(7);
  cfg.epochs = 1;
  CHECK_THROWS_WITH_AS(train_base(net, tiny_data(32, 8), cfg), doctest::Contains("epoch 0"),
                       NumericError);
}

TEST_CASE("finetune freezes backbone and final head bitwise, for every regime") {
  for (Regime regime : {Regime::Nor, Regime::Rob, Regime::Aug}) {
    auto net = tiny_net(9);
    quantize_model(net);
    auto before = snapshot(net);
    TrainConfig cfg = desk_finetune_config(9, regime);
    cfg.epochs = 1;
    std::optional<RobConfig> rob;
    if (regime == Regime::Rob) rob = RobConfig{4, 1, 1.f, 1.f};
    finetune_ics(net, tiny_data(128, 10), cfg, rob);
    CHECK(group_unchanged(net, before, ParamGroup::Backbone));
    CHECK(group_unchanged(net, before, ParamGroup::FinalHead));
    CHECK(!group_unchanged(net, before, ParamGroup::Ics));
  }
}

TEST_CASE("regime/rob mismatches are rejected") {
  auto net = tiny_net(11);
  quantize_model(net);
  TrainConfig cfg = desk_finetune_config(11, Regime::Nor);
  cfg.epochs = 1;
  CHECK_THROWS_AS(finetune_ics(net, tiny_data(32, 12), cfg, RobConfig{}), ConfigError);
  cfg.regime = Regime::Rob;
  CHECK_THROWS_AS(finetune_ics(net, tiny_data(32, 12), cfg, std::nullopt), ConfigError);
  cfg.regime = Regime::Base;
  CHECK_THROWS_AS(finetune_ics(net, tiny_data(32, 12), cfg, std::nullopt), ConfigError);
}

TEST_CASE("k = 0 rob step costs exactly twice the nor loss") {
  auto net = tiny_net(13);
  quantize_model(net);
  set_freeze(net, ParamGroup::Backbone, true);
  set_freeze(net, ParamGroup::FinalHead, true);
  Dataset ds = tiny_data(32, 14);
  std::vector<int> idx(32);
  std::iota(idx.begin(), idx.end(), 0);
  Tensor images = gather_images(ds, idx);
  auto labels = gather_labels(ds, idx);

  RobConfig rob{0, 1, 1.f, 1.f};
  auto flipped = refresh_flipped_model(net, rob, images, labels);
  CHECK(flipped.flips.empty());
  for (const auto& [name, qt] : net.qstate)
    CHECK(flipped.net.qstate.at(name).ints == qt.ints);

  // standalone nor loss, computed independently
  Workspace ws;
  ws.labels = labels;
  ws.loss_weights = head_weights_all_ics(net);
  net.graph.start(ws, images);
  const float nor_loss = net.graph.eval(ws, net.loss_node)[0];

  auto r = rob_step(net, flipped, images, labels, rob, 0, /*run_backward=*/false);
  CHECK(r.clean_loss == nor_loss);
  CHECK(r.flipped_loss == nor_loss);
  CHECK(r.combined == 2.f * nor_loss);
}

TEST_CASE("rob step decomposes into the two standalone losses exactly") {
  auto net = tiny_net(15);
  quantize_model(net);
  set_freeze(net, ParamGroup::Backbone, true);
  set_freeze(net, ParamGroup::FinalHead, true);
  Dataset ds = tiny_data(48, 16);
  std::vector<int> idx(48);
  std::iota(idx.begin(), idx.end(), 0);
  Tensor images = gather_images(ds, idx);
  auto labels = gather_labels(ds, idx);

  RobConfig rob{6, 1, 1.f, 1.f};
  auto flipped = refresh_flipped_model(net, rob, images, labels);
  REQUIRE(flipped.flips.size() == 6);

  // standalone losses from two separate forward passes
  Workspace ws;
  ws.labels = labels;
  ws.loss_weights = head_weights_all_ics(net);
  net.graph.start(ws, images);
  const float clean = net.graph.eval(ws, net.loss_node)[0];
  Workspace wf;
  wf.labels = labels;
  wf.loss_weights = head_weights_all_ics(flipped.net);
  flipped.net.graph.start(wf, images);
  const float flp = flipped.net.graph.eval(wf, flipped.net.loss_node)[0];

  auto r = rob_step(net, flipped, images, labels, rob, 0, /*run_backward=*/false);
  CHECK(r.clean_loss == clean);
  CHECK(r.flipped_loss == flp);
  CHECK(r.combined == clean + flp);
  CHECK(flp != clean);  // the flips actually moved the loss
}

TEST_CASE("rob step gradients touch only the shared IC parameters") {
  auto net = tiny_net(17);
  quantize_model(net);
  set_freeze(net, ParamGroup::Backbone, true);
  set_freeze(net, ParamGroup::FinalHead, true);
  set_freeze(net, ParamGroup::Ics, false);
  Dataset ds = tiny_data(32, 18);
  std::vector<int> idx(32);
  std::iota(idx.begin(), idx.end(), 0);
  Tensor images = gather_images(ds, idx);
  auto labels = gather_labels(ds, idx);
  RobConfig rob{3, 1, 1.f, 1.f};
  auto flipped = refresh_flipped_model(net, rob, images, labels);
  auto r = rob_step(net, flipped, images, labels, rob, 0);
  CHECK(r.combined > 0.f);
  for (const auto& [name, group] : net.groups) {
    bool zero = true;
    for (float v : net.graph.param(name).grad->v) zero = zero && v == 0.f;
    if (group == ParamGroup::Ics && name.find(".fc.w") != std::string::npos) {
      CHECK(!zero);
      // shared storage: the clone's gradient is the same tensor
      CHECK(flipped.net.graph.param(name).grad->v == net.graph.param(name).grad->v);
    } else if (group != ParamGroup::Ics) {
      CHECK(zero);
      bool clone_zero = true;
      for (float v : flipped.net.graph.param(name).grad->v) clone_zero = clone_zero && v == 0.f;
      CHECK(clone_zero);
    }
  }
}

TEST_CASE("flipped-model refresh is deterministic and stale detection works") {
  auto net = tiny_net(19);
  quantize_model(net);
  Dataset ds = tiny_data(32, 20);
  std::vector<int> idx(32);
  std::iota(idx.begin(), idx.end(), 0);
  Tensor images = gather_images(ds, idx);
  auto labels = gather_labels(ds, idx);
  RobConfig rob{5, 1, 1.f, 1.f};
  auto a = refresh_flipped_model(net, rob, images, labels, 0);
  auto b = refresh_flipped_model(net, rob, images, labels, 0);
  REQUIRE(a.flips.size() == b.flips.size());
  for (size_t i = 0; i < a.flips.size(); ++i) {
    CHECK(a.flips[i].address == b.flips[i].address);
    CHECK(a.flips[i].before == b.flips[i].before);
    CHECK(a.flips[i].after == b.flips[i].after);
    CHECK(a.flips[i].score == b.flips[i].score);
  }
  // k = 1 flips exactly the top-ranked bit of the gradient ranking
  RobConfig one{1, 1, 1.f, 1.f};
  auto c = refresh_flipped_model(net, one, images, labels, 0);
  Workspace ws;
  auto ranked = bit_gradients(net.graph, ws, net.loss_node, images, labels,
                              head_weights_final_only(net), net.qstate, RankMode::LossIncrease);
  REQUIRE(c.flips.size() == 1);
  CHECK(c.flips[0].address == ranked.front().addr);

  auto r = rob_step(net, c, images, labels, one, 3, /*run_backward=*/false);
  CHECK(r.stale);  // refreshed at epoch 0, now at epoch 3 with refresh every 1
  auto r2 = rob_step(net, c, images, labels, one, 1, /*run_backward=*/false);
  CHECK(!r2.stale);
}

TEST_CASE("budget larger than the bit space is rejected") {
  auto net = tiny_net(21);
  quantize_model(net);
  Dataset ds = tiny_data(8, 22);
  std::vector<int> idx(8);
  std::iota(idx.begin(), idx.end(), 0);
  int64_t bits = 0;
  for (const auto& [name, qt] : net.qstate) bits += static_cast<int64_t>(qt.ints.size()) * 8;
  RobConfig rob{static_cast<int>(bits + 1), 1, 1.f, 1.f};
  CHECK_THROWS_AS(
      refresh_flipped_model(net, rob, gather_images(ds, idx), gather_labels(ds, idx)),
      NumericError);
}

TEST_CASE("cross-dataset fine-tuning installs the input adapter") {
  auto net = tiny_net(23, 3, 16);  // 3x16x16 backbone
  quantize_model(net);
  Dataset ds = tiny_data(64, 24);  // 1x14x14 data
  TrainConfig cfg = desk_finetune_config(23, Regime::Nor);
  cfg.epochs = 1;
  finetune_ics(net, ds, cfg);
  REQUIRE(net.adapter.has_value());
  CHECK(net.adapter->in_channels == 1);
  CHECK(net.adapter->in_h == 14);
  // inference paths accept the source shape afterwards
  Workspace ws;
  auto heads = forward_all_heads(net, ws, gather_images(ds, {0, 1}));
  CHECK(heads.size() == 7);
}

TEST_CASE("epoch order is a deterministic permutation") {
  auto a = epoch_order(100, 5, 3);
  auto b = epoch_order(100, 5, 3);
  CHECK(a == b);
  CHECK(epoch_order(100, 5, 4) != a);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);
}

TEST_CASE("augmented fine-tuning consumes the augment stream deterministically") {
  auto net1 = tiny_net(25);
  auto net2 = tiny_net(25);
  quantize_model(net1);
  quantize_model(net2);
  Dataset ds = tiny_data(96, 26);
  TrainConfig cfg = desk_finetune_config(27, Regime::Aug);
  cfg.epochs = 2;
  finetune_ics(net1, ds, cfg);
  finetune_ics(net2, ds, cfg);
  for (const auto& [name, p] : net1.graph.params())
    CHECK(p.value->v == net2.graph.param(name).value->v);
}
