#include "bitlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bitlab/errors.hpp"
#include "bitlab/rng.hpp"

namespace bitlab {

Regime regime_from_string(const std::string& s) {
  if (s == "base") return Regime::Base;
  if (s == "nor") return Regime::Nor;
  if (s == "rob") return Regime::Rob;
  if (s == "aug") return Regime::Aug;
  throw ConfigError("unknown regime '" + s + "' (expected base|nor|rob|aug)");
}

std::string regime_to_string(Regime r) {
  switch (r) {
    case Regime::Base: return "base";
    case Regime::Nor: return "nor";
    case Regime::Rob: return "rob";
    case Regime::Aug: return "aug";
  }
  return "?";
}

TrainConfig desk_base_config(uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 128;
  cfg.lr = 3e-3f;
  cfg.seed = seed;
  cfg.regime = Regime::Base;
  return cfg;
}

TrainConfig desk_finetune_config(uint64_t seed, Regime regime) {
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 64;
  cfg.lr = 0.1f;  // the IC heads are single affine layers on small features
  cfg.seed = seed;
  cfg.regime = regime;
  return cfg;
}

std::vector<int> epoch_order(int n, uint64_t seed, int epoch) {
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = stream_rng(seed, {0x736875u, static_cast<uint64_t>(epoch)});
  for (int i = 0; i < n; ++i) {
    const int j = i + rng.uniform_int(n - i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  return order;
}

namespace {

// Refresh the quantized view from float shadows for parameters the optimizer
// just moved. Frozen quantized parameters are already exactly int * scale.
void refresh_trainable_quant(ShallowDeepNet& net) {
  for (auto& [name, qt] : net.qstate) {
    Param& p = net.graph.param(name);
    if (!p.trainable) continue;
    qt = quantize(*p.value);
    *p.value = dequantize(qt);
  }
}

void check_finite_loss(float loss, Regime regime, int epoch, int batch_index) {
  if (!std::isfinite(loss))
    throw NumericError("nonfinite loss in " + regime_to_string(regime) + " training at epoch " +
                       std::to_string(epoch) + ", batch " + std::to_string(batch_index));
}

}  // namespace

TrainLog train_base(ShallowDeepNet& net, const Dataset& dataset, const TrainConfig& cfg) {
  if (cfg.regime != Regime::Base) throw ConfigError("train_base requires regime = base");
  if (dataset.size() == 0) throw DataError("train_base: empty dataset");
  set_freeze(net, ParamGroup::Ics, true);
  set_freeze(net, ParamGroup::Backbone, false);
  set_freeze(net, ParamGroup::FinalHead, false);

  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam opt(ac);
  Workspace ws;
  TrainLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(dataset.size(), cfg.seed, epoch);
    double total = 0.0;
    int batches = 0;
    for (int start = 0; start < dataset.size(); start += cfg.batch_size) {
      const int n = std::min(cfg.batch_size, dataset.size() - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + n);
      Tensor batch = adapt_batch(net, gather_images(dataset, idx));
      ws.labels = gather_labels(dataset, idx);
      ws.loss_weights = head_weights_final_only(net);
      net.graph.zero_grads();
      net.graph.start(ws, batch);
      const float loss = net.graph.eval(ws, net.loss_node)[0];
      check_finite_loss(loss, cfg.regime, epoch, batches);
      net.graph.backward(ws, net.loss_node);
      opt.step(net.graph);
      refresh_trainable_quant(net);
      total += loss;
      ++batches;
    }
    log.epoch_loss.push_back(batches ? total / batches : 0.0);
  }
  return log;
}

FlippedModel refresh_flipped_model(ShallowDeepNet& clean, const RobConfig& rob,
                                   const Tensor& ranking_images,
                                   const std::vector<int>& ranking_labels, int current_epoch) {
  if (ranking_labels.empty()) throw DataError("refresh_flipped_model: empty ranking batch");
  if (clean.qstate.empty())
    throw NumericError("refresh_flipped_model: model is not quantized");
  int64_t total_bits = 0;
  for (const auto& [name, qt] : clean.qstate) total_bits += static_cast<int64_t>(qt.ints.size()) * 8;
  if (rob.attack_budget < 0 || rob.attack_budget > total_bits)
    throw NumericError("refresh_flipped_model: attack budget " +
                       std::to_string(rob.attack_budget) + " exceeds " +
                       std::to_string(total_bits) + " flippable bits");

  FlippedModel flipped;
  flipped.net = clone_sharing_ics(clean);
  flipped.refreshed_epoch = current_epoch;
  if (rob.attack_budget == 0) return flipped;

  Workspace ws;
  ws.loss_weights = head_weights_final_only(flipped.net);
  auto ranked = bit_gradients(flipped.net.graph, ws, flipped.net.loss_node,
                              adapt_batch(flipped.net, ranking_images), ranking_labels,
                              head_weights_final_only(flipped.net), flipped.net.qstate,
                              RankMode::LossIncrease);
  auto targets = top_k_bits(ranked, static_cast<size_t>(rob.attack_budget));
  for (size_t i = 0; i < targets.size(); ++i)
    flipped.flips.push_back(flip_bit(flipped.net.graph, flipped.net.qstate, targets[i],
                                     ranked[i].score));
  return flipped;
}

RobStepResult rob_step(ShallowDeepNet& clean, FlippedModel& flipped, const Tensor& images,
                       const std::vector<int>& labels, const RobConfig& rob, int current_epoch,
                       bool run_backward) {
  if (labels.empty()) throw DataError("rob_step: empty batch");
  RobStepResult out;
  out.stale = current_epoch - flipped.refreshed_epoch > rob.refresh_epochs;

  Workspace wc, wf;
  // gradients for both passes accumulate into the shared IC parameters
  clean.graph.zero_grads();

  const Tensor batch_clean = adapt_batch(clean, images);
  wc.labels = labels;
  wc.loss_weights = head_weights_all_ics(clean, rob.clean_weight);
  clean.graph.start(wc, batch_clean);
  out.clean_loss = clean.graph.eval(wc, clean.loss_node)[0];
  if (run_backward) clean.graph.backward(wc, clean.loss_node);

  const Tensor batch_flipped = adapt_batch(flipped.net, images);
  wf.labels = labels;
  wf.loss_weights = head_weights_all_ics(flipped.net, rob.flipped_weight);
  flipped.net.graph.start(wf, batch_flipped);
  out.flipped_loss = flipped.net.graph.eval(wf, flipped.net.loss_node)[0];
  if (run_backward) flipped.net.graph.backward(wf, flipped.net.loss_node);

  out.combined = out.clean_loss + out.flipped_loss;
  return out;
}

TrainLog finetune_ics(ShallowDeepNet& net, const Dataset& dataset, const TrainConfig& cfg,
                      const std::optional<RobConfig>& rob, const PerturbSpec* aug_spec) {
  if (cfg.regime == Regime::Base)
    throw ConfigError("finetune_ics requires regime nor, rob, or aug");
  if ((cfg.regime == Regime::Rob) != rob.has_value())
    throw ConfigError("rob config must be present exactly when regime = rob");
  if (dataset.size() == 0) throw DataError("finetune_ics: empty dataset");

  // cross-dataset fine-tuning installs the input adapter
  if (dataset.channels() != net.cfg.in_channels || dataset.height() != net.cfg.in_h ||
      dataset.width() != net.cfg.in_w) {
    net.adapter = AdapterSpec{dataset.channels(), dataset.height(), dataset.width()};
  }

  set_freeze(net, ParamGroup::Backbone, true);
  set_freeze(net, ParamGroup::FinalHead, true);
  set_freeze(net, ParamGroup::Ics, false);

  PerturbSpec aug;
  std::optional<AugmentStream> stream;
  if (cfg.regime == Regime::Aug) {
    aug = aug_spec ? *aug_spec : PerturbSpec::augment_default(cfg.seed);
    stream.emplace(dataset, aug, Rng::mix(cfg.seed, 0x617567u));
  }

  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam opt(ac);
  Workspace ws;
  TrainLog log;
  FlippedModel flipped;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(dataset.size(), cfg.seed, epoch);
    double total = 0.0;
    int batches = 0;
    for (int start = 0; start < dataset.size(); start += cfg.batch_size) {
      const int n = std::min(cfg.batch_size, dataset.size() - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + n);
      const std::vector<int> labels = gather_labels(dataset, idx);

      if (cfg.regime == Regime::Rob) {
        if (start == 0 && epoch % rob->refresh_epochs == 0) {
          // ranking batch = first training batch of the epoch
          flipped = refresh_flipped_model(net, *rob, gather_images(dataset, idx), labels, epoch);
        }
        const RobStepResult r =
            rob_step(net, flipped, gather_images(dataset, idx), labels, *rob, epoch);
        check_finite_loss(r.combined, cfg.regime, epoch, batches);
        opt.step(net.graph);
        total += r.combined;
        ++batches;
        continue;
      }

      Tensor batch = cfg.regime == Regime::Aug ? stream->batch(epoch, idx)
                                               : gather_images(dataset, idx);
      batch = adapt_batch(net, batch);
      ws.labels = labels;
      ws.loss_weights = head_weights_all_ics(net);
      net.graph.zero_grads();
      net.graph.start(ws, batch);
      const float loss = net.graph.eval(ws, net.loss_node)[0];
      check_finite_loss(loss, cfg.regime, epoch, batches);
      net.graph.backward(ws, net.loss_node);
      opt.step(net.graph);
      total += loss;
      ++batches;
    }
    log.epoch_loss.push_back(batches ? total / batches : 0.0);
  }
  return log;
}

double head_accuracy(const ShallowDeepNet& net, const Dataset& ds, int head_node, int batch_size) {
  if (ds.size() == 0) throw DataError("head_accuracy: empty dataset");
  Workspace ws;
  int correct = 0;
  for (int start = 0; start < ds.size(); start += batch_size) {
    const int n = std::min(batch_size, ds.size() - start);
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), start);
    net.graph.start(ws, adapt_batch(net, gather_images(ds, idx)));
    const Tensor& logits = net.graph.eval(ws, head_node);
    for (int s = 0; s < n; ++s)
      if (argmax(logits.v.data() + static_cast<int64_t>(s) * ds.classes, ds.classes) ==
          ds.labels[static_cast<size_t>(start + s)])
        ++correct;
  }
  return static_cast<double>(correct) / ds.size();
}

}  // namespace bitlab
