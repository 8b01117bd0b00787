#pragma once

#include <optional>
#include <vector>

#include "bitlab/adam.hpp"
#include "bitlab/data.hpp"
#include "bitlab/sdn.hpp"

namespace bitlab {

enum class Regime { Base, Nor, Rob, Aug };

Regime regime_from_string(const std::string& s);
std::string regime_to_string(Regime r);

struct TrainConfig {
  int epochs = 0;
  int batch_size = 128;  // paper default
  float lr = 4e-4f;      // paper default (Adam)
  uint64_t seed = 0;
  Regime regime = Regime::Base;
};

// Desk-scale presets: minutes-scale runs that still clear the accuracy bars.
TrainConfig desk_base_config(uint64_t seed);
TrainConfig desk_finetune_config(uint64_t seed, Regime regime);

struct RobConfig {
  int attack_budget = 10;   // bits flipped in the simulated-attack clone
  int refresh_epochs = 1;   // epochs between re-ranking and re-flipping
  float clean_weight = 1.f;
  float flipped_weight = 1.f;
};

struct TrainLog {
  std::vector<double> epoch_loss;  // mean total loss per epoch
};

// Base training: ICs frozen, backbone + final head trained on the final-head
// cross-entropy. A nonfinite loss aborts with epoch/batch coordinates.
TrainLog train_base(ShallowDeepNet& net, const Dataset& dataset, const TrainConfig& cfg);

// The flipped clone used by robustness training: its backbone and final head
// are deep copies with the top-k ranked bits flipped; IC parameters are the
// same storage as the clean model's.
struct FlippedModel {
  ShallowDeepNet net;
  std::vector<FlipRecord> flips;
  int refreshed_epoch = -1;
};

// Copies the clean model and flips the top-k bits ranked by the first-order
// loss-increase score of the final-head loss on the ranking batch.
FlippedModel refresh_flipped_model(ShallowDeepNet& clean, const RobConfig& rob,
                                   const Tensor& ranking_images,
                                   const std::vector<int>& ranking_labels,
                                   int current_epoch = 0);

struct RobStepResult {
  float combined = 0.f;
  float clean_loss = 0.f;
  float flipped_loss = 0.f;
  bool stale = false;  // refresh overdue; flagged, not fatal
};

// One robustness-training step: the batch goes through the clean model and
// the flipped clone; the weighted sum of their IC losses backpropagates into
// the shared IC parameters only. Gradients accumulate in `clean`; the caller
// steps the optimizer.
RobStepResult rob_step(ShallowDeepNet& clean, FlippedModel& flipped, const Tensor& images,
                       const std::vector<int>& labels, const RobConfig& rob, int current_epoch,
                       bool run_backward = true);

// IC fine-tuning in the three regimes. `rob` must be present exactly when
// regime == Rob; `aug_spec` overrides the default augmentation set for Aug.
// If the dataset shape differs from the backbone input, the input adapter is
// installed (cross-dataset fine-tuning).
TrainLog finetune_ics(ShallowDeepNet& net, const Dataset& dataset, const TrainConfig& cfg,
                      const std::optional<RobConfig>& rob = std::nullopt,
                      const PerturbSpec* aug_spec = nullptr);

// Deterministic per-epoch shuffle order shared by the training loops.
std::vector<int> epoch_order(int n, uint64_t seed, int epoch);

// Plain classification accuracy of one head over a dataset.
double head_accuracy(const ShallowDeepNet& net, const Dataset& ds, int head_node,
                     int batch_size = 256);

}  // namespace bitlab
