#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bitlab/graph.hpp"
#include "bitlab/quant.hpp"

namespace bitlab {

enum class Family {
  MiniResNet,  // stem + 6 residual blocks (skip connections)
  MiniVgg,     // stem + 6 plain conv blocks with max-pooling
};

Family family_from_string(const std::string& s);
std::string family_to_string(Family f);

struct ModelConfig {
  Family family = Family::MiniResNet;
  int in_channels = 1;
  int in_h = 28;
  int in_w = 28;
  int classes = 10;
  int ic_count = 6;  // internal classifiers, attached strictly before the final head
  int width = 1;     // channel multiplier: stages carry (8w, 16w, 32w) channels

  bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup { Backbone, Ics, FinalHead };

// Maps a smaller input onto the backbone's expected input by replicating the
// channel and zero-padding the borders (used for cross-dataset fine-tuning).
struct AdapterSpec {
  int in_channels = 1;
  int in_h = 28;
  int in_w = 28;

  bool operator==(const AdapterSpec&) const = default;
};

// Backbone with internal classifiers C_1..C_N and a final head. The graph also
// carries one cross-entropy node per head plus a weighted total-loss node, so
// training regimes are weight vectors over heads.
struct ShallowDeepNet {
  ModelConfig cfg;
  Graph graph;
  std::vector<int> attach_units;  // backbone unit index (1-based) per IC
  std::vector<int> attach_nodes;  // graph node id of each IC's attachment activation
  std::vector<int> ic_logits;     // node ids, ascending depth
  int final_unit_node = -1;       // activation feeding the final head
  int final_logits = -1;
  std::vector<int> ic_xents;
  int final_xent = -1;
  int loss_node = -1;  // loss_sum over [ic_1..ic_N, final]
  std::map<std::string, ParamGroup> groups;
  QuantState qstate;  // empty until quantize_model
  std::optional<AdapterSpec> adapter;

  int ic_count() const { return static_cast<int>(ic_logits.size()); }
};

// Deterministic Kaiming-uniform initialization from the seed; the last conv of
// each residual branch starts at zero so the normalization-free blocks begin
// as identities.
ShallowDeepNet build_model(const ModelConfig& cfg, uint64_t seed);

// Head loss-weight vectors (length N+1, final head last).
std::vector<float> head_weights_final_only(const ShallowDeepNet& net);
std::vector<float> head_weights_all_ics(const ShallowDeepNet& net, float w = 1.f);

// Applies the input adapter when the batch matches the adapter's source shape.
Tensor adapt_batch(const ShallowDeepNet& net, const Tensor& batch);
// Pulls a gradient w.r.t. the adapted input back to the source shape.
Tensor adapt_pullback(const ShallowDeepNet& net, const Tensor& grad);

// One backbone pass, all heads read their attachment activations.
std::vector<Tensor> forward_all_heads(const ShallowDeepNet& net, Workspace& ws,
                                      const Tensor& batch);
// Final-head logits only.
Tensor forward_final(const ShallowDeepNet& net, Workspace& ws, const Tensor& batch);

void set_freeze(ShallowDeepNet& net, ParamGroup group, bool frozen);
bool group_frozen(const ShallowDeepNet& net, ParamGroup group);

// Flippable bit space: convolution and affine weights of the backbone and
// final head; biases and IC parameters excluded (configuration default).
std::vector<std::string> flippable_param_names(const ShallowDeepNet& net);

// Quantizes the flippable parameters in place (8-bit symmetric per-tensor).
void quantize_model(ShallowDeepNet& net);

int64_t param_count(const ShallowDeepNet& net);
int64_t param_count(const ShallowDeepNet& net, ParamGroup group);

// Deep-copies backbone and final head (including the quantized view) while
// sharing IC parameter storage -- the flipped-model clone used by robustness
// training.
ShallowDeepNet clone_sharing_ics(const ShallowDeepNet& net);

// Model checkpoint: config header + tensor block + quantized view
// (docs/formats.md). Freeze state is not persisted.
void save_model(const ShallowDeepNet& net, const std::string& path);
ShallowDeepNet load_model(const std::string& path);

}  // namespace bitlab
