#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bitlab/graph.hpp"
#include "bitlab/tensor.hpp"

namespace bitlab {

// 8-bit two's-complement weights with a per-tensor scale (symmetric
// quantization, zero-point 0). Dequantized weight = int * scale. Quantization
// never produces -128; only bit flips can reach it.
struct QuantizedTensor {
  std::vector<int8_t> ints;
  float scale = 1.f;
  std::vector<int> source_shape;
};

// Identity of a single parameter bit. bit 7 is the sign bit (weight -128).
struct BitAddress {
  std::string layer_id;
  int64_t index = 0;
  int bit = 0;

  bool operator==(const BitAddress&) const = default;
};

struct FlipRecord {
  BitAddress address;
  int8_t before = 0;
  int8_t after = 0;
  float weight_delta = 0.f;  // (after - before) * scale
  float score = 0.f;         // ranking score at selection time
};

QuantizedTensor quantize(const Tensor& weights);
Tensor dequantize(const QuantizedTensor& qt);

int8_t flip_int8(int8_t value, int bit);
// Change in the dequantized weight if `bit` of element `index` were flipped:
// +-2^bit * scale, with -+128 * scale for the sign bit.
float flip_weight_delta(const QuantizedTensor& qt, int64_t index, int bit);

// Per-model quantized view, keyed by parameter name.
using QuantState = std::map<std::string, QuantizedTensor>;

// Quantizes the named graph parameters in place: each float parameter is
// snapped to its dequantized value so all subsequent forwards see exactly
// int * scale.
QuantState quantize_params(Graph& g, const std::vector<std::string>& names);

// Refreshes the quantized view from the float shadow weights (after an
// optimizer step on quantized parameters).
void requantize_params(Graph& g, QuantState& qs);

// Toggles exactly one bit and mirrors the new value into the float parameter.
// An invalid address is rejected with the model untouched.
FlipRecord flip_bit(Graph& g, QuantState& qs, const BitAddress& addr, float score = 0.f);

// Re-applies the records' bits in reverse order (XOR involution), restoring
// the model bit-for-bit.
void undo_flips(Graph& g, QuantState& qs, const std::vector<FlipRecord>& records);

enum class RankMode {
  LossIncrease,  // descending signed score (first-order delta-loss)
  Magnitude,     // descending |score|
};

struct ScoredBit {
  BitAddress addr;
  float score = 0.f;
};

// score(b) = dL/dw at b's element * weight delta of flipping b. Reads the
// gradients already accumulated in the graph (backward with frozen_params).
// Ties break by (layer-id, index, bit) ascending.
std::vector<ScoredBit> rank_bits_from_grads(const Graph& g, const QuantState& qs, RankMode mode);

// Full bit ranking for a batch: forward + backward on `loss_node`, then
// score and sort every bit of the quantized parameters. Parameters are left
// untouched (gradient buffers are scratch); pure in (model, batch), so
// repeated calls give identical results.
std::vector<ScoredBit> bit_gradients(Graph& g, Workspace& ws, int loss_node, const Tensor& images,
                                     const std::vector<int>& labels,
                                     const std::vector<float>& loss_weights, const QuantState& qs,
                                     RankMode mode);

// First k addresses of the ranked sequence. k = 0 is an empty result.
std::vector<BitAddress> top_k_bits(const std::vector<ScoredBit>& ranked, size_t k);

// FlipRecord log line format: layer,index,bit,before,after,score (see
// docs/formats.md).
std::string flip_record_csv_header();
std::string flip_record_csv_row(const FlipRecord& r);

}  // namespace bitlab
