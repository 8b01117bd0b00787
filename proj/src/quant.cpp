#include "bitlab/quant.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bitlab/errors.hpp"

namespace bitlab {

QuantizedTensor quantize(const Tensor& weights) {
  if (!weights.all_finite()) throw NumericError("quantize: weights contain nonfinite values");
  QuantizedTensor qt;
  qt.source_shape = weights.shape;
  float maxabs = 0.f;
  for (float w : weights.v) maxabs = std::max(maxabs, std::fabs(w));
  qt.scale = maxabs > 0.f ? maxabs / 127.f : 1.f;
  qt.ints.resize(weights.v.size());
  for (size_t i = 0; i < weights.v.size(); ++i) {
    // round half away from zero, clamp to [-127, 127]
    const float q = std::round(weights.v[i] / qt.scale);
    qt.ints[i] = static_cast<int8_t>(std::clamp(q, -127.f, 127.f));
  }
  return qt;
}

Tensor dequantize(const QuantizedTensor& qt) {
  Tensor t(qt.source_shape);
  for (size_t i = 0; i < qt.ints.size(); ++i)
    t.v[i] = static_cast<float>(qt.ints[i]) * qt.scale;
  return t;
}

int8_t flip_int8(int8_t value, int bit) {
  const uint8_t u = static_cast<uint8_t>(value) ^ static_cast<uint8_t>(1u << bit);
  return static_cast<int8_t>(u);
}

float flip_weight_delta(const QuantizedTensor& qt, int64_t index, int bit) {
  const int8_t before = qt.ints[static_cast<size_t>(index)];
  const int8_t after = flip_int8(before, bit);
  return static_cast<float>(static_cast<int>(after) - static_cast<int>(before)) * qt.scale;
}

QuantState quantize_params(Graph& g, const std::vector<std::string>& names) {
  QuantState qs;
  for (const auto& name : names) {
    Param& p = g.param(name);
    QuantizedTensor qt = quantize(*p.value);
    *p.value = dequantize(qt);
    qs.emplace(name, std::move(qt));
  }
  return qs;
}

void requantize_params(Graph& g, QuantState& qs) {
  for (auto& [name, qt] : qs) {
    Param& p = g.param(name);
    qt = quantize(*p.value);
    *p.value = dequantize(qt);
  }
}

namespace {

void check_address(const Graph& g, const QuantState& qs, const BitAddress& addr) {
  auto it = qs.find(addr.layer_id);
  if (it == qs.end())
    throw NumericError("flip: '" + addr.layer_id + "' is not a quantized parameter");
  if (addr.index < 0 || addr.index >= static_cast<int64_t>(it->second.ints.size()))
    throw NumericError("flip: index " + std::to_string(addr.index) + " out of range for '" +
                       addr.layer_id + "' (" + std::to_string(it->second.ints.size()) +
                       " elements)");
  if (addr.bit < 0 || addr.bit > 7)
    throw NumericError("flip: bit " + std::to_string(addr.bit) + " out of range [0,7]");
  g.param(addr.layer_id);  // must exist in the graph too
}

}  // namespace

FlipRecord flip_bit(Graph& g, QuantState& qs, const BitAddress& addr, float score) {
  check_address(g, qs, addr);
  QuantizedTensor& qt = qs.at(addr.layer_id);
  FlipRecord rec;
  rec.address = addr;
  rec.before = qt.ints[static_cast<size_t>(addr.index)];
  rec.after = flip_int8(rec.before, addr.bit);
  rec.weight_delta =
      static_cast<float>(static_cast<int>(rec.after) - static_cast<int>(rec.before)) * qt.scale;
  rec.score = score;
  qt.ints[static_cast<size_t>(addr.index)] = rec.after;
  g.param(addr.layer_id).value->v[static_cast<size_t>(addr.index)] =
      static_cast<float>(rec.after) * qt.scale;
  return rec;
}

void undo_flips(Graph& g, QuantState& qs, const std::vector<FlipRecord>& records) {
  for (auto it = records.rbegin(); it != records.rend(); ++it) flip_bit(g, qs, it->address);
}

std::vector<ScoredBit> rank_bits_from_grads(const Graph& g, const QuantState& qs, RankMode mode) {
  std::vector<ScoredBit> bits;
  size_t total = 0;
  for (const auto& [name, qt] : qs) total += qt.ints.size() * 8;
  bits.reserve(total);
  for (const auto& [name, qt] : qs) {
    const Tensor& grad = *g.param(name).grad;
    for (int64_t i = 0; i < static_cast<int64_t>(qt.ints.size()); ++i) {
      const float gw = grad.v[static_cast<size_t>(i)];
      for (int bit = 0; bit < 8; ++bit) {
        ScoredBit sb;
        sb.addr = BitAddress{name, i, bit};
        sb.score = gw * flip_weight_delta(qt, i, bit);
        bits.push_back(std::move(sb));
      }
    }
  }
  const bool magnitude = mode == RankMode::Magnitude;
  std::sort(bits.begin(), bits.end(), [magnitude](const ScoredBit& a, const ScoredBit& b) {
    const float ka = magnitude ? std::fabs(a.score) : a.score;
    const float kb = magnitude ? std::fabs(b.score) : b.score;
    if (ka != kb) return ka > kb;
    if (a.addr.layer_id != b.addr.layer_id) return a.addr.layer_id < b.addr.layer_id;
    if (a.addr.index != b.addr.index) return a.addr.index < b.addr.index;
    return a.addr.bit < b.addr.bit;
  });
  return bits;
}

std::vector<ScoredBit> bit_gradients(Graph& g, Workspace& ws, int loss_node, const Tensor& images,
                                     const std::vector<int>& labels,
                                     const std::vector<float>& loss_weights, const QuantState& qs,
                                     RankMode mode) {
  if (labels.empty()) throw DataError("bit_gradients: empty batch");
  // Parameters are untouched; gradient buffers are used as scratch and
  // zeroed on both sides so repeated calls are identical.
  g.zero_grads();
  ws.labels = labels;
  ws.loss_weights = loss_weights;
  g.start(ws, images);
  g.eval(ws, loss_node);
  g.backward(ws, loss_node, {.frozen_params = true, .input_grad = false});
  auto ranked = rank_bits_from_grads(g, qs, mode);
  g.zero_grads();
  return ranked;
}

std::vector<BitAddress> top_k_bits(const std::vector<ScoredBit>& ranked, size_t k) {
  if (k > ranked.size())
    throw NumericError("top_k_bits: k = " + std::to_string(k) + " exceeds ranked bit count " +
                       std::to_string(ranked.size()));
  std::vector<BitAddress> out;
  out.reserve(k);
  for (size_t i = 0; i < k; ++i) out.push_back(ranked[i].addr);
  return out;
}

std::string flip_record_csv_header() { return "layer,index,bit,before,after,score"; }

std::string flip_record_csv_row(const FlipRecord& r) {
  std::ostringstream os;
  os << r.address.layer_id << "," << r.address.index << "," << r.address.bit << ","
     << static_cast<int>(r.before) << "," << static_cast<int>(r.after) << "," << r.score;
  return os.str();
}

}  // namespace bitlab
