#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bitlab/sdn.hpp"

namespace bitlab {

struct ExitConfig {
  int q = 3;          // candidates sampled per input, 1 <= q <= N
  float tau = 0.9f;   // confidence threshold in [0, 1]
  uint64_t seed = 0;  // base of the per-input counter stream
};

// ExitTrace.exit value for the final-head fallback.
inline constexpr int kExitFinal = 0;

struct ExitTrace {
  std::vector<int> candidates;  // sampled IC indices (1-based), sorted ascending
  int exit = kExitFinal;        // 1..N, or kExitFinal
  float confidence = 0.f;       // max softmax probability at the exit head
  int prediction = -1;
};

// Dynamic-exit inference: sample q candidate ICs uniformly without
// replacement from the per-input stream (seed, ordinal), scan them
// shallowest-first, exit at the first whose confidence exceeds tau, fall
// through to the final head otherwise. The backbone is evaluated lazily, only
// up to the exit depth.
ExitTrace desdn_infer(const ShallowDeepNet& net, Workspace& ws, const Tensor& input,
                      const ExitConfig& cfg, uint64_t ordinal);

struct ExitHistogram {
  std::vector<int64_t> ic_counts;  // index 0 = C_1
  int64_t final_count = 0;

  int64_t total() const;
};

ExitHistogram exit_histogram(const std::vector<ExitTrace>& traces, int ic_count);

// CSV rows "exit,count" for exits 1..N then "final".
std::string exit_histogram_csv(const ExitHistogram& h);

// Minimal bar chart mirroring the per-layer exit-count figures.
std::string exit_histogram_svg(const ExitHistogram& h);

// P(exit = i) when tau = 0: the minimum of q uniform draws without
// replacement from {1..N} equals i with probability C(N-i, q-1) / C(N, q).
double min_of_draws_probability(int n, int q, int i);

}  // namespace bitlab
