#include "bitlab/exit_policy.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "bitlab/errors.hpp"
#include "bitlab/rng.hpp"

namespace bitlab {

namespace {

Tensor as_batch_of_one(const Tensor& input) {
  if (input.rank() == 4) {
    if (input.dim(0) != 1) throw NumericError("desdn_infer expects a single input");
    return input;
  }
  if (input.rank() != 3) throw NumericError("desdn_infer: input must be CxHxW");
  Tensor b({1, input.dim(0), input.dim(1), input.dim(2)});
  b.v = input.v;
  return b;
}

}  // namespace

ExitTrace desdn_infer(const ShallowDeepNet& net, Workspace& ws, const Tensor& input,
                      const ExitConfig& cfg, uint64_t ordinal) {
  const int n = net.ic_count();
  if (cfg.q < 1 || cfg.q > n)
    throw ConfigError("exit config: q = " + std::to_string(cfg.q) + " must be in [1, " +
                      std::to_string(n) + "]");
  if (cfg.tau < 0.f || cfg.tau > 1.f)
    throw ConfigError("exit config: tau must be in [0, 1]");

  ExitTrace trace;
  // partial Fisher-Yates over {1..N} on the per-input stream
  Rng rng = stream_rng(cfg.seed, {0x657869u, ordinal});
  std::vector<int> pool(static_cast<size_t>(n));
  std::iota(pool.begin(), pool.end(), 1);
  for (int i = 0; i < cfg.q; ++i) {
    const int j = i + rng.uniform_int(n - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  trace.candidates.assign(pool.begin(), pool.begin() + cfg.q);
  std::sort(trace.candidates.begin(), trace.candidates.end());

  const Tensor batch = adapt_batch(net, as_batch_of_one(input));
  net.graph.start(ws, batch);
  const int classes = net.cfg.classes;
  for (int ic : trace.candidates) {
    const Tensor& logits = net.graph.eval(ws, net.ic_logits[static_cast<size_t>(ic - 1)]);
    const auto p = softmax(logits.v.data(), classes);
    const int pred = argmax(p.data(), classes);
    const float conf = p[static_cast<size_t>(pred)];
    if (conf > cfg.tau) {
      trace.exit = ic;
      trace.confidence = conf;
      trace.prediction = pred;
      return trace;
    }
  }
  const Tensor& logits = net.graph.eval(ws, net.final_logits);
  const auto p = softmax(logits.v.data(), classes);
  trace.exit = kExitFinal;
  trace.prediction = argmax(p.data(), classes);
  trace.confidence = p[static_cast<size_t>(trace.prediction)];
  return trace;
}

int64_t ExitHistogram::total() const {
  int64_t t = final_count;
  for (int64_t c : ic_counts) t += c;
  return t;
}

ExitHistogram exit_histogram(const std::vector<ExitTrace>& traces, int ic_count) {
  if (traces.empty()) throw NumericError("exit_histogram: empty trace set");
  ExitHistogram h;
  h.ic_counts.assign(static_cast<size_t>(ic_count), 0);
  for (const auto& t : traces) {
    if (t.exit == kExitFinal) {
      ++h.final_count;
    } else {
      if (t.exit < 1 || t.exit > ic_count)
        throw NumericError("exit_histogram: trace exit " + std::to_string(t.exit) +
                           " out of range");
      ++h.ic_counts[static_cast<size_t>(t.exit - 1)];
    }
  }
  return h;
}

std::string exit_histogram_csv(const ExitHistogram& h) {
  std::ostringstream os;
  os << "exit,count\n";
  for (size_t i = 0; i < h.ic_counts.size(); ++i) os << (i + 1) << "," << h.ic_counts[i] << "\n";
  os << "final," << h.final_count << "\n";
  return os.str();
}

std::string exit_histogram_svg(const ExitHistogram& h) {
  const int bars = static_cast<int>(h.ic_counts.size()) + 1;
  const int bar_w = 40, gap = 14, height = 220, base = 190, left = 30;
  int64_t maxc = 1;
  for (int64_t c : h.ic_counts) maxc = std::max(maxc, c);
  maxc = std::max(maxc, h.final_count);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
     << left + bars * (bar_w + gap) + 20 << "\" height=\"" << height << "\">\n";
  auto bar = [&](int i, int64_t count, const std::string& label) {
    const int x = left + i * (bar_w + gap);
    const int hgt = static_cast<int>(160.0 * static_cast<double>(count) / static_cast<double>(maxc));
    os << "  <rect x=\"" << x << "\" y=\"" << base - hgt << "\" width=\"" << bar_w
       << "\" height=\"" << hgt << "\" fill=\"#4878a8\"/>\n";
    os << "  <text x=\"" << x + bar_w / 2 << "\" y=\"" << base + 16
       << "\" text-anchor=\"middle\" font-size=\"12\">" << label << "</text>\n";
    os << "  <text x=\"" << x + bar_w / 2 << "\" y=\"" << base - hgt - 4
       << "\" text-anchor=\"middle\" font-size=\"11\">" << count << "</text>\n";
  };
  for (size_t i = 0; i < h.ic_counts.size(); ++i)
    bar(static_cast<int>(i), h.ic_counts[i], "C" + std::to_string(i + 1));
  bar(bars - 1, h.final_count, "final");
  os << "</svg>\n";
  return os.str();
}

double min_of_draws_probability(int n, int q, int i) {
  if (i < 1 || i > n) return 0.0;
  auto choose = [](int a, int b) -> double {
    if (b < 0 || b > a) return 0.0;
    double r = 1.0;
    for (int k = 1; k <= b; ++k) r = r * (a - b + k) / k;
    return r;
  };
  return choose(n - i, q - 1) / choose(n, q);
}

}  // namespace bitlab
