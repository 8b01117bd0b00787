#pragma once

#include <map>
#include <string>

#include "bitlab/graph.hpp"

namespace bitlab {

struct AdamConfig {
  float lr = 4e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Standard Adam with bias correction. Only trainable parameters are updated;
// a nonfinite gradient rejects the whole step and names the parameter.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(Graph& g);
  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace bitlab
