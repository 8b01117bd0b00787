#include "bitlab/adam.hpp"

#include <cmath>

#include "bitlab/errors.hpp"

namespace bitlab {

void Adam::step(Graph& g) {
  // Validate first so a rejected step leaves every parameter untouched.
  for (const auto& [name, p] : g.params()) {
    if (!p.trainable) continue;
    if (!p.grad->all_finite())
      throw NumericError("adam: nonfinite gradient for parameter '" + name + "'");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  for (const auto& [name, p] : g.params()) {
    if (!p.trainable) continue;
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      Moments mo;
      mo.m = Tensor::zeros(p.value->shape);
      mo.v = Tensor::zeros(p.value->shape);
      it = moments_.emplace(name, std::move(mo)).first;
    }
    Tensor& m = it->second.m;
    Tensor& v = it->second.v;
    Tensor& w = *p.value;
    const Tensor& gr = *p.grad;
    for (size_t i = 0; i < w.v.size(); ++i) {
      m.v[i] = cfg_.beta1 * m.v[i] + (1.f - cfg_.beta1) * gr.v[i];
      v.v[i] = cfg_.beta2 * v.v[i] + (1.f - cfg_.beta2) * gr.v[i] * gr.v[i];
      const double mhat = static_cast<double>(m.v[i]) / bc1;
      const double vhat = static_cast<double>(v.v[i]) / bc2;
      w.v[i] -= static_cast<float>(static_cast<double>(cfg_.lr) * mhat /
                                   (std::sqrt(vhat) + static_cast<double>(cfg_.eps)));
    }
  }
}

}  // namespace bitlab
