#include "bitlab/tensor.hpp"

#include <cmath>
#include <sstream>

#include "bitlab/errors.hpp"

namespace bitlab {

int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw NumericError("tensor dimension must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), v(static_cast<size_t>(numel_of(shape)), 0.f) {}

Tensor::Tensor(std::vector<int> s, std::vector<float> values) : shape(std::move(s)), v(std::move(values)) {
  if (numel_of(shape) != static_cast<int64_t>(v.size()))
    throw NumericError("tensor shape " + shape_str(shape) + " does not match value count " +
                       std::to_string(v.size()));
}

Tensor Tensor::full(std::vector<int> s, float value) {
  Tensor t(std::move(s));
  t.fill(value);
  return t;
}

bool Tensor::all_finite() const {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void Tensor::fill(float value) {
  for (float& x : v) x = value;
}

void Tensor::add_scaled(const Tensor& other, float alpha) {
  for (size_t i = 0; i < v.size(); ++i) v[i] += alpha * other.v[i];
}

std::vector<float> softmax(const float* logits, int n) {
  float m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  std::vector<float> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double e = std::exp(static_cast<double>(logits[i]) - m);
    out[static_cast<size_t>(i)] = static_cast<float>(e);
    sum += e;
  }
  const float inv = static_cast<float>(1.0 / sum);
  for (float& x : out) x *= inv;
  return out;
}

std::vector<float> softmax(const std::vector<float>& logits) {
  return softmax(logits.data(), static_cast<int>(logits.size()));
}

int argmax(const float* values, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

float cross_entropy(const float* logits, int n, int target) {
  if (n < 2) throw NumericError("cross_entropy requires at least 2 classes, got " + std::to_string(n));
  if (target < 0 || target >= n)
    throw NumericError("cross_entropy target " + std::to_string(target) + " out of range [0," +
                       std::to_string(n) + ")");
  float m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(static_cast<double>(logits[i]) - m);
  const double lse = static_cast<double>(m) + std::log(sum);
  const double loss = lse - static_cast<double>(logits[target]);
  return static_cast<float>(loss < 0.0 ? 0.0 : loss);
}

float cross_entropy(const std::vector<float>& logits, int target) {
  return cross_entropy(logits.data(), static_cast<int>(logits.size()), target);
}

}  // namespace bitlab
