#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bitlab {

// Dense row-major float32 tensor. Images follow the NCHW convention.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  Tensor(std::vector<int> s, std::vector<float> values);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, float value);
  static Tensor scalar(float value) { return Tensor({1}, {value}); }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  float& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  void fill(float value);
  void add_scaled(const Tensor& other, float alpha);  // *this += alpha * other
};

int64_t numel_of(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Softmax of a logit vector (stable, double accumulation).
std::vector<float> softmax(const float* logits, int n);
std::vector<float> softmax(const std::vector<float>& logits);

// argmax with lowest-index tie-break.
int argmax(const float* values, int n);

// -log(softmax(logits)[target]); rejects target out of [0, n).
float cross_entropy(const float* logits, int n, int target);
float cross_entropy(const std::vector<float>& logits, int target);

}  // namespace bitlab
