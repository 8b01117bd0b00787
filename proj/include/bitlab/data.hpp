#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bitlab/tensor.hpp"

namespace bitlab {

struct Dataset {
  Tensor images;            // N x C x H x W, values in [0, 1]
  std::vector<int> labels;  // class indices
  int classes = 10;
  std::string source_hash;  // SHA-256 of the source bytes (or generator tag)
  uint64_t subset_seed = 0;

  int size() const { return images.rank() > 0 ? images.dim(0) : 0; }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }
};

// IDX readers/writers (big-endian magic 0x803 for images, 0x801 for labels).
// Pixels scale to [0,1] on load. Errors distinguish bad magic, truncation,
// and image/label count mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes.
Dataset load_cifar10(const std::vector<std::string>& batch_paths);

// Bundled synthetic digit generator: seven-segment glyphs with random affine
// jitter, intensity variation, and light noise. Deterministic in (n, seed).
Dataset synth_digits(int n, uint64_t seed, int classes = 10);

// Seeded shuffle prefix of size n.
Dataset subset(const Dataset& ds, int n, uint64_t seed);

// Evaluation perturbations and training-time augmentation share one transform
// set; the augmentation variant must exclude gaussian-noise.
struct PerturbSpec {
  bool rotation = false;
  bool translation = false;
  bool scaling = false;
  bool gaussian_blur = false;
  bool gaussian_noise = false;
  bool random_erasing = false;

  float rot_deg = 15.f;       // rotation in [-rot_deg, +rot_deg]
  float trans_px = 2.f;       // translation in [-trans_px, +trans_px] per axis
  float scale_lo = 0.9f;
  float scale_hi = 1.1f;
  float blur_sigma_lo = 0.5f;
  float blur_sigma_hi = 1.0f;  // kernel 3x3 below sigma 0.75, else 5x5
  float noise_sigma = 0.1f;
  int erase_max = 4;           // max square patch side
  float erase_fill = 0.1307f;  // dataset mean fill
  uint64_t seed = 0;

  // test-data perturbation suite: everything enabled
  static PerturbSpec eval_default(uint64_t seed);
  // fine-tuning augmentation: everything except gaussian noise
  static PerturbSpec augment_default(uint64_t seed);

  bool any() const {
    return rotation || translation || scaling || gaussian_blur || gaussian_noise || random_erasing;
  }
};

// One image through the enabled transforms, parameters drawn from `rng` in a
// fixed order. Output clamped to [0,1]; labels are never touched.
void transform_image(const float* src, float* dst, int c, int h, int w, const PerturbSpec& spec,
                     class Rng& rng);

// Label-invariant perturbation of a whole dataset; per-image parameters come
// from the stream (spec.seed, image index).
Dataset perturb(const Dataset& ds, const PerturbSpec& spec);

// Per-epoch augmentation stream: fresh parameters per (seed, epoch, index),
// deterministic on replay. Rejects specs containing gaussian-noise.
class AugmentStream {
 public:
  AugmentStream(const Dataset& base, const PerturbSpec& spec, uint64_t seed);

  // Transformed copy of image `index` for `epoch`.
  Tensor image(int epoch, int index) const;
  // Batch assembly in index order.
  Tensor batch(int epoch, const std::vector<int>& indices) const;
  const Dataset& base() const { return base_; }

 private:
  const Dataset& base_;
  PerturbSpec spec_;
  uint64_t seed_;
};

// Batch assembly by index.
Tensor gather_images(const Dataset& ds, const std::vector<int>& indices);
std::vector<int> gather_labels(const Dataset& ds, const std::vector<int>& indices);

// SHA-256 hex digest of a file or buffer.
std::string sha256_file(const std::string& path);
std::string sha256_bytes(const void* data, size_t n);

}  // namespace bitlab
