#include "bitlab/data.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "bitlab/errors.hpp"
#include "bitlab/rng.hpp"

namespace bitlab {

namespace {

uint32_t read_be_u32(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4)
    throw DataError(path + ": truncated while reading " + std::string(what) + " at offset " +
                    std::to_string(static_cast<long long>(in.tellg())));
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

void write_be_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
}

}  // namespace

std::string sha256_bytes(const void* data, size_t n) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, digest, &len, EVP_sha256(), nullptr) != 1)
    throw DataError("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  auto bytes = read_all(path);
  return sha256_bytes(bytes.data(), bytes.size());
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgf(images_path, std::ios::binary);
  if (!imgf) throw DataError("cannot open '" + images_path + "'");
  const uint32_t img_magic = read_be_u32(imgf, images_path, "magic");
  if (img_magic != 0x00000803u)
    throw DataError(images_path + ": bad IDX image magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", img_magic);
      return std::string(buf);
    }() + " at offset 0 (expected 00000803)");
  const uint32_t n = read_be_u32(imgf, images_path, "count");
  const uint32_t rows = read_be_u32(imgf, images_path, "rows");
  const uint32_t cols = read_be_u32(imgf, images_path, "cols");

  std::ifstream lblf(labels_path, std::ios::binary);
  if (!lblf) throw DataError("cannot open '" + labels_path + "'");
  const uint32_t lbl_magic = read_be_u32(lblf, labels_path, "magic");
  if (lbl_magic != 0x00000801u)
    throw DataError(labels_path + ": bad IDX label magic at offset 0 (expected 00000801)");
  const uint32_t ln = read_be_u32(lblf, labels_path, "count");
  if (ln != n)
    throw DataError("IDX count mismatch: " + images_path + " has " + std::to_string(n) +
                    " images but " + labels_path + " has " + std::to_string(ln) + " labels");

  Dataset ds;
  ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
  std::vector<unsigned char> buf(static_cast<size_t>(rows) * cols);
  for (uint32_t i = 0; i < n; ++i) {
    imgf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(imgf.gcount()) != buf.size())
      throw DataError(images_path + ": truncated at image " + std::to_string(i));
    float* dst = ds.images.v.data() + static_cast<int64_t>(i) * rows * cols;
    for (size_t j = 0; j < buf.size(); ++j) dst[j] = static_cast<float>(buf[j]) / 255.f;
  }
  ds.labels.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    char c;
    lblf.read(&c, 1);
    if (lblf.gcount() != 1) throw DataError(labels_path + ": truncated at label " + std::to_string(i));
    const int label = static_cast<unsigned char>(c);
    if (label >= ds.classes) ds.classes = label + 1;
    ds.labels[i] = label;
  }
  ds.source_hash = sha256_file(images_path) + ":" + sha256_file(labels_path);
  return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  if (ds.channels() != 1) throw DataError("write_idx supports single-channel images only");
  std::ofstream imgf(images_path, std::ios::binary);
  if (!imgf) throw DataError("cannot open '" + images_path + "' for writing");
  write_be_u32(imgf, 0x00000803u);
  write_be_u32(imgf, static_cast<uint32_t>(ds.size()));
  write_be_u32(imgf, static_cast<uint32_t>(ds.height()));
  write_be_u32(imgf, static_cast<uint32_t>(ds.width()));
  for (float v : ds.images.v) {
    const float scaled = std::round(std::clamp(v, 0.f, 1.f) * 255.f);
    const unsigned char b = static_cast<unsigned char>(scaled);
    imgf.write(reinterpret_cast<const char*>(&b), 1);
  }
  std::ofstream lblf(labels_path, std::ios::binary);
  if (!lblf) throw DataError("cannot open '" + labels_path + "' for writing");
  write_be_u32(lblf, 0x00000801u);
  write_be_u32(lblf, static_cast<uint32_t>(ds.size()));
  for (int l : ds.labels) {
    const unsigned char b = static_cast<unsigned char>(l);
    lblf.write(reinterpret_cast<const char*>(&b), 1);
  }
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
  if (batch_paths.empty()) throw DataError("load_cifar10: no batch files given");
  constexpr int kRecord = 1 + 3072;
  std::vector<unsigned char> all;
  std::string hash;
  for (const auto& path : batch_paths) {
    auto bytes = read_all(path);
    if (bytes.size() % kRecord != 0)
      throw DataError(path + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of the 3073-byte CIFAR record");
    all.insert(all.end(), bytes.begin(), bytes.end());
    if (!hash.empty()) hash += ":";
    hash += sha256_bytes(bytes.data(), bytes.size());
  }
  const int n = static_cast<int>(all.size()) / kRecord;
  Dataset ds;
  ds.images = Tensor({n, 3, 32, 32});
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const unsigned char* rec = all.data() + static_cast<size_t>(i) * kRecord;
    const int label = rec[0];
    if (label > 9) throw DataError("CIFAR record " + std::to_string(i) + " has label > 9");
    ds.labels[static_cast<size_t>(i)] = label;
    float* dst = ds.images.v.data() + static_cast<int64_t>(i) * 3 * 32 * 32;
    for (int j = 0; j < 3072; ++j) dst[j] = static_cast<float>(rec[1 + j]) / 255.f;
  }
  ds.source_hash = hash;
  return ds;
}

namespace {

struct Seg {
  float x0, y0, x1, y1;
};

// seven-segment layout on the canonical 28x28 canvas
const Seg kSegments[7] = {
    {8, 6, 20, 6},    // A top
    {20, 6, 20, 14},  // B top-right
    {20, 14, 20, 22}, // C bottom-right
    {8, 22, 20, 22},  // D bottom
    {8, 14, 8, 22},   // E bottom-left
    {8, 6, 8, 14},    // F top-left
    {8, 14, 20, 14},  // G middle
};

const int kDigitSegments[10] = {
    0b0111111,  // 0: ABCDEF
    0b0000110,  // 1: BC
    0b1011011,  // 2: ABDEG
    0b1001111,  // 3: ABCDG
    0b1100110,  // 4: BCFG
    0b1101101,  // 5: ACDFG
    0b1111101,  // 6: ACDEFG
    0b0000111,  // 7: ABC
    0b1111111,  // 8
    0b1101111,  // 9: ABCDFG
};

float seg_distance(float px, float py, const Seg& s) {
  const float dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const float len2 = dx * dx + dy * dy;
  float t = len2 > 0.f ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.f;
  t = std::clamp(t, 0.f, 1.f);
  const float qx = s.x0 + t * dx, qy = s.y0 + t * dy;
  return std::sqrt((px - qx) * (px - qx) + (py - qy) * (py - qy));
}

}  // namespace

Dataset synth_digits(int n, uint64_t seed, int classes) {
  if (classes < 2 || classes > 10) throw DataError("synth_digits supports 2..10 classes");
  if (n <= 0) throw DataError("synth_digits: n must be positive");
  const int h = 28, w = 28;
  Dataset ds;
  ds.classes = classes;
  ds.images = Tensor({n, 1, h, w});
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = stream_rng(seed, {0xd161u, static_cast<uint64_t>(i)});
    const int label = i % classes;
    ds.labels[static_cast<size_t>(i)] = label;
    const int segs = kDigitSegments[label];
    const float angle = rng.uniform(-10.f, 10.f) * 3.14159265f / 180.f;
    const float scale = rng.uniform(0.9f, 1.1f);
    const float tx = rng.uniform(-2.f, 2.f), ty = rng.uniform(-2.f, 2.f);
    const float thickness = rng.uniform(1.4f, 1.9f);
    const float intensity = rng.uniform(0.75f, 1.f);
    // class-keyed background grating (frequency x orientation): gives the
    // glyphs shallow-feature class signal the way real digit strokes do, so
    // early internal classifiers have something to read
    const float grate_theta = static_cast<float>(label % 5) * 0.628318f;  // 36 deg apart
    const float grate_k = label < 5 ? 0.9f : 1.7f;
    const float grate_phase = rng.uniform(0.f, 6.283185f);
    const float grate_amp = 0.22f;
    const float gct = std::cos(grate_theta), gst = std::sin(grate_theta);
    const float ca = std::cos(angle), sa = std::sin(angle);
    const float cx = 14.f, cy = 14.f;
    float* img = ds.images.v.data() + static_cast<int64_t>(i) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // inverse-map the output pixel into glyph coordinates
        const float rx = (static_cast<float>(x) - cx - tx) / scale;
        const float ry = (static_cast<float>(y) - cy - ty) / scale;
        const float gx = ca * rx + sa * ry + cx;
        const float gy = -sa * rx + ca * ry + cy;
        float d = 1e9f;
        for (int s = 0; s < 7; ++s)
          if (segs & (1 << s)) d = std::min(d, seg_distance(gx, gy, kSegments[s]));
        const float ink = std::clamp((thickness - d) / 0.8f, 0.f, 1.f);
        const float wave =
            0.5f * (1.f + std::sin(grate_k * (gx * gct + gy * gst) + grate_phase));
        img[y * w + x] = std::max(ink * intensity, wave * grate_amp);
      }
    for (int j = 0; j < h * w; ++j)
      img[j] = std::clamp(img[j] + rng.normal(0.f, 0.03f), 0.f, 1.f);
  }
  ds.source_hash = "synth-digits:" + std::to_string(n) + ":" + std::to_string(seed) + ":" +
                   std::to_string(classes);
  return ds;
}

Dataset subset(const Dataset& ds, int n, uint64_t seed) {
  if (n <= 0 || n > ds.size())
    throw DataError("subset: requested " + std::to_string(n) + " of " + std::to_string(ds.size()) +
                    " items");
  std::vector<int> order(static_cast<size_t>(ds.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = stream_rng(seed, {0x737562u});
  for (int i = 0; i < n; ++i) {
    const int j = i + rng.uniform_int(ds.size() - i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  Dataset out;
  out.classes = ds.classes;
  out.source_hash = ds.source_hash;
  out.subset_seed = seed;
  const int64_t stride = static_cast<int64_t>(ds.channels()) * ds.height() * ds.width();
  out.images = Tensor({n, ds.channels(), ds.height(), ds.width()});
  out.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int src = order[static_cast<size_t>(i)];
    std::copy_n(ds.images.v.begin() + src * stride, stride, out.images.v.begin() + i * stride);
    out.labels[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(src)];
  }
  return out;
}

PerturbSpec PerturbSpec::eval_default(uint64_t seed) {
  PerturbSpec s;
  s.rotation = s.translation = s.scaling = s.gaussian_blur = s.gaussian_noise = s.random_erasing =
      true;
  s.seed = seed;
  return s;
}

PerturbSpec PerturbSpec::augment_default(uint64_t seed) {
  PerturbSpec s = eval_default(seed);
  s.gaussian_noise = false;  // test perturbations minus noise
  return s;
}

namespace {

inline float sample_replicated(const float* src, int h, int w, float y, float x) {
  // bilinear with border replication
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const float fx = x - static_cast<float>(x0), fy = y - static_cast<float>(y0);
  auto at = [&](int yy, int xx) {
    yy = std::clamp(yy, 0, h - 1);
    xx = std::clamp(xx, 0, w - 1);
    return src[yy * w + xx];
  };
  const float top = at(y0, x0) * (1.f - fx) + at(y0, x0 + 1) * fx;
  const float bot = at(y0 + 1, x0) * (1.f - fx) + at(y0 + 1, x0 + 1) * fx;
  return top * (1.f - fy) + bot * fy;
}

void gaussian_blur_plane(const float* src, float* dst, int h, int w, float sigma,
                         std::vector<float>& tmp) {
  const int radius = sigma < 0.75f ? 1 : 2;
  float k[5];
  float sum = 0.f;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (int i = 0; i <= 2 * radius; ++i) k[i] /= sum;
  tmp.resize(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * src[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * tmp[static_cast<size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      dst[y * w + x] = acc;
    }
}

}  // namespace

void transform_image(const float* src, float* dst, int c, int h, int w, const PerturbSpec& spec,
                     Rng& rng) {
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<float> work(src, src + static_cast<size_t>(c) * plane);

  // geometric transforms compose into one affine warp (single resampling)
  const float angle =
      (spec.rotation ? rng.uniform(-spec.rot_deg, spec.rot_deg) : 0.f) * 3.14159265f / 180.f;
  const float tx = spec.translation ? rng.uniform(-spec.trans_px, spec.trans_px) : 0.f;
  const float ty = spec.translation ? rng.uniform(-spec.trans_px, spec.trans_px) : 0.f;
  const float scale = spec.scaling ? rng.uniform(spec.scale_lo, spec.scale_hi) : 1.f;
  if (spec.rotation || spec.translation || spec.scaling) {
    const float ca = std::cos(angle), sa = std::sin(angle);
    const float cx = static_cast<float>(w - 1) / 2.f, cy = static_cast<float>(h - 1) / 2.f;
    std::vector<float> warped(work.size());
    for (int ch = 0; ch < c; ++ch) {
      const float* sp = work.data() + static_cast<size_t>(ch) * plane;
      float* dp = warped.data() + static_cast<size_t>(ch) * plane;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const float rx = (static_cast<float>(x) - cx - tx) / scale;
          const float ry = (static_cast<float>(y) - cy - ty) / scale;
          const float sx = ca * rx + sa * ry + cx;
          const float sy = -sa * rx + ca * ry + cy;
          dp[y * w + x] = sample_replicated(sp, h, w, sy, sx);
        }
    }
    work = std::move(warped);
  }

  if (spec.gaussian_blur) {
    const float sigma = rng.uniform(spec.blur_sigma_lo, spec.blur_sigma_hi);
    std::vector<float> blurred(work.size()), tmp;
    for (int ch = 0; ch < c; ++ch)
      gaussian_blur_plane(work.data() + static_cast<size_t>(ch) * plane,
                          blurred.data() + static_cast<size_t>(ch) * plane, h, w, sigma, tmp);
    work = std::move(blurred);
  }

  if (spec.gaussian_noise) {
    for (auto& v : work) v += rng.normal(0.f, spec.noise_sigma);
  }

  if (spec.random_erasing) {
    const int side = 1 + rng.uniform_int(spec.erase_max);
    const int ex = rng.uniform_int(std::max(1, w - side + 1));
    const int ey = rng.uniform_int(std::max(1, h - side + 1));
    for (int ch = 0; ch < c; ++ch)
      for (int y = ey; y < ey + side && y < h; ++y)
        for (int x = ex; x < ex + side && x < w; ++x)
          work[static_cast<size_t>(ch) * plane + static_cast<size_t>(y) * w + x] = spec.erase_fill;
  }

  for (size_t i = 0; i < work.size(); ++i) dst[i] = std::clamp(work[i], 0.f, 1.f);
}

Dataset perturb(const Dataset& ds, const PerturbSpec& spec) {
  Dataset out;
  out.classes = ds.classes;
  out.labels = ds.labels;  // label-invariant
  out.source_hash = ds.source_hash;
  out.subset_seed = ds.subset_seed;
  out.images = Tensor(ds.images.shape);
  const int64_t stride = static_cast<int64_t>(ds.channels()) * ds.height() * ds.width();
  for (int i = 0; i < ds.size(); ++i) {
    Rng rng = stream_rng(spec.seed, {0x706572u, static_cast<uint64_t>(i)});
    transform_image(ds.images.v.data() + i * stride, out.images.v.data() + i * stride,
                    ds.channels(), ds.height(), ds.width(), spec, rng);
  }
  return out;
}

AugmentStream::AugmentStream(const Dataset& base, const PerturbSpec& spec, uint64_t seed)
    : base_(base), spec_(spec), seed_(seed) {
  if (spec.gaussian_noise)
    throw ConfigError("augmentation stream must not include gaussian-noise");
}

Tensor AugmentStream::image(int epoch, int index) const {
  const int64_t stride = static_cast<int64_t>(base_.channels()) * base_.height() * base_.width();
  Tensor out({base_.channels(), base_.height(), base_.width()});
  Rng rng = stream_rng(seed_, {0x617567u, static_cast<uint64_t>(epoch),
                               static_cast<uint64_t>(index)});
  transform_image(base_.images.v.data() + index * stride, out.v.data(), base_.channels(),
                  base_.height(), base_.width(), spec_, rng);
  return out;
}

Tensor gather_images(const Dataset& ds, const std::vector<int>& indices) {
  const int64_t stride = static_cast<int64_t>(ds.channels()) * ds.height() * ds.width();
  Tensor out({static_cast<int>(indices.size()), ds.channels(), ds.height(), ds.width()});
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= ds.size())
      throw DataError("gather_images: index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(ds.images.v.begin() + indices[i] * stride, stride,
                out.v.begin() + static_cast<int64_t>(i) * stride);
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& ds, const std::vector<int>& indices) {
  std::vector<int> out(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) out[i] = ds.labels[static_cast<size_t>(indices[i])];
  return out;
}

Tensor AugmentStream::batch(int epoch, const std::vector<int>& indices) const {
  Tensor out({static_cast<int>(indices.size()), base_.channels(), base_.height(), base_.width()});
  const int64_t stride = static_cast<int64_t>(base_.channels()) * base_.height() * base_.width();
  for (size_t i = 0; i < indices.size(); ++i) {
    Tensor img = image(epoch, indices[i]);
    std::copy(img.v.begin(), img.v.end(), out.v.begin() + static_cast<int64_t>(i) * stride);
  }
  return out;
}

}  // namespace bitlab
