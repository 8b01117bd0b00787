#include "bitlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "bitlab/errors.hpp"

namespace bitlab {

void put_bytes(std::ostream& out, const void* data, size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& in, void* data, size_t n, const std::string& context) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n)
    throw DataError(context + ": truncated (wanted " + std::to_string(n) + " bytes at offset " +
                    std::to_string(static_cast<long long>(in.tellg())) + ")");
}

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(out, b, 8);
}

void put_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

uint32_t get_u32(std::istream& in, const std::string& context) {
  unsigned char b[4];
  get_bytes(in, b, 4, context);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& in, const std::string& context) {
  unsigned char b[8];
  get_bytes(in, b, 8, context);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

float get_f32(std::istream& in, const std::string& context) {
  const uint32_t bits = get_u32(in, context);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void write_tensor_block(std::ostream& out, const std::map<std::string, Tensor>& tensors) {
  put_bytes(out, kTensorMagic, 8);
  put_u32(out, kTensorVersion);
  put_u32(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape) put_u64(out, static_cast<uint64_t>(d));
    for (float x : t.v) put_f32(out, x);
  }
}

std::map<std::string, Tensor> read_tensor_block(std::istream& in, const std::string& context) {
  char magic[8];
  get_bytes(in, magic, 8, context);
  if (std::memcmp(magic, kTensorMagic, 8) != 0)
    throw DataError(context + ": bad magic at offset 0 (not a tensor block)");
  const uint32_t version = get_u32(in, context);
  if (version != kTensorVersion)
    throw DataError(context + ": unsupported tensor block version " + std::to_string(version));
  const uint32_t count = get_u32(in, context);
  std::map<std::string, Tensor> out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(in, context);
    std::string name(name_len, '\0');
    get_bytes(in, name.data(), name_len, context);
    const uint32_t rank = get_u32(in, context);
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(get_u64(in, context));
    Tensor t(shape);
    for (int64_t j = 0; j < t.numel(); ++j) t.v[static_cast<size_t>(j)] = get_f32(in, context);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

void write_tensors(const std::string& path, const std::map<std::string, Tensor>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  write_tensor_block(f, tensors);
  if (!f) throw DataError("write failed for '" + path + "'");
}

std::map<std::string, Tensor> read_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return read_tensor_block(f, path);
}

}  // namespace bitlab
