#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "bitlab/tensor.hpp"

namespace bitlab {

// Self-describing binary tensor file (documented in docs/formats.md):
//   magic "BLTENSOR", u32 version, u32 tensor count, then per tensor:
//   u32 name length, name bytes, u32 rank, rank x u64 dims, float32 values.
// All integers and floats little-endian. Round-trips bit-exactly.

inline constexpr char kTensorMagic[8] = {'B', 'L', 'T', 'E', 'N', 'S', 'O', 'R'};
inline constexpr uint32_t kTensorVersion = 1;

void write_tensor_block(std::ostream& out, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> read_tensor_block(std::istream& in, const std::string& context);

void write_tensors(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> read_tensors(const std::string& path);

// Little-endian primitives shared by the binary formats.
void put_u32(std::ostream& out, uint32_t v);
void put_u64(std::ostream& out, uint64_t v);
void put_f32(std::ostream& out, float v);
uint32_t get_u32(std::istream& in, const std::string& context);
uint64_t get_u64(std::istream& in, const std::string& context);
float get_f32(std::istream& in, const std::string& context);
void put_bytes(std::ostream& out, const void* data, size_t n);
void get_bytes(std::istream& in, void* data, size_t n, const std::string& context);

}  // namespace bitlab
