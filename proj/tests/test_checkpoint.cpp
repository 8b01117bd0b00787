#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bitlab/checkpoint.hpp"
#include "bitlab/errors.hpp"
#include "bitlab/rng.hpp"

using namespace bitlab;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("tensor file round-trips bit-exactly") {
  Rng rng(1);
  std::map<std::string, Tensor> tensors;
  Tensor a({3, 4, 5});
  for (auto& v : a.v) v = rng.uniform(-10.f, 10.f);
  a[0] = -0.f;         // signed zero survives
  a[1] = 1.0000001f;   // near-1 rounding survives
  tensors.emplace("conv.w", a);
  Tensor b({7});
  for (auto& v : b.v) v = rng.uniform(-1.f, 1.f);
  tensors.emplace("fc.b", b);

  const std::string path = temp_path("bitlab_ckpt_test.bin");
  write_tensors(path, tensors);
  auto back = read_tensors(path);
  REQUIRE(back.size() == tensors.size());
  for (const auto& [name, t] : tensors) {
    REQUIRE(back.count(name) == 1);
    CHECK(back.at(name).shape == t.shape);
    // bit-exact comparison
    for (size_t i = 0; i < t.v.size(); ++i) {
      uint32_t lhs, rhs;
      std::memcpy(&lhs, &t.v[i], 4);
      std::memcpy(&rhs, &back.at(name).v[i], 4);
      CHECK(lhs == rhs);
    }
  }

  // second write produces an identical file (byte-for-byte determinism)
  const std::string path2 = temp_path("bitlab_ckpt_test2.bin");
  write_tensors(path2, tensors);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("bad magic is rejected with offset context") {
  const std::string path = temp_path("bitlab_ckpt_badmagic.bin");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTMAGIC-and-some-other-bytes";
  }
  CHECK_THROWS_WITH_AS(read_tensors(path), doctest::Contains("bad magic"), DataError);
  std::remove(path.c_str());
}

TEST_CASE("truncated file is rejected") {
  const std::string path = temp_path("bitlab_ckpt_trunc.bin");
  std::map<std::string, Tensor> tensors;
  tensors.emplace("w", Tensor::full({16}, 2.f));
  write_tensors(path, tensors);
  // chop off the tail
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
  }
  CHECK_THROWS_AS(read_tensors(path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("missing file is rejected") {
  CHECK_THROWS_AS(read_tensors("/nonexistent/bitlab.bin"), DataError);
}
