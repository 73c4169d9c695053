#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ucdr/tensor_io.hpp"

using ucdr::Tensor;

namespace {

std::filesystem::path temp_path(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("tensor round trip preserves bytes") {
  auto rng = ucdr::make_rng(42, {7});
  auto t = Tensor<float>::gaussian({3, 4, 2}, rng, 2.0f);
  std::stringstream buf;
  ucdr::write_tensor(buf, t);
  auto back = ucdr::read_tensor(buf);
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.data()[i] == t.data()[i]);
}

TEST_CASE("rank 0 tensor round trip") {
  auto t = Tensor<float>::scalar(-1.25f);
  std::stringstream buf;
  ucdr::write_tensor(buf, t);
  auto back = ucdr::read_tensor(buf);
  CHECK(back.rank() == 0);
  CHECK(back.item() == -1.25f);
}

TEST_CASE("writing twice yields identical bytes") {
  auto rng = ucdr::make_rng(1, {2});
  auto t = Tensor<float>::gaussian({8, 8}, rng, 1.0f);
  std::stringstream a, b;
  ucdr::write_tensor(a, t);
  ucdr::write_tensor(b, t);
  CHECK(a.str() == b.str());
}

TEST_CASE("bad magic is a format error") {
  std::stringstream buf;
  buf << "NOPE" << std::string(16, '\0');
  CHECK_THROWS_AS(ucdr::read_tensor(buf), ucdr::FormatError);
}

TEST_CASE("unsupported version is a format error") {
  auto t = Tensor<float>::scalar(1.0f);
  std::stringstream buf;
  ucdr::write_tensor(buf, t);
  std::string bytes = buf.str();
  bytes[4] = 9;  // bump version field
  std::stringstream bad(bytes);
  CHECK_THROWS_AS(ucdr::read_tensor(bad), ucdr::FormatError);
}

TEST_CASE("truncated payload is an io error") {
  auto rng = ucdr::make_rng(3, {1});
  auto t = Tensor<float>::gaussian({4, 4}, rng, 1.0f);
  std::stringstream buf;
  ucdr::write_tensor(buf, t);
  std::string bytes = buf.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(ucdr::read_tensor(cut), ucdr::IoError);
}

TEST_CASE("file save and load") {
  auto path = temp_path("ucdr_io_test.bin");
  auto rng = ucdr::make_rng(9, {9});
  auto t = Tensor<float>::gaussian({5, 3}, rng, 1.0f);
  ucdr::save_tensor(path.string(), t);
  auto back = ucdr::load_tensor(path.string());
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.data()[i] == t.data()[i]);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(ucdr::load_tensor(path.string()), ucdr::IoError);
}
