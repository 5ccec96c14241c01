#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "parc/serialize.hpp"
#include "parc/tensor.hpp"

using namespace parc;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("PTNS round trip is bit-exact for every dtype") {
  Rng rng(7);
  const std::string path = temp_path("parc_test.ptns");
  for (Dtype dt : {Dtype::F32, Dtype::F64}) {
    Tensor t = rng.uniform_tensor(dt, {2, 3, 4}, -5, 5);
    io::save_ptns(path, t);
    CHECK(bit_equal(io::load_ptns(path), t));
  }
  Tensor u = Tensor::from_u32({5}, {1, 2, 3, 0xffffffff, 42});
  io::save_ptns(path, u);
  CHECK(bit_equal(io::load_ptns(path), u));
  std::remove(path.c_str());
}

TEST_CASE("PTNS header layout matches the format spec") {
  const std::string path = temp_path("parc_hdr.ptns");
  io::save_ptns(path, Tensor::from_f32({2, 3}, {0, 1, 2, 3, 4, 5}));
  const std::string bytes = read_bytes(path);
  REQUIRE(bytes.size() == 4 + 1 + 1 + 1 + 2 * 4 + 6 * 4);
  CHECK(bytes.substr(0, 4) == "PTNS");
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[5] == 0);  // dtype f32
  CHECK(bytes[6] == 2);  // ndim
  CHECK(static_cast<unsigned char>(bytes[7]) == 2);  // dim0 little-endian
  CHECK(static_cast<unsigned char>(bytes[11]) == 3);
  std::remove(path.c_str());
}

TEST_CASE("PTNS corrupt files report byte offsets") {
  const std::string path = temp_path("parc_bad.ptns");
  io::save_ptns(path, Tensor::from_f32({2, 2}, {1, 2, 3, 4}));
  std::string bytes = read_bytes(path);

  SUBCASE("bad magic") {
    bytes[0] = 'X';
    write_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(io::load_ptns(path), doctest::Contains("magic"), FormatError);
  }
  SUBCASE("truncated data names the byte offset") {
    write_bytes(path, bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_WITH_AS(io::load_ptns(path), doctest::Contains("byte"), FormatError);
  }
  SUBCASE("trailing bytes rejected") {
    write_bytes(path, bytes + "zz");
    CHECK_THROWS_AS(io::load_ptns(path), FormatError);
  }
  SUBCASE("zero dim rejected") {
    bytes[7] = 0;
    write_bytes(path, bytes);
    CHECK_THROWS_AS(io::load_ptns(path), FormatError);
  }
  SUBCASE("unknown dtype rejected") {
    bytes[5] = 9;
    write_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(io::load_ptns(path), doctest::Contains("dtype"), FormatError);
  }
  std::remove(path.c_str());
}

TEST_CASE("PCKP round trip preserves entries and step") {
  const std::string path = temp_path("parc_test.pckp");
  Rng rng(13);
  io::CheckpointFile ckpt;
  ckpt.entries.emplace_back("param/a", rng.uniform_tensor(Dtype::F32, {3, 2}, -1, 1));
  ckpt.entries.emplace_back("param/b", Tensor::from_u32({2}, {7, 9}));
  ckpt.step = 12345;
  io::save_pckp(path, ckpt);
  io::CheckpointFile loaded = io::load_pckp(path);
  REQUIRE(loaded.entries.size() == 2);
  CHECK(loaded.step == 12345);
  CHECK(loaded.entries[0].first == "param/a");
  CHECK(bit_equal(loaded.entries[0].second, ckpt.entries[0].second));
  CHECK(bit_equal(loaded.entries[1].second, ckpt.entries[1].second));

  // truncation inside an embedded tensor reports an offset
  std::string bytes = read_bytes(path);
  write_bytes(path, bytes.substr(0, bytes.size() - 6));
  CHECK_THROWS_WITH_AS(io::load_pckp(path), doctest::Contains("byte"), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("missing file raises IoError with the path") {
  CHECK_THROWS_WITH_AS(io::load_ptns("/nonexistent/nope.ptns"), doctest::Contains("nope.ptns"),
                       IoError);
}
