#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>

#include "histomet/bag_io.hpp"
#include "histomet/rng.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace histomet;

namespace {

FeatureBag sample_bag(std::uint64_t seed, std::size_t n, std::size_t l) {
  Rng rng(seed);
  FeatureBag bag;
  bag.magnification = ScaleId::x20;
  bag.features = Matrix(n, l);
  for (std::size_t k = 0; k < bag.features.size(); ++k) {
    // keep values exactly representable in float32 for round-trip checks
    bag.features[k] = double(float(rng.gaussian()));
  }
  for (std::size_t i = 0; i < n; ++i)
    bag.coords.push_back({std::int32_t(i * 256), -std::int32_t(i)});
  return bag;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("bag round trip is bitwise exact") {
  TempDir dir;
  FeatureBag bag = sample_bag(11, 7, 5);
  const std::string p1 = dir.file("a.hmfb");
  const std::string p2 = dir.file("b.hmfb");
  write_bag(bag, p1);
  FeatureBag loaded = read_bag(p1);
  CHECK(loaded.magnification == ScaleId::x20);
  CHECK(loaded.features == bag.features);
  CHECK(loaded.coords == bag.coords);
  write_bag(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("bag header layout is pinned") {
  TempDir dir;
  FeatureBag bag = sample_bag(12, 2, 3);
  bag.magnification = ScaleId::x10;
  const std::string p = dir.file("h.hmfb");
  write_bag(bag, p);
  std::string raw = slurp(p);
  REQUIRE(raw.size() == 16 + 2 * 3 * 4 + 2 * 8);
  CHECK(raw.substr(0, 4) == "HMFB");
  CHECK(std::uint8_t(raw[4]) == 1);   // version low byte
  CHECK(std::uint8_t(raw[5]) == 0);
  CHECK(std::uint8_t(raw[6]) == 1);   // 10x code
  CHECK(std::uint8_t(raw[7]) == 0);   // reserved
  CHECK(std::uint8_t(raw[8]) == 2);   // N low byte
  CHECK(std::uint8_t(raw[12]) == 3);  // L low byte
}

TEST_CASE("bag reader rejects corrupted input") {
  TempDir dir;
  FeatureBag bag = sample_bag(13, 4, 3);
  const std::string p = dir.file("c.hmfb");
  write_bag(bag, p);
  std::string raw = slurp(p);

  // bad magic names the path
  {
    std::string bad = raw;
    bad[0] = 'X';
    const std::string bp = dir.file("bad_magic.hmfb");
    std::ofstream(bp, std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(read_bag(bp), doctest::Contains("bad_magic.hmfb"),
                         IoError);
  }

  // version mismatch
  {
    std::string bad = raw;
    bad[4] = 9;
    const std::string bp = dir.file("bad_version.hmfb");
    std::ofstream(bp, std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(read_bag(bp), doctest::Contains("version"), IoError);
  }

  // declared N exceeding the payload
  {
    std::string bad = raw;
    bad[8] = 50;  // N = 50 instead of 4
    const std::string bp = dir.file("bad_n.hmfb");
    std::ofstream(bp, std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(read_bag(bp), doctest::Contains("exceeds"), IoError);
  }

  // zero instances
  {
    std::string bad = raw;
    bad[8] = 0;
    const std::string bp = dir.file("zero_n.hmfb");
    std::ofstream(bp, std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(read_bag(bp), doctest::Contains("zero"), IoError);
  }

  // truncated header
  {
    const std::string bp = dir.file("short.hmfb");
    std::ofstream(bp, std::ios::binary) << raw.substr(0, 9);
    CHECK_THROWS_AS(read_bag(bp), IoError);
  }

  // unknown magnification code
  {
    std::string bad = raw;
    bad[6] = 7;
    const std::string bp = dir.file("bad_mag.hmfb");
    std::ofstream(bp, std::ios::binary) << bad;
    CHECK_THROWS_AS(read_bag(bp), IoError);
  }

  CHECK_THROWS_AS(read_bag(dir.file("missing.hmfb")), IoError);
}

TEST_CASE("writer refuses empty bags and mismatched coords") {
  TempDir dir;
  FeatureBag empty;
  empty.features = Matrix(0, 4);
  CHECK_THROWS_AS(write_bag(empty, dir.file("e.hmfb")), IoError);

  FeatureBag bad = sample_bag(14, 3, 2);
  bad.coords.pop_back();
  CHECK_THROWS_AS(write_bag(bad, dir.file("m.hmfb")), IoError);
}
