#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "biaslens/dataset.hpp"
#include "biaslens/errors.hpp"
#include "doctest.h"

using namespace biaslens;

namespace {

BiasSpec small_spec(std::uint64_t seed, double ratio = 0.05) {
  BiasSpec s;
  s.seed = seed;
  s.diversity_ratio = ratio;
  s.train_count = 1000;
  s.val_count = 200;
  s.test_count = 200;
  return s;
}

// Plug-in mutual information (nats) between label and bias attribute.
double mutual_information(const std::vector<BiasedSample>& split, std::size_t classes) {
  std::vector<double> joint(classes * classes, 0.0), pl(classes, 0.0), pb(classes, 0.0);
  const double n = static_cast<double>(split.size());
  for (const auto& s : split) {
    joint[static_cast<std::size_t>(s.label) * classes + static_cast<std::size_t>(s.bias_attr)] += 1 / n;
    pl[static_cast<std::size_t>(s.label)] += 1 / n;
    pb[static_cast<std::size_t>(s.bias_attr)] += 1 / n;
  }
  double mi = 0;
  for (std::size_t l = 0; l < classes; ++l)
    for (std::size_t b = 0; b < classes; ++b) {
      const double p = joint[l * classes + b];
      if (p > 0) mi += p * std::log(p / (pl[l] * pb[b]));
    }
  return mi;
}

std::size_t conflicting(const std::vector<BiasedSample>& split) {
  std::size_t n = 0;
  for (const auto& s : split) n += s.aligned ? 0 : 1;
  return n;
}

}  // namespace

TEST_CASE("bias parameters are validated") {
  BiasSpec s = small_spec(1);
  s.diversity_ratio = 0.5;
  CHECK_THROWS_AS(generate(s), ArgumentError);
  s = small_spec(1);
  s.val_count = 9;
  CHECK_THROWS_AS(generate(s), ArgumentError);
  s = small_spec(1);
  s.height = 4;
  CHECK_THROWS_AS(generate(s), ArgumentError);
}

TEST_CASE("conflicting counts follow the rounding rule") {
  CHECK(conflicting_count(1000, 0.05) == 50);
  CHECK(conflicting_count(1000, 0.005) == 5);
  CHECK(conflicting_count(1000, 0.0) == 0);
  for (double ratio : {0.0, 0.005, 0.01, 0.05, 0.2}) {
    for (std::uint64_t seed : {1, 2, 3}) {
      BiasSpec s = small_spec(seed, ratio);
      s.height = 8;
      s.width = 8;
      s.train_count = 1003;
      const BiasedDataset ds = generate(s);
      CHECK(conflicting(ds.train) == static_cast<std::size_t>(std::llround(ratio * 1003)));
      CHECK(conflicting(ds.val) == static_cast<std::size_t>(std::llround(ratio * 200)));
      std::vector<std::size_t> per_class(10, 0);
      for (const auto& x : ds.train)
        if (!x.aligned) per_class[static_cast<std::size_t>(x.label)]++;
      CHECK(*std::max_element(per_class.begin(), per_class.end()) -
                *std::min_element(per_class.begin(), per_class.end()) <=
            1);
    }
  }
}

TEST_CASE("train split at ratio 0.05 holds exactly 50 conflicting samples") {
  CHECK(conflicting(generate(small_spec(7)).train) == 50);
}

TEST_CASE("sample invariants and class balance") {
  const BiasedDataset ds = generate(small_spec(4));
  for (const auto* split : ds.splits()) {
    std::vector<std::size_t> counts(10, 0);
    for (const auto& s : *split) {
      counts[static_cast<std::size_t>(s.label)]++;
      CHECK(s.aligned == (s.bias_attr == s.label));
      CHECK(s.image.rows() == 3);
      CHECK(s.image.cols() == 256);
      for (double v : s.image.values()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
    }
    CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
  }
  for (const auto& s : ds.test_aligned) CHECK(s.aligned);
  for (const auto& s : ds.test_conflicting) CHECK_FALSE(s.aligned);
}

TEST_CASE("zero diversity") {
  const BiasedDataset ds = generate(small_spec(5, 0.0));
  CHECK(conflicting(ds.train) == 0);
  CHECK(conflicting(ds.val) == 0);
  CHECK(conflicting(ds.test_conflicting) == ds.test_conflicting.size());
  CHECK(color_only_baseline(ds).aligned_accuracy == 1.0);
}

TEST_CASE("generation is deterministic per seed") {
  const BiasedDataset a = generate(small_spec(9));
  CHECK(same_contents(a, generate(small_spec(9))));
  CHECK_FALSE(same_contents(a, generate(small_spec(10))));
}

TEST_CASE("glyphs are distinct") {
  std::set<std::array<bool, 15>> seen;
  for (std::size_t c = 0; c < 64; ++c) CHECK(seen.insert(glyph(c)).second);
}

TEST_CASE("color-only baseline exposes the bias") {
  const BiasedDataset ds = generate(small_spec(11));
  const ColorBaseline b = color_only_baseline(ds);
  CHECK(b.aligned_accuracy >= 0.95);
  CHECK(b.conflicting_accuracy <= 0.1 + 0.05);
}

TEST_CASE("conflicting palettes are uniform over the wrong classes") {
  BiasSpec s = small_spec(12);
  s.height = 5;
  s.width = 3;
  s.test_count = 5000;
  const BiasedDataset ds = generate(s);
  // Forcing bias != label leaves a floor of ln(C / (C - 1)) nats.
  const double floor10 = std::log(10.0 / 9.0);
  const double mi = mutual_information(ds.test_conflicting, 10);
  MESSAGE("MI at C=10: " << mi << " (floor " << floor10 << ")");
  CHECK(mi >= floor10 - 1e-12);
  CHECK(mi <= floor10 + 0.05);

  std::map<std::pair<int, int>, std::size_t> pairs;
  for (const auto& x : ds.test_conflicting) pairs[{x.label, x.bias_attr}]++;
  CHECK(pairs.size() == 90);
  for (const auto& [k, n] : pairs) CHECK(std::abs(static_cast<double>(n) - 500.0 / 9) < 30);
}

TEST_CASE("label-bias mutual information on test_conflicting at 32 classes") {
  BiasSpec s;
  s.num_classes = 32;
  s.height = 5;
  s.width = 3;
  s.train_count = 320;
  s.val_count = 32;
  s.test_count = 60000;
  s.seed = 13;
  const double mi = mutual_information(generate(s).test_conflicting, 32);
  MESSAGE("MI at C=32: " << mi);
  CHECK(mi <= 0.05);
}

TEST_CASE("binary round trip") {
  const BiasedDataset ds = generate(small_spec(14));
  const auto bytes = encode_binary(ds);
  CHECK(same_contents(decode_binary(bytes), ds));
  CHECK(encode_binary(decode_binary(bytes)) == bytes);
  const auto path = std::filesystem::temp_directory_path() / "biaslens_roundtrip.blds";
  save_binary(ds, path);
  CHECK(same_contents(load_binary(path), ds));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_binary("/nonexistent/dir/ds.blds"), IoError);
}

TEST_CASE("truncated and corrupt files are rejected") {
  BiasSpec s = small_spec(15);
  s.height = 5;
  s.width = 3;
  s.train_count = 20;
  s.val_count = 10;
  s.test_count = 10;
  const auto bytes = encode_binary(generate(s));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{30}, bytes.size() / 2,
                          bytes.size() - 1}) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    CHECK_THROWS_AS(decode_binary(part), FormatError);
  }
  try {
    decode_binary(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 40));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }

  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_binary(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("BLDS") != std::string::npos);
    CHECK(e.offset() == 0);
  }

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_binary(trailing), FormatError);

  auto label = bytes;
  label[4 + 4 * 5 + 8] = 0xFF;  // first record's label
  label[4 + 4 * 5 + 9] = 0xFF;
  CHECK_THROWS_AS(decode_binary(label), FormatError);
}
