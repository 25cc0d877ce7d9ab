#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "biaslens/layers.hpp"
#include "biaslens/matrix.hpp"
#include "biaslens/trainer.hpp"

namespace biaslens {

/// Parameters of the synthetic glyph + palette dataset. Class c is a fixed
/// glyph; its canonical (bias-aligned) colour is palette entry c.
struct BiasSpec {
  std::size_t num_classes = 10;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  /// Fraction of bias-conflicting samples in train and val.
  double diversity_ratio = 0.05;
  std::size_t train_count = 5000;
  std::size_t val_count = 1000;
  /// Size of each of test_aligned and test_conflicting.
  std::size_t test_count = 1000;
  std::uint64_t seed = 0;

  TensorShape image_shape() const noexcept { return {channels, height, width}; }
  /// Throws ArgumentError on an inconsistent spec.
  void validate() const;
};

struct BiasedSample {
  Matrix image;  // channels x (height*width), values in [0, 1]
  int label = 0;
  int bias_attr = 0;
  bool aligned = true;
  friend bool operator==(const BiasedSample&, const BiasedSample&) = default;
};

struct BiasedDataset {
  BiasSpec spec;
  std::vector<BiasedSample> train;
  std::vector<BiasedSample> val;
  std::vector<BiasedSample> test_aligned;
  std::vector<BiasedSample> test_conflicting;

  /// Splits in file order: train, val, test_aligned, test_conflicting.
  std::array<const std::vector<BiasedSample>*, 4> splits() const {
    return {&train, &val, &test_aligned, &test_conflicting};
  }
};

/// Equal geometry and bitwise-equal samples in every split.
bool same_contents(const BiasedDataset& a, const BiasedDataset& b);

std::size_t conflicting_count(std::size_t split_size, double ratio);
BiasedDataset generate(const BiasSpec& spec);

/// 3 x 5 glyph for class c (row-major, 1 = ink). Digits for c < 10, distinct
/// hashed patterns beyond that.
std::array<bool, 15> glyph(std::size_t cls);
/// RGB colour of palette entry p among `count` entries.
std::array<double, 3> palette_color(std::size_t p, std::size_t count);

struct ColorBaseline {
  double aligned_accuracy = 0.0;
  double conflicting_accuracy = 0.0;
};

/// Nearest-mean classifier on per-image chromaticity (channel means divided
/// by their sum), fitted on the training split.
ColorBaseline color_only_baseline(const BiasedDataset& ds);

LabeledData to_labeled(std::span<const BiasedSample> samples);

/// Binary format, little-endian: "BLDS", u32 version=1, u32 C, u32 channels,
/// u32 H, u32 W, then for each split u64 count and count records of
/// u16 label, u16 bias_attr, u8 aligned, channels*H*W float32 pixels.
void save_binary(const BiasedDataset& ds, const std::filesystem::path& path);
/// Throws FormatError (with byte offset) on bad magic, truncation, or
/// inconsistent records; IoError when the file cannot be read.
BiasedDataset load_binary(const std::filesystem::path& path);
BiasedDataset decode_binary(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_binary(const BiasedDataset& ds);

}  // namespace biaslens
