#include "biaslens/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "biaslens/errors.hpp"
#include "biaslens/rng.hpp"

namespace biaslens {

namespace {

constexpr std::array<std::array<bool, 15>, 10> kDigits = {{
    {1, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1},  // 0
    {0, 1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 1},  // 1
    {1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1},  // 2
    {1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1},  // 3
    {1, 0, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 0, 0, 1},  // 4
    {1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1},  // 5
    {1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1},  // 6
    {1, 1, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1},  // 7
    {1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1},  // 8
    {1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1},  // 9
}};

constexpr std::array<std::array<double, 3>, 10> kPalette = {{
    {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, 0.0, 1.0},
    {1.0, 1.0, 0.0},
    {1.0, 0.0, 1.0},
    {0.0, 1.0, 1.0},
    {1.0, 0.5, 0.0},
    {0.5, 0.0, 1.0},
    {0.5, 1.0, 0.0},
    {1.0, 0.0, 0.5},
}};

constexpr double kNoiseAmplitude = 0.05;

BiasedSample render(const BiasSpec& spec, int label, int palette, Rng& rng) {
  const auto ink = glyph(static_cast<std::size_t>(label));
  const auto color = palette_color(static_cast<std::size_t>(palette), spec.num_classes);
  const std::size_t h = spec.height;
  const std::size_t w = spec.width;
  const std::size_t cell = std::max<std::size_t>(1, std::min((w - 2) / 3, (h - 2) / 5));
  const std::size_t gw = 3 * cell;
  const std::size_t gh = 5 * cell;
  const std::size_t base_x = (w - gw) / 2;
  const std::size_t base_y = (h - gh) / 2;
  // Jitter by one pixel in each direction, kept inside the frame.
  auto jitter = [&](std::size_t base, std::size_t room) {
    const auto d = static_cast<std::ptrdiff_t>(rng.index(3)) - 1;
    const auto pos = static_cast<std::ptrdiff_t>(base) + d;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(pos, 0, static_cast<std::ptrdiff_t>(room)));
  };
  const std::size_t ox = jitter(base_x, w - gw);
  const std::size_t oy = jitter(base_y, h - gh);

  Matrix img(spec.channels, h * w);
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    const double level = color[ch % 3];
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double v = 0.0;
        if (x >= ox && x < ox + gw && y >= oy && y < oy + gh) {
          const std::size_t gx = (x - ox) / cell;
          const std::size_t gy = (y - oy) / cell;
          if (ink[gy * 3 + gx]) v = level;
        }
        img(ch, y * w + x) = v + rng.uniform(-kNoiseAmplitude, kNoiseAmplitude);
      }
    }
  }
  // Per-image min-max normalisation; stored at float precision so the binary
  // format round-trips exactly.
  double lo = img[0];
  double hi = img[0];
  for (double v : img.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi - lo;
  for (double& v : img.values()) {
    v = range > 0.0 ? static_cast<double>(static_cast<float>((v - lo) / range)) : 0.0;
  }
  return {std::move(img), label, palette, label == palette};
}

int wrong_palette(int label, std::size_t classes, Rng& rng) {
  const auto offset = 1 + rng.index(classes - 1);
  return static_cast<int>((static_cast<std::size_t>(label) + offset) % classes);
}

// Labels round-robin over classes; the first quota[c] samples of class c conflict.
std::vector<BiasedSample> make_split(const BiasSpec& spec, std::size_t count, std::size_t conflicts, Rng& rng) {
  const std::size_t classes = spec.num_classes;
  std::vector<std::size_t> quota(classes, conflicts / classes);
  for (std::size_t c = 0; c < conflicts % classes; ++c) ++quota[c];
  std::vector<std::size_t> produced(classes, 0);

  std::vector<BiasedSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<int>(i % classes);
    const bool conflict = produced[i % classes] < quota[i % classes];
    ++produced[i % classes];
    const int palette = conflict ? wrong_palette(label, classes, rng) : label;
    out.push_back(render(spec, label, palette, rng));
  }
  std::vector<std::size_t> per_class(classes, 0);
  for (const auto& s : out) ++per_class[static_cast<std::size_t>(s.label)];
  for (std::size_t c = 0; c < classes; ++c) {
    if (quota[c] > per_class[c]) throw ArgumentError("generate: split too small for its conflicting quota");
  }
  rng.shuffle(std::span<BiasedSample>(out));
  return out;
}

}  // namespace

void BiasSpec::validate() const {
  if (num_classes < 2 || num_classes > std::numeric_limits<std::uint16_t>::max()) {
    throw ArgumentError("bias spec: num_classes must lie in [2, 65535]");
  }
  if (channels == 0) throw ArgumentError("bias spec: channels must be positive");
  if (height < 5 || width < 3) throw ArgumentError("bias spec: images must be at least 5 x 3 pixels");
  if (!(diversity_ratio >= 0.0 && diversity_ratio < 0.5)) {
    throw ArgumentError("bias spec: diversity_ratio must lie in [0, 0.5)");
  }
  if (train_count < num_classes || val_count < num_classes || test_count < num_classes) {
    throw ArgumentError("bias spec: every split needs at least num_classes samples");
  }
}

std::size_t conflicting_count(std::size_t split_size, double ratio) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(split_size)));
}

std::array<bool, 15> glyph(std::size_t cls) {
  if (cls < kDigits.size()) return kDigits[cls];
  // Deterministic hashed patterns, each distinct from every lower class.
  std::vector<std::array<bool, 15>> table(kDigits.begin(), kDigits.end());
  while (table.size() <= cls) {
    const std::size_t c = table.size();
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng(Rng::derive(c, attempt));
      const std::uint64_t bits = rng.next();
      std::array<bool, 15> g{};
      int ink = 0;
      for (std::size_t i = 0; i < 15; ++i) {
        g[i] = ((bits >> i) & 1U) != 0;
        ink += g[i] ? 1 : 0;
      }
      if (ink >= 4 && std::find(table.begin(), table.end(), g) == table.end()) {
        table.push_back(g);
        break;
      }
    }
  }
  return table[cls];
}

std::array<double, 3> palette_color(std::size_t p, std::size_t count) {
  if (count <= kPalette.size()) return kPalette[p];
  // Evenly spaced fully saturated hues.
  const double hue = 6.0 * static_cast<double>(p) / static_cast<double>(count);
  const double f = hue - std::floor(hue);
  switch (static_cast<int>(hue)) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

BiasedDataset generate(const BiasSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  BiasedDataset ds;
  ds.spec = spec;
  ds.train = make_split(spec, spec.train_count, conflicting_count(spec.train_count, spec.diversity_ratio), rng);
  ds.val = make_split(spec, spec.val_count, conflicting_count(spec.val_count, spec.diversity_ratio), rng);
  ds.test_aligned = make_split(spec, spec.test_count, 0, rng);
  ds.test_conflicting = make_split(spec, spec.test_count, spec.test_count, rng);
  return ds;
}

bool same_contents(const BiasedDataset& a, const BiasedDataset& b) {
  return a.spec.num_classes == b.spec.num_classes && a.spec.channels == b.spec.channels &&
         a.spec.height == b.spec.height && a.spec.width == b.spec.width && a.train == b.train && a.val == b.val &&
         a.test_aligned == b.test_aligned && a.test_conflicting == b.test_conflicting;
}

namespace {

std::vector<double> chromaticity(const BiasedSample& s) {
  std::vector<double> f(s.image.rows(), 0.0);
  double total = 0.0;
  for (std::size_t ch = 0; ch < s.image.rows(); ++ch) {
    for (double v : s.image.row(ch)) f[ch] += v;
    total += f[ch];
  }
  if (total > 0.0) {
    for (double& v : f) v /= total;
  }
  return f;
}

double accuracy(const std::vector<BiasedSample>& split, const std::vector<std::vector<double>>& centroids) {
  if (split.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : split) {
    const auto f = chromaticity(s);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < f.size(); ++k) d += (f[k] - centroids[c][k]) * (f[k] - centroids[c][k]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += static_cast<int>(best) == s.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

}  // namespace

ColorBaseline color_only_baseline(const BiasedDataset& ds) {
  const std::size_t classes = ds.spec.num_classes;
  const std::size_t channels = ds.spec.channels;
  std::vector<std::vector<double>> centroids(classes, std::vector<double>(channels, 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& s : ds.train) {
    const auto f = chromaticity(s);
    auto& c = centroids[static_cast<std::size_t>(s.label)];
    for (std::size_t k = 0; k < channels; ++k) c[k] += f[k];
    ++counts[static_cast<std::size_t>(s.label)];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw DataError("color baseline: class " + std::to_string(c) + " missing from train split");
    for (double& v : centroids[c]) v /= static_cast<double>(counts[c]);
  }
  return {accuracy(ds.test_aligned, centroids), accuracy(ds.test_conflicting, centroids)};
}

LabeledData to_labeled(std::span<const BiasedSample> samples) {
  if (samples.empty()) return {};
  const std::size_t features = samples.front().image.size();
  LabeledData out{Matrix(samples.size(), features), {}};
  out.labels.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].image.size() != features) throw ShapeError("to_labeled: images differ in size");
    std::copy(samples[i].image.values().begin(), samples[i].image.values().end(), out.inputs.row(i).begin());
    out.labels.push_back(samples[i].label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary format

namespace {

constexpr std::string_view kMagic = "BLDS";
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_binary(const BiasedDataset& ds) {
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ds.spec.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.spec.channels));
  w.u32(static_cast<std::uint32_t>(ds.spec.height));
  w.u32(static_cast<std::uint32_t>(ds.spec.width));
  const std::size_t pixels = ds.spec.channels * ds.spec.height * ds.spec.width;
  for (const auto* split : ds.splits()) {
    w.u64(split->size());
    for (const auto& s : *split) {
      if (s.image.size() != pixels) throw ShapeError("save_binary: image does not match dataset geometry");
      w.u16(static_cast<std::uint16_t>(s.label));
      w.u16(static_cast<std::uint16_t>(s.bias_attr));
      w.u8(s.aligned ? 1 : 0);
      for (double v : s.image.values()) w.f32(static_cast<float>(v));
    }
  }
  return std::move(w.buffer());
}

void save_binary(const BiasedDataset& ds, const std::filesystem::path& path) {
  detail::write_file(path, encode_binary(ds));
}

BiasedDataset decode_binary(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const std::size_t magic_at = r.offset();
  if (r.bytes(kMagic.size(), "magic") != kMagic) {
    throw FormatError("bad magic: expected \"BLDS\"", magic_at);
  }
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32("version"); v != kVersion) {
    throw FormatError("unsupported version " + std::to_string(v) + ", expected 1", version_at);
  }
  BiasedDataset ds;
  const std::size_t header_at = r.offset();
  ds.spec.num_classes = r.u32("class count");
  ds.spec.channels = r.u32("channels");
  ds.spec.height = r.u32("height");
  ds.spec.width = r.u32("width");
  if (ds.spec.num_classes < 2 || ds.spec.num_classes > 65535 || ds.spec.channels == 0 || ds.spec.height == 0 ||
      ds.spec.width == 0) {
    throw FormatError("invalid header dimensions", header_at);
  }
  const unsigned __int128 pixels128 = static_cast<unsigned __int128>(ds.spec.channels) * ds.spec.height * ds.spec.width;
  if (pixels128 > std::numeric_limits<std::uint32_t>::max()) throw FormatError("image shape overflows", header_at);
  const auto pixels = static_cast<std::size_t>(pixels128);
  const std::size_t record_bytes = 5 + 4 * pixels;

  std::array<std::vector<BiasedSample>*, 4> splits = {&ds.train, &ds.val, &ds.test_aligned, &ds.test_conflicting};
  for (auto* split : splits) {
    const std::size_t count_at = r.offset();
    const std::uint64_t count = r.u64("split count");
    if (count > r.remaining() / record_bytes) {
      throw FormatError("split of " + std::to_string(count) + " records exceeds remaining file size", count_at);
    }
    split->reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::size_t rec_at = r.offset();
      BiasedSample s;
      s.label = r.u16("label");
      s.bias_attr = r.u16("bias attribute");
      const std::uint8_t aligned = r.u8("aligned flag");
      if (static_cast<std::size_t>(s.label) >= ds.spec.num_classes ||
          static_cast<std::size_t>(s.bias_attr) >= ds.spec.num_classes) {
        throw FormatError("label or bias attribute out of range", rec_at);
      }
      if (aligned > 1 || (aligned == 1) != (s.label == s.bias_attr)) {
        throw FormatError("aligned flag inconsistent with label and bias attribute", rec_at);
      }
      s.aligned = aligned == 1;
      std::vector<double> px(pixels);
      for (std::size_t p = 0; p < pixels; ++p) {
        const float v = r.f32("pixels");
        if (!std::isfinite(v)) throw FormatError("non-finite pixel", r.offset() - 4);
        px[p] = v;
      }
      s.image = Matrix(ds.spec.channels, ds.spec.height * ds.spec.width, std::move(px));
      split->push_back(std::move(s));
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last split", r.offset());

  ds.spec.train_count = ds.train.size();
  ds.spec.val_count = ds.val.size();
  ds.spec.test_count = ds.test_aligned.size();
  std::size_t conflicts = 0;
  for (const auto& s : ds.train) conflicts += s.aligned ? 0 : 1;
  ds.spec.diversity_ratio = ds.train.empty() ? 0.0 : static_cast<double>(conflicts) / static_cast<double>(ds.train.size());
  return ds;
}

BiasedDataset load_binary(const std::filesystem::path& path) { return decode_binary(detail::read_file(path)); }

}  // namespace biaslens
