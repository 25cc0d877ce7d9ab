#include "biaslens/checkpoint.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "biaslens/errors.hpp"

namespace biaslens {

namespace {
constexpr std::string_view kMagic = "BLCK";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Network& net) {
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  const std::string config = net.config().to_string();
  w.u32(static_cast<std::uint32_t>(config.size()));
  w.bytes(config);
  const auto tensors = net.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const Parameter* p : tensors) {
    w.u32(static_cast<std::uint32_t>(p->name.size()));
    w.bytes(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rows()));
    w.u32(static_cast<std::uint32_t>(p->value.cols()));
    for (double v : p->value.values()) w.f64(v);
  }
  return std::move(w.buffer());
}

Network decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(kMagic.size(), "magic") != kMagic) throw FormatError("bad magic: expected \"BLCK\"", 0);
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kVersion) throw FormatError("unsupported checkpoint version", version_at);
  const std::size_t config_at = r.offset();
  const std::uint32_t config_len = r.u32("config length");
  const std::string config_text = r.bytes(config_len, "network config");
  NetworkConfig config;
  try {
    config = NetworkConfig::parse(config_text);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("invalid network config: ") + e.what(), config_at);
  }
  Network net(std::move(config), 0);
  auto tensors = net.tensors();
  const std::size_t count_at = r.offset();
  if (r.u32("tensor count") != tensors.size()) throw FormatError("tensor count does not match network config", count_at);
  for (Parameter* p : tensors) {
    const std::size_t at = r.offset();
    const std::string name = r.bytes(r.u32("tensor name length"), "tensor name");
    const std::uint32_t rows = r.u32("tensor rows");
    const std::uint32_t cols = r.u32("tensor cols");
    if (name != p->name || rows != p->value.rows() || cols != p->value.cols()) {
      throw FormatError("tensor '" + name + "' does not match expected '" + p->name + "' " + p->value.shape_string(), at);
    }
    r.need(static_cast<std::size_t>(rows) * cols * 8, "tensor values");
    for (double& v : p->value.values()) {
      v = r.f64("tensor values");
      if (!std::isfinite(v)) throw FormatError("non-finite tensor value", r.offset() - 8);
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", r.offset());
  net.set_mode(Mode::Eval);
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(net));
}

Network load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace biaslens
