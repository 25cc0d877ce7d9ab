#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/dataset.hpp"
#include "biaslens/losses.hpp"
#include "biaslens/network.hpp"
#include "biaslens/trainer.hpp"

namespace biaslens {

/// `key = value` lines grouped under `[section]` headers; `#` starts a comment.
/// Keys before the first header belong to the unnamed section "".
class IniFile {
 public:
  /// Throws ArgumentError (with line number) on malformed lines or duplicate keys.
  static IniFile parse(std::string_view text);
  /// Throws IoError if the file cannot be read.
  static IniFile load(const std::filesystem::path& path);

  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  bool has(const std::string& section, const std::string& key) const { return get(section, key).has_value(); }
  /// "section.key" for every entry, in file order.
  const std::vector<std::string>& keys() const noexcept { return order_; }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

struct NetworkSettings {
  std::string preset = "miniresnet";
  std::size_t width = 8;
  std::size_t blocks = 3;
  double dropout = 0.4;
  /// Explicit layer list (e.g. "conv:4:3:1,relu,gap,dense:10"); overrides the preset.
  std::string layers;

  NetworkConfig build(TensorShape input, std::size_t classes) const;
};

struct CkaSettings {
  /// 0 means "same as the training batch size".
  std::size_t batch_size = 0;
  std::size_t batches = 2;
  double tau = 0.9;
};

struct ExperimentConfig {
  BiasSpec data;
  /// Binary dataset to load instead of generating one per seed.
  std::string dataset_path;
  NetworkSettings network;
  std::vector<LossKind> losses{kAllLosses.begin(), kAllLosses.end()};
  double alpha = 1.0;
  double beta = 1.0;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  Schedule schedule;
  CkaSettings cka;
  std::filesystem::path out_dir = "runs";
  std::size_t heatmap_cell = 8;

  /// Unknown sections or keys are rejected.
  static ExperimentConfig from_ini(const IniFile& ini);
  static ExperimentConfig load(const std::filesystem::path& path);

  void validate() const;
  std::size_t cka_batch_size() const noexcept { return cka.batch_size == 0 ? schedule.batch_size : cka.batch_size; }
  LossSpec loss_spec(LossKind kind) const { return {kind, alpha, beta}; }
};

}  // namespace biaslens
