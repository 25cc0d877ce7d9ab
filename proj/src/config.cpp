#include "biaslens/config.hpp"

#include <charconv>
#include <set>

#include "binary_io.hpp"
#include "biaslens/errors.hpp"

namespace biaslens {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(',', start);
    const std::string item = trim(std::string_view(s).substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (!item.empty()) out.push_back(item);
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ArgumentError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw ArgumentError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

}  // namespace

IniFile IniFile::parse(std::string_view text) {
  IniFile ini;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view raw = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (!line.empty()) {
      if (line.front() == '[') {
        if (line.back() != ']') throw ArgumentError("config line " + std::to_string(line_no) + ": unterminated section header");
        section = trim(std::string_view(line).substr(1, line.size() - 2));
        if (section.empty()) throw ArgumentError("config line " + std::to_string(line_no) + ": empty section name");
      } else {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ArgumentError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) throw ArgumentError("config line " + std::to_string(line_no) + ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        if (ini.values_.count(full) != 0) throw ArgumentError("config line " + std::to_string(line_no) + ": duplicate key " + full);
        ini.values_[full] = value;
        ini.order_.push_back(full);
      }
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return ini;
}

IniFile IniFile::load(const std::filesystem::path& path) { return parse(detail::read_text_file(path)); }

std::optional<std::string> IniFile::get(const std::string& section, const std::string& key) const {
  const auto it = values_.find(section.empty() ? key : section + "." + key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

NetworkConfig NetworkSettings::build(TensorShape input, std::size_t classes) const {
  if (!layers.empty()) {
    return NetworkConfig::parse("input=" + input.str() + ";classes=" + std::to_string(classes) + ";layers=" + layers);
  }
  if (preset == "miniresnet") return NetworkConfig::mini_resnet(input, classes, width, dropout, blocks);
  throw ArgumentError("config: unknown network preset '" + preset + "'");
}

ExperimentConfig ExperimentConfig::from_ini(const IniFile& ini) {
  static const std::set<std::string> known = {
      "data.classes",        "data.height",         "data.width",        "data.diversity",
      "data.train",          "data.val",            "data.test",         "data.seed",
      "data.path",           "network.preset",      "network.width",     "network.blocks",
      "network.dropout",     "network.layers",      "training.lr",       "training.weight_decay",
      "training.batch_size", "training.patience",   "training.max_epochs", "experiment.losses",
      "experiment.seeds",    "experiment.alpha",    "experiment.beta",   "experiment.out",
      "cka.batch_size",      "cka.batches",         "cka.tau",           "report.cell_size",
  };
  for (const auto& k : ini.keys()) {
    if (known.count(k) == 0) throw ArgumentError("config: unknown key '" + k + "'");
  }

  ExperimentConfig cfg;
  auto count = [&](const char* section, const char* key, std::size_t& dst) {
    if (auto v = ini.get(section, key)) dst = static_cast<std::size_t>(to_u64(std::string(section) + "." + key, *v));
  };
  auto real = [&](const char* section, const char* key, double& dst) {
    if (auto v = ini.get(section, key)) dst = to_real(std::string(section) + "." + key, *v);
  };

  count("data", "classes", cfg.data.num_classes);
  count("data", "height", cfg.data.height);
  count("data", "width", cfg.data.width);
  real("data", "diversity", cfg.data.diversity_ratio);
  count("data", "train", cfg.data.train_count);
  count("data", "val", cfg.data.val_count);
  count("data", "test", cfg.data.test_count);
  if (auto v = ini.get("data", "seed")) cfg.data.seed = to_u64("data.seed", *v);
  if (auto v = ini.get("data", "path")) cfg.dataset_path = *v;

  if (auto v = ini.get("network", "preset")) cfg.network.preset = *v;
  count("network", "width", cfg.network.width);
  count("network", "blocks", cfg.network.blocks);
  real("network", "dropout", cfg.network.dropout);
  if (auto v = ini.get("network", "layers")) cfg.network.layers = *v;

  real("training", "lr", cfg.schedule.adam.lr);
  real("training", "weight_decay", cfg.schedule.adam.weight_decay);
  count("training", "batch_size", cfg.schedule.batch_size);
  count("training", "patience", cfg.schedule.patience);
  count("training", "max_epochs", cfg.schedule.max_epochs);

  if (auto v = ini.get("experiment", "losses")) {
    cfg.losses.clear();
    for (const auto& name : split_list(*v)) {
      const auto kind = parse_loss_kind(name);
      if (!kind) throw ArgumentError("config: unknown loss '" + name + "' (expected sce|bce|nll|l1|l2|sos)");
      cfg.losses.push_back(*kind);
    }
  }
  if (auto v = ini.get("experiment", "seeds")) {
    cfg.seeds.clear();
    for (const auto& s : split_list(*v)) cfg.seeds.push_back(to_u64("experiment.seeds", s));
  }
  real("experiment", "alpha", cfg.alpha);
  real("experiment", "beta", cfg.beta);
  if (auto v = ini.get("experiment", "out")) cfg.out_dir = *v;

  count("cka", "batch_size", cfg.cka.batch_size);
  count("cka", "batches", cfg.cka.batches);
  real("cka", "tau", cfg.cka.tau);
  count("report", "cell_size", cfg.heatmap_cell);
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  return from_ini(IniFile::load(path));
}

void ExperimentConfig::validate() const {
  if (losses.empty()) throw ArgumentError("config: at least one loss is required");
  if (seeds.empty()) throw ArgumentError("config: at least one seed is required");
  {
    std::set<LossKind> unique(losses.begin(), losses.end());
    if (unique.size() != losses.size()) throw ArgumentError("config: duplicate loss in experiment.losses");
    std::set<std::uint64_t> useeds(seeds.begin(), seeds.end());
    if (useeds.size() != seeds.size()) throw ArgumentError("config: duplicate seed in experiment.seeds");
  }
  if (!(alpha > 0.0)) throw ArgumentError("config: alpha must be positive");
  if (dataset_path.empty()) data.validate();
  network.build(data.image_shape(), data.num_classes);
  if (!(schedule.adam.lr > 0.0) || schedule.adam.weight_decay < 0.0) {
    throw ArgumentError("config: lr must be positive and weight_decay non-negative");
  }
  if (schedule.batch_size < 2 || schedule.max_epochs == 0) {
    throw ArgumentError("config: batch_size must be at least 2 and max_epochs positive");
  }
  if (cka_batch_size() < 4 || cka.batches == 0) throw ArgumentError("config: cka batches need at least 4 samples each");
  if (dataset_path.empty() && cka.batches * cka_batch_size() > 2 * data.test_count) {
    throw ArgumentError("config: cka needs " + std::to_string(cka.batches * cka_batch_size()) +
                        " test samples but only " + std::to_string(2 * data.test_count) + " exist");
  }
  if (heatmap_cell == 0) throw ArgumentError("config: report.cell_size must be positive");
}

}  // namespace biaslens
