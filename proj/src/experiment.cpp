#include "biaslens/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "binary_io.hpp"
#include "biaslens/checkpoint.hpp"
#include "biaslens/errors.hpp"
#include "biaslens/report.hpp"

namespace biaslens {

namespace fs = std::filesystem;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw DataError("run record: bad value for " + key + ": '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto d = std::stoull(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw DataError("run record: bad integer for " + key + ": '" + v + "'");
}

}  // namespace

std::string serialize_record(const RunRecord& r) {
  std::string s;
  auto kv = [&](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  kv("loss", std::string(loss_name(r.loss)));
  kv("seed", std::to_string(r.seed));
  kv("acc_test_aligned", fmt17(r.acc_test_aligned));
  kv("acc_test_conflicting", fmt17(r.acc_test_conflicting));
  kv("acc_test_mixed", fmt17(r.acc_test_mixed));
  kv("train.best_epoch", std::to_string(r.train.best_epoch));
  kv("train.best_val_accuracy", fmt17(r.train.best_val_accuracy));
  kv("train.stop_reason", std::string(stop_reason_name(r.train.stop_reason)));
  kv("train.epochs", std::to_string(r.train.epochs.size()));
  for (const auto& e : r.train.epochs) {
    kv("epoch." + std::to_string(e.epoch),
       fmt17(e.train_loss) + " " + fmt17(e.train_accuracy) + " " + fmt17(e.val_accuracy));
  }
  kv("sim_matrix", r.sim_matrix_path);
  kv("structure.tau", fmt17(r.structure.tau));
  kv("structure.block_score", fmt17(r.structure.block_score));
  kv("structure.block_start", std::to_string(r.structure.block_start));
  kv("structure.block_size", std::to_string(r.structure.block_size));
  kv("structure.progressive_score", fmt17(r.structure.progressive_score));
  kv("wall_seconds", fmt17(r.wall_seconds));
  return s;
}

RunRecord parse_record(std::string_view text) {
  const IniFile ini = IniFile::parse(text);
  auto req = [&](const std::string& key) {
    auto v = ini.get("", key);
    if (!v) throw DataError("run record: missing key " + key);
    return *v;
  };
  RunRecord r;
  const auto loss = parse_loss_kind(req("loss"));
  if (!loss) throw DataError("run record: unknown loss '" + req("loss") + "'");
  r.loss = *loss;
  r.seed = parse_u64("seed", req("seed"));
  r.acc_test_aligned = parse_double("acc_test_aligned", req("acc_test_aligned"));
  r.acc_test_conflicting = parse_double("acc_test_conflicting", req("acc_test_conflicting"));
  r.acc_test_mixed = parse_double("acc_test_mixed", req("acc_test_mixed"));
  r.train.best_epoch = parse_u64("train.best_epoch", req("train.best_epoch"));
  r.train.best_val_accuracy = parse_double("train.best_val_accuracy", req("train.best_val_accuracy"));
  const std::string reason = req("train.stop_reason");
  if (reason == stop_reason_name(StopReason::MaxEpochs)) {
    r.train.stop_reason = StopReason::MaxEpochs;
  } else if (reason == stop_reason_name(StopReason::EarlyStopping)) {
    r.train.stop_reason = StopReason::EarlyStopping;
  } else {
    throw DataError("run record: unknown stop reason '" + reason + "'");
  }
  const std::uint64_t epochs = parse_u64("train.epochs", req("train.epochs"));
  for (std::uint64_t e = 1; e <= epochs; ++e) {
    const std::string key = "epoch." + std::to_string(e);
    const std::string line = req(key);
    EpochStats st;
    st.epoch = e;
    char* end = nullptr;
    st.train_loss = std::strtod(line.c_str(), &end);
    st.train_accuracy = std::strtod(end, &end);
    st.val_accuracy = std::strtod(end, &end);
    if (*end != '\0') throw DataError("run record: bad " + key);
    r.train.epochs.push_back(st);
  }
  r.sim_matrix_path = req("sim_matrix");
  r.structure.tau = parse_double("structure.tau", req("structure.tau"));
  r.structure.block_score = parse_double("structure.block_score", req("structure.block_score"));
  r.structure.block_start = parse_u64("structure.block_start", req("structure.block_start"));
  r.structure.block_size = parse_u64("structure.block_size", req("structure.block_size"));
  r.structure.progressive_score = parse_double("structure.progressive_score", req("structure.progressive_score"));
  r.wall_seconds = parse_double("wall_seconds", req("wall_seconds"));
  return r;
}

bool same_record(const RunRecord& a, const RunRecord& b) {
  return a.loss == b.loss && a.seed == b.seed && a.acc_test_aligned == b.acc_test_aligned &&
         a.acc_test_conflicting == b.acc_test_conflicting && a.acc_test_mixed == b.acc_test_mixed &&
         a.train == b.train && a.sim_matrix_path == b.sim_matrix_path && a.structure.tau == b.structure.tau &&
         a.structure.block_score == b.structure.block_score && a.structure.block_start == b.structure.block_start &&
         a.structure.block_size == b.structure.block_size &&
         a.structure.progressive_score == b.structure.progressive_score && a.wall_seconds == b.wall_seconds;
}

std::string structure_text(const StructureReport& s) {
  return "tau = " + fmt17(s.tau) + "\nblock_score = " + fmt17(s.block_score) +
         "\nblock_start = " + std::to_string(s.block_start) + "\nblock_size = " + std::to_string(s.block_size) +
         "\nprogressive_score = " + fmt17(s.progressive_score) + "\n";
}

fs::path run_directory(const fs::path& out, LossKind loss, std::uint64_t seed) {
  return out / std::string(loss_name(loss)) / std::to_string(seed);
}

std::uint64_t run_seed(std::uint64_t seed, LossKind loss) {
  return Rng::derive(seed, 0x52554E00ULL + static_cast<std::uint64_t>(loss));
}

BiasedDataset dataset_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.dataset_path.empty()) return load_binary(cfg.dataset_path);
  BiasSpec spec = cfg.data;
  spec.seed = Rng::derive(cfg.data.seed, seed);
  return generate(spec);
}

LabeledData mixed_test_split(const BiasedDataset& ds) {
  std::vector<BiasedSample> mixed = ds.test_aligned;
  mixed.insert(mixed.end(), ds.test_conflicting.begin(), ds.test_conflicting.end());
  return to_labeled(mixed);
}

std::vector<ActivationTrace> capture_traces(Network& net, const LabeledData& pool, std::size_t batch_size,
                                            std::size_t batches, std::uint64_t seed) {
  if (batch_size < 4) throw ArgumentError("capture_traces: batches need at least 4 samples");
  if (batch_size * batches > pool.size()) {
    throw ArgumentError("capture_traces: " + std::to_string(batches) + " batches of " + std::to_string(batch_size) +
                        " exceed the " + std::to_string(pool.size()) + " available samples");
  }
  Rng rng(seed);
  const auto order = shuffled_indices(pool.size(), rng);
  const Mode previous = net.mode();
  net.set_mode(Mode::Eval);
  std::vector<ActivationTrace> traces;
  for (std::size_t b = 0; b < batches; ++b) {
    const std::span<const std::size_t> idx(order.data() + b * batch_size, batch_size);
    traces.push_back(*net.forward(gather_rows(pool.inputs, idx), true).trace);
  }
  net.set_mode(previous);
  return traces;
}

RunRecord run_single(const ExperimentConfig& cfg, const BiasedDataset& data, LossKind loss, std::uint64_t seed) {
  const auto started = std::chrono::steady_clock::now();
  const fs::path dir = run_directory(cfg.out_dir, loss, seed);
  ensure_writable_dir(dir);

  const std::uint64_t base = run_seed(seed, loss);
  Network net(cfg.network.build(data.spec.image_shape(), data.spec.num_classes), Rng::derive(base, 1));
  Schedule schedule = cfg.schedule;
  schedule.seed = Rng::derive(base, 2);

  RunRecord rec;
  rec.loss = loss;
  rec.seed = seed;
  rec.train = train(net, to_labeled(data.train), to_labeled(data.val), cfg.loss_spec(loss), schedule);

  const LabeledData mixed = mixed_test_split(data);
  rec.acc_test_aligned = evaluate(net, to_labeled(data.test_aligned));
  rec.acc_test_conflicting = evaluate(net, to_labeled(data.test_conflicting));
  rec.acc_test_mixed = evaluate(net, mixed);

  const auto traces = capture_traces(net, mixed, cfg.cka_batch_size(), cfg.cka.batches, Rng::derive(base, 3));
  const SimilarityMatrix sim = layer_similarity(traces);
  rec.structure = structure_report(sim, cfg.cka.tau);
  const std::string grid = to_text_grid(sim);
  detail::write_text_file(dir / "sim_matrix.txt", grid);
  // The heatmap is drawn from the persisted grid so `report` can redraw it identically.
  emit_heatmap(parse_text_grid(grid), dir / "heatmap.ppm", cfg.heatmap_cell);
  detail::write_text_file(dir / "structure.txt", structure_text(rec.structure));
  save_checkpoint(net, dir / "checkpoint.bin");

  rec.sim_matrix_path = (fs::path(std::string(loss_name(loss))) / std::to_string(seed) / "sim_matrix.txt").generic_string();
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  detail::write_text_file(dir / "report.txt", serialize_record(rec));
  return rec;
}

std::size_t thread_budget() {
  if (const char* env = std::getenv("BIASLENS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".write_probe";
  detail::write_text_file(probe, "");
  fs::remove(probe, ec);
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ensure_writable_dir(cfg.out_dir);

  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  std::vector<LossKind> losses;
  for (LossKind k : kAllLosses) {
    if (std::find(cfg.losses.begin(), cfg.losses.end(), k) != cfg.losses.end()) losses.push_back(k);
  }

  std::vector<BiasedDataset> datasets;
  for (std::uint64_t s : seeds) datasets.push_back(dataset_for_seed(cfg, s));

  struct Job {
    LossKind loss;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  for (LossKind k : losses)
    for (std::size_t i = 0; i < seeds.size(); ++i) jobs.push_back({k, i});

  std::vector<RunRecord> records(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      try {
        records[j] = run_single(cfg, datasets[jobs[j].seed_index], jobs[j].loss, seeds[jobs[j].seed_index]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const std::size_t threads = std::min(thread_budget(), jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  write_table(emit_table(records), cfg.out_dir);
  return records;
}

std::vector<RunRecord> load_records(const fs::path& out) {
  if (!fs::is_directory(out)) throw IoError("output directory not found: " + out.string());
  std::vector<RunRecord> records;
  for (LossKind k : kAllLosses) {
    const fs::path loss_dir = out / std::string(loss_name(k));
    if (!fs::is_directory(loss_dir)) continue;
    for (const auto& entry : fs::directory_iterator(loss_dir)) {
      const fs::path report = entry.path() / "report.txt";
      if (entry.is_directory() && fs::exists(report)) {
        records.push_back(parse_record(detail::read_text_file(report)));
      }
    }
  }
  std::stable_sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    if (a.loss != b.loss) return static_cast<int>(a.loss) < static_cast<int>(b.loss);
    return a.seed < b.seed;
  });
  return records;
}

}  // namespace biaslens
