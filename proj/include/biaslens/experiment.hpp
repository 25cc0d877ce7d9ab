#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/cka.hpp"
#include "biaslens/config.hpp"
#include "biaslens/dataset.hpp"
#include "biaslens/trainer.hpp"

namespace biaslens {

struct RunRecord {
  LossKind loss = LossKind::SCE;
  std::uint64_t seed = 0;
  double acc_test_aligned = 0.0;
  double acc_test_conflicting = 0.0;
  double acc_test_mixed = 0.0;
  TrainReport train;
  /// Relative to the experiment output directory.
  std::string sim_matrix_path;
  StructureReport structure;
  double wall_seconds = 0.0;
};

/// `key = value` text; doubles at 17 significant digits so parsing is lossless.
std::string serialize_record(const RunRecord& r);
RunRecord parse_record(std::string_view text);
bool same_record(const RunRecord& a, const RunRecord& b);

/// <out>/<loss>/<seed>
std::filesystem::path run_directory(const std::filesystem::path& out, LossKind loss, std::uint64_t seed);

/// Per-run seed: a function of the config seed and the loss kind only.
std::uint64_t run_seed(std::uint64_t seed, LossKind loss);

/// Generated (or loaded) data for one config seed, shared by all losses.
BiasedDataset dataset_for_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Eval-mode traces on `batches` disjoint batches of `batch_size` samples,
/// drawn without replacement from `pool` in a seeded random order.
std::vector<ActivationTrace> capture_traces(Network& net, const LabeledData& pool, std::size_t batch_size,
                                            std::size_t batches, std::uint64_t seed);

/// Test_aligned followed by test_conflicting.
LabeledData mixed_test_split(const BiasedDataset& ds);

/// Trains, evaluates, computes CKA structure, and persists one run under
/// run_directory(cfg.out_dir, loss, seed):
/// report.txt, sim_matrix.txt, structure.txt, heatmap.ppm, checkpoint.bin.
RunRecord run_single(const ExperimentConfig& cfg, const BiasedDataset& data, LossKind loss, std::uint64_t seed);

/// All (loss, seed) runs, parallel up to thread_budget(), followed by
/// results.txt / results.csv in cfg.out_dir. Records come back in canonical
/// (loss, seed) order.
std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg);

/// Reads every <out>/<loss>/<seed>/report.txt, in canonical order.
std::vector<RunRecord> load_records(const std::filesystem::path& out);

/// BIASLENS_THREADS if set and positive, else the hardware concurrency.
std::size_t thread_budget();

/// Creates the directory and checks that files can be written inside it.
void ensure_writable_dir(const std::filesystem::path& dir);

std::string structure_text(const StructureReport& s);

}  // namespace biaslens
