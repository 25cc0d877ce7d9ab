#include "biaslens/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>

#include "CLI11.hpp"
#include "binary_io.hpp"
#include "biaslens/checkpoint.hpp"
#include "biaslens/config.hpp"
#include "biaslens/errors.hpp"
#include "biaslens/experiment.hpp"
#include "biaslens/report.hpp"
#include "biaslens/selftest.hpp"

namespace biaslens {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::string loss;
  std::optional<std::uint64_t> seed;
  std::optional<double> diversity;
  std::optional<double> tau;
  std::optional<std::size_t> cka_batches;
  std::optional<std::size_t> cka_batch_size;
  std::string dataset;
  std::string checkpoint;
};

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.loss.empty()) {
    const auto kind = parse_loss_kind(o.loss);
    if (!kind) throw ArgumentError("unknown loss '" + o.loss + "' (expected sce, bce, nll, l1, l2 or sos)");
    cfg.losses = {*kind};
  }
  if (o.seed) cfg.seeds = {*o.seed};
  if (o.diversity) cfg.data.diversity_ratio = *o.diversity;
  if (o.tau) cfg.cka.tau = *o.tau;
  if (o.cka_batches) cfg.cka.batches = *o.cka_batches;
  if (o.cka_batch_size) cfg.cka.batch_size = *o.cka_batch_size;
  if (!o.dataset.empty()) cfg.dataset_path = o.dataset;
  cfg.validate();
  return cfg;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

int cmd_generate(const Options& o, std::ostream& out) {
  ExperimentConfig cfg = load_config(o);
  BiasSpec spec = cfg.data;
  if (o.seed) spec.seed = *o.seed;
  const fs::path path = o.out.empty() ? fs::path("dataset.blds") : fs::path(o.out);
  const BiasedDataset ds = generate(spec);
  save_binary(ds, path);
  const ColorBaseline base = color_only_baseline(ds);
  out << "wrote " << path.string() << ": train=" << ds.train.size() << " val=" << ds.val.size()
      << " test_aligned=" << ds.test_aligned.size() << " test_conflicting=" << ds.test_conflicting.size() << "\n";
  out << "color baseline: aligned=" << fixed4(base.aligned_accuracy)
      << " conflicting=" << fixed4(base.conflicting_accuracy) << "\n";
  return 0;
}

void print_record(const RunRecord& r, std::ostream& out) {
  out << loss_name(r.loss) << " seed " << r.seed << ": aligned=" << fixed4(r.acc_test_aligned)
      << " conflicting=" << fixed4(r.acc_test_conflicting) << " mixed=" << fixed4(r.acc_test_mixed)
      << " epochs=" << r.train.epochs.size() << " (" << stop_reason_name(r.train.stop_reason) << ")"
      << " block=" << fixed4(r.structure.block_score) << " progressive=" << fixed4(r.structure.progressive_score)
      << "\n";
}

int cmd_train(const Options& o, std::ostream& out) {
  if (o.loss.empty()) throw ArgumentError("train: --loss is required");
  ExperimentConfig cfg = load_config(o);
  const std::uint64_t seed = cfg.seeds.front();
  ensure_writable_dir(cfg.out_dir);
  const RunRecord r = run_single(cfg, dataset_for_seed(cfg, seed), cfg.losses.front(), seed);
  print_record(r, out);
  out << "artifacts in " << run_directory(cfg.out_dir, r.loss, r.seed).string() << "\n";
  return 0;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o);
  const auto records = run_experiment(cfg);
  for (const auto& r : records) print_record(r, out);
  out << emit_table(records).text;
  return 0;
}

int cmd_cka(const Options& o, std::ostream& out) {
  if (o.dataset.empty() || o.checkpoint.empty()) throw ArgumentError("cka: --dataset and --checkpoint are required");
  ExperimentConfig cfg = load_config(o);
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  ensure_writable_dir(dir);
  const BiasedDataset ds = load_binary(o.dataset);
  Network net = load_checkpoint(o.checkpoint);
  if (!(net.config().input_shape == ds.spec.image_shape()) || net.config().num_classes != ds.spec.num_classes) {
    throw ArgumentError("cka: checkpoint expects input " + net.config().input_shape.str() + " but the dataset has " +
                        ds.spec.image_shape().str());
  }
  const std::uint64_t seed = o.seed.value_or(1);
  const auto traces = capture_traces(net, mixed_test_split(ds), cfg.cka_batch_size(), cfg.cka.batches, seed);
  const SimilarityMatrix sim = layer_similarity(traces);
  const StructureReport rep = structure_report(sim, cfg.cka.tau);
  const std::string grid = to_text_grid(sim);
  detail::write_text_file(dir / "sim_matrix.txt", grid);
  emit_heatmap(parse_text_grid(grid), dir / "heatmap.ppm", cfg.heatmap_cell);
  detail::write_text_file(dir / "structure.txt", structure_text(rep));
  out << grid << structure_text(rep);
  return 0;
}

int cmd_report(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o);
  const auto records = load_records(cfg.out_dir);
  if (records.empty()) throw DataError("report: no run records under " + cfg.out_dir.string());
  for (const auto& r : records) {
    const fs::path grid = cfg.out_dir / r.sim_matrix_path;
    emit_heatmap(parse_text_grid(detail::read_text_file(grid)), grid.parent_path() / "heatmap.ppm", cfg.heatmap_cell);
  }
  const ResultsTable table = emit_table(records);
  write_table(table, cfg.out_dir);
  out << table.text;
  return 0;
}

int cmd_selftest(std::ostream& out) {
  bool ok = true;
  for (const SuiteResult& s : run_selftest()) {
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %zu/%zu passed  worst=%.3g  %.2fs  %s\n", s.name.c_str(), s.passed,
                  s.total, s.worst, s.seconds, s.ok() ? "PASS" : "FAIL");
    out << line;
    ok = ok && s.ok();
  }
  return ok ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Objective-function bias experiments with layer-similarity analysis", "biaslens"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config file");
    sub->add_option("--out", o.out, "Output directory (file for generate)");
    sub->add_option("--loss", o.loss, "Loss: sce, bce, nll, l1, l2, sos");
    sub->add_option("--seed", o.seed, "Seed");
    sub->add_option("--diversity", o.diversity, "Bias-conflicting fraction in train/val");
    sub->add_option("--tau", o.tau, "Block-structure threshold");
    sub->add_option("--cka-batches", o.cka_batches, "Number of CKA mini-batches");
    sub->add_option("--cka-batch-size", o.cka_batch_size, "CKA mini-batch size (0 = training batch size)");
    sub->add_option("--dataset", o.dataset, "Binary dataset file");
  };
  CLI::App* generate_cmd = app.add_subcommand("generate", "Write a synthetic biased dataset");
  CLI::App* train_cmd = app.add_subcommand("train", "Train and analyse one loss/seed");
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Run every configured loss and seed");
  CLI::App* cka_cmd = app.add_subcommand("cka", "Layer similarity of a checkpoint on a dataset");
  CLI::App* report_cmd = app.add_subcommand("report", "Rebuild the table and heatmaps from saved runs");
  CLI::App* selftest_cmd = app.add_subcommand("selftest", "Run the gradient and CKA oracle suites");
  for (CLI::App* sub : {generate_cmd, train_cmd, sweep_cmd, cka_cmd, report_cmd}) add_common(sub);
  cka_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint written by train/sweep");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (generate_cmd->parsed()) return cmd_generate(o, out);
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (sweep_cmd->parsed()) return cmd_sweep(o, out);
    if (cka_cmd->parsed()) return cmd_cka(o, out);
    if (report_cmd->parsed()) return cmd_report(o, out);
    if (selftest_cmd->parsed()) return cmd_selftest(out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace biaslens
