#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "biaslens/cka.hpp"
#include "biaslens/experiment.hpp"

namespace biaslens {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single value
};

MeanStd mean_std(std::span<const double> values);
/// "0.9500 ± 0.0500"
std::string format_mean_std(const MeanStd& v);

struct ResultsTable {
  std::string text;
  std::string csv;
};

/// One row per loss (canonical order sce, bce, nll, l1, l2, sos) with
/// mean ± std over seeds for test_conflicting, test_aligned, test_mixed, and a
/// Mean column averaging the three split means. Per column the best value is
/// prefixed with '*', the second best with '_'.
ResultsTable emit_table(std::span<const RunRecord> records);
void write_table(const ResultsTable& table, const std::filesystem::path& out_dir);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 256-entry viridis-like colormap, dark purple (0) to yellow (255). Built
/// from a fixed degree-6 polynomial fit per channel, clamped and rounded to 8 bits.
const std::array<Rgb, 256>& colormap();

/// Binary P6 image, `cell` x `cell` pixels per entry. Values map linearly
/// from [min, max] of the matrix onto the colormap (index 0 everywhere when
/// the matrix is constant). Row 0 of the matrix is drawn at the bottom.
std::vector<std::uint8_t> render_heatmap(const SimilarityMatrix& s, std::size_t cell = 8);
void emit_heatmap(const SimilarityMatrix& s, const std::filesystem::path& path, std::size_t cell = 8);

}  // namespace biaslens
