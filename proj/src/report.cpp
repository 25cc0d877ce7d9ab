#include "biaslens/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "binary_io.hpp"
#include "biaslens/errors.hpp"

namespace biaslens {

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

std::string format_mean_std(const MeanStd& v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f ± %.4f", v.mean, v.std);
  return buf;
}

namespace {

struct Row {
  LossKind loss;
  std::size_t seeds = 0;
  std::array<MeanStd, 3> splits;  // conflicting, aligned, mixed
  double mean = 0.0;
};

// Display width, counting the two-byte "±" as one column.
std::size_t display_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) == 0x80 ? 0 : 1;
  return w;
}

std::string pad(const std::string& s, std::size_t width) {
  const std::size_t w = display_width(s);
  return w >= width ? s : s + std::string(width - w, ' ');
}

// '*' for the best value in a column, '_' for the second best distinct value.
std::vector<char> rank_markers(const std::vector<double>& column) {
  std::vector<double> distinct = column;
  std::sort(distinct.begin(), distinct.end(), std::greater<>());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<char> marks(column.size(), ' ');
  for (std::size_t i = 0; i < column.size(); ++i) {
    if (column[i] == distinct[0]) {
      marks[i] = '*';
    } else if (distinct.size() > 1 && column[i] == distinct[1]) {
      marks[i] = '_';
    }
  }
  return marks;
}

}  // namespace

ResultsTable emit_table(std::span<const RunRecord> records) {
  std::map<LossKind, std::vector<const RunRecord*>> by_loss;
  for (const auto& r : records) by_loss[r.loss].push_back(&r);

  std::vector<Row> rows;
  for (LossKind kind : kAllLosses) {
    const auto it = by_loss.find(kind);
    if (it == by_loss.end()) continue;
    auto group = it->second;
    std::sort(group.begin(), group.end(), [](const RunRecord* a, const RunRecord* b) { return a->seed < b->seed; });
    std::vector<double> conflicting, aligned, mixed;
    for (const RunRecord* r : group) {
      conflicting.push_back(r->acc_test_conflicting);
      aligned.push_back(r->acc_test_aligned);
      mixed.push_back(r->acc_test_mixed);
    }
    Row row{kind, group.size(), {mean_std(conflicting), mean_std(aligned), mean_std(mixed)}, 0.0};
    row.mean = (row.splits[0].mean + row.splits[1].mean + row.splits[2].mean) / 3.0;
    rows.push_back(row);
  }

  ResultsTable table;
  if (rows.empty()) return table;

  std::array<std::vector<char>, 4> marks;
  for (std::size_t c = 0; c < 4; ++c) {
    std::vector<double> column;
    for (const auto& row : rows) column.push_back(c < 3 ? row.splits[c].mean : row.mean);
    marks[c] = rank_markers(column);
  }

  const std::array<std::string, 6> headers = {"loss", "seeds", "test_conflicting", "test_aligned", "test_mixed", "mean"};
  const std::array<std::size_t, 6> widths = {6, 6, 18, 18, 18, 8};
  std::string& t = table.text;
  t += "# accuracy: mean ± sample std over seeds; * best, _ second best per column\n";
  for (std::size_t c = 0; c < headers.size(); ++c) t += (c ? " | " : "") + pad(headers[c], widths[c]);
  t += '\n';
  for (std::size_t c = 0; c < headers.size(); ++c) t += (c ? "-+-" : "") + std::string(widths[c], '-');
  t += '\n';

  table.csv = "loss,seeds,test_conflicting_mean,test_conflicting_std,test_aligned_mean,test_aligned_std,"
              "test_mixed_mean,test_mixed_std,mean\n";
  char buf[64];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& row = rows[i];
    std::array<std::string, 6> cells;
    cells[0] = std::string(loss_name(row.loss));
    cells[1] = std::to_string(row.seeds);
    for (std::size_t c = 0; c < 3; ++c) cells[2 + c] = marks[c][i] + format_mean_std(row.splits[c]);
    std::snprintf(buf, sizeof buf, "%c%.4f", marks[3][i], row.mean);
    cells[5] = buf;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      t += (c ? " | " : "") + (c + 1 == cells.size() ? cells[c] : pad(cells[c], widths[c]));
    }
    t += '\n';

    table.csv += cells[0] + "," + cells[1];
    for (const auto& s : row.splits) {
      std::snprintf(buf, sizeof buf, ",%.6f,%.6f", s.mean, s.std);
      table.csv += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6f\n", row.mean);
    table.csv += buf;
  }
  return table;
}

void write_table(const ResultsTable& table, const std::filesystem::path& out_dir) {
  detail::write_text_file(out_dir / "results.txt", table.text);
  detail::write_text_file(out_dir / "results.csv", table.csv);
}

const std::array<Rgb, 256>& colormap() {
  static const std::array<Rgb, 256> table = [] {
    // Polynomial coefficients c0..c6 per channel.
    constexpr double coef[3][7] = {
        {0.2777273272234177, 0.1050930431085774, -0.3308618287255563, -4.634230498983486, 6.228269936347081,
         4.776384997670288, -5.435455855934631},
        {0.005407344544966578, 1.404613529898575, 0.214847559468213, -5.799100973351585, 14.17993336680509,
         -13.74514537774601, 4.645852612178535},
        {0.3340998053353061, 1.384590162594685, 0.09509516302823659, -19.33244095627987, 56.69055260068105,
         -65.35303263337234, 26.3124352495832},
    };
    std::array<Rgb, 256> out{};
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double t = static_cast<double>(i) / 255.0;
      std::array<std::uint8_t, 3> ch{};
      for (std::size_t c = 0; c < 3; ++c) {
        double v = coef[c][6];
        for (int k = 5; k >= 0; --k) v = coef[c][k] + t * v;
        ch[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
      out[i] = {ch[0], ch[1], ch[2]};
    }
    return out;
  }();
  return table;
}

std::vector<std::uint8_t> render_heatmap(const SimilarityMatrix& s, std::size_t cell) {
  const std::size_t n = s.values.rows();
  if (n == 0 || s.values.cols() != n) throw ShapeError("heatmap: similarity matrix must be square and non-empty");
  if (cell == 0) throw ArgumentError("heatmap: cell size must be positive");
  double lo = s.values[0];
  double hi = s.values[0];
  for (double v : s.values.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const std::size_t side = n * cell;
  const std::string header = "P6\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  std::vector<std::uint8_t> img(header.begin(), header.end());
  img.reserve(header.size() + side * side * 3);
  const auto& cmap = colormap();
  for (std::size_t y = 0; y < side; ++y) {
    const std::size_t i = n - 1 - y / cell;
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t j = x / cell;
      std::size_t idx = 0;
      if (hi > lo) idx = static_cast<std::size_t>(std::lround((s.values(i, j) - lo) / (hi - lo) * 255.0));
      const Rgb c = cmap[idx];
      img.push_back(c.r);
      img.push_back(c.g);
      img.push_back(c.b);
    }
  }
  return img;
}

void emit_heatmap(const SimilarityMatrix& s, const std::filesystem::path& path, std::size_t cell) {
  detail::write_file(path, render_heatmap(s, cell));
}

}  // namespace biaslens
