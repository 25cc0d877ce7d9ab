#include "biaslens/cka.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "biaslens/errors.hpp"

namespace biaslens {

namespace {

// Reusable pieces of the unbiased estimator for one kernel.
struct HsicTerms {
  Matrix zero_diag;
  std::vector<double> row_sums;
  double total = 0.0;
};

HsicTerms hsic_terms(const Matrix& k) {
  HsicTerms t{k, std::vector<double>(k.rows(), 0.0), 0.0};
  for (std::size_t i = 0; i < k.rows(); ++i) t.zero_diag(i, i) = 0.0;
  for (std::size_t i = 0; i < k.rows(); ++i) {
    double s = 0.0;
    for (double v : t.zero_diag.row(i)) s += v;
    t.row_sums[i] = s;
    t.total += s;
  }
  return t;
}

double hsic_from_terms(const HsicTerms& k, const HsicTerms& l) {
  const auto n = static_cast<double>(k.row_sums.size());
  const double trace = frobenius_dot(k.zero_diag, l.zero_diag);
  double cross = 0.0;
  for (std::size_t i = 0; i < k.row_sums.size(); ++i) cross += k.row_sums[i] * l.row_sums[i];
  return (trace + k.total * l.total / ((n - 1.0) * (n - 2.0)) - 2.0 / (n - 2.0) * cross) / (n * (n - 3.0));
}

void require_hsic_size(std::size_t n) {
  if (n < 4) throw ArgumentError("unbiased HSIC needs at least 4 samples, got " + std::to_string(n));
}

}  // namespace

Gram gram_linear(const Matrix& x) { return {matmul_nt(x, x)}; }

double hsic_unbiased(const Gram& k, const Gram& l) {
  if (k.n() != l.n() || k.values.cols() != k.n() || l.values.cols() != l.n()) {
    throw ShapeError("hsic_unbiased: kernel shapes " + k.values.shape_string() + " and " + l.values.shape_string() +
                     " differ or are not square");
  }
  require_hsic_size(k.n());
  return hsic_from_terms(hsic_terms(k.values), hsic_terms(l.values));
}

double cka_full(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) {
    throw ShapeError("cka_full: sample counts differ (" + x.shape_string() + " vs " + y.shape_string() + ")");
  }
  const Matrix xc = center_columns(x);
  const Matrix yc = center_columns(y);
  if (max_abs(xc) == 0.0 || max_abs(yc) == 0.0) throw DegenerateInputError("cka_full: zero-variance input");

  const double n = static_cast<double>(x.rows());
  const double d1 = static_cast<double>(x.cols());
  const double d2 = static_cast<double>(y.cols());
  double cross = 0.0, self_x = 0.0, self_y = 0.0;
  if (n * n * (d1 + d2) < n * (d1 * d2 + d1 * d1 + d2 * d2)) {
    const Matrix k = matmul_nt(xc, xc);
    const Matrix l = matmul_nt(yc, yc);
    cross = frobenius_dot(k, l);
    self_x = frobenius_dot(k, k);
    self_y = frobenius_dot(l, l);
  } else {
    const Matrix yx = matmul_tn(yc, xc);
    const Matrix xx = matmul_tn(xc, xc);
    const Matrix yy = matmul_tn(yc, yc);
    cross = frobenius_dot(yx, yx);
    self_x = frobenius_dot(xx, xx);
    self_y = frobenius_dot(yy, yy);
  }
  return cross / (std::sqrt(self_x) * std::sqrt(self_y));
}

double cka_unbiased(const Matrix& x, const Matrix& y) {
  const Matrix xs[] = {x};
  const Matrix ys[] = {y};
  return cka_minibatch(xs, ys);
}

double cka_minibatch(std::span<const Matrix> xs, std::span<const Matrix> ys) {
  if (xs.size() != ys.size() || xs.empty()) throw ArgumentError("cka_minibatch: need equal, non-zero batch counts");
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].rows() != ys[i].rows()) throw ShapeError("cka_minibatch: batch " + std::to_string(i) + " sizes differ");
    require_hsic_size(xs[i].rows());
    const HsicTerms k = hsic_terms(gram_linear(xs[i]).values);
    const HsicTerms l = hsic_terms(gram_linear(ys[i]).values);
    xy += hsic_from_terms(k, l);
    xx += hsic_from_terms(k, k);
    yy += hsic_from_terms(l, l);
  }
  if (!(xx > 0.0) || !(yy > 0.0)) throw DegenerateInputError("cka_minibatch: non-positive HSIC denominator");
  return xy / (std::sqrt(xx) * std::sqrt(yy));
}

SimilarityMatrix layer_similarity(std::span<const ActivationTrace> batches) {
  if (batches.empty()) throw ArgumentError("layer_similarity: no batches");
  SimilarityMatrix s;
  for (const auto& e : batches.front()) s.layer_names.push_back(e.layer_name);
  const std::size_t layers = s.layer_names.size();
  if (layers == 0) throw ArgumentError("layer_similarity: empty trace");

  Matrix hsic(layers, layers);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& trace = batches[b];
    if (trace.size() != layers) throw ArgumentError("layer_similarity: batch " + std::to_string(b) + " has a different layer list");
    std::vector<HsicTerms> terms;
    terms.reserve(layers);
    const std::size_t n = trace.front().activation.rows();
    require_hsic_size(n);
    for (std::size_t l = 0; l < layers; ++l) {
      if (trace[l].layer_name != s.layer_names[l]) {
        throw ArgumentError("layer_similarity: layer " + std::to_string(l) + " is '" + trace[l].layer_name +
                            "' in batch " + std::to_string(b) + " but '" + s.layer_names[l] + "' in batch 0");
      }
      if (trace[l].activation.rows() != n) throw ShapeError("layer_similarity: inconsistent batch size within a trace");
      terms.push_back(hsic_terms(gram_linear(trace[l].activation).values));
    }
    for (std::size_t i = 0; i < layers; ++i)
      for (std::size_t j = i; j < layers; ++j) hsic(i, j) += hsic_from_terms(terms[i], terms[j]);
  }

  s.values = Matrix(layers, layers);
  for (std::size_t i = 0; i < layers; ++i) {
    s.values(i, i) = 1.0;
    for (std::size_t j = i + 1; j < layers; ++j) {
      const double den_i = hsic(i, i);
      const double den_j = hsic(j, j);
      const double v = (den_i > 0.0 && den_j > 0.0) ? hsic(i, j) / (std::sqrt(den_i) * std::sqrt(den_j)) : 0.0;
      s.values(i, j) = v;
      s.values(j, i) = v;
    }
  }
  return s;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

StructureReport structure_report(const SimilarityMatrix& s, double tau) {
  const std::size_t layers = s.values.rows();
  if (layers < 3) throw ArgumentError("structure_report: need at least 3 layers, got " + std::to_string(layers));
  if (s.values.cols() != layers) throw ShapeError("structure_report: similarity matrix is not square");

  StructureReport r;
  r.tau = tau;
  for (std::size_t start = 0; start + 1 < layers; ++start) {
    std::size_t end = start + 1;  // block is [start, end)
    while (end < layers) {
      bool ok = true;
      for (std::size_t k = start; k < end && ok; ++k) ok = s.values(k, end) > tau && s.values(end, k) > tau;
      if (!ok) break;
      ++end;
    }
    const std::size_t size = end - start;
    if (size >= 2 && size > r.block_size) {
      r.block_size = size;
      r.block_start = start;
    }
  }
  r.block_score = static_cast<double>(r.block_size) / static_cast<double>(layers);

  std::vector<double> distance, similarity;
  for (std::size_t i = 0; i < layers; ++i) {
    for (std::size_t j = i; j < layers; ++j) {
      distance.push_back(static_cast<double>(j - i));
      similarity.push_back(s.values(i, j));
    }
  }
  r.progressive_score = 0.0 - spearman(distance, similarity);
  return r;
}

std::string to_text_grid(const SimilarityMatrix& s) {
  std::string out;
  for (std::size_t i = 0; i < s.layer_names.size(); ++i) {
    if (i > 0) out += ' ';
    out += s.layer_names[i];
  }
  out += '\n';
  char buf[32];
  for (std::size_t i = 0; i < s.values.rows(); ++i) {
    for (std::size_t j = 0; j < s.values.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", s.values(i, j));
      if (j > 0) out += ' ';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

SimilarityMatrix parse_text_grid(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw DataError("similarity grid: missing header line");
  SimilarityMatrix s;
  {
    std::istringstream header(line);
    std::string name;
    while (header >> name) s.layer_names.push_back(name);
  }
  const std::size_t layers = s.layer_names.size();
  if (layers == 0) throw DataError("similarity grid: empty header");
  std::vector<double> values;
  values.reserve(layers * layers);
  for (std::size_t i = 0; i < layers; ++i) {
    if (!std::getline(in, line)) throw DataError("similarity grid: expected " + std::to_string(layers) + " rows");
    std::istringstream row(line);
    std::string tok;
    std::size_t count = 0;
    while (row >> tok) {
      try {
        values.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw DataError("similarity grid: bad value '" + tok + "' in row " + std::to_string(i));
      }
      ++count;
    }
    if (count != layers) throw DataError("similarity grid: row " + std::to_string(i) + " has " + std::to_string(count) + " values");
  }
  s.values = Matrix(layers, layers, std::move(values));
  return s;
}

}  // namespace biaslens
