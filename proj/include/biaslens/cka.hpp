#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/layers.hpp"
#include "biaslens/matrix.hpp"

namespace biaslens {

/// Symmetric n x n kernel matrix.
struct Gram {
  Matrix values;
  std::size_t n() const noexcept { return values.rows(); }
};

/// K = x x^T for an n x d activation matrix.
Gram gram_linear(const Matrix& x);

/// Unbiased HSIC estimator on kernels with zeroed diagonals:
///   1/(n(n-3)) [ tr(K~L~) + (1^T K~ 1)(1^T L~ 1)/((n-1)(n-2)) - 2/(n-2) 1^T K~ L~ 1 ]
/// Requires n >= 4.
double hsic_unbiased(const Gram& k, const Gram& l);

/// Linear CKA on column-centred features,
/// ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F). Throws DegenerateInputError
/// when either input has zero variance.
double cka_full(const Matrix& x, const Matrix& y);

/// CKA on one batch using the unbiased HSIC estimator.
double cka_unbiased(const Matrix& x, const Matrix& y);

/// sum_i HSIC(K_i, L_i) / (sqrt(sum_i HSIC(K_i, K_i)) sqrt(sum_i HSIC(L_i, L_i)))
/// over paired mini-batches. The result is not clamped; the unbiased estimator
/// can dip slightly below zero for unrelated features.
double cka_minibatch(std::span<const Matrix> xs, std::span<const Matrix> ys);

struct SimilarityMatrix {
  std::vector<std::string> layer_names;
  Matrix values;  // L x L

  std::size_t size() const noexcept { return layer_names.size(); }
};

/// Pairwise mini-batch CKA between every pair of traced layers. Each trace is
/// one batch. The diagonal is exactly 1. Pairs involving a layer whose
/// self-HSIC sum is not positive (a constant layer) are set to 0.
SimilarityMatrix layer_similarity(std::span<const ActivationTrace> batches);

struct StructureReport {
  double tau = 0.9;
  /// Size of the largest contiguous diagonal block (at least 2 layers) whose
  /// pairwise similarities all exceed tau, divided by L. Zero when none.
  double block_score = 0.0;
  std::size_t block_start = 0;
  std::size_t block_size = 0;
  /// Negated Spearman correlation between layer distance |i-j| and S_ij over
  /// pairs i <= j. Zero when either ranking is constant.
  double progressive_score = 0.0;
};

StructureReport structure_report(const SimilarityMatrix& s, double tau = 0.9);

/// Spearman rank correlation with average ranks for ties; 0 if either side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

/// Header line of layer names, then one row per line at 9 significant digits.
std::string to_text_grid(const SimilarityMatrix& s);
SimilarityMatrix parse_text_grid(std::string_view text);

}  // namespace biaslens
