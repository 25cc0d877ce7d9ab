#pragma once

// Independent reference computations used to check the optimized code paths.
// Nothing here is called by the training or CKA pipeline itself.

#include <cstdint>
#include <string>
#include <vector>

#include "biaslens/losses.hpp"
#include "biaslens/matrix.hpp"
#include "biaslens/network.hpp"
#include "biaslens/rng.hpp"

namespace biaslens::oracle {

/// Textbook i-j-k triple loop.
Matrix naive_matmul(const Matrix& a, const Matrix& b);

/// Explicit double loop of row dot products.
Matrix naive_gram(const Matrix& x);

/// Materializes K~ and L~, forms K~L~ with a triple loop, and sums the
/// estimator's three terms separately.
double naive_hsic_unbiased(const Matrix& k, const Matrix& l);

/// max|a - b| / max(max|a|, max|b|, floor); 0 when the denominator is zero.
double relative_error(const Matrix& a, const Matrix& b, double floor = 0.0);

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double sd = 1.0);
/// Orthogonal Q from Gram-Schmidt on a random Gaussian matrix.
Matrix random_orthogonal(std::size_t n, Rng& rng);

struct ParamGradError {
  std::string name;
  double rel_error = 0.0;
  double abs_error = 0.0;
};

/// Compares back-propagated parameter gradients of the batch loss with
/// central differences over every trainable entry. Both sides reuse the same
/// dropout seed and the network's current mode; batchnorm running stats are
/// restored after every probe. `floor` bounds the relative-error denominator
/// from below, for tensors whose true gradient is exactly zero (a bias feeding
/// straight into batchnorm).
std::vector<ParamGradError> network_gradient_check(Network& net, const Matrix& batch, const Targets& targets,
                                                   const LossSpec& loss, double h, double floor = 0.0);

}  // namespace biaslens::oracle
