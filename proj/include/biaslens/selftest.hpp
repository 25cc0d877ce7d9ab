#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace biaslens {

struct SuiteResult {
  std::string name;
  std::size_t passed = 0;
  std::size_t total = 0;
  /// Largest error seen relative to the check's own metric.
  double worst = 0.0;
  double seconds = 0.0;

  bool ok() const noexcept { return passed == total && total > 0; }
};

/// Analytic loss gradients against central differences (h = 1e-6) at
/// `points` random (fv, y) per loss. Tolerance 1e-6, 1e-5 for L1 (points
/// are drawn away from its kinks).
SuiteResult loss_gradient_suite(std::size_t points = 100, std::uint64_t seed = 7);

/// |SCE - NLL| in value and gradient, tolerance 1e-12.
SuiteResult sce_nll_identity_suite(std::size_t inputs = 1000, std::uint64_t seed = 11);

/// Every parameter gradient of a conv(4,3,1)-relu-gap-dense(C) network under
/// each loss against central differences (h = 1e-5), tolerance 1e-5.
SuiteResult network_gradient_suite(std::uint64_t seed = 13);

/// CKA self-similarity, symmetry, orthogonal and isotropic-scaling invariance,
/// and unbiased HSIC against the naive oracle at n = 8; tolerance 1e-10.
SuiteResult cka_property_suite(std::size_t trials = 20, std::uint64_t seed = 17);

/// Mean |cka_minibatch(4 x 256) - full-sample unbiased CKA| on n=1024, d=16
/// correlated features over `shuffles` shuffles; passes at <= 0.05.
SuiteResult minibatch_consistency_suite(std::size_t shuffles = 10, std::uint64_t seed = 19);

std::vector<SuiteResult> run_selftest();

}  // namespace biaslens
