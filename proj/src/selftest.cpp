#include "biaslens/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "biaslens/cka.hpp"
#include "biaslens/losses.hpp"
#include "biaslens/network.hpp"
#include "biaslens/oracles.hpp"
#include "biaslens/rng.hpp"

namespace biaslens {

namespace {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Targets random_targets(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> labels(n);
  for (int& l : labels) l = static_cast<int>(rng.index(classes));
  return Targets::from_labels(labels, classes);
}

bool l1_off_kink(const Matrix& fv, const Targets& y) {
  const Matrix p = softmax(fv);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (std::abs(y.one_hot()[i] - p[i]) <= 1e-3) return false;
  }
  return true;
}

void tally(SuiteResult& r, double error, double tolerance) {
  r.total += 1;
  r.passed += error <= tolerance ? 1 : 0;
  r.worst = std::max(r.worst, error);
}

}  // namespace

SuiteResult loss_gradient_suite(std::size_t points, std::uint64_t seed) {
  Timer timer;
  SuiteResult r{"loss-gradients"};
  Rng rng(seed);
  for (LossKind kind : kAllLosses) {
    const LossSpec spec{kind, kind == LossKind::SoS ? 3.0 : 1.0, kind == LossKind::SoS ? 2.0 : 1.0};
    const double tol = kind == LossKind::L1 ? 1e-5 : 1e-6;
    for (std::size_t p = 0; p < points; ++p) {
      const std::size_t n = 1 + rng.index(4);
      const std::size_t classes = 2 + rng.index(5);
      Matrix fv = oracle::random_matrix(n, classes, rng, 2.0);
      Targets y = random_targets(n, classes, rng);
      while (kind == LossKind::L1 && !l1_off_kink(fv, y)) fv = oracle::random_matrix(n, classes, rng, 2.0);
      const Matrix analytic = compute_loss(spec, fv, y).grad;
      const Matrix numeric = finite_diff_grad(spec, fv, y, 1e-6);
      tally(r, oracle::relative_error(analytic, numeric), tol);
    }
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteResult sce_nll_identity_suite(std::size_t inputs, std::uint64_t seed) {
  Timer timer;
  SuiteResult r{"sce-nll-identity"};
  Rng rng(seed);
  for (std::size_t i = 0; i < inputs; ++i) {
    const std::size_t n = 1 + rng.index(8);
    const std::size_t classes = 2 + rng.index(9);
    const Matrix fv = oracle::random_matrix(n, classes, rng, 3.0);
    const Targets y = random_targets(n, classes, rng);
    const LossResult a = loss_sce(fv, y);
    const LossResult b = loss_nll(fv, y);
    tally(r, std::max(std::abs(a.value - b.value), max_abs(subtract(a.grad, b.grad))), 1e-12);
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteResult network_gradient_suite(std::uint64_t seed) {
  Timer timer;
  SuiteResult r{"network-gradients"};
  Rng rng(seed);
  const std::size_t classes = 3;
  const NetworkConfig cfg = NetworkConfig::parse("input=2x5x5;classes=3;layers=conv:4:3:1,relu,gap,dense:3");
  for (LossKind kind : kAllLosses) {
    Network net(cfg, rng.next());
    net.set_mode(Mode::Train);
    const Matrix batch = oracle::random_matrix(3, cfg.input_shape.size(), rng);
    const Targets y = random_targets(3, classes, rng);
    for (const auto& e : oracle::network_gradient_check(net, batch, y, {kind, 1.0, 1.0}, 1e-5)) tally(r, e.rel_error, 1e-5);
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteResult cka_property_suite(std::size_t trials, std::uint64_t seed) {
  Timer timer;
  SuiteResult r{"cka-properties"};
  Rng rng(seed);
  constexpr double tol = 1e-10;
  for (std::size_t t = 0; t < trials; ++t) {
    const Matrix x = oracle::random_matrix(20, 6, rng);
    const Matrix y = add(matmul(x, oracle::random_matrix(6, 4, rng)), oracle::random_matrix(20, 4, rng, 0.5));
    const double base = cka_full(x, y);
    tally(r, std::abs(cka_full(x, x) - 1.0), tol);
    tally(r, std::abs(cka_full(y, x) - base), tol);
    tally(r, std::abs(cka_full(x, matmul(y, oracle::random_orthogonal(4, rng))) - base), tol);
    for (double c : {1e-3, 1.0, 1e3}) tally(r, std::abs(cka_full(x, scale(y, c)) - base), tol);

    const Matrix a = oracle::random_matrix(8, 5, rng);
    const Matrix b = oracle::random_matrix(8, 3, rng);
    const Gram k = gram_linear(a);
    const Gram l = gram_linear(b);
    tally(r, std::abs(hsic_unbiased(k, l) - oracle::naive_hsic_unbiased(k.values, l.values)), tol);
    tally(r, std::abs(hsic_unbiased(k, l) - hsic_unbiased(l, k)), 1e-12);
    tally(r, max_abs(subtract(k.values, oracle::naive_gram(a))), 1e-12);
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteResult minibatch_consistency_suite(std::size_t shuffles, std::uint64_t seed) {
  Timer timer;
  SuiteResult r{"minibatch-consistency"};
  Rng rng(seed);
  const std::size_t n = 1024, d = 16, batches = 4, batch = 256;
  const Matrix x = oracle::random_matrix(n, d, rng);
  const Matrix y = add(matmul(x, oracle::random_matrix(d, d, rng)), oracle::random_matrix(n, d, rng, 2.0));
  const double full = cka_unbiased(x, y);
  double total_gap = 0.0;
  for (std::size_t s = 0; s < shuffles; ++s) {
    const auto order = shuffled_indices(n, rng);
    std::vector<Matrix> xs, ys;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::span<const std::size_t> idx(order.data() + b * batch, batch);
      xs.push_back(gather_rows(x, idx));
      ys.push_back(gather_rows(y, idx));
    }
    total_gap += std::abs(cka_minibatch(xs, ys) - full);
  }
  tally(r, total_gap / static_cast<double>(shuffles), 0.05);
  r.seconds = timer.seconds();
  return r;
}

std::vector<SuiteResult> run_selftest() {
  return {loss_gradient_suite(), sce_nll_identity_suite(), network_gradient_suite(), cka_property_suite(),
          minibatch_consistency_suite()};
}

}  // namespace biaslens
