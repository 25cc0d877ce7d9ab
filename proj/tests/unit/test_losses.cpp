#include <cmath>

#include "biaslens/errors.hpp"
#include "biaslens/losses.hpp"
#include "biaslens/oracles.hpp"
#include "biaslens/selftest.hpp"
#include "doctest.h"

using namespace biaslens;

namespace {
Targets onehot(std::initializer_list<int> labels, std::size_t classes) {
  const std::vector<int> l(labels);
  return Targets::from_labels(l, classes);
}
}  // namespace

TEST_CASE("softmax") {
  const Matrix p = softmax(Matrix::from_rows({{0, 0, 0, 0}}));
  for (double v : p.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  const Matrix q = softmax(Matrix::from_rows({{std::log(2.0), 0}}));
  CHECK(std::abs(q[0] - 2.0 / 3) <= 1e-15);
  CHECK(std::abs(q[1] - 1.0 / 3) <= 1e-15);
  const Matrix big = softmax(Matrix::from_rows({{1000, 0}}));
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);
  Rng rng(1);
  const Matrix r = softmax(oracle::random_matrix(5, 7, rng, 10));
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (double v : r.row(i)) s += v;
    CHECK(std::abs(s - 1) <= 1e-12);
  }
}

TEST_CASE("sigmoid") {
  CHECK(sigmoid(Matrix(1, 1, 0.0))[0] == 0.5);
  Rng rng(2);
  const Matrix x = oracle::random_matrix(10, 10, rng, 5);
  const Matrix a = sigmoid(x);
  const Matrix b = sigmoid(scale(x, -1));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(a[i] + b[i] - 1) <= 1e-15);
  const double tiny = sigmoid(Matrix(1, 1, -1000.0))[0];
  CHECK(std::isfinite(tiny));
  CHECK(tiny >= 0.0);
  CHECK(tiny < 1e-300);
}

TEST_CASE("targets validation") {
  CHECK_THROWS_AS(Targets(Matrix::from_rows({{1, 1}})), DataError);
  CHECK_THROWS_AS(Targets(Matrix::from_rows({{0.5, 0.5}})), DataError);
  const std::vector<int> bad{3};
  CHECK_THROWS_AS(Targets::from_labels(bad, 3), DataError);
}

TEST_CASE("sce analytic values") {
  const LossResult r = loss_sce(Matrix::from_rows({{0, 0}}), onehot({0}, 2));
  CHECK(r.value == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(r.grad(0, 0) == doctest::Approx(-0.5));
  CHECK(r.grad(0, 1) == doctest::Approx(0.5));
  CHECK(loss_sce(Matrix::from_rows({{std::log(3.0), 0}}), onehot({0}, 2)).value ==
        doctest::Approx(std::log(4.0 / 3)).epsilon(1e-12));
}

TEST_CASE("bce analytic values and limit") {
  CHECK(loss_bce(Matrix::from_rows({{0, 0}}), onehot({0}, 2)).value == doctest::Approx(2 * std::log(2.0)));
  const LossResult far = loss_bce(Matrix::from_rows({{60, -60, -60}}), onehot({0}, 3));
  CHECK(far.value < 1e-20);
  CHECK(std::isfinite(loss_bce(Matrix::from_rows({{1e4, -1e4}}), onehot({1}, 2)).value));
}

TEST_CASE("nll matches sce") {
  CHECK(loss_nll(Matrix::from_rows({{0, 0}}), onehot({1}, 2)).value == doctest::Approx(std::log(2.0)));
  const SuiteResult s = sce_nll_identity_suite(200, 5);
  CHECK(s.ok());
  CHECK(s.worst <= 1e-12);
}

TEST_CASE("l1 and l2 analytic values") {
  const Matrix fv = Matrix::from_rows({{std::log(3.0), 0}});
  CHECK(loss_l1(fv, onehot({0}, 2)).value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(loss_l2(fv, onehot({0}, 2)).value == doctest::Approx(0.125).epsilon(1e-12));
  // Saturated logits make softmax exactly one-hot.
  const Matrix sat = Matrix::from_rows({{0, 800}});
  CHECK(loss_l1(sat, onehot({1}, 2)).value == 0.0);
  CHECK(loss_l2(sat, onehot({1}, 2)).value == 0.0);
}

TEST_CASE("sos analytic values") {
  CHECK(loss_sos(Matrix::from_rows({{0.9, 0.2}}), onehot({0}, 2), 1, 1).value == doctest::Approx(0.025));
  const LossResult zero = loss_sos(Matrix::from_rows({{1, 0, 0}}), onehot({0}, 3), 1, 1);
  CHECK(zero.value == 0.0);
  CHECK(max_abs(zero.grad) == 0.0);
  CHECK_THROWS_AS(loss_sos(Matrix::from_rows({{1, 0}}), onehot({0}, 2), 0, 1), ArgumentError);
}

TEST_CASE("loss shapes are checked") {
  CHECK_THROWS_AS(loss_sce(Matrix(2, 3), onehot({0}, 3)), ShapeError);
}

TEST_CASE("finite differences") {
  const Matrix fd = finite_diff_grad({LossKind::SCE}, Matrix::from_rows({{0, 0}}), onehot({0}, 2), 1e-6);
  CHECK(fd[0] == doctest::Approx(-0.5).epsilon(1e-8));
  CHECK(fd[1] == doctest::Approx(0.5).epsilon(1e-8));
  // L1 is flat once softmax saturates to the target.
  const Matrix flat = finite_diff_grad({LossKind::L1}, Matrix::from_rows({{0, 800}}), onehot({1}, 2), 1e-6);
  CHECK(max_abs(flat) == 0.0);
  CHECK_THROWS_AS(finite_diff_grad({LossKind::SCE}, Matrix(1, 2), onehot({0}, 2), 0.1), ArgumentError);
}

TEST_CASE("analytic gradients against finite differences for every loss") {
  const SuiteResult s = loss_gradient_suite(100, 21);
  CHECK(s.total == 600);
  CHECK(s.passed == s.total);
  MESSAGE("worst relative error " << s.worst);
}

TEST_CASE("loss names round trip") {
  for (LossKind k : kAllLosses) CHECK(parse_loss_kind(loss_name(k)) == k);
  CHECK_FALSE(parse_loss_kind("mse").has_value());
}

TEST_CASE("softmax-based losses ignore a per-sample logit shift") {
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    const Matrix fv = oracle::random_matrix(3, 4, rng, 2.0);
    Matrix shifted = fv;
    for (std::size_t i = 0; i < 3; ++i) {
      const double c = 5.0 * rng.normal();
      for (double& v : shifted.row(i)) v += c;
    }
    std::vector<int> labels{0, 3, 1};
    const Targets y = Targets::from_labels(labels, 4);
    for (LossKind k : {LossKind::SCE, LossKind::NLL, LossKind::L1, LossKind::L2}) {
      CHECK(std::abs(compute_loss({k}, fv, y).value - compute_loss({k}, shifted, y).value) <= 1e-12);
    }
  }
}

TEST_CASE("loss values are non-negative") {
  Rng rng(32);
  for (int t = 0; t < 100; ++t) {
    const Matrix fv = oracle::random_matrix(4, 5, rng, 3.0);
    std::vector<int> labels(4);
    for (int& l : labels) l = static_cast<int>(rng.index(5));
    const Targets y = Targets::from_labels(labels, 5);
    for (LossKind k : kAllLosses) CHECK(compute_loss({k, 2.0, 0.5}, fv, y).value >= 0.0);
  }
}
