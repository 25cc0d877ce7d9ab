#include <cmath>

#include "biaslens/cka.hpp"
#include "biaslens/errors.hpp"
#include "biaslens/network.hpp"
#include "biaslens/oracles.hpp"
#include "biaslens/selftest.hpp"
#include "doctest.h"

using namespace biaslens;

namespace {

SimilarityMatrix named(Matrix values) {
  SimilarityMatrix s;
  for (std::size_t i = 0; i < values.rows(); ++i) s.layer_names.push_back("l" + std::to_string(i));
  s.values = std::move(values);
  return s;
}

std::vector<ActivationTrace> traces_of(Network& net, const Matrix& pool, std::size_t batches) {
  net.set_mode(Mode::Eval);
  const std::size_t per = pool.rows() / batches;
  std::vector<ActivationTrace> out;
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<std::size_t> idx(per);
    for (std::size_t i = 0; i < per; ++i) idx[i] = b * per + i;
    out.push_back(*net.forward(gather_rows(pool, idx), true).trace);
  }
  return out;
}

}  // namespace

TEST_CASE("gram_linear") {
  CHECK(gram_linear(Matrix::identity(2)).values == Matrix::identity(2));
  CHECK(gram_linear(Matrix::from_rows({{1, 2}})).values == Matrix(1, 1, 5.0));
  Rng rng(1);
  const Matrix x = oracle::random_matrix(6, 3, rng);
  const Gram k = gram_linear(x);
  CHECK(max_abs(subtract(k.values, oracle::naive_gram(x))) <= 1e-12);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(k.values(i, j) - k.values(j, i)) <= 1e-12);
}

TEST_CASE("hsic_unbiased") {
  Rng rng(2);
  const Gram k = gram_linear(oracle::random_matrix(8, 4, rng));
  Matrix constant(8, 3);
  for (std::size_t i = 0; i < 8; ++i) constant.row(i)[0] = 1.5, constant.row(i)[1] = -2, constant.row(i)[2] = 0.25;
  CHECK(std::abs(hsic_unbiased(k, gram_linear(constant))) <= 1e-12);
  for (int t = 0; t < 20; ++t) {
    const Gram a = gram_linear(oracle::random_matrix(8, 3, rng));
    const Gram b = gram_linear(oracle::random_matrix(8, 5, rng));
    CHECK(hsic_unbiased(a, a) >= 0.0);
    CHECK(std::abs(hsic_unbiased(a, b) - oracle::naive_hsic_unbiased(a.values, b.values)) <= 1e-10);
  }
  CHECK_THROWS_AS(hsic_unbiased(gram_linear(Matrix(3, 2, 1.0)), gram_linear(Matrix(3, 2, 1.0))), ArgumentError);
  CHECK_THROWS_AS(hsic_unbiased(k, gram_linear(Matrix(9, 2, 1.0))), ShapeError);
}

TEST_CASE("cka_full invariances") {
  Rng rng(3);
  const Matrix x = oracle::random_matrix(30, 5, rng);
  CHECK(std::abs(cka_full(x, x) - 1) <= 1e-10);
  CHECK(std::abs(cka_full(x, matmul(x, oracle::random_orthogonal(5, rng))) - 1) <= 1e-10);
  CHECK(std::abs(cka_full(x, scale(x, 3.7)) - 1) <= 1e-10);
  // Wide features take the Gram route; the value must not depend on it.
  const Matrix wide = oracle::random_matrix(10, 40, rng);
  const Matrix wide2 = add(wide, oracle::random_matrix(10, 40, rng, 0.3));
  const double v = cka_full(wide, wide2);
  CHECK(v > 0.5);
  CHECK(v <= 1.0);
  CHECK_THROWS_AS(cka_full(x, Matrix(30, 2, 4.0)), DegenerateInputError);
  const SuiteResult s = cka_property_suite(10, 4);
  CHECK(s.ok());
}

TEST_CASE("cka_full is not invariant to general linear maps") {
  Rng rng(13);
  bool found = false;
  for (int t = 0; t < 10 && !found; ++t) {
    const Matrix x = oracle::random_matrix(40, 5, rng);
    found = cka_full(x, matmul(x, oracle::random_matrix(5, 5, rng))) < 0.999;
  }
  CHECK(found);
}

TEST_CASE("cka_minibatch") {
  Rng rng(5);
  const Matrix x = oracle::random_matrix(64, 6, rng);
  const Matrix y = add(matmul(x, oracle::random_matrix(6, 3, rng)), oracle::random_matrix(64, 3, rng));
  const std::vector<Matrix> xs{x}, ys{y};
  const Gram k = gram_linear(x), l = gram_linear(y);
  const double ratio = hsic_unbiased(k, l) / std::sqrt(hsic_unbiased(k, k) * hsic_unbiased(l, l));
  CHECK(cka_minibatch(xs, ys) == doctest::Approx(ratio).epsilon(1e-12));
  CHECK(cka_unbiased(x, y) == doctest::Approx(ratio).epsilon(1e-12));
  const std::vector<Matrix> parts{oracle::random_matrix(16, 4, rng), oracle::random_matrix(16, 4, rng)};
  CHECK(std::abs(cka_minibatch(parts, parts) - 1) <= 1e-10);
  const std::vector<Matrix> flat{Matrix(16, 4, 1.0)};
  const std::vector<Matrix> one{parts[0]};
  CHECK_THROWS_AS(cka_minibatch(one, flat), DegenerateInputError);
  const std::vector<Matrix> xs2{x, parts[0]}, ys2{y, parts[1]};
  const std::vector<Matrix> xs2r{parts[0], x}, ys2r{parts[1], y};
  CHECK(std::abs(cka_minibatch(xs2, ys2) - cka_minibatch(xs2r, ys2r)) <= 1e-15);
  const SuiteResult s = minibatch_consistency_suite(10, 6);
  MESSAGE("mean gap " << s.worst);
  CHECK(s.ok());
}

TEST_CASE("layer_similarity on duplicated layers and shape") {
  Network net(NetworkConfig::parse("input=3x4x4;classes=4;layers=conv:4:3:1,relu,relu,gap,dense:4"), 7);
  Rng rng(8);
  const auto traces = traces_of(net, oracle::random_matrix(64, 48, rng), 4);
  const SimilarityMatrix s = layer_similarity(traces);
  REQUIRE(s.size() == 5);
  CHECK(s.layer_names[1] == "relu1");
  CHECK(s.layer_names[2] == "relu2");
  CHECK(std::abs(s.values(1, 2) - 1) <= 1e-8);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(s.values(i, i) == 1.0);
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(s.values(i, j) - s.values(j, i)) <= 1e-8);
  }
}

TEST_CASE("layer_similarity agrees with full-batch CKA") {
  Network net(NetworkConfig::parse("input=2x5x5;classes=3;layers=conv:4:3:1,relu,gap,dense:3"), 9);
  Rng rng(10);
  const Matrix pool = oracle::random_matrix(1024, 50, rng);
  const auto traces = traces_of(net, pool, 4);
  const SimilarityMatrix s = layer_similarity(traces);
  net.set_mode(Mode::Eval);
  const ActivationTrace whole = *net.forward(pool, true).trace;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      INFO(i << "," << j);
      CHECK(std::abs(s.values(i, j) - cka_full(whole[i].activation, whole[j].activation)) <= 0.05);
    }
}

TEST_CASE("layer_similarity edge cases") {
  Rng rng(11);
  ActivationTrace t{{"a", oracle::random_matrix(8, 3, rng)}, {"b", Matrix(8, 2, 1.0)}};
  const std::vector<ActivationTrace> one{t};
  const SimilarityMatrix s = layer_similarity(one);
  CHECK(s.values(0, 1) == 0.0);
  CHECK(s.values(1, 1) == 1.0);
  ActivationTrace other{{"a", oracle::random_matrix(8, 3, rng)}, {"c", oracle::random_matrix(8, 2, rng)}};
  const std::vector<ActivationTrace> mixed{t, other};
  CHECK_THROWS_AS(layer_similarity(mixed), ArgumentError);
}

TEST_CASE("structure report on hand-built matrices") {
  const StructureReport id = structure_report(named(Matrix::identity(6)));
  CHECK(id.block_score == 0.0);
  CHECK(id.progressive_score > 0.0);

  const StructureReport ones = structure_report(named(Matrix(6, 6, 1.0)));
  CHECK(ones.block_score == 1.0);
  CHECK(ones.progressive_score == 0.0);

  Matrix tail(10, 10, 0.2);
  for (std::size_t i = 6; i < 10; ++i)
    for (std::size_t j = 6; j < 10; ++j) tail(i, j) = 0.95;
  for (std::size_t i = 0; i < 10; ++i) tail(i, i) = 1.0;
  const StructureReport t = structure_report(named(tail), 0.9);
  CHECK(t.block_score == 0.4);
  CHECK(t.block_start == 6);
  CHECK(t.block_size == 4);

  Matrix decay(5, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) decay(i, j) = 1.0 / (1.0 + std::abs(static_cast<double>(i) - static_cast<double>(j)));
  CHECK(structure_report(named(decay)).progressive_score == doctest::Approx(1.0));
  CHECK_THROWS_AS(structure_report(named(Matrix::identity(2))), ArgumentError);
}

TEST_CASE("spearman") {
  const std::vector<double> a{1, 2, 3, 4}, b{10, 20, 30, 40}, c{4, 3, 2, 1}, k{5, 5, 5, 5};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(spearman(a, c) == doctest::Approx(-1.0));
  CHECK(spearman(a, k) == 0.0);
  const std::vector<double> tied{1, 1, 2, 3};
  CHECK(spearman(tied, a) == doctest::Approx(0.9486832980505138));
}

TEST_CASE("text grid round trip") {
  Rng rng(12);
  SimilarityMatrix s = named(oracle::random_matrix(4, 4, rng));
  s.layer_names = {"conv1", "bn1", "block1.out", "dense1"};
  const std::string text = to_text_grid(s);
  const SimilarityMatrix back = parse_text_grid(text);
  CHECK(back.layer_names == s.layer_names);
  CHECK(to_text_grid(back) == text);
  CHECK(max_abs(subtract(back.values, s.values)) <= 1e-8);
  CHECK_THROWS(parse_text_grid("a b\n1 2\n"));
}
