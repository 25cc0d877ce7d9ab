#include "biaslens/oracles.hpp"

#include <algorithm>
#include <cmath>

#include "biaslens/errors.hpp"

namespace biaslens::oracle {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("naive_matmul: shape mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

Matrix naive_gram(const Matrix& x) {
  Matrix k(x.rows(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.rows(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) s += x(i, c) * x(j, c);
      k(i, j) = s;
    }
  }
  return k;
}

double naive_hsic_unbiased(const Matrix& k, const Matrix& l) {
  const std::size_t n = k.rows();
  Matrix kt = k, lt = l;
  for (std::size_t i = 0; i < n; ++i) {
    kt(i, i) = 0.0;
    lt(i, i) = 0.0;
  }
  const Matrix kl = naive_matmul(kt, lt);
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += kl(i, i);
  double sum_k = 0.0, sum_l = 0.0, sum_kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      sum_k += kt(i, j);
      sum_l += lt(i, j);
      sum_kl += kl(i, j);
    }
  }
  const double nn = static_cast<double>(n);
  const double term2 = sum_k * sum_l / ((nn - 1.0) * (nn - 2.0));
  const double term3 = 2.0 * sum_kl / (nn - 2.0);
  return (trace + term2 - term3) / (nn * (nn - 3.0));
}

double relative_error(const Matrix& a, const Matrix& b, double floor) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("relative_error: shape mismatch");
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return scale == 0.0 ? 0.0 : diff / scale;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double sd) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = sd * rng.normal();
  return m;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
  Matrix a = random_matrix(n, n, rng);
  // Modified Gram-Schmidt on columns.
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < j; ++p) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += a(i, j) * a(i, p);
      for (std::size_t i = 0; i < n; ++i) a(i, j) -= dot * a(i, p);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += a(i, j) * a(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) a(i, j) /= norm;
  }
  return a;
}

std::vector<ParamGradError> network_gradient_check(Network& net, const Matrix& batch, const Targets& targets,
                                                   const LossSpec& loss, double h, double floor) {
  constexpr std::uint64_t kDropoutSeed = 0xF00D;
  const std::vector<Matrix> state = net.snapshot();

  auto batch_loss = [&](bool with_backward) {
    net.set_dropout_seed(kDropoutSeed);
    const auto fwd = net.forward(batch);
    const LossResult r = compute_loss(loss, fwd.logits, targets);
    if (with_backward) net.backward(r.grad);
    return r.value;
  };

  batch_loss(true);
  std::vector<Matrix> analytic;
  for (const Parameter* p : net.parameters()) analytic.push_back(p->grad);
  net.restore(state);

  std::vector<ParamGradError> out;
  auto params = net.parameters();
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix numeric(params[pi]->value.rows(), params[pi]->value.cols());
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double orig = params[pi]->value[i];
      params[pi]->value[i] = orig + h;
      const double up = batch_loss(false);
      net.restore(state);
      params[pi]->value[i] = orig - h;
      const double down = batch_loss(false);
      net.restore(state);
      numeric[i] = (up - down) / (2.0 * h);
    }
    out.push_back({params[pi]->name, relative_error(analytic[pi], numeric, floor), max_abs(subtract(analytic[pi], numeric))});
  }
  return out;
}

}  // namespace biaslens::oracle
