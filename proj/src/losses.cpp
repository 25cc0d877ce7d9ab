#include "biaslens/losses.hpp"

#include <algorithm>
#include <cmath>

#include "biaslens/errors.hpp"

namespace biaslens {

namespace {

void require_match(const Matrix& fv, const Targets& y) {
  if (fv.rows() != y.rows() || fv.cols() != y.classes()) {
    throw ShapeError("loss: outputs " + fv.shape_string() + " do not match targets " + y.one_hot().shape_string());
  }
  if (fv.rows() == 0) throw ShapeError("loss: empty batch");
}

double log_sum_exp(std::span<const double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  return m + std::log(s);
}

// log(1 + e^x) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Pulls a per-sample gradient w.r.t. softmax probabilities back to the logits:
// dL/dz_j = p_j * (g_j - sum_c g_c p_c).
void softmax_vjp(std::span<const double> p, std::span<double> g) {
  double dot = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) dot += g[c] * p[c];
  for (std::size_t c = 0; c < p.size(); ++c) g[c] = p[c] * (g[c] - dot);
}

}  // namespace

std::string_view loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::SCE: return "sce";
    case LossKind::BCE: return "bce";
    case LossKind::NLL: return "nll";
    case LossKind::L1: return "l1";
    case LossKind::L2: return "l2";
    case LossKind::SoS: return "sos";
  }
  return "?";
}

std::optional<LossKind> parse_loss_kind(std::string_view name) {
  for (LossKind k : kAllLosses) {
    if (loss_name(k) == name) return k;
  }
  return std::nullopt;
}

Targets::Targets(Matrix one_hot) : one_hot_(std::move(one_hot)) {
  for (std::size_t i = 0; i < one_hot_.rows(); ++i) {
    int ones = 0;
    for (double v : one_hot_.row(i)) {
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw DataError("targets: entries must be 0 or 1");
      }
    }
    if (ones != 1) throw DataError("targets: row " + std::to_string(i) + " must contain exactly one 1");
  }
}

Targets Targets::from_labels(std::span<const int> labels, std::size_t num_classes) {
  Matrix m(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DataError("targets: label " + std::to_string(labels[i]) + " out of range");
    }
    m(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return Targets(std::move(m));
}

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto in = logits.row(i);
    auto o = out.row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - m);
      s += o[c];
    }
    for (double& v : o) v /= s;
  }
  return out;
}

Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto in = logits.row(i);
    const double lse = log_sum_exp(in);
    auto o = out.row(i);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] - lse;
  }
  return out;
}

Matrix sigmoid(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return out;
}

LossResult loss_sce(const Matrix& fv, const Targets& y) {
  require_match(fv, y);
  const double n = static_cast<double>(fv.rows());
  LossResult r{0.0, softmax(fv)};
  for (std::size_t i = 0; i < fv.rows(); ++i) {
    const auto t = y.one_hot().row(i);
    const double lse = log_sum_exp(fv.row(i));
    auto g = r.grad.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) {
      r.value += t[c] * (lse - fv(i, c));
      g[c] = (g[c] - t[c]) / n;
    }
  }
  r.value /= n;
  return r;
}

LossResult loss_nll(const Matrix& fv, const Targets& y) {
  require_match(fv, y);
  const double n = static_cast<double>(fv.rows());
  const Matrix logp = log_softmax(fv);
  LossResult r{0.0, Matrix(fv.rows(), fv.cols())};
  for (std::size_t i = 0; i < fv.rows(); ++i) {
    const auto t = y.one_hot().row(i);
    const auto lp = logp.row(i);
    double mass = 0.0;
    for (std::size_t c = 0; c < t.size(); ++c) {
      r.value -= t[c] * lp[c];
      mass += t[c];
    }
    auto g = r.grad.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = (std::exp(lp[c]) * mass - t[c]) / n;
  }
  r.value /= n;
  return r;
}

LossResult loss_bce(const Matrix& fv, const Targets& y) {
  require_match(fv, y);
  const double n = static_cast<double>(fv.rows());
  LossResult r{0.0, sigmoid(fv)};
  for (std::size_t i = 0; i < fv.size(); ++i) {
    const double t = y.one_hot()[i];
    // -[t log s(x) + (1 - t) log(1 - s(x))] == softplus(x) - t x
    r.value += softplus(fv[i]) - t * fv[i];
    r.grad[i] = (r.grad[i] - t) / n;
  }
  r.value /= n;
  return r;
}

LossResult loss_l1(const Matrix& fv, const Targets& y) {
  require_match(fv, y);
  const double n = static_cast<double>(fv.rows());
  const Matrix p = softmax(fv);
  LossResult r{0.0, Matrix(fv.rows(), fv.cols())};
  for (std::size_t i = 0; i < fv.rows(); ++i) {
    const auto t = y.one_hot().row(i);
    const auto pi = p.row(i);
    auto g = r.grad.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) {
      r.value += std::abs(t[c] - pi[c]);
      g[c] = sign(pi[c] - t[c]) / n;
    }
    softmax_vjp(pi, g);
  }
  r.value /= n;
  return r;
}

LossResult loss_l2(const Matrix& fv, const Targets& y) {
  require_match(fv, y);
  const double n = static_cast<double>(fv.rows());
  const Matrix p = softmax(fv);
  LossResult r{0.0, Matrix(fv.rows(), fv.cols())};
  for (std::size_t i = 0; i < fv.rows(); ++i) {
    const auto t = y.one_hot().row(i);
    const auto pi = p.row(i);
    auto g = r.grad.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double d = pi[c] - t[c];
      r.value += d * d;
      g[c] = 2.0 * d / n;
    }
    softmax_vjp(pi, g);
  }
  r.value /= n;
  return r;
}

LossResult loss_sos(const Matrix& fv, const Targets& y, double alpha, double beta) {
  if (!(alpha > 0.0)) throw ArgumentError("loss_sos: alpha must be positive");
  require_match(fv, y);
  const double n = static_cast<double>(fv.rows());
  const double classes = static_cast<double>(fv.cols());
  LossResult r{0.0, Matrix(fv.rows(), fv.cols())};
  for (std::size_t i = 0; i < fv.size(); ++i) {
    const double t = y.one_hot()[i];
    const double x = fv[i];
    const double shifted = x - beta;
    r.value += alpha * t * shifted * shifted + (1.0 - t) * x * x;
    r.grad[i] = 2.0 / (n * classes) * (alpha * t * shifted + (1.0 - t) * x);
  }
  r.value /= n * classes;
  return r;
}

LossResult compute_loss(const LossSpec& spec, const Matrix& fv, const Targets& y) {
  switch (spec.kind) {
    case LossKind::SCE: return loss_sce(fv, y);
    case LossKind::BCE: return loss_bce(fv, y);
    case LossKind::NLL: return loss_nll(fv, y);
    case LossKind::L1: return loss_l1(fv, y);
    case LossKind::L2: return loss_l2(fv, y);
    case LossKind::SoS: return loss_sos(fv, y, spec.alpha, spec.beta);
  }
  throw ArgumentError("unknown loss kind");
}

Matrix finite_diff_grad(const LossSpec& spec, const Matrix& fv, const Targets& y, double h) {
  if (!(h >= 1e-8 && h <= 1e-3)) throw ArgumentError("finite_diff_grad: h must lie in [1e-8, 1e-3]");
  Matrix probe = fv;
  Matrix grad(fv.rows(), fv.cols());
  for (std::size_t i = 0; i < fv.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = compute_loss(spec, probe, y).value;
    probe[i] = orig - h;
    const double down = compute_loss(spec, probe, y).value;
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace biaslens
