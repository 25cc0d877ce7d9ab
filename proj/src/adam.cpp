#include "biaslens/adam.hpp"

#include <cmath>

#include "biaslens/errors.hpp"

namespace biaslens {

void Adam::ensure_state(std::span<const Matrix> params) {
  if (m_.empty()) {
    for (const Matrix& p : params) {
      m_.emplace_back(p.rows(), p.cols());
      v_.emplace_back(p.rows(), p.cols());
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter count changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m_[i].rows() != params[i].rows() || m_[i].cols() != params[i].cols()) {
      throw ShapeError("adam: parameter " + std::to_string(i) + " changed shape");
    }
  }
}

void Adam::update(std::size_t index, Matrix& theta, const Matrix& grad, double corr1, double corr2) {
  if (grad.rows() != theta.rows() || grad.cols() != theta.cols()) {
    throw ShapeError("adam: gradient " + grad.shape_string() + " does not match parameter " + theta.shape_string());
  }
  Matrix& m = m_[index];
  Matrix& v = v_[index];
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
    v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
    const double m_hat = m[i] / corr1;
    const double v_hat = v[i] / corr2;
    theta[i] -= config_.lr * (m_hat / (std::sqrt(v_hat) + config_.eps) + config_.weight_decay * theta[i]);
  }
}

void Adam::step(std::span<Parameter* const> params) {
  std::vector<Matrix> shapes;
  if (m_.empty()) {
    for (const Parameter* p : params) shapes.push_back(p->value);
    ensure_state(shapes);
  } else if (m_.size() != params.size()) {
    throw ShapeError("adam: parameter count changed between steps");
  }
  ++steps_;
  const double corr1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double corr2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) update(i, params[i]->value, params[i]->grad, corr1, corr2);
}

void Adam::step(std::span<Matrix> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient counts differ");
  ensure_state(params);
  ++steps_;
  const double corr1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double corr2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) update(i, params[i], grads[i], corr1, corr2);
}

}  // namespace biaslens
