#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "biaslens/layers.hpp"
#include "biaslens/matrix.hpp"

namespace biaslens {

struct AdamConfig {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Weight decay is applied with the learning rate,
/// alongside the adaptive step:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Moments are created on the first call and must keep matching shapes afterwards.
  void step(std::span<Parameter* const> params);
  void step(std::span<Matrix> params, std::span<const Matrix> grads);

  const AdamConfig& config() const noexcept { return config_; }
  std::size_t step_count() const noexcept { return steps_; }
  const std::vector<Matrix>& first_moments() const noexcept { return m_; }
  const std::vector<Matrix>& second_moments() const noexcept { return v_; }

 private:
  void ensure_state(std::span<const Matrix> params);
  void update(std::size_t index, Matrix& theta, const Matrix& grad, double corr1, double corr2);

  AdamConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t steps_ = 0;
};

}  // namespace biaslens
