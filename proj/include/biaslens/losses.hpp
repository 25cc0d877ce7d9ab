#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "biaslens/matrix.hpp"

namespace biaslens {

enum class LossKind { SCE, BCE, NLL, L1, L2, SoS };

inline constexpr std::array<LossKind, 6> kAllLosses = {LossKind::SCE, LossKind::BCE, LossKind::NLL,
                                                       LossKind::L1,  LossKind::L2,  LossKind::SoS};

/// Lowercase config name: sce, bce, nll, l1, l2, sos.
std::string_view loss_name(LossKind kind);
std::optional<LossKind> parse_loss_kind(std::string_view name);

/// Objective selection. All losses average over the samples of a batch.
struct LossSpec {
  LossKind kind = LossKind::SCE;
  double alpha = 1.0;  // SoS only
  double beta = 1.0;   // SoS only
};

/// One-hot targets, n x C.
class Targets {
 public:
  /// Throws DataError unless every row holds exactly one 1 and zeros elsewhere.
  explicit Targets(Matrix one_hot);
  static Targets from_labels(std::span<const int> labels, std::size_t num_classes);

  const Matrix& one_hot() const noexcept { return one_hot_; }
  std::size_t rows() const noexcept { return one_hot_.rows(); }
  std::size_t classes() const noexcept { return one_hot_.cols(); }

 private:
  Matrix one_hot_;
};

struct LossResult {
  double value = 0.0;
  Matrix grad;  // d value / d fv, shaped like fv
};

Matrix softmax(const Matrix& logits);
Matrix log_softmax(const Matrix& logits);
Matrix sigmoid(const Matrix& x);

LossResult loss_sce(const Matrix& fv, const Targets& y);
LossResult loss_bce(const Matrix& fv, const Targets& y);
LossResult loss_nll(const Matrix& fv, const Targets& y);
LossResult loss_l1(const Matrix& fv, const Targets& y);
LossResult loss_l2(const Matrix& fv, const Targets& y);
LossResult loss_sos(const Matrix& fv, const Targets& y, double alpha, double beta);

LossResult compute_loss(const LossSpec& spec, const Matrix& fv, const Targets& y);

/// Central-difference gradient of the batch loss with respect to fv.
/// h must lie in [1e-8, 1e-3].
Matrix finite_diff_grad(const LossSpec& spec, const Matrix& fv, const Targets& y, double h);

}  // namespace biaslens
