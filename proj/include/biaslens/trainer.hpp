#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "biaslens/adam.hpp"
#include "biaslens/losses.hpp"
#include "biaslens/network.hpp"

namespace biaslens {

/// Inputs (n x features) with integer class labels.
struct LabeledData {
  Matrix inputs;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct Schedule {
  std::size_t batch_size = 512;
  std::size_t max_epochs = 100;
  std::size_t patience = 12;
  std::uint64_t seed = 1;
  AdamConfig adam;
};

enum class StopReason { MaxEpochs, EarlyStopping };
std::string_view stop_reason_name(StopReason r);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  StopReason stop_reason = StopReason::MaxEpochs;
  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

/// Tracks the best validation accuracy. Only strict improvements reset the
/// counter; update() returns true once `patience` epochs pass without one.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  bool update(std::size_t epoch, double val_accuracy);
  bool improved() const noexcept { return improved_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_ = -1.0;
  bool improved_ = false;
};

/// Mini-batch training with Adam, early stopping on validation accuracy,
/// and restoration of the best epoch's parameters. Fully determined by the
/// network's initial state and schedule.seed.
TrainReport train(Network& net, const LabeledData& train_split, const LabeledData& val_split, const LossSpec& loss,
                  const Schedule& schedule);

/// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
/// Runs in eval mode and restores the network's previous mode.
double evaluate(Network& net, const LabeledData& split, std::size_t batch_size = 256);

std::vector<int> predict(Network& net, const Matrix& inputs, std::size_t batch_size = 256);
std::size_t argmax_row(std::span<const double> row);

}  // namespace biaslens
