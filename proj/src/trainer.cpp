#include "biaslens/trainer.hpp"

#include <algorithm>
#include <numeric>

#include "biaslens/errors.hpp"

namespace biaslens {

std::string_view stop_reason_name(StopReason r) {
  return r == StopReason::MaxEpochs ? "max_epochs" : "early_stopping";
}

bool EarlyStopping::update(std::size_t epoch, double val_accuracy) {
  improved_ = val_accuracy > best_;
  if (improved_) {
    best_ = val_accuracy;
    best_epoch_ = epoch;
  }
  return epoch - best_epoch_ >= patience_;
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

std::vector<int> predict(Network& net, const Matrix& inputs, std::size_t batch_size) {
  const Mode previous = net.mode();
  net.set_mode(Mode::Eval);
  std::vector<int> out;
  out.reserve(inputs.rows());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < inputs.rows(); start += batch_size) {
    const std::size_t end = std::min(inputs.rows(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix logits = net.forward(gather_rows(inputs, idx)).logits;
    for (std::size_t i = 0; i < logits.rows(); ++i) out.push_back(static_cast<int>(argmax_row(logits.row(i))));
  }
  net.set_mode(previous);
  return out;
}

double evaluate(Network& net, const LabeledData& split, std::size_t batch_size) {
  if (split.size() == 0) return 0.0;
  const auto pred = predict(net, split.inputs, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == split.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

TrainReport train(Network& net, const LabeledData& train_split, const LabeledData& val_split, const LossSpec& loss,
                  const Schedule& schedule) {
  if (train_split.size() == 0) throw DataError("train: empty training split");
  if (val_split.size() == 0) throw DataError("train: empty validation split");
  if (train_split.inputs.rows() != train_split.size() || val_split.inputs.rows() != val_split.size()) {
    throw DataError("train: inputs and labels disagree in length");
  }
  if (schedule.batch_size == 0 || schedule.max_epochs == 0) {
    throw ArgumentError("train: batch size and max epochs must be positive");
  }
  const std::size_t classes = net.config().num_classes;

  Rng shuffle_rng(Rng::derive(schedule.seed, 0x5348));
  net.set_dropout_seed(Rng::derive(schedule.seed, 0x4452));
  Adam adam(schedule.adam);
  EarlyStopping stopper(schedule.patience);
  TrainReport report;
  std::vector<Matrix> best_state = net.snapshot();

  for (std::size_t epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    net.set_mode(Mode::Train);
    const auto order = shuffled_indices(train_split.size(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const std::size_t end = std::min(order.size(), start + schedule.batch_size);
      // A trailing batch of one sample has no batch statistics; fold it away.
      if (end - start < 2 && start > 0) break;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (std::size_t i : idx) labels.push_back(train_split.labels[i]);

      const auto fwd = net.forward(gather_rows(train_split.inputs, idx));
      const LossResult lr = compute_loss(loss, fwd.logits, Targets::from_labels(labels, classes));
      net.backward(lr.grad);
      adam.step(net.parameters());

      loss_sum += lr.value * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        correct += static_cast<int>(argmax_row(fwd.logits.row(i))) == labels[i] ? 1 : 0;
      }
      seen += idx.size();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    stats.val_accuracy = evaluate(net, val_split);
    report.epochs.push_back(stats);

    const bool stop = stopper.update(epoch, stats.val_accuracy);
    if (stopper.improved()) best_state = net.snapshot();
    if (stop) {
      report.stop_reason = StopReason::EarlyStopping;
      break;
    }
  }

  net.restore(best_state);
  net.set_mode(Mode::Eval);
  report.best_epoch = stopper.best_epoch();
  report.best_val_accuracy = stopper.best();
  return report;
}

}  // namespace biaslens
