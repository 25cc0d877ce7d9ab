#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "biaslens/matrix.hpp"
#include "biaslens/rng.hpp"

namespace biaslens {

/// Per-sample activation shape. Activations travel as n x (channels*height*width)
/// matrices, channel-major within a row.
struct TensorShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const noexcept { return channels * height * width; }
  std::size_t spatial() const noexcept { return height * width; }
  std::string str() const;
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

enum class Mode { Train, Eval };

/// A named tensor owned by a layer. Running statistics are stored as
/// non-trainable parameters so checkpoints and snapshots pick them up.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
};

struct TraceEntry {
  std::string layer_name;
  Matrix activation;  // n x d, spatial dims flattened
};
using ActivationTrace = std::vector<TraceEntry>;

struct ForwardContext {
  Mode mode = Mode::Eval;
  Rng* rng = nullptr;                // dropout masks; required in train mode
  ActivationTrace* trace = nullptr;  // filled when non-null
};

class Layer {
 public:
  Layer(std::string name, TensorShape input, bool capture) : name_(std::move(name)), input_(input), capture_(capture) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const noexcept { return name_; }
  TensorShape input_shape() const noexcept { return input_; }
  virtual TensorShape output_shape() const = 0;

  virtual Matrix forward(const Matrix& x, ForwardContext& ctx) = 0;
  /// Accumulates parameter gradients and returns d loss / d input.
  /// Throws StateError when no forward pass has been cached.
  virtual Matrix backward(const Matrix& grad_out) = 0;

  virtual void collect(std::vector<Parameter*>& /*out*/) {}
  virtual void collect(std::vector<const Parameter*>& /*out*/) const {}

 protected:
  void record(const ForwardContext& ctx, const Matrix& y) const;
  void require_cache(bool cached) const;

  std::string name_;
  TensorShape input_;
  bool capture_;
};

/// Zero-padded ("same" for odd kernels) 2-D convolution.
class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, TensorShape input, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         Rng& init, bool capture = true);

  TensorShape output_shape() const override { return output_; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect(std::vector<const Parameter*>& out) const override;

  Parameter& weight() { return weight_; }  // out_channels x (in_channels * k * k)
  Parameter& bias() { return bias_; }      // 1 x out_channels

 private:
  Matrix im2col(std::span<const double> sample) const;

  TensorShape output_;
  std::size_t kernel_;
  std::size_t stride_;
  std::vector<std::ptrdiff_t> gather_;  // (K*P) source offsets, -1 for padding
  Parameter weight_;
  Parameter bias_;
  Matrix input_cache_;
  bool cached_ = false;
};

/// Per-channel batch normalization (momentum 0.9 running stats, eps 1e-5).
class BatchNorm final : public Layer {
 public:
  static constexpr double kMomentum = 0.9;
  static constexpr double kEpsilon = 1e-5;

  BatchNorm(std::string name, TensorShape input, bool capture = true);

  TensorShape output_shape() const override { return input_; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect(std::vector<const Parameter*>& out) const override;

  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  Parameter& running_mean() { return running_mean_; }
  Parameter& running_var() { return running_var_; }

 private:
  Parameter gamma_;
  Parameter beta_;
  Parameter running_mean_;
  Parameter running_var_;
  Matrix xhat_;
  std::vector<double> inv_std_;
  Mode cached_mode_ = Mode::Eval;
  bool cached_ = false;
};

class Relu final : public Layer {
 public:
  Relu(std::string name, TensorShape input, bool capture = true) : Layer(std::move(name), input, capture) {}

  TensorShape output_shape() const override { return input_; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;

 private:
  std::vector<bool> active_;
  bool cached_ = false;
};

/// Inverted dropout: kept units are scaled by 1/(1-rate) in train mode; identity in eval mode.
class Dropout final : public Layer {
 public:
  Dropout(std::string name, TensorShape input, double rate, bool capture = false);

  TensorShape output_shape() const override { return input_; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;

 private:
  double rate_;
  std::vector<double> mask_;
  bool cached_ = false;
};

class GlobalAvgPool final : public Layer {
 public:
  GlobalAvgPool(std::string name, TensorShape input, bool capture = true) : Layer(std::move(name), input, capture) {}

  TensorShape output_shape() const override { return {input_.channels, 1, 1}; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;

 private:
  std::size_t batch_ = 0;
  bool cached_ = false;
};

/// Fully connected layer over the flattened input: y = x W + b.
class Dense final : public Layer {
 public:
  Dense(std::string name, TensorShape input, std::size_t out_dim, Rng& init, bool capture = true);

  TensorShape output_shape() const override { return {out_dim_, 1, 1}; }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect(std::vector<const Parameter*>& out) const override;

  Parameter& weight() { return weight_; }  // in x out
  Parameter& bias() { return bias_; }      // 1 x out

 private:
  std::size_t out_dim_;
  Parameter weight_;
  Parameter bias_;
  Matrix input_cache_;
  bool cached_ = false;
};

/// Basic residual block: relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x)).
/// The shortcut is the identity unless the stride or channel count changes,
/// in which case it is a 1x1 strided convolution followed by batchnorm.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(std::string name, TensorShape input, std::size_t out_channels, std::size_t stride, Rng& init);

  TensorShape output_shape() const override { return conv2_.output_shape(); }
  Matrix forward(const Matrix& x, ForwardContext& ctx) override;
  Matrix backward(const Matrix& grad_out) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect(std::vector<const Parameter*>& out) const override;

  bool has_projection() const noexcept { return projection_ != nullptr; }
  Conv2d& conv1() { return conv1_; }
  Conv2d& conv2() { return conv2_; }

 private:
  Conv2d conv1_;
  BatchNorm bn1_;
  Relu relu1_;
  Conv2d conv2_;
  BatchNorm bn2_;
  std::unique_ptr<Conv2d> projection_;
  std::unique_ptr<BatchNorm> projection_bn_;
  Relu out_;
};

}  // namespace biaslens
