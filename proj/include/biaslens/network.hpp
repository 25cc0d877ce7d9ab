#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "biaslens/layers.hpp"

namespace biaslens {

struct ConvDesc {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};
struct BatchNormDesc {};
struct ReluDesc {};
struct ResidualDesc {
  std::size_t out_channels = 8;
  std::size_t stride = 1;
};
struct GlobalAvgPoolDesc {};
struct DropoutDesc {
  double rate = 0.4;
};
struct DenseDesc {
  std::size_t out_dim = 10;
};

using LayerDesc = std::variant<ConvDesc, BatchNormDesc, ReluDesc, ResidualDesc, GlobalAvgPoolDesc, DropoutDesc, DenseDesc>;

/// Layer stack description. The textual form is
///   input=CxHxW;classes=C;layers=conv:8:3:2,bn,relu,res:16:2,gap,dropout:0.4,dense:10
/// and round-trips through parse()/to_string().
struct NetworkConfig {
  TensorShape input_shape;
  std::size_t num_classes = 10;
  std::vector<LayerDesc> layers;

  /// Stem conv(width, 3, stride 2) + bn + relu, residual blocks of width,
  /// 2*width (stride 2), 4*width (stride 2), global average pooling,
  /// dropout, and a dense head [4*width -> classes].
  static NetworkConfig mini_resnet(TensorShape input, std::size_t classes, std::size_t width = 8,
                                   double dropout = 0.4, std::size_t blocks = 3);

  static NetworkConfig parse(std::string_view text);
  std::string to_string() const;

  /// Throws ShapeError/ArgumentError unless shapes chain to an n x num_classes output.
  void validate() const;
};

/// Mutable network state: layers with their parameters, running stats, and mode.
class Network {
 public:
  struct ForwardResult {
    Matrix logits;
    std::optional<ActivationTrace> trace;
  };

  /// Builds the layer stack and draws He-normal weights from Rng(init_seed).
  Network(NetworkConfig config, std::uint64_t init_seed);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  ~Network() = default;

  const NetworkConfig& config() const noexcept { return config_; }
  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode mode) noexcept { mode_ = mode; }
  void set_dropout_seed(std::uint64_t seed) noexcept { dropout_rng_ = Rng(seed); }

  /// Runs the stack on an n x input_shape.size() batch. In train mode dropout
  /// masks come from the network's dropout rng.
  ForwardResult forward(const Matrix& batch, bool capture = false);

  /// Back-propagates d loss / d logits. Parameter gradients are overwritten
  /// with this batch's gradients. Requires a preceding forward().
  void backward(const Matrix& loss_grad);
  void zero_grad();

  std::vector<Parameter*> parameters();
  /// Every tensor, trainable or not (weights, biases, batchnorm running stats).
  std::vector<Parameter*> tensors();
  std::vector<const Parameter*> tensors() const;

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

  const std::vector<std::unique_ptr<Layer>>& layers() const noexcept { return layers_; }

 private:
  NetworkConfig config_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Mode mode_ = Mode::Train;
  Rng dropout_rng_{0};
  bool has_forward_ = false;
};

}  // namespace biaslens
