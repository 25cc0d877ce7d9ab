#include "biaslens/network.hpp"

#include <charconv>
#include <sstream>

#include "biaslens/errors.hpp"

namespace biaslens {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::size_t parse_count(std::string_view s, std::string_view what) {
  std::size_t v = 0;
  s = trim(s);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ArgumentError("network config: bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

double parse_real(std::string_view s, std::string_view what) {
  s = trim(s);
  std::string tmp(s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tmp, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tmp.size() || tmp.empty()) {
    throw ArgumentError("network config: bad " + std::string(what) + " '" + tmp + "'");
  }
  return v;
}

LayerDesc parse_layer(std::string_view token) {
  const auto parts = split(trim(token), ':');
  const std::string_view kind = parts[0];
  auto arg = [&](std::size_t i) -> std::optional<std::string_view> {
    if (i < parts.size()) return parts[i];
    return std::nullopt;
  };
  auto require_arity = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() - 1 < lo || parts.size() - 1 > hi) {
      throw ArgumentError("network config: wrong argument count for '" + std::string(token) + "'");
    }
  };
  if (kind == "conv") {
    require_arity(1, 3);
    ConvDesc d;
    d.out_channels = parse_count(*arg(1), "conv channels");
    if (arg(2)) d.kernel = parse_count(*arg(2), "conv kernel");
    if (arg(3)) d.stride = parse_count(*arg(3), "conv stride");
    return d;
  }
  if (kind == "bn") {
    require_arity(0, 0);
    return BatchNormDesc{};
  }
  if (kind == "relu") {
    require_arity(0, 0);
    return ReluDesc{};
  }
  if (kind == "res") {
    require_arity(1, 2);
    ResidualDesc d;
    d.out_channels = parse_count(*arg(1), "residual channels");
    if (arg(2)) d.stride = parse_count(*arg(2), "residual stride");
    return d;
  }
  if (kind == "gap") {
    require_arity(0, 0);
    return GlobalAvgPoolDesc{};
  }
  if (kind == "dropout") {
    require_arity(0, 1);
    DropoutDesc d;
    if (arg(1)) d.rate = parse_real(*arg(1), "dropout rate");
    return d;
  }
  if (kind == "dense") {
    require_arity(1, 1);
    return DenseDesc{parse_count(*arg(1), "dense width")};
  }
  throw ArgumentError("network config: unknown layer '" + std::string(kind) + "'");
}

std::string layer_string(const LayerDesc& d) {
  std::ostringstream os;
  std::visit(overloaded{
                 [&](const ConvDesc& c) { os << "conv:" << c.out_channels << ':' << c.kernel << ':' << c.stride; },
                 [&](const BatchNormDesc&) { os << "bn"; },
                 [&](const ReluDesc&) { os << "relu"; },
                 [&](const ResidualDesc& r) { os << "res:" << r.out_channels << ':' << r.stride; },
                 [&](const GlobalAvgPoolDesc&) { os << "gap"; },
                 [&](const DropoutDesc& r) {
                   os.precision(17);
                   os << "dropout:" << r.rate;
                 },
                 [&](const DenseDesc& r) { os << "dense:" << r.out_dim; },
             },
             d);
  return os.str();
}

// Instantiates the stack. Layer names are type-prefixed and numbered per type.
std::vector<std::unique_ptr<Layer>> build_layers(const NetworkConfig& cfg, Rng& init) {
  std::vector<std::unique_ptr<Layer>> layers;
  TensorShape shape = cfg.input_shape;
  std::size_t convs = 0, bns = 0, relus = 0, blocks = 0, pools = 0, drops = 0, denses = 0;
  for (const auto& desc : cfg.layers) {
    std::unique_ptr<Layer> layer = std::visit(
        overloaded{
            [&](const ConvDesc& c) -> std::unique_ptr<Layer> {
              return std::make_unique<Conv2d>("conv" + std::to_string(++convs), shape, c.out_channels, c.kernel,
                                              c.stride, init);
            },
            [&](const BatchNormDesc&) -> std::unique_ptr<Layer> {
              return std::make_unique<BatchNorm>("bn" + std::to_string(++bns), shape);
            },
            [&](const ReluDesc&) -> std::unique_ptr<Layer> {
              return std::make_unique<Relu>("relu" + std::to_string(++relus), shape);
            },
            [&](const ResidualDesc& r) -> std::unique_ptr<Layer> {
              return std::make_unique<ResidualBlock>("block" + std::to_string(++blocks), shape, r.out_channels,
                                                     r.stride, init);
            },
            [&](const GlobalAvgPoolDesc&) -> std::unique_ptr<Layer> {
              return std::make_unique<GlobalAvgPool>("gap" + std::to_string(++pools), shape);
            },
            [&](const DropoutDesc& d) -> std::unique_ptr<Layer> {
              return std::make_unique<Dropout>("dropout" + std::to_string(++drops), shape, d.rate);
            },
            [&](const DenseDesc& d) -> std::unique_ptr<Layer> {
              return std::make_unique<Dense>("dense" + std::to_string(++denses), shape, d.out_dim, init);
            },
        },
        desc);
    shape = layer->output_shape();
    layers.push_back(std::move(layer));
  }
  return layers;
}

}  // namespace

NetworkConfig NetworkConfig::mini_resnet(TensorShape input, std::size_t classes, std::size_t width, double dropout,
                                         std::size_t blocks) {
  if (blocks == 0) throw ArgumentError("mini_resnet: need at least one residual block");
  NetworkConfig cfg;
  cfg.input_shape = input;
  cfg.num_classes = classes;
  cfg.layers = {ConvDesc{width, 3, 2}, BatchNormDesc{}, ReluDesc{}};
  std::size_t channels = width;
  for (std::size_t b = 0; b < blocks; ++b) {
    if (b == 0) {
      cfg.layers.push_back(ResidualDesc{channels, 1});
    } else {
      channels *= 2;
      cfg.layers.push_back(ResidualDesc{channels, 2});
    }
  }
  cfg.layers.push_back(GlobalAvgPoolDesc{});
  if (dropout > 0.0) cfg.layers.push_back(DropoutDesc{dropout});
  cfg.layers.push_back(DenseDesc{classes});
  cfg.validate();
  return cfg;
}

NetworkConfig NetworkConfig::parse(std::string_view text) {
  NetworkConfig cfg;
  bool have_input = false, have_classes = false, have_layers = false;
  for (std::string_view field : split(trim(text), ';')) {
    field = trim(field);
    if (field.empty()) continue;
    const std::size_t eq = field.find('=');
    if (eq == std::string_view::npos) throw ArgumentError("network config: expected key=value in '" + std::string(field) + "'");
    const std::string_view key = trim(field.substr(0, eq));
    const std::string_view value = trim(field.substr(eq + 1));
    if (key == "input") {
      const auto dims = split(value, 'x');
      if (dims.size() != 3) throw ArgumentError("network config: input must be CxHxW");
      cfg.input_shape = {parse_count(dims[0], "channels"), parse_count(dims[1], "height"),
                         parse_count(dims[2], "width")};
      have_input = true;
    } else if (key == "classes") {
      cfg.num_classes = parse_count(value, "classes");
      have_classes = true;
    } else if (key == "layers") {
      for (std::string_view tok : split(value, ',')) cfg.layers.push_back(parse_layer(tok));
      have_layers = true;
    } else {
      throw ArgumentError("network config: unknown key '" + std::string(key) + "'");
    }
  }
  if (!have_input || !have_classes || !have_layers) {
    throw ArgumentError("network config: input, classes and layers are all required");
  }
  cfg.validate();
  return cfg;
}

std::string NetworkConfig::to_string() const {
  std::string s = "input=" + input_shape.str() + ";classes=" + std::to_string(num_classes) + ";layers=";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0) s += ',';
    s += layer_string(layers[i]);
  }
  return s;
}

void NetworkConfig::validate() const {
  if (input_shape.size() == 0) throw ShapeError("network config: empty input shape");
  if (num_classes < 2) throw ArgumentError("network config: need at least two classes");
  if (layers.empty()) throw ArgumentError("network config: no layers");
  Rng scratch(0);
  const auto built = build_layers(*this, scratch);
  const TensorShape out = built.back()->output_shape();
  if (out.size() != num_classes || out.spatial() != 1) {
    throw ShapeError("network config: final output " + out.str() + " does not match " + std::to_string(num_classes) +
                     " classes");
  }
}

Network::Network(NetworkConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  Rng init(init_seed);
  layers_ = build_layers(config_, init);
}

Network::Network(const Network& other) : Network(other.config_, 0) {
  restore(other.snapshot());
  mode_ = other.mode_;
  dropout_rng_ = other.dropout_rng_;
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Network::ForwardResult Network::forward(const Matrix& batch, bool capture) {
  if (batch.cols() != config_.input_shape.size()) {
    throw ShapeError("network forward: batch " + batch.shape_string() + " does not match input shape " +
                     config_.input_shape.str());
  }
  ForwardResult result;
  if (capture) result.trace.emplace();
  ForwardContext ctx{mode_, &dropout_rng_, capture ? &*result.trace : nullptr};
  Matrix h = batch;
  for (auto& layer : layers_) h = layer->forward(h, ctx);
  result.logits = std::move(h);
  has_forward_ = true;
  return result;
}

void Network::backward(const Matrix& loss_grad) {
  if (!has_forward_) throw StateError("network backward: no cached forward pass");
  zero_grad();
  Matrix g = loss_grad;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  has_forward_ = false;
}

void Network::zero_grad() {
  for (Parameter* p : parameters()) p->grad.fill(0.0);
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : tensors()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> Network::tensors() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) layer->collect(out);
  return out;
}

std::vector<const Parameter*> Network::tensors() const {
  std::vector<const Parameter*> out;
  for (const auto& layer : layers_) static_cast<const Layer&>(*layer).collect(out);
  return out;
}

std::vector<Matrix> Network::snapshot() const {
  std::vector<Matrix> out;
  for (const Parameter* p : tensors()) out.push_back(p->value);
  return out;
}

void Network::restore(const std::vector<Matrix>& values) {
  auto ts = tensors();
  if (values.size() != ts.size()) throw ShapeError("network restore: tensor count mismatch");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (values[i].rows() != ts[i]->value.rows() || values[i].cols() != ts[i]->value.cols()) {
      throw ShapeError("network restore: shape mismatch for " + ts[i]->name);
    }
    ts[i]->value = values[i];
  }
}

}  // namespace biaslens
