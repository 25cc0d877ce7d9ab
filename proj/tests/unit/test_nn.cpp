#include <cmath>

#include "biaslens/adam.hpp"
#include "biaslens/errors.hpp"
#include "biaslens/network.hpp"
#include "biaslens/oracles.hpp"
#include "biaslens/trainer.hpp"
#include "doctest.h"

using namespace biaslens;

namespace {

Parameter& find(Network& net, const std::string& name) {
  for (Parameter* p : net.tensors())
    if (p->name == name) return *p;
  FAIL("no tensor " << name);
  throw;
}

Targets random_targets(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> labels(n);
  for (int& l : labels) l = static_cast<int>(rng.index(classes));
  return Targets::from_labels(labels, classes);
}

// Direct "same"-padded convolution of one sample, channel-major layout.
std::vector<double> naive_conv(std::span<const double> x, TensorShape in, const Matrix& w, const Matrix& b,
                               std::size_t k, std::size_t stride, TensorShape out) {
  std::vector<double> y(out.size());
  const long pad = static_cast<long>(k / 2);
  for (std::size_t co = 0; co < out.channels; ++co)
    for (std::size_t oy = 0; oy < out.height; ++oy)
      for (std::size_t ox = 0; ox < out.width; ++ox) {
        double s = b(0, co);
        for (std::size_t ci = 0; ci < in.channels; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - pad;
              const long ix = static_cast<long>(ox * stride + kx) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.height) || ix >= static_cast<long>(in.width)) continue;
              s += w(co, (ci * k + ky) * k + kx) * x[ci * in.spatial() + iy * in.width + ix];
            }
        y[co * out.spatial() + oy * out.width + ox] = s;
      }
  return y;
}

}  // namespace

TEST_CASE("network config text round trip and validation") {
  const NetworkConfig cfg = NetworkConfig::mini_resnet({3, 16, 16}, 10);
  const NetworkConfig back = NetworkConfig::parse(cfg.to_string());
  CHECK(back.to_string() == cfg.to_string());
  CHECK_THROWS_AS(NetworkConfig::parse("input=3x8x8;classes=10;layers=conv:4:3:1,gap,dense:5"), ShapeError);
  CHECK_THROWS(NetworkConfig::parse("input=3x8x8;classes=10;layers=wobble"));
  CHECK_THROWS(NetworkConfig::parse("input=3x8x8;classes=10;layers=gap,dropout:1.0,dense:10"));
}

TEST_CASE("mini resnet traces every capturable layer in order") {
  Network net(NetworkConfig::mini_resnet({3, 16, 16}, 10), 1);
  Rng rng(2);
  net.set_mode(Mode::Eval);
  const auto res = net.forward(oracle::random_matrix(4, 3 * 16 * 16, rng), true);
  REQUIRE(res.trace);
  CHECK(res.logits.rows() == 4);
  CHECK(res.logits.cols() == 10);
  const auto& t = *res.trace;
  REQUIRE(t.size() >= 20);
  CHECK(t.front().layer_name == "conv1");
  CHECK(t[1].layer_name == "bn1");
  CHECK(t[3].layer_name == "block1.conv1");
  CHECK(t.back().layer_name == "dense1");
  for (const auto& e : t) CHECK(e.activation.rows() == 4);
}

TEST_CASE("zero-weight network outputs its final bias") {
  Network net(NetworkConfig::parse("input=2x6x6;classes=3;layers=conv:4:3:2,bn,relu,res:6:2,gap,dense:3"), 3);
  for (Parameter* p : net.parameters())
    if (p->name.ends_with(".weight")) p->value.fill(0.0);
  Parameter& bias = find(net, "dense1.bias");
  bias.value = Matrix::from_rows({{0.1, -0.2, 0.3}});
  Rng rng(4);
  for (Mode m : {Mode::Eval, Mode::Train}) {
    net.set_mode(m);
    const Matrix logits = net.forward(oracle::random_matrix(5, 72, rng)).logits;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(logits(i, j) == bias.value(0, j));
  }
}

TEST_CASE("eval forward is deterministic") {
  Network net(NetworkConfig::mini_resnet({3, 8, 8}, 4, 4), 5);
  net.set_mode(Mode::Eval);
  Rng rng(6);
  const Matrix x = oracle::random_matrix(3, 192, rng);
  CHECK(net.forward(x).logits == net.forward(x).logits);
  Network copy = net;
  CHECK(copy.forward(x).logits == net.forward(x).logits);
}

TEST_CASE("two-layer dense net matches a hand-computed chain") {
  Network net(NetworkConfig::parse("input=4x1x1;classes=3;layers=dense:5,relu,dense:3"), 7);
  Rng rng(8);
  const Matrix x = oracle::random_matrix(6, 4, rng);
  const Matrix& w1 = find(net, "dense1.weight").value;
  const Matrix& b1 = find(net, "dense1.bias").value;
  const Matrix& w2 = find(net, "dense2.weight").value;
  const Matrix& b2 = find(net, "dense2.bias").value;
  find(net, "dense1.bias").value = oracle::random_matrix(1, 5, rng);
  find(net, "dense2.bias").value = oracle::random_matrix(1, 3, rng);
  Matrix h = oracle::naive_matmul(x, w1);
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) = std::max(0.0, h(i, j) + b1(0, j));
  Matrix y = oracle::naive_matmul(h, w2);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b2(0, j);
  net.set_mode(Mode::Eval);
  CHECK(max_abs(subtract(net.forward(x).logits, y)) <= 1e-12);
}

TEST_CASE("conv2d matches direct convolution") {
  for (std::size_t stride : {1, 2}) {
    Rng init(9);
    const TensorShape in{2, 5, 6};
    Conv2d conv("c", in, 3, 3, stride, init);
    conv.bias().value = oracle::random_matrix(1, 3, init);
    const Matrix x = oracle::random_matrix(2, in.size(), init);
    ForwardContext ctx;
    const Matrix y = conv.forward(x, ctx);
    for (std::size_t s = 0; s < 2; ++s) {
      const auto ref = naive_conv(x.row(s), in, conv.weight().value, conv.bias().value, 3, stride, conv.output_shape());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y(s, i) - ref[i]) <= 1e-12);
    }
  }
}

TEST_CASE("batchnorm normalizes in train mode and uses running stats in eval") {
  BatchNorm bn("bn", {2, 2, 2});
  Rng rng(10);
  Matrix x = oracle::random_matrix(8, 8, rng, 3.0);
  ForwardContext train{Mode::Train, &rng, nullptr};
  const Matrix y = bn.forward(x, train);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t p = 0; p < 4; ++p) {
        s += y(i, c * 4 + p);
        s2 += y(i, c * 4 + p) * y(i, c * 4 + p);
      }
    CHECK(std::abs(s / 32) <= 1e-12);
    CHECK(s2 / 32 == doctest::Approx(1.0).epsilon(1e-4));
  }
  CHECK(bn.running_mean().value(0, 0) != 0.0);
  ForwardContext eval{Mode::Eval, nullptr, nullptr};
  const Matrix rm = bn.running_mean().value;
  bn.forward(x, eval);
  CHECK(bn.running_mean().value == rm);
}

TEST_CASE("dropout is the identity in eval mode and inverted in train mode") {
  Dropout d("d", {1, 1, 1000}, 0.4);
  Rng rng(11);
  const Matrix x(1, 1000, 1.0);
  ForwardContext eval{Mode::Eval, nullptr, nullptr};
  CHECK(d.forward(x, eval) == x);
  ForwardContext train{Mode::Train, &rng, nullptr};
  const Matrix y = d.forward(x, train);
  std::size_t zeros = 0;
  for (double v : y.values()) {
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(1.0 / 0.6));
  }
  CHECK(zeros > 330);
  CHECK(zeros < 470);
}

TEST_CASE("residual block without projection adds its input") {
  Rng init(12);
  ResidualBlock block("b", {3, 4, 4}, 3, 1, init);
  CHECK_FALSE(block.has_projection());
  block.conv1().weight().value.fill(0.0);
  block.conv2().weight().value.fill(0.0);
  Rng rng(13);
  Matrix x = oracle::random_matrix(4, 48, rng);
  for (double& v : x.values()) v = std::abs(v);
  ForwardContext eval{Mode::Eval, nullptr, nullptr};
  CHECK(block.forward(x, eval) == x);
  ResidualBlock down("d", {3, 4, 4}, 6, 2, init);
  CHECK(down.has_projection());
  CHECK(down.output_shape() == TensorShape{6, 2, 2});
}

TEST_CASE("backward requires a forward pass") {
  Network net(NetworkConfig::parse("input=2x1x1;classes=2;layers=dense:2"), 1);
  CHECK_THROWS_AS(net.backward(Matrix(1, 2)), StateError);
  net.forward(Matrix(1, 2, 1.0));
  CHECK_THROWS_AS(net.backward(Matrix(3, 2)), ShapeError);
}

TEST_CASE("zero loss gradient gives zero parameter gradients") {
  Network net(NetworkConfig::parse("input=2x5x5;classes=3;layers=conv:4:3:1,bn,relu,res:4:1,gap,dense:3"), 14);
  Rng rng(15);
  net.forward(oracle::random_matrix(4, 50, rng));
  net.backward(Matrix(4, 3));
  for (Parameter* p : net.parameters()) CHECK(max_abs(p->grad) == 0.0);
}

TEST_CASE("dense network gradients match finite differences") {
  Network net(NetworkConfig::parse("input=3x1x1;classes=4;layers=dense:5,relu,dense:4"), 16);
  Rng rng(17);
  const Matrix x = oracle::random_matrix(6, 3, rng);
  for (LossKind k : kAllLosses) {
    for (const auto& e : oracle::network_gradient_check(net, x, random_targets(6, 4, rng), {k, 1.0, 1.0}, 1e-5)) {
      INFO(e.name);
      CHECK(e.rel_error <= 1e-5);
    }
  }
}

TEST_CASE("residual and batchnorm gradients match finite differences") {
  const char* configs[] = {
      "input=2x4x4;classes=3;layers=conv:3:3:1,bn,relu,res:3:1,gap,dense:3",
      "input=2x4x4;classes=3;layers=res:4:2,gap,dropout:0.3,dense:3",
  };
  Rng rng(18);
  for (const char* text : configs) {
    Network net(NetworkConfig::parse(text), 19);
    const Matrix x = oracle::random_matrix(5, 32, rng);
    for (LossKind k : {LossKind::SCE, LossKind::L2, LossKind::SoS}) {
      // Biases feeding batchnorm have an exactly zero gradient; the floor keeps
      // rounding noise in the central differences from reading as 100% error.
      for (const auto& e :
           oracle::network_gradient_check(net, x, random_targets(5, 3, rng), {k, 3.0, 2.0}, 1e-5, 1e-4)) {
        INFO(text << " " << e.name);
        CHECK(e.rel_error <= 1e-5);
        CHECK(e.abs_error <= 1e-9);
      }
    }
  }
}

TEST_CASE("adam first step and zero gradient") {
  Adam adam({1e-3, 0.0});
  std::vector<Matrix> theta{Matrix(1, 1, 0.0)};
  const std::vector<Matrix> g{Matrix(1, 1, 1.0)};
  adam.step(theta, g);
  CHECK(theta[0][0] == doctest::Approx(-1e-3 / (1 + 1e-8)).epsilon(1e-12));
  CHECK(std::abs(theta[0][0] + 0.000999999) < 1e-9);
  CHECK(adam.step_count() == 1);

  Adam still({1e-3, 0.0});
  std::vector<Matrix> t2{Matrix(2, 2, 0.7)};
  const std::vector<Matrix> zero{Matrix(2, 2, 0.0)};
  for (int i = 0; i < 10; ++i) still.step(t2, zero);
  CHECK(t2[0] == Matrix(2, 2, 0.7));
}

namespace {
double adam_on_square(double lr, int steps) {
  Adam adam({lr, 0.0});
  std::vector<Matrix> theta{Matrix(1, 1, 1.0)};
  double previous = 1.0;
  for (int i = 0; i < steps; ++i) {
    const std::vector<Matrix> g{Matrix(1, 1, 2.0 * theta[0][0])};
    adam.step(theta, g);
    REQUIRE(theta[0][0] < previous);
    previous = theta[0][0];
  }
  return theta[0][0];
}
}  // namespace

TEST_CASE("adam descends on a quadratic") {
  CHECK(std::abs(adam_on_square(1e-2, 100)) < 0.9);
  // Each step moves theta by at most about lr, so 100 steps at 1e-3 stop just short of 0.9.
  const double slow = adam_on_square(1e-3, 100);
  CHECK(slow > 0.9);
  CHECK(slow < 0.91);
}

TEST_CASE("early stopping") {
  EarlyStopping rising(3);
  for (std::size_t e = 1; e <= 20; ++e) CHECK_FALSE(rising.update(e, 0.01 * static_cast<double>(e)));
  EarlyStopping frozen(4);
  std::size_t stopped = 0;
  for (std::size_t e = 1; e <= 20 && stopped == 0; ++e)
    if (frozen.update(e, 0.5)) stopped = e;
  CHECK(stopped == 5);
  CHECK(frozen.best_epoch() == 1);
}

namespace {
LabeledData blobs(std::size_t n, std::size_t dims, std::size_t classes, double sep, Rng& rng) {
  LabeledData d{Matrix(n, dims), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % classes);
    d.labels[i] = c;
    for (std::size_t j = 0; j < dims; ++j) d.inputs(i, j) = rng.normal() + (j == static_cast<std::size_t>(c) ? sep : 0.0);
  }
  return d;
}
}  // namespace

TEST_CASE("training with frozen accuracy stops after patience + 1 epochs") {
  Rng rng(20);
  const LabeledData tr = blobs(64, 3, 3, 2.0, rng), va = blobs(30, 3, 3, 2.0, rng);
  Network net(NetworkConfig::parse("input=3x1x1;classes=3;layers=dense:3"), 21);
  Schedule s;
  s.batch_size = 16;
  s.patience = 4;
  s.max_epochs = 50;
  s.adam.lr = 0.0;
  s.adam.weight_decay = 0.0;
  const TrainReport r = train(net, tr, va, {LossKind::SCE}, s);
  CHECK(r.epochs.size() == 5);
  CHECK(r.best_epoch == 1);
  CHECK(r.stop_reason == StopReason::EarlyStopping);
}

TEST_CASE("separable toy set reaches 99% training accuracy") {
  Rng rng(22);
  const LabeledData tr = blobs(400, 2, 2, 6.0, rng), va = blobs(100, 2, 2, 6.0, rng);
  Network net(NetworkConfig::parse("input=2x1x1;classes=2;layers=dense:8,relu,dense:2"), 23);
  Schedule s;
  s.batch_size = 32;
  s.max_epochs = 50;
  s.patience = 50;
  s.adam.lr = 1e-2;
  const TrainReport r = train(net, tr, va, {LossKind::SCE}, s);
  CHECK(r.epochs.size() <= 50);
  CHECK(evaluate(net, tr) >= 0.99);

  Network again(NetworkConfig::parse("input=2x1x1;classes=2;layers=dense:8,relu,dense:2"), 23);
  CHECK(train(again, tr, va, {LossKind::SCE}, s) == r);
  CHECK(again.snapshot() == net.snapshot());
}

TEST_CASE("evaluate bounds and chance level") {
  Network net(NetworkConfig::parse("input=3x1x1;classes=3;layers=dense:3"), 24);
  find(net, "dense1.weight").value = Matrix::identity(3);
  LabeledData d{Matrix::identity(3), {0, 1, 2}};
  CHECK(evaluate(net, d) == 1.0);
  d.labels = {1, 2, 0};
  CHECK(evaluate(net, d) == 0.0);

  Rng rng(25);
  Network random(NetworkConfig::parse("input=3x4x4;classes=10;layers=conv:4:3:1,relu,gap,dense:10"), 26);
  LabeledData noise{oracle::random_matrix(1000, 48, rng), std::vector<int>(1000)};
  for (std::size_t i = 0; i < 1000; ++i) noise.labels[i] = static_cast<int>(i % 10);
  CHECK(std::abs(evaluate(random, noise) - 0.1) <= 0.03);
  CHECK(argmax_row(std::vector<double>{1, 3, 3, 2}) == 1);
}

TEST_CASE("training rejects empty splits") {
  Network net(NetworkConfig::parse("input=2x1x1;classes=2;layers=dense:2"), 1);
  CHECK_THROWS_AS(train(net, LabeledData{}, LabeledData{}, {}, Schedule{}), DataError);
}
