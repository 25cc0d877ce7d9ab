#include "biaslens/layers.hpp"

#include <algorithm>
#include <cmath>

#include "biaslens/errors.hpp"

namespace biaslens {

std::string TensorShape::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

void Layer::record(const ForwardContext& ctx, const Matrix& y) const {
  if (capture_ && ctx.trace != nullptr) ctx.trace->push_back({name_, y});
}

void Layer::require_cache(bool cached) const {
  if (!cached) throw StateError(name_ + ": backward called without a cached forward pass");
}

namespace {

void check_input(const Matrix& x, const TensorShape& shape, const std::string& name) {
  if (x.cols() != shape.size()) {
    throw ShapeError(name + ": expected " + std::to_string(shape.size()) + " features per sample (" + shape.str() +
                     "), got " + x.shape_string());
  }
}

Matrix he_normal(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  Matrix w(rows, cols);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : w.values()) v = sd * rng.normal();
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, TensorShape input, std::size_t out_channels, std::size_t kernel, std::size_t stride,
               Rng& init, bool capture)
    : Layer(std::move(name), input, capture), kernel_(kernel), stride_(stride) {
  if (kernel == 0 || kernel % 2 == 0) throw ArgumentError(name_ + ": kernel size must be odd");
  if (stride == 0 || out_channels == 0) throw ArgumentError(name_ + ": stride and channels must be positive");
  const std::size_t pad = kernel / 2;
  if (input.height + 2 * pad < kernel || input.width + 2 * pad < kernel) {
    throw ShapeError(name_ + ": input " + input.str() + " smaller than kernel");
  }
  output_ = {out_channels, (input.height + 2 * pad - kernel) / stride + 1,
             (input.width + 2 * pad - kernel) / stride + 1};

  const std::size_t taps = input.channels * kernel * kernel;
  const std::size_t positions = output_.spatial();
  gather_.assign(taps * positions, -1);
  for (std::size_t ci = 0; ci < input.channels; ++ci) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const std::size_t tap = (ci * kernel + ky) * kernel + kx;
        for (std::size_t oy = 0; oy < output_.height; ++oy) {
          for (std::size_t ox = 0; ox < output_.width; ++ox) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(input.height) ||
                ix >= static_cast<std::ptrdiff_t>(input.width)) {
              continue;
            }
            gather_[tap * positions + oy * output_.width + ox] =
                static_cast<std::ptrdiff_t>(ci * input.spatial()) + iy * static_cast<std::ptrdiff_t>(input.width) + ix;
          }
        }
      }
    }
  }

  weight_ = {name_ + ".weight", he_normal(out_channels, taps, taps, init), Matrix(out_channels, taps), true};
  bias_ = {name_ + ".bias", Matrix(1, out_channels), Matrix(1, out_channels), true};
}

Matrix Conv2d::im2col(std::span<const double> sample) const {
  const std::size_t positions = output_.spatial();
  Matrix cols(gather_.size() / positions, positions);
  for (std::size_t i = 0; i < gather_.size(); ++i) {
    if (gather_[i] >= 0) cols[i] = sample[static_cast<std::size_t>(gather_[i])];
  }
  return cols;
}

Matrix Conv2d::forward(const Matrix& x, ForwardContext& ctx) {
  check_input(x, input_, name_);
  const std::size_t positions = output_.spatial();
  Matrix y(x.rows(), output_.size());
  for (std::size_t s = 0; s < x.rows(); ++s) {
    const Matrix out = matmul(weight_.value, im2col(x.row(s)));
    auto dst = y.row(s);
    for (std::size_t co = 0; co < output_.channels; ++co) {
      const double b = bias_.value[co];
      for (std::size_t p = 0; p < positions; ++p) dst[co * positions + p] = out(co, p) + b;
    }
  }
  input_cache_ = x;
  cached_ = true;
  record(ctx, y);
  return y;
}

Matrix Conv2d::backward(const Matrix& grad_out) {
  require_cache(cached_);
  const std::size_t positions = output_.spatial();
  const std::size_t n = input_cache_.rows();
  if (grad_out.rows() != n || grad_out.cols() != output_.size()) {
    throw ShapeError(name_ + ": gradient shape " + grad_out.shape_string() + " does not match output");
  }
  Matrix dx(n, input_.size());
  for (std::size_t s = 0; s < n; ++s) {
    const Matrix dy(output_.channels, positions,
                    std::vector<double>(grad_out.row(s).begin(), grad_out.row(s).end()));
    const Matrix cols = im2col(input_cache_.row(s));
    const Matrix dw = matmul(dy, transpose(cols));
    for (std::size_t i = 0; i < dw.size(); ++i) weight_.grad[i] += dw[i];
    for (std::size_t co = 0; co < output_.channels; ++co) {
      double sum = 0.0;
      for (std::size_t p = 0; p < positions; ++p) sum += dy(co, p);
      bias_.grad[co] += sum;
    }
    const Matrix dcols = matmul_tn(weight_.value, dy);
    auto dst = dx.row(s);
    for (std::size_t i = 0; i < gather_.size(); ++i) {
      if (gather_[i] >= 0) dst[static_cast<std::size_t>(gather_[i])] += dcols[i];
    }
  }
  cached_ = false;
  input_cache_ = Matrix();
  return dx;
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void Conv2d::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::string name, TensorShape input, bool capture) : Layer(std::move(name), input, capture) {
  const std::size_t c = input.channels;
  gamma_ = {name_ + ".gamma", Matrix(1, c, 1.0), Matrix(1, c), true};
  beta_ = {name_ + ".beta", Matrix(1, c), Matrix(1, c), true};
  running_mean_ = {name_ + ".running_mean", Matrix(1, c), Matrix(), false};
  running_var_ = {name_ + ".running_var", Matrix(1, c, 1.0), Matrix(), false};
}

Matrix BatchNorm::forward(const Matrix& x, ForwardContext& ctx) {
  check_input(x, input_, name_);
  const std::size_t n = x.rows();
  const std::size_t c = input_.channels;
  const std::size_t sp = input_.spatial();
  const double m = static_cast<double>(n * sp);
  if (n == 0) throw ShapeError(name_ + ": empty batch");

  std::vector<double> mean(c, 0.0);
  inv_std_.assign(c, 0.0);
  if (ctx.mode == Mode::Train) {
    std::vector<double> var(c, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      const auto row = x.row(s);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < sp; ++p) mean[ch] += row[ch * sp + p];
    }
    for (double& v : mean) v /= m;
    for (std::size_t s = 0; s < n; ++s) {
      const auto row = x.row(s);
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < sp; ++p) {
          const double d = row[ch * sp + p] - mean[ch];
          var[ch] += d * d;
        }
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      var[ch] /= m;
      inv_std_[ch] = 1.0 / std::sqrt(var[ch] + kEpsilon);
      const double unbiased = m > 1.0 ? var[ch] * m / (m - 1.0) : var[ch];
      running_mean_.value[ch] = kMomentum * running_mean_.value[ch] + (1.0 - kMomentum) * mean[ch];
      running_var_.value[ch] = kMomentum * running_var_.value[ch] + (1.0 - kMomentum) * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean_.value[ch];
      inv_std_[ch] = 1.0 / std::sqrt(running_var_.value[ch] + kEpsilon);
    }
  }

  xhat_ = Matrix(n, x.cols());
  Matrix y(n, x.cols());
  for (std::size_t s = 0; s < n; ++s) {
    const auto row = x.row(s);
    auto xh = xhat_.row(s);
    auto out = y.row(s);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < sp; ++p) {
        const std::size_t i = ch * sp + p;
        xh[i] = (row[i] - mean[ch]) * inv_std_[ch];
        out[i] = gamma_.value[ch] * xh[i] + beta_.value[ch];
      }
    }
  }
  cached_mode_ = ctx.mode;
  cached_ = true;
  record(ctx, y);
  return y;
}

Matrix BatchNorm::backward(const Matrix& grad_out) {
  require_cache(cached_);
  const std::size_t n = xhat_.rows();
  const std::size_t c = input_.channels;
  const std::size_t sp = input_.spatial();
  const double m = static_cast<double>(n * sp);
  if (grad_out.rows() != n || grad_out.cols() != xhat_.cols()) {
    throw ShapeError(name_ + ": gradient shape " + grad_out.shape_string() + " does not match output");
  }

  std::vector<double> dgamma(c, 0.0);
  std::vector<double> dbeta(c, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const auto g = grad_out.row(s);
    const auto xh = xhat_.row(s);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < sp; ++p) {
        const std::size_t i = ch * sp + p;
        dgamma[ch] += g[i] * xh[i];
        dbeta[ch] += g[i];
      }
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    gamma_.grad[ch] += dgamma[ch];
    beta_.grad[ch] += dbeta[ch];
  }

  Matrix dx(n, xhat_.cols());
  for (std::size_t s = 0; s < n; ++s) {
    const auto g = grad_out.row(s);
    const auto xh = xhat_.row(s);
    auto out = dx.row(s);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double k = gamma_.value[ch] * inv_std_[ch];
      for (std::size_t p = 0; p < sp; ++p) {
        const std::size_t i = ch * sp + p;
        if (cached_mode_ == Mode::Train) {
          out[i] = k / m * (m * g[i] - dbeta[ch] - xh[i] * dgamma[ch]);
        } else {
          out[i] = k * g[i];
        }
      }
    }
  }
  cached_ = false;
  xhat_ = Matrix();
  return dx;
}

void BatchNorm::collect(std::vector<Parameter*>& out) {
  out.insert(out.end(), {&gamma_, &beta_, &running_mean_, &running_var_});
}

void BatchNorm::collect(std::vector<const Parameter*>& out) const {
  out.insert(out.end(), {&gamma_, &beta_, &running_mean_, &running_var_});
}

// ---------------------------------------------------------------------------
// Relu

Matrix Relu::forward(const Matrix& x, ForwardContext& ctx) {
  check_input(x, input_, name_);
  Matrix y = x;
  active_.assign(x.size(), false);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0) {
      active_[i] = true;
    } else {
      y[i] = 0.0;
    }
  }
  cached_ = true;
  record(ctx, y);
  return y;
}

Matrix Relu::backward(const Matrix& grad_out) {
  require_cache(cached_);
  if (grad_out.size() != active_.size()) throw ShapeError(name_ + ": gradient shape mismatch");
  Matrix dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!active_[i]) dx[i] = 0.0;
  }
  cached_ = false;
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout

Dropout::Dropout(std::string name, TensorShape input, double rate, bool capture)
    : Layer(std::move(name), input, capture), rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError(name_ + ": dropout rate must lie in [0, 1)");
}

Matrix Dropout::forward(const Matrix& x, ForwardContext& ctx) {
  check_input(x, input_, name_);
  Matrix y = x;
  if (ctx.mode == Mode::Train && rate_ > 0.0) {
    if (ctx.rng == nullptr) throw StateError(name_ + ": train-mode dropout needs an rng");
    const double keep_scale = 1.0 / (1.0 - rate_);
    mask_.resize(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      mask_[i] = ctx.rng->uniform01() < rate_ ? 0.0 : keep_scale;
      y[i] *= mask_[i];
    }
  } else {
    mask_.assign(x.size(), 1.0);
  }
  cached_ = true;
  record(ctx, y);
  return y;
}

Matrix Dropout::backward(const Matrix& grad_out) {
  require_cache(cached_);
  if (grad_out.size() != mask_.size()) throw ShapeError(name_ + ": gradient shape mismatch");
  Matrix dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
  cached_ = false;
  return dx;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

Matrix GlobalAvgPool::forward(const Matrix& x, ForwardContext& ctx) {
  check_input(x, input_, name_);
  const std::size_t sp = input_.spatial();
  Matrix y(x.rows(), input_.channels);
  for (std::size_t s = 0; s < x.rows(); ++s) {
    const auto row = x.row(s);
    for (std::size_t ch = 0; ch < input_.channels; ++ch) {
      double sum = 0.0;
      for (std::size_t p = 0; p < sp; ++p) sum += row[ch * sp + p];
      y(s, ch) = sum / static_cast<double>(sp);
    }
  }
  batch_ = x.rows();
  cached_ = true;
  record(ctx, y);
  return y;
}

Matrix GlobalAvgPool::backward(const Matrix& grad_out) {
  require_cache(cached_);
  if (grad_out.rows() != batch_ || grad_out.cols() != input_.channels) {
    throw ShapeError(name_ + ": gradient shape mismatch");
  }
  const std::size_t sp = input_.spatial();
  const double inv = 1.0 / static_cast<double>(sp);
  Matrix dx(batch_, input_.size());
  for (std::size_t s = 0; s < batch_; ++s) {
    auto row = dx.row(s);
    for (std::size_t ch = 0; ch < input_.channels; ++ch)
      for (std::size_t p = 0; p < sp; ++p) row[ch * sp + p] = grad_out(s, ch) * inv;
  }
  cached_ = false;
  return dx;
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::string name, TensorShape input, std::size_t out_dim, Rng& init, bool capture)
    : Layer(std::move(name), input, capture), out_dim_(out_dim) {
  if (out_dim == 0) throw ArgumentError(name_ + ": output dimension must be positive");
  const std::size_t in = input.size();
  weight_ = {name_ + ".weight", he_normal(in, out_dim, in, init), Matrix(in, out_dim), true};
  bias_ = {name_ + ".bias", Matrix(1, out_dim), Matrix(1, out_dim), true};
}

Matrix Dense::forward(const Matrix& x, ForwardContext& ctx) {
  check_input(x, input_, name_);
  Matrix y = matmul(x, weight_.value);
  for (std::size_t s = 0; s < y.rows(); ++s) {
    auto row = y.row(s);
    for (std::size_t j = 0; j < out_dim_; ++j) row[j] += bias_.value[j];
  }
  input_cache_ = x;
  cached_ = true;
  record(ctx, y);
  return y;
}

Matrix Dense::backward(const Matrix& grad_out) {
  require_cache(cached_);
  if (grad_out.rows() != input_cache_.rows() || grad_out.cols() != out_dim_) {
    throw ShapeError(name_ + ": gradient shape " + grad_out.shape_string() + " does not match output");
  }
  const Matrix dw = matmul_tn(input_cache_, grad_out);
  for (std::size_t i = 0; i < dw.size(); ++i) weight_.grad[i] += dw[i];
  for (std::size_t s = 0; s < grad_out.rows(); ++s) {
    const auto g = grad_out.row(s);
    for (std::size_t j = 0; j < out_dim_; ++j) bias_.grad[j] += g[j];
  }
  Matrix dx = matmul(grad_out, transpose(weight_.value));
  cached_ = false;
  input_cache_ = Matrix();
  return dx;
}

void Dense::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void Dense::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------------------
// ResidualBlock

ResidualBlock::ResidualBlock(std::string name, TensorShape input, std::size_t out_channels, std::size_t stride,
                             Rng& init)
    : Layer(name, input, true),
      conv1_(name + ".conv1", input, out_channels, 3, stride, init),
      bn1_(name + ".bn1", conv1_.output_shape()),
      relu1_(name + ".relu1", conv1_.output_shape()),
      conv2_(name + ".conv2", conv1_.output_shape(), out_channels, 3, 1, init),
      bn2_(name + ".bn2", conv2_.output_shape()),
      out_(name + ".out", conv2_.output_shape()) {
  if (stride != 1 || input.channels != out_channels) {
    projection_ = std::make_unique<Conv2d>(name + ".proj", input, out_channels, 1, stride, init, false);
    projection_bn_ = std::make_unique<BatchNorm>(name + ".proj_bn", projection_->output_shape(), false);
  }
}

Matrix ResidualBlock::forward(const Matrix& x, ForwardContext& ctx) {
  check_input(x, input_, name_);
  Matrix h = conv1_.forward(x, ctx);
  h = bn1_.forward(h, ctx);
  h = relu1_.forward(h, ctx);
  h = conv2_.forward(h, ctx);
  h = bn2_.forward(h, ctx);
  if (projection_) {
    // The projection branch must not appear in traces; run it without one.
    ForwardContext quiet{ctx.mode, ctx.rng, nullptr};
    h = add(h, projection_bn_->forward(projection_->forward(x, quiet), quiet));
  } else {
    h = add(h, x);
  }
  return out_.forward(h, ctx);
}

Matrix ResidualBlock::backward(const Matrix& grad_out) {
  const Matrix g = out_.backward(grad_out);
  Matrix dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
  if (projection_) {
    return add(dx, projection_->backward(projection_bn_->backward(g)));
  }
  return add(dx, g);
}

void ResidualBlock::collect(std::vector<Parameter*>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  if (projection_) {
    projection_->collect(out);
    projection_bn_->collect(out);
  }
}

void ResidualBlock::collect(std::vector<const Parameter*>& out) const {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  if (projection_) {
    projection_->collect(out);
    projection_bn_->collect(out);
  }
}

}  // namespace biaslens
