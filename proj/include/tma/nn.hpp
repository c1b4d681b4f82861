#pragma once

#include "tma/common.hpp"

#include <string>
#include <vector>

namespace tma {

/// A trainable tensor with its accumulated gradient.
struct Parameter {
  Matrix value;
  Matrix grad;
  bool decay = true;  // subject to weight decay

  Parameter() = default;
  explicit Parameter(Matrix v, bool with_decay = true)
      : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())), decay(with_decay) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

void he_uniform(Matrix& weight, int fan_in, Rng& rng);
/// Rows (or columns, when taller than wide) orthonormal; signs fixed by R's diagonal.
void orthogonal(Matrix& weight, Rng& rng);

/// Valid (unpadded) 2-D convolution over NHWC activations stored as a
/// (batch * height * width) x channels matrix. Filters are laid out
/// out_channels x (kernel * kernel * in_channels) in (ky, kx, c) order.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int out_extent(int in_extent) const { return (in_extent - kernel_) / stride_ + 1; }

  Matrix im2col(const Matrix& input, int batch, int height, int width) const;
  /// Pre-activation output for already unfolded input.
  Matrix apply(const Matrix& cols) const;
  /// Accumulates parameter gradients; returns the input gradient when asked.
  Matrix backward(const Matrix& cols, const Matrix& grad_out, int batch, int height, int width,
                  bool need_input_grad);

  Parameter weight;
  Parameter bias;

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 0;
  int stride_ = 1;
};

/// y = x W^T + b
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features);

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }

  Matrix apply(const Matrix& input) const;
  Matrix backward(const Matrix& input, const Matrix& grad_out);

  Parameter weight;
  Parameter bias;
};

struct AdamOptions {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with L2 weight decay folded into the gradient. Moment estimates are
/// owned by the instance; a fresh instance starts from zero moments.
class Adam {
 public:
  Adam(std::vector<NamedParameter> params, AdamOptions options);

  void step();
  std::int64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<NamedParameter> params_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  AdamOptions options_;
  std::int64_t steps_ = 0;
};

}  // namespace tma
