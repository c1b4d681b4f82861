#include "tma/nn.hpp"

#include <cmath>
#include <cstring>

namespace tma {

void he_uniform(Matrix& weight, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = rng.uniform(-bound, bound);
}

void orthogonal(Matrix& weight, Rng& rng) {
  const Eigen::Index rows = weight.rows();
  const Eigen::Index cols = weight.cols();
  const Eigen::Index tall = std::max(rows, cols);
  const Eigen::Index small = std::min(rows, cols);
  Eigen::MatrixXd gaussian(tall, small);
  for (Eigen::Index j = 0; j < small; ++j)
    for (Eigen::Index i = 0; i < tall; ++i) gaussian(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, small);
  const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(small, small);
  for (Eigen::Index j = 0; j < small; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  if (rows >= cols) {
    weight = q;
  } else {
    weight = q.transpose();
  }
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride)
    : weight(Matrix::Zero(out_channels, kernel * kernel * in_channels)),
      bias(Matrix::Zero(1, out_channels), false),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride) {}

Matrix Conv2d::im2col(const Matrix& input, int batch, int height, int width) const {
  const int oh = out_extent(height);
  const int ow = out_extent(width);
  const int c = in_channels_;
  Matrix cols(static_cast<Eigen::Index>(batch) * oh * ow, kernel_ * kernel_ * c);
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double* dst = cols.row((static_cast<Eigen::Index>(b) * oh + oy) * ow + ox).data();
        for (int ky = 0; ky < kernel_; ++ky) {
          const Eigen::Index src_row =
              (static_cast<Eigen::Index>(b) * height + oy * stride_ + ky) * width + ox * stride_;
          std::memcpy(dst + static_cast<std::size_t>(ky) * kernel_ * c,
                      input.row(src_row).data(),
                      sizeof(double) * static_cast<std::size_t>(kernel_) * c);
        }
      }
    }
  }
  return cols;
}

Matrix Conv2d::apply(const Matrix& cols) const {
  Matrix out = cols * weight.value.transpose();
  out.rowwise() += bias.value.row(0);
  return out;
}

Matrix Conv2d::backward(const Matrix& cols, const Matrix& grad_out, int batch, int height,
                        int width, bool need_input_grad) {
  weight.grad.noalias() += grad_out.transpose() * cols;
  bias.grad.row(0) += grad_out.colwise().sum();
  if (!need_input_grad) return {};

  const Matrix grad_cols = grad_out * weight.value;
  const int oh = out_extent(height);
  const int ow = out_extent(width);
  const int c = in_channels_;
  Matrix grad_in = Matrix::Zero(static_cast<Eigen::Index>(batch) * height * width, c);
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double* src = grad_cols.row((static_cast<Eigen::Index>(b) * oh + oy) * ow + ox).data();
        for (int ky = 0; ky < kernel_; ++ky) {
          const Eigen::Index dst_row =
              (static_cast<Eigen::Index>(b) * height + oy * stride_ + ky) * width + ox * stride_;
          double* dst = grad_in.row(dst_row).data();
          const double* s = src + static_cast<std::size_t>(ky) * kernel_ * c;
          for (int i = 0; i < kernel_ * c; ++i) dst[i] += s[i];
        }
      }
    }
  }
  return grad_in;
}

Linear::Linear(int in_features, int out_features)
    : weight(Matrix::Zero(out_features, in_features)), bias(Matrix::Zero(1, out_features), false) {}

Matrix Linear::apply(const Matrix& input) const {
  Matrix out = input * weight.value.transpose();
  out.rowwise() += bias.value.row(0);
  return out;
}

Matrix Linear::backward(const Matrix& input, const Matrix& grad_out) {
  weight.grad.noalias() += grad_out.transpose() * input;
  bias.grad.row(0) += grad_out.colwise().sum();
  return grad_out * weight.value;
}

Adam::Adam(std::vector<NamedParameter> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    first_.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
    second_.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
  }
}

void Adam::step() {
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i].param;
    Matrix g = p.grad;
    if (p.decay && options_.weight_decay > 0.0) g += options_.weight_decay * p.value;
    first_[i] = options_.beta1 * first_[i] + (1.0 - options_.beta1) * g;
    second_[i] = options_.beta2 * second_[i] + (1.0 - options_.beta2) * g.cwiseProduct(g);
    const auto m_hat = first_[i].array() / bc1;
    const auto v_hat = second_[i].array() / bc2;
    p.value.array() -= options_.lr * m_hat / (v_hat.sqrt() + options_.eps);
  }
}

}  // namespace tma
