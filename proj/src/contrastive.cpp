#include "tma/contrastive.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace tma {

EmbeddingBatch normalize(EmbeddingBatch batch) {
  for (Eigen::Index i = 0; i < batch.vectors.rows(); ++i) {
    const double norm = batch.vectors.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw LossError("cannot normalize row " + std::to_string(i) + " (norm " +
                      std::to_string(norm) + ")");
    }
    batch.vectors.row(i) /= norm;
  }
  batch.normalized = true;
  return batch;
}

Matrix normalize_backward(const Matrix& raw, const Matrix& grad_normalized) {
  Matrix out(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double norm = raw.row(i).norm();
    const RowVector unit = raw.row(i) / norm;
    const double proj = unit.dot(grad_normalized.row(i));
    out.row(i) = (grad_normalized.row(i) - proj * unit) / norm;
  }
  return out;
}

Matrix similarity_matrix(const EmbeddingBatch& a, const EmbeddingBatch& b) {
  if (!a.normalized || !b.normalized) {
    throw LossError("similarity_matrix expects normalized embeddings");
  }
  if (a.dim() != b.dim()) {
    throw LossError("embedding dimensions differ: " + std::to_string(a.dim()) + " vs " +
                    std::to_string(b.dim()));
  }
  return a.vectors * b.vectors.transpose();
}

namespace {

constexpr double kUnitTolerance = 1e-6;

void check_input(const EmbeddingBatch& z, const char* what, Eigen::Index n, Eigen::Index d) {
  if (z.size() != n) {
    throw LossError(std::string("batch size mismatch: ") + what + " has " +
                    std::to_string(z.size()) + " rows, expected " + std::to_string(n));
  }
  if (z.dim() != d) throw LossError(std::string("dimension mismatch for ") + what);
  if (!z.normalized) throw LossError(std::string(what) + " embeddings are not normalized");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(z.vectors.row(i).norm() - 1.0) > kUnitTolerance) {
      throw LossError(std::string(what) + " row " + std::to_string(i) + " is not unit length");
    }
  }
}

struct Accumulator {
  double scale;
  std::span<const int> labels;
  bool masked;
  double grad_scale = 0.0;
};

// One softmax direction: rows of `anchors` each choose among rows of
// `candidates`. Returns weight * mean(-log p_ii) and accumulates gradients.
double direction_loss(const Matrix& anchors, const Matrix& candidates, double weight,
                      Accumulator& acc, Matrix& grad_anchors, Matrix& grad_candidates) {
  const Eigen::Index n = anchors.rows();
  const Matrix sim = anchors * candidates.transpose();
  Matrix grad_logits = Matrix::Zero(n, n);
  double loss = 0.0;
  std::vector<double> logits(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool excluded = acc.masked && j != i &&
                            acc.labels[static_cast<std::size_t>(j)] ==
                                acc.labels[static_cast<std::size_t>(i)];
      logits[static_cast<std::size_t>(j)] =
          excluded ? -std::numeric_limits<double>::infinity() : acc.scale * sim(i, j);
      row_max = std::max(row_max, logits[static_cast<std::size_t>(j)]);
    }
    double denom = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) denom += std::exp(logits[static_cast<std::size_t>(j)] - row_max);
    const double log_denom = row_max + std::log(denom);
    loss -= logits[static_cast<std::size_t>(i)] - log_denom;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double p = std::exp(logits[static_cast<std::size_t>(j)] - log_denom);
      grad_logits(i, j) = weight * (p - (i == j ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  grad_anchors.noalias() += acc.scale * grad_logits * candidates;
  grad_candidates.noalias() += acc.scale * grad_logits.transpose() * anchors;
  acc.grad_scale += grad_logits.cwiseProduct(sim).sum();
  return weight * loss / static_cast<double>(n);
}

struct PairSpec {
  const char* name;
  int anchor;  // 0 image, 1 symbol, 2 text
  int candidate;
};

LossResult combined_loss(const EmbeddingBatch& z_img, const EmbeddingBatch& z_sym,
                         const EmbeddingBatch& z_txt, const TemperatureParam& temperature,
                         const LossOptions& options, std::span<const PairSpec> pairs,
                         double pair_weight) {
  const Eigen::Index n = z_img.size();
  if (n < 1) throw LossError("empty batch");
  const Eigen::Index d = z_img.dim();
  check_input(z_img, "image", n, d);
  check_input(z_txt, "text", n, d);
  if (options.include_symbol) check_input(z_sym, "symbol", n, d);
  if (options.label_masked_negatives && options.labels.size() != static_cast<std::size_t>(n)) {
    throw LossError("label_masked_negatives needs one label per batch row");
  }

  Accumulator acc{temperature.inverse_tau(), options.labels, options.label_masked_negatives};
  const Matrix* inputs[3] = {&z_img.vectors, &z_sym.vectors, &z_txt.vectors};
  Matrix grads[3] = {Matrix::Zero(n, d),
                     options.include_symbol ? Matrix::Zero(n, d) : Matrix(),
                     Matrix::Zero(n, d)};

  LossResult result;
  for (const auto& pair : pairs) {
    if (!options.include_symbol && (pair.anchor == 1 || pair.candidate == 1)) continue;
    const Matrix& a = *inputs[pair.anchor];
    const Matrix& b = *inputs[pair.candidate];
    double value = 0.0;
    if (options.symmetric) {
      value += direction_loss(a, b, pair_weight / 2.0, acc, grads[pair.anchor], grads[pair.candidate]);
      value += direction_loss(b, a, pair_weight / 2.0, acc, grads[pair.candidate], grads[pair.anchor]);
    } else {
      value += direction_loss(a, b, pair_weight, acc, grads[pair.anchor], grads[pair.candidate]);
    }
    result.breakdown.per_pair[pair.name] = value;
    result.breakdown.total += value;
  }
  result.breakdown.temperature_value = 1.0 / acc.scale;
  result.grad.image = std::move(grads[0]);
  result.grad.symbol = std::move(grads[1]);
  result.grad.text = std::move(grads[2]);
  result.grad.log_inverse_tau = temperature.clamped() ? 0.0 : acc.grad_scale * acc.scale;
  return result;
}

}  // namespace

LossResult stage1_loss(const EmbeddingBatch& z_img, const EmbeddingBatch& z_sym,
                       const EmbeddingBatch& z_txt, const TemperatureParam& temperature,
                       const LossOptions& options) {
  static constexpr PairSpec kPairs[] = {{kImgTxt, 0, 2}, {kSymTxt, 1, 2}};
  const double weight = options.include_symbol ? 0.5 : 1.0;
  return combined_loss(z_img, z_sym, z_txt, temperature, options, kPairs, weight);
}

LossResult stage2_loss(const EmbeddingBatch& z_img, const EmbeddingBatch& z_sym,
                       const EmbeddingBatch& z_txt, const TemperatureParam& temperature,
                       const LossOptions& options) {
  static constexpr PairSpec kPairs[] = {{kImgTxt, 0, 2}, {kImgSym, 0, 1}, {kSymTxt, 1, 2}};
  return combined_loss(z_img, z_sym, z_txt, temperature, options, kPairs, 1.0);
}

}  // namespace tma
