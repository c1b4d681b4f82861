#pragma once

#include "tma/common.hpp"
#include "tma/encoders.hpp"

#include <map>
#include <span>
#include <string>

namespace tma {

struct EmbeddingBatch {
  Matrix vectors;  // N x D
  Modality modality = Modality::kImage;
  bool normalized = false;

  Eigen::Index size() const { return vectors.rows(); }
  Eigen::Index dim() const { return vectors.cols(); }
};

/// Scales every row to unit L2 norm. Throws on a zero (or non-finite) row.
EmbeddingBatch normalize(EmbeddingBatch batch);

/// Gradient with respect to raw rows given the gradient with respect to
/// their normalized versions.
Matrix normalize_backward(const Matrix& raw, const Matrix& grad_normalized);

/// Entry (i, j) = dot(a_i, b_j). Both batches must be normalized.
Matrix similarity_matrix(const EmbeddingBatch& a, const EmbeddingBatch& b);

inline constexpr const char* kImgTxt = "img-txt";
inline constexpr const char* kSymTxt = "sym-txt";
inline constexpr const char* kImgSym = "img-sym";

struct LossOptions {
  /// Average row-wise and column-wise softmax directions per pair.
  bool symmetric = false;
  /// Drop same-class off-diagonal candidates from each softmax denominator.
  bool label_masked_negatives = false;
  /// False for the bimodal ablation: only the img-txt pair contributes.
  bool include_symbol = true;
  /// Class ids of the batch rows; required with label_masked_negatives.
  std::span<const int> labels;
};

struct LossBreakdown {
  double total = 0.0;
  std::map<std::string, double> per_pair;
  double temperature_value = 0.0;  // effective tau
};

/// Gradients with respect to the normalized inputs and log(1/tau).
struct LossGradients {
  Matrix image;
  Matrix symbol;  // empty when the symbol modality is excluded
  Matrix text;
  double log_inverse_tau = 0.0;
};

struct LossResult {
  LossBreakdown breakdown;
  LossGradients grad;
};

/// Warm-up loss: image->text and symbol->text InfoNCE terms, each averaged
/// over the batch and weighted 1/2, so the total is -(1/2N) times the sum
/// of both log-softmax diagonals. Without symbols the img-txt term has weight 1.
LossResult stage1_loss(const EmbeddingBatch& z_img, const EmbeddingBatch& z_sym,
                       const EmbeddingBatch& z_txt, const TemperatureParam& temperature,
                       const LossOptions& options = {});

/// Joint loss: unweighted sum of the img-txt, img-sym and sym-txt terms,
/// each -(1/N) sum_i log softmax_i. Without symbols only img-txt remains.
LossResult stage2_loss(const EmbeddingBatch& z_img, const EmbeddingBatch& z_sym,
                       const EmbeddingBatch& z_txt, const TemperatureParam& temperature,
                       const LossOptions& options = {});

}  // namespace tma
