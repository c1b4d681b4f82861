#pragma once

#include "tma/contrastive.hpp"
#include "tma/datasets.hpp"
#include "tma/encoders.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tma {

// ---------------------------------------------------------------- classification

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0);
  static ConfusionMatrix from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                          int classes);

  void add(int truth, int predicted);
  int classes() const { return classes_; }
  long long at(int truth, int predicted) const;
  long long total() const;
  long long row_sum(int k) const;
  long long col_sum(int k) const;
  bool operator==(const ConfusionMatrix&) const = default;

  void write_csv(const std::filesystem::path& path, const std::vector<std::string>& names) const;

 private:
  int classes_;
  std::vector<long long> counts_;
};

double accuracy(const ConfusionMatrix& cm);

/// Mean over classes of 2TP / (2TP + FP + FN). A class with neither true nor
/// predicted samples is left out of the mean; a class that is present but
/// never correctly predicted contributes 0.
double macro_f1(const ConfusionMatrix& cm);

/// Index of the most similar row of `prompts` for each row of `images`;
/// ties go to the lowest class id. Both must be normalized.
std::vector<int> predict_by_similarity(const EmbeddingBatch& images, const EmbeddingBatch& prompts);

/// Embeds all K prompts once and assigns each image the class of its most
/// cosine-similar prompt.
std::vector<int> classify_by_prompt(const ImageEncoder& image_encoder,
                                    const TextEncoder& text_encoder, const ClassTaxonomy& taxonomy,
                                    std::span<const Image> images);

/// Softmax regression on frozen features, trained by full-batch gradient descent.
class LinearProbe {
 public:
  struct Options {
    int iterations = 300;
    double learning_rate = 0.5;
    double l2 = 1e-4;
  };

  static LinearProbe fit(const Matrix& features, std::span<const int> labels, int classes,
                         const Options& options);
  static LinearProbe fit(const Matrix& features, std::span<const int> labels, int classes) {
    return fit(features, labels, classes, Options{});
  }
  std::vector<int> predict(const Matrix& features) const;

 private:
  Matrix weight_;  // classes x D
  RowVector bias_;
};

// ---------------------------------------------------------------- retrieval

struct RetrievalResult {
  std::string query_id;
  std::vector<std::string> neighbor_ids;
  std::vector<double> scores;
  std::vector<bool> relevant;
  /// Items sharing the query's class anywhere in the corpus, query excluded.
  std::size_t total_relevant = 0;
};

/// Exact top-k search over the N x N dot-product matrix with the diagonal
/// masked. Ordering is similarity descending, then sample id ascending.
/// `k` empty means all N-1 neighbors; larger k is capped at N-1.
std::vector<RetrievalResult> retrieve(const EmbeddingBatch& embeddings, std::span<const int> labels,
                                      std::span<const std::string> ids, std::optional<int> k);

/// Ranks every corpus row against one normalized query with the same ordering
/// as retrieve(). `exclude` drops the query's own row when it is in the
/// corpus; `query_label` < 0 marks nothing as relevant.
RetrievalResult search_corpus(const EmbeddingBatch& corpus, std::span<const int> labels,
                              std::span<const std::string> ids, const RowVector& query,
                              std::optional<std::size_t> exclude, int query_label, int k,
                              std::string query_id);

struct MapReport {
  double value = 0.0;
  std::size_t included_queries = 0;
  std::size_t excluded_queries = 0;  // no relevant item in the corpus
};

/// AP@k = (1 / min(R, k)) * sum over relevant ranks i <= k of precision@i.
/// `k` empty uses each result's full list.
MapReport mean_average_precision(std::span<const RetrievalResult> results, std::optional<int> k);

double average_precision(const RetrievalResult& result, std::optional<int> k);

// ---------------------------------------------------------------- embeddings

struct EmbeddingFile {
  Modality modality = Modality::kImage;
  std::vector<std::string> sample_ids;
  std::vector<int> class_ids;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> vectors;

  EmbeddingBatch to_batch() const;
};

/// Normalized embeddings of one modality for every sample, in order.
EmbeddingFile compute_embeddings(const EncoderSet& set, const std::vector<ModalitySample>& samples,
                                 Modality modality, int batch_size = 128);

/// "TME1", u32 N, u32 D, u32 modality (0 image, 1 symbol, 2 text), N rows of
/// D little-endian float32, then per row: i32 class_id, u32 id length, id bytes.
void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);
EmbeddingFile read_embeddings(const std::filesystem::path& path);
/// Columns: sample_id, class_id, modality, v0..v{D-1}.
void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingFile& file);
EmbeddingFile read_embeddings_csv(const std::filesystem::path& path);

void export_embeddings(const EncoderSet& set, const std::vector<ModalitySample>& samples,
                       const std::filesystem::path& path, Modality modality = Modality::kImage,
                       bool csv_mirror = false);

// ---------------------------------------------------------------- projection

struct Pca2 {
  RowVector mean;
  Matrix components;  // 2 x D, rows orthonormal
  std::array<double, 2> variances{};
};

/// Top two principal axes of the covariance of mean-centered rows. Each axis
/// is signed so its largest-magnitude loading is positive.
Pca2 fit_pca2(const Matrix& x);
Matrix pca_project(const Pca2& pca, const Matrix& x);

struct GridCell {
  std::string sample_id;
  int row = 0;
  int col = 0;
};

struct GridLayout {
  int grid_size = 0;
  std::vector<GridCell> cells;  // input order
  Image composite;
};

/// PCA coordinates min-max scaled to [0, G-1]^2, then each sample (farthest
/// from the grid center first) takes the nearest free cell, searching outward
/// ring by ring from its rounded position.
GridLayout pca_grid(const Matrix& embeddings, std::span<const std::string> ids,
                    std::span<const Image> thumbnails, int grid_size, int thumb_size = 16);

/// Greedy cell assignment for already scaled (col, row) coordinates.
std::vector<std::array<int, 2>> assign_grid_cells(const Matrix& scaled, int grid_size);

void write_grid_csv(const std::filesystem::path& path, const GridLayout& layout);

struct Projection2d {
  std::vector<std::string> sample_ids;
  std::vector<int> class_ids;
  Matrix coords;  // N x 2
};

struct ExternalTsneOptions {
  /// Executable; empty uses $TMA_TSNE_CMD, then "tma-tsne" on PATH.
  std::string command;
  double perplexity = 30.0;
  std::uint64_t seed = 0;
};

/// Writes (sample_id, x, y, class_id) CSV. "pca" is computed here;
/// "external-tsne" hands a TME1 file to an external tool
/// (`<tool> --input F --output F --perplexity P --seed S`, output CSV of x,y
/// per row) and records its parameters next to `path`.
Projection2d project_2d_export(const EmbeddingFile& embeddings, const std::string& method,
                               const std::filesystem::path& path,
                               const ExternalTsneOptions& tsne = {});

Image render_scatter(const Matrix& coords, std::span<const int> labels, int size = 512);
/// Query on the left outlined in green, neighbors to its right.
Image render_contact_sheet(const Image& query, std::span<const Image> neighbors, int thumb_size = 64);

// ---------------------------------------------------------------- reports

struct EvaluationOptions {
  int map_k = 5;
  bool linear_probe = false;
};

struct EvaluationReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  MapReport map_at_k;
  MapReport map_all;
  std::optional<ConfusionMatrix> probe_confusion;
};

/// Prompt classification and image-to-image retrieval on `test`. The linear
/// probe, when enabled, is fit on `train`.
EvaluationReport evaluate(const EncoderSet& set, const ClassTaxonomy& taxonomy,
                          const std::vector<ModalitySample>& test,
                          const std::vector<ModalitySample>& train,
                          const EvaluationOptions& options);

}  // namespace tma
