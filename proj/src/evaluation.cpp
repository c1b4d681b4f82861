#include "tma/evaluation.hpp"

#include "tma/image_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace tma {
namespace fs = std::filesystem;

namespace {

template <typename T>
std::string format_number(T value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

// ---------------------------------------------------------------- classification

ConfusionMatrix::ConfusionMatrix(int classes)
    : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
  if (classes < 0) throw EvaluationError("negative class count");
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::span<const int> truth,
                                                  std::span<const int> predicted, int classes) {
  if (truth.size() != predicted.size()) {
    throw EvaluationError("truth and prediction counts differ");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
    throw EvaluationError("class id outside confusion matrix");
  }
  ++counts_[static_cast<std::size_t>(truth) * classes_ + predicted];
}

long long ConfusionMatrix::at(int truth, int predicted) const {
  return counts_[static_cast<std::size_t>(truth) * classes_ + predicted];
}

long long ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), 0LL);
}

long long ConfusionMatrix::row_sum(int k) const {
  long long s = 0;
  for (int j = 0; j < classes_; ++j) s += at(k, j);
  return s;
}

long long ConfusionMatrix::col_sum(int k) const {
  long long s = 0;
  for (int i = 0; i < classes_; ++i) s += at(i, k);
  return s;
}

void ConfusionMatrix::write_csv(const fs::path& path, const std::vector<std::string>& names) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "true\\predicted";
  for (int k = 0; k < classes_; ++k) {
    out << ',' << (static_cast<std::size_t>(k) < names.size() ? names[static_cast<std::size_t>(k)]
                                                               : std::to_string(k));
  }
  out << '\n';
  for (int i = 0; i < classes_; ++i) {
    out << (static_cast<std::size_t>(i) < names.size() ? names[static_cast<std::size_t>(i)]
                                                        : std::to_string(i));
    for (int j = 0; j < classes_; ++j) out << ',' << at(i, j);
    out << '\n';
  }
}

double accuracy(const ConfusionMatrix& cm) {
  const long long total = cm.total();
  if (total == 0) throw EvaluationError("accuracy of an empty confusion matrix");
  long long correct = 0;
  for (int k = 0; k < cm.classes(); ++k) correct += cm.at(k, k);
  return static_cast<double>(correct) / static_cast<double>(total);
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw EvaluationError("macro F1 of an empty confusion matrix");
  double sum = 0.0;
  int counted = 0;
  for (int k = 0; k < cm.classes(); ++k) {
    const long long tp = cm.at(k, k);
    const long long fn = cm.row_sum(k) - tp;
    const long long fp = cm.col_sum(k) - tp;
    if (tp + fn + fp == 0) continue;
    sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    ++counted;
  }
  return sum / counted;
}

std::vector<int> predict_by_similarity(const EmbeddingBatch& images, const EmbeddingBatch& prompts) {
  if (prompts.size() < 1) throw EvaluationError("no class prompts");
  const Matrix sim = similarity_matrix(images, prompts);
  std::vector<int> out(static_cast<std::size_t>(sim.rows()));
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < sim.cols(); ++k) {
      if (sim(i, k) > sim(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> classify_by_prompt(const ImageEncoder& image_encoder,
                                    const TextEncoder& text_encoder, const ClassTaxonomy& taxonomy,
                                    std::span<const Image> images) {
  std::vector<std::string> prompts;
  for (int k = 0; k < taxonomy.size(); ++k) prompts.push_back(render_prompt(taxonomy, k));
  const EmbeddingBatch prompt_batch =
      normalize({text_encoder.encode(prompts), Modality::kText, false});
  std::vector<int> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 128;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    const EmbeddingBatch emb = normalize({image_encoder.encode(chunk), Modality::kImage, false});
    const auto pred = predict_by_similarity(emb, prompt_batch);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

LinearProbe LinearProbe::fit(const Matrix& features, std::span<const int> labels, int classes,
                             const Options& options) {
  const Eigen::Index n = features.rows();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) {
    throw EvaluationError("linear probe needs one label per feature row");
  }
  LinearProbe probe;
  probe.weight_ = Matrix::Zero(classes, features.cols());
  probe.bias_ = RowVector::Zero(classes);
  Matrix target = Matrix::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) target(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  for (int it = 0; it < options.iterations; ++it) {
    Matrix logits = features * probe.weight_.transpose();
    logits.rowwise() += probe.bias_;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - m).exp().matrix();
      logits.row(i) /= logits.row(i).sum();
    }
    const Matrix grad = (logits - target) / static_cast<double>(n);
    probe.weight_ -= options.learning_rate *
                     (grad.transpose() * features + options.l2 * probe.weight_);
    probe.bias_ -= options.learning_rate * grad.colwise().sum();
  }
  return probe;
}

std::vector<int> LinearProbe::predict(const Matrix& features) const {
  Matrix logits = features * weight_.transpose();
  logits.rowwise() += bias_;
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------- retrieval

std::vector<RetrievalResult> retrieve(const EmbeddingBatch& embeddings, std::span<const int> labels,
                                      std::span<const std::string> ids, std::optional<int> k) {
  const Eigen::Index n = embeddings.size();
  if (n < 2) throw EvaluationError("retrieval needs at least 2 embeddings");
  if (labels.size() != static_cast<std::size_t>(n) || ids.size() != static_cast<std::size_t>(n)) {
    throw EvaluationError("retrieval needs one label and one id per embedding");
  }
  if (k && *k < 1) throw EvaluationError("k must be at least 1");
  const auto depth = static_cast<std::size_t>(k ? std::min<Eigen::Index>(*k, n - 1) : n - 1);
  const Matrix sim = similarity_matrix(embeddings, embeddings);

  std::vector<RetrievalResult> results(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> candidates;
  for (Eigen::Index q = 0; q < n; ++q) {
    candidates.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != q) candidates.push_back(j);
    }
    auto before = [&](Eigen::Index a, Eigen::Index b) {
      if (sim(q, a) != sim(q, b)) return sim(q, a) > sim(q, b);
      return ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
    };
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(depth),
                      candidates.end(), before);

    RetrievalResult& r = results[static_cast<std::size_t>(q)];
    const int label = labels[static_cast<std::size_t>(q)];
    r.query_id = ids[static_cast<std::size_t>(q)];
    for (std::size_t i = 0; i < depth; ++i) {
      const auto j = static_cast<std::size_t>(candidates[i]);
      r.neighbor_ids.push_back(ids[j]);
      r.scores.push_back(sim(q, candidates[i]));
      r.relevant.push_back(labels[j] == label);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != q && labels[static_cast<std::size_t>(j)] == label) ++r.total_relevant;
    }
  }
  return results;
}

RetrievalResult search_corpus(const EmbeddingBatch& corpus, std::span<const int> labels,
                              std::span<const std::string> ids, const RowVector& query,
                              std::optional<std::size_t> exclude, int query_label, int k,
                              std::string query_id) {
  const auto n = static_cast<std::size_t>(corpus.size());
  if (labels.size() != n || ids.size() != n) {
    throw EvaluationError("search needs one label and one id per corpus row");
  }
  if (query.size() != corpus.dim()) throw EvaluationError("query dimension differs from corpus");
  const std::size_t available = n - (exclude ? 1 : 0);
  if (k < 1) throw EvaluationError("k must be at least 1");
  if (static_cast<std::size_t>(k) > available) {
    throw UsageError("k=" + std::to_string(k) + " exceeds the " + std::to_string(available) +
                     " searchable items; use k <= " + std::to_string(available));
  }
  const Eigen::VectorXd scores = corpus.vectors * query.transpose();
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < n; ++j) {
    if (!exclude || j != *exclude) order.push_back(j);
  }
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::size_t a, std::size_t b) {
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(b);
    if (scores(ia) != scores(ib)) return scores(ia) > scores(ib);
    return ids[a] < ids[b];
  });
  RetrievalResult r;
  r.query_id = std::move(query_id);
  for (int i = 0; i < k; ++i) {
    const std::size_t j = order[static_cast<std::size_t>(i)];
    r.neighbor_ids.push_back(ids[j]);
    r.scores.push_back(scores(static_cast<Eigen::Index>(j)));
    r.relevant.push_back(query_label >= 0 && labels[j] == query_label);
  }
  for (const std::size_t j : order) {
    if (query_label >= 0 && labels[j] == query_label) ++r.total_relevant;
  }
  return r;
}

double average_precision(const RetrievalResult& result, std::optional<int> k) {
  if (result.total_relevant == 0) return 0.0;
  const std::size_t depth =
      k ? std::min(result.relevant.size(), static_cast<std::size_t>(*k)) : result.relevant.size();
  const std::size_t cutoff = k ? static_cast<std::size_t>(*k) : result.relevant.size();
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (result.relevant[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  const std::size_t denom = std::min(result.total_relevant, std::max<std::size_t>(cutoff, 1));
  return sum / static_cast<double>(denom);
}

MapReport mean_average_precision(std::span<const RetrievalResult> results, std::optional<int> k) {
  if (results.empty()) throw EvaluationError("mAP of an empty result list");
  if (k && *k < 1) throw EvaluationError("k must be at least 1");
  MapReport report;
  double sum = 0.0;
  for (const auto& r : results) {
    if (r.total_relevant == 0) {
      ++report.excluded_queries;
      continue;
    }
    sum += average_precision(r, k);
    ++report.included_queries;
  }
  report.value = report.included_queries > 0 ? sum / static_cast<double>(report.included_queries) : 0.0;
  return report;
}

// ---------------------------------------------------------------- embeddings

EmbeddingBatch EmbeddingFile::to_batch() const {
  return normalize({vectors.cast<double>(), modality, false});
}

EmbeddingFile compute_embeddings(const EncoderSet& set, const std::vector<ModalitySample>& samples,
                                 Modality modality, int batch_size) {
  EmbeddingFile file;
  file.modality = modality;
  file.vectors.resize(static_cast<Eigen::Index>(samples.size()), set.embed_dim());
  const auto step = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t start = 0; start < samples.size(); start += step) {
    const std::size_t end = std::min(samples.size(), start + step);
    Matrix raw;
    if (modality == Modality::kText) {
      std::vector<std::string> texts;
      for (std::size_t i = start; i < end; ++i) texts.push_back(samples[i].text);
      raw = set.text().encode(texts);
    } else {
      std::vector<const Image*> images;
      for (std::size_t i = start; i < end; ++i) {
        images.push_back(modality == Modality::kImage ? &samples[i].image : &samples[i].symbol);
      }
      const ImageEncoder& enc = modality == Modality::kImage ? set.image() : set.symbol();
      raw = enc.forward(images, nullptr);
    }
    const EmbeddingBatch unit = normalize({std::move(raw), modality, false});
    file.vectors.middleRows(static_cast<Eigen::Index>(start), unit.size()) =
        unit.vectors.cast<float>();
  }
  for (const auto& s : samples) {
    file.sample_ids.push_back(s.sample_id);
    file.class_ids.push_back(s.class_id);
  }
  return file;
}

namespace {

constexpr char kEmbeddingMagic[4] = {'T', 'M', 'E', '1'};

std::uint32_t modality_code(Modality m) { return static_cast<std::uint32_t>(m); }

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError(path.string() + ": truncated embedding file");
  return value;
}

}  // namespace

void write_embeddings(const fs::path& path, const EmbeddingFile& file) {
  const auto n = static_cast<std::uint32_t>(file.vectors.rows());
  if (file.sample_ids.size() != n || file.class_ids.size() != n) {
    throw IoError("embedding file metadata does not match its rows");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kEmbeddingMagic, 4);
  put<std::uint32_t>(out, n);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.vectors.cols()));
  put<std::uint32_t>(out, modality_code(file.modality));
  out.write(reinterpret_cast<const char*>(file.vectors.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(file.vectors.size())));
  for (std::size_t i = 0; i < n; ++i) {
    put<std::int32_t>(out, file.class_ids[i]);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(file.sample_ids[i].size()));
    out.write(file.sample_ids[i].data(), static_cast<std::streamsize>(file.sample_ids[i].size()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

EmbeddingFile read_embeddings(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kEmbeddingMagic, 4) != 0) {
    throw IoError(path.string() + " is not a TME1 embedding file");
  }
  const auto n = get<std::uint32_t>(in, path);
  const auto d = get<std::uint32_t>(in, path);
  const auto m = get<std::uint32_t>(in, path);
  if (m > 2) throw IoError(path.string() + ": unknown modality code " + std::to_string(m));
  EmbeddingFile file;
  file.modality = static_cast<Modality>(m);
  file.vectors.resize(n, d);
  in.read(reinterpret_cast<char*>(file.vectors.data()),
          static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(file.vectors.size())));
  if (!in) throw IoError(path.string() + ": truncated embedding rows");
  for (std::uint32_t i = 0; i < n; ++i) {
    file.class_ids.push_back(get<std::int32_t>(in, path));
    const auto len = get<std::uint32_t>(in, path);
    std::string id(len, '\0');
    in.read(id.data(), len);
    if (!in) throw IoError(path.string() + ": truncated sample id");
    file.sample_ids.push_back(std::move(id));
  }
  return file;
}

void write_embeddings_csv(const fs::path& path, const EmbeddingFile& file) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample_id,class_id,modality";
  for (Eigen::Index j = 0; j < file.vectors.cols(); ++j) out << ",v" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < file.vectors.rows(); ++i) {
    const auto row = static_cast<std::size_t>(i);
    out << file.sample_ids[row] << ',' << file.class_ids[row] << ',' << modality_name(file.modality);
    for (Eigen::Index j = 0; j < file.vectors.cols(); ++j) out << ',' << format_number(file.vectors(i, j));
    out << '\n';
  }
}

EmbeddingFile read_embeddings_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty CSV");
  const std::size_t dim = split_csv_line(line).size() - 3;
  EmbeddingFile file;
  std::vector<float> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != dim + 3) throw IoError(path.string() + ": ragged CSV row");
    file.sample_ids.push_back(fields[0]);
    file.class_ids.push_back(std::stoi(fields[1]));
    file.modality = modality_from_name(fields[2]);
    for (std::size_t j = 0; j < dim; ++j) values.push_back(std::stof(fields[3 + j]));
  }
  file.vectors = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(file.sample_ids.size()), static_cast<Eigen::Index>(dim));
  return file;
}

void export_embeddings(const EncoderSet& set, const std::vector<ModalitySample>& samples,
                       const fs::path& path, Modality modality, bool csv_mirror) {
  const EmbeddingFile file = compute_embeddings(set, samples, modality);
  write_embeddings(path, file);
  if (csv_mirror) {
    fs::path csv = path;
    csv.replace_extension(".csv");
    write_embeddings_csv(csv, file);
  }
}

// ---------------------------------------------------------------- projection

Pca2 fit_pca2(const Matrix& x) {
  if (x.rows() < 2) throw EvaluationError("PCA needs at least 2 samples");
  if (x.cols() < 2) throw EvaluationError("PCA to 2-D needs at least 2 dimensions");
  Pca2 pca;
  pca.mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - pca.mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  if (!(cov.trace() > 1e-12)) {
    throw EvaluationError("embeddings have zero variance; PCA is undefined");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index d = cov.rows();
  pca.components.resize(2, d);
  for (int a = 0; a < 2; ++a) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - a);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    pca.components.row(a) = v.transpose();
    pca.variances[static_cast<std::size_t>(a)] = eig.eigenvalues()(d - 1 - a);
  }
  return pca;
}

Matrix pca_project(const Pca2& pca, const Matrix& x) {
  return (x.rowwise() - pca.mean) * pca.components.transpose();
}

std::vector<std::array<int, 2>> assign_grid_cells(const Matrix& scaled, int grid_size) {
  const Eigen::Index n = scaled.rows();
  const double center = (grid_size - 1) / 2.0;
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> dist(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    dist[i] = std::hypot(scaled(r, 0) - center, scaled(r, 1) - center);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });

  std::vector<char> taken(static_cast<std::size_t>(grid_size) * grid_size, 0);
  std::vector<std::array<int, 2>> cells(order.size());
  for (const std::size_t i : order) {
    const auto r = static_cast<Eigen::Index>(i);
    const double x = scaled(r, 0);
    const double y = scaled(r, 1);
    const int col0 = std::clamp(static_cast<int>(std::lround(x)), 0, grid_size - 1);
    const int row0 = std::clamp(static_cast<int>(std::lround(y)), 0, grid_size - 1);
    bool placed = false;
    for (int radius = 0; radius < grid_size && !placed; ++radius) {
      double best = std::numeric_limits<double>::infinity();
      std::array<int, 2> best_cell{};
      for (int row = row0 - radius; row <= row0 + radius; ++row) {
        for (int col = col0 - radius; col <= col0 + radius; ++col) {
          if (std::max(std::abs(row - row0), std::abs(col - col0)) != radius) continue;
          if (row < 0 || row >= grid_size || col < 0 || col >= grid_size) continue;
          if (taken[static_cast<std::size_t>(row) * grid_size + col]) continue;
          const double d = std::hypot(col - x, row - y);
          if (d < best) {
            best = d;
            best_cell = {row, col};
          }
        }
      }
      if (best < std::numeric_limits<double>::infinity()) {
        taken[static_cast<std::size_t>(best_cell[0]) * grid_size + best_cell[1]] = 1;
        cells[i] = best_cell;
        placed = true;
      }
    }
    if (!placed) throw EvaluationError("grid is full");
  }
  return cells;
}

GridLayout pca_grid(const Matrix& embeddings, std::span<const std::string> ids,
                    std::span<const Image> thumbnails, int grid_size, int thumb_size) {
  const Eigen::Index n = embeddings.rows();
  if (grid_size < 1) throw EvaluationError("grid size must be positive");
  if (n > static_cast<Eigen::Index>(grid_size) * grid_size) {
    throw EvaluationError(std::to_string(n) + " samples do not fit a " + std::to_string(grid_size) +
                          "x" + std::to_string(grid_size) + " grid");
  }
  if (n == 0) throw EvaluationError("no samples to place");
  if (ids.size() != static_cast<std::size_t>(n) ||
      (!thumbnails.empty() && thumbnails.size() != static_cast<std::size_t>(n))) {
    throw EvaluationError("pca_grid needs one id (and thumbnail) per embedding");
  }

  Matrix scaled(n, 2);
  if (n == 1) {
    scaled.setConstant((grid_size - 1) / 2.0);
  } else {
    const Matrix coords = pca_project(fit_pca2(embeddings), embeddings);
    for (int a = 0; a < 2; ++a) {
      const double lo = coords.col(a).minCoeff();
      const double hi = coords.col(a).maxCoeff();
      for (Eigen::Index i = 0; i < n; ++i) {
        scaled(i, a) = hi > lo ? (coords(i, a) - lo) / (hi - lo) * (grid_size - 1)
                               : (grid_size - 1) / 2.0;
      }
    }
  }

  GridLayout layout{.grid_size = grid_size};
  const auto cells = assign_grid_cells(scaled, grid_size);
  layout.composite = Image(grid_size * thumb_size, grid_size * thumb_size, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& cell = cells[static_cast<std::size_t>(i)];
    layout.cells.push_back({ids[static_cast<std::size_t>(i)], cell[0], cell[1]});
    if (thumbnails.empty()) continue;
    const Image thumb = to_channels(
        resize_bilinear(thumbnails[static_cast<std::size_t>(i)], thumb_size, thumb_size), 3);
    for (int y = 0; y < thumb_size; ++y)
      for (int x = 0; x < thumb_size; ++x)
        for (int c = 0; c < 3; ++c)
          layout.composite.at(cell[0] * thumb_size + y, cell[1] * thumb_size + x, c) = thumb.at(y, x, c);
  }
  return layout;
}

void write_grid_csv(const fs::path& path, const GridLayout& layout) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample_id,row,col\n";
  for (const auto& c : layout.cells) out << c.sample_id << ',' << c.row << ',' << c.col << '\n';
}

namespace {

fs::path find_executable(const std::string& name) {
  if (name.find('/') != std::string::npos) return fs::exists(name) ? fs::path(name) : fs::path();
  const char* path_env = std::getenv("PATH");
  if (path_env == nullptr) return {};
  std::istringstream dirs(path_env);
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    const fs::path candidate = fs::path(dir.empty() ? "." : dir) / name;
    std::error_code ec;
    if (fs::is_regular_file(candidate, ec)) return candidate;
  }
  return {};
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (const char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

Projection2d project_2d_export(const EmbeddingFile& embeddings, const std::string& method,
                               const fs::path& path, const ExternalTsneOptions& tsne) {
  const Eigen::Index n = embeddings.vectors.rows();
  if (n < 2) throw EvaluationError("2-D projection needs at least 2 samples");
  Projection2d proj{embeddings.sample_ids, embeddings.class_ids, Matrix()};

  if (method == "pca") {
    const EmbeddingBatch unit = embeddings.to_batch();
    proj.coords = pca_project(fit_pca2(unit.vectors), unit.vectors);
  } else if (method == "external-tsne") {
    std::string command = tsne.command;
    if (command.empty()) {
      const char* env = std::getenv("TMA_TSNE_CMD");
      command = env != nullptr && *env != '\0' ? env : "tma-tsne";
    }
    const fs::path exe = find_executable(command);
    if (exe.empty()) {
      throw EvaluationError("external t-SNE tool '" + command +
                            "' not found; install it, set TMA_TSNE_CMD, or use --method pca");
    }
    fs::path input = path;
    input.replace_extension(".tsne-input.tme");
    fs::path raw = path;
    raw.replace_extension(".tsne-output.csv");
    write_embeddings(input, embeddings);
    const std::string cmd = shell_quote(exe.string()) + " --input " + shell_quote(input.string()) +
                            " --output " + shell_quote(raw.string()) + " --perplexity " +
                            format_number(tsne.perplexity) + " --seed " + std::to_string(tsne.seed);
    if (std::system(cmd.c_str()) != 0) {
      throw EvaluationError("external t-SNE tool failed: " + cmd);
    }
    std::ifstream in(raw);
    if (!in) throw EvaluationError("external t-SNE tool produced no output at " + raw.string());
    proj.coords.resize(n, 2);
    std::string line;
    Eigen::Index row = 0;
    while (std::getline(in, line)) {
      const auto fields = split_csv_line(line);
      if (fields.size() < 2) continue;
      char* end = nullptr;
      const double x = std::strtod(fields[0].c_str(), &end);
      if (end == fields[0].c_str()) continue;  // header
      if (row >= n) throw EvaluationError("external t-SNE tool returned too many rows");
      proj.coords(row, 0) = x;
      proj.coords(row, 1) = std::strtod(fields[1].c_str(), nullptr);
      ++row;
    }
    if (row != n) throw EvaluationError("external t-SNE tool returned " + std::to_string(row) +
                                        " rows for " + std::to_string(n) + " samples");
    fs::path params = path;
    params.replace_extension(".tsne.json");
    std::ofstream(params) << nlohmann::json{{"tool", exe.string()},
                                            {"perplexity", tsne.perplexity},
                                            {"seed", tsne.seed},
                                            {"input", input.filename().string()}}
                                 .dump(2)
                          << '\n';
  } else {
    throw UsageError("unknown projection method '" + method + "' (pca|external-tsne)");
  }

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample_id,x,y,class_id\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    out << proj.sample_ids[r] << ',' << format_number(proj.coords(i, 0)) << ','
        << format_number(proj.coords(i, 1)) << ',' << proj.class_ids[r] << '\n';
  }
  return proj;
}

namespace {

constexpr std::array<std::array<float, 3>, 10> kPalette = {{
    {0.12F, 0.47F, 0.71F}, {1.00F, 0.50F, 0.05F}, {0.17F, 0.63F, 0.17F}, {0.84F, 0.15F, 0.16F},
    {0.58F, 0.40F, 0.74F}, {0.55F, 0.34F, 0.29F}, {0.89F, 0.47F, 0.76F}, {0.50F, 0.50F, 0.50F},
    {0.74F, 0.74F, 0.13F}, {0.09F, 0.75F, 0.81F},
}};

}  // namespace

Image render_scatter(const Matrix& coords, std::span<const int> labels, int size) {
  Image out(size, size, 3, 1.0F);
  if (coords.rows() == 0) return out;
  const int margin = 8;
  const double lo_x = coords.col(0).minCoeff();
  const double hi_x = coords.col(0).maxCoeff();
  const double lo_y = coords.col(1).minCoeff();
  const double hi_y = coords.col(1).maxCoeff();
  auto scale = [&](double v, double lo, double hi) {
    return hi > lo ? margin + (v - lo) / (hi - lo) * (size - 1 - 2 * margin) : size / 2.0;
  };
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const double cx = scale(coords(i, 0), lo_x, hi_x);
    const double cy = size - 1 - scale(coords(i, 1), lo_y, hi_y);
    const auto& color = kPalette[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]) % kPalette.size()];
    for (int y = static_cast<int>(cy) - 3; y <= static_cast<int>(cy) + 3; ++y) {
      for (int x = static_cast<int>(cx) - 3; x <= static_cast<int>(cx) + 3; ++x) {
        if (x < 0 || y < 0 || x >= size || y >= size) continue;
        if (std::hypot(x - cx, y - cy) > 3.0) continue;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = color[static_cast<std::size_t>(c)];
      }
    }
  }
  return out;
}

Image render_contact_sheet(const Image& query, std::span<const Image> neighbors, int thumb_size) {
  constexpr int kBorder = 3;
  const int cell = thumb_size + 2 * kBorder;
  Image sheet(cell, cell * static_cast<int>(1 + neighbors.size()), 3);
  auto place = [&](const Image& src, int slot, std::array<float, 3> border) {
    const Image thumb = to_channels(resize_bilinear(src, thumb_size, thumb_size), 3);
    for (int y = 0; y < cell; ++y) {
      for (int x = 0; x < cell; ++x) {
        const bool edge = y < kBorder || x < kBorder || y >= cell - kBorder || x >= cell - kBorder;
        for (int c = 0; c < 3; ++c) {
          sheet.at(y, slot * cell + x, c) =
              edge ? border[static_cast<std::size_t>(c)] : thumb.at(y - kBorder, x - kBorder, c);
        }
      }
    }
  };
  place(query, 0, {0.1F, 0.9F, 0.1F});
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    place(neighbors[i], static_cast<int>(i) + 1, {0.0F, 0.0F, 0.0F});
  }
  return sheet;
}

// ---------------------------------------------------------------- reports

EvaluationReport evaluate(const EncoderSet& set, const ClassTaxonomy& taxonomy,
                          const std::vector<ModalitySample>& test,
                          const std::vector<ModalitySample>& train,
                          const EvaluationOptions& options) {
  if (test.empty()) throw EvaluationError("evaluation set is empty");
  std::vector<std::string> prompts;
  for (int k = 0; k < taxonomy.size(); ++k) prompts.push_back(render_prompt(taxonomy, k));
  const EmbeddingBatch prompt_batch = normalize({set.text().encode(prompts), Modality::kText, false});

  const EmbeddingFile images = compute_embeddings(set, test, Modality::kImage);
  const EmbeddingBatch image_batch = images.to_batch();
  const auto predicted = predict_by_similarity(image_batch, prompt_batch);

  EvaluationReport report;
  report.confusion = ConfusionMatrix::from_predictions(images.class_ids, predicted, taxonomy.size());
  report.accuracy = accuracy(report.confusion);
  report.macro_f1 = macro_f1(report.confusion);
  if (test.size() >= 2) {
    const auto results = retrieve(image_batch, images.class_ids, images.sample_ids, std::nullopt);
    report.map_at_k = mean_average_precision(results, options.map_k);
    report.map_all = mean_average_precision(results, std::nullopt);
  }
  if (options.linear_probe && !train.empty()) {
    const EmbeddingFile train_emb = compute_embeddings(set, train, Modality::kImage);
    const LinearProbe probe = LinearProbe::fit(train_emb.to_batch().vectors, train_emb.class_ids,
                                               taxonomy.size());
    report.probe_confusion = ConfusionMatrix::from_predictions(
        images.class_ids, probe.predict(image_batch.vectors), taxonomy.size());
  }
  return report;
}

}  // namespace tma
