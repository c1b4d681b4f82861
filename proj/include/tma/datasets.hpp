#pragma once

#include "tma/common.hpp"
#include "tma/shapes.hpp"

#include <condition_variable>
#include <deque>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace tma {

struct TaxonomyClass {
  int id = 0;
  std::string name;
  std::string article;  // "a" or "an"
  std::filesystem::path symbol_path;
};

/// Ordered class list with one schematic symbol per class.
class ClassTaxonomy {
 public:
  ClassTaxonomy() = default;
  /// Validates contiguous ids, articles, and one symbol per class.
  ClassTaxonomy(std::vector<TaxonomyClass> classes, std::vector<Image> symbols);

  /// Reads the JSON list of {id, name, article, symbol_path}. Relative symbol
  /// paths resolve against the file's directory; symbols are rasterized at
  /// `symbol_size` (0 keeps the PNG resolution).
  static ClassTaxonomy load_json(const std::filesystem::path& path, int symbol_size);
  void save_json(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(classes_.size()); }
  bool contains(int class_id) const { return class_id >= 0 && class_id < size(); }
  const TaxonomyClass& at(int class_id) const;
  const Image& symbol(int class_id) const;
  const std::vector<TaxonomyClass>& classes() const { return classes_; }
  std::vector<std::string> names() const;

  /// Same classes with symbols resampled to size x size.
  ClassTaxonomy with_symbol_size(int size) const;

 private:
  std::vector<TaxonomyClass> classes_;
  std::vector<Image> symbols_;
};

/// "A picture of " + article + " " + class_name + "."
std::string render_prompt(const ClassTaxonomy& taxonomy, int class_id);

struct ModalitySample {
  Image image;
  Image symbol;
  std::string text;
  int class_id = 0;
  std::string sample_id;
};

struct DatasetSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
};

enum class SplitMode { kStratified, kUniform };

/// Random train/test split. Stratified mode takes round(n_k * fraction) test
/// samples from each class, clamped so both sides keep at least one sample.
/// Ids keep dataset order within each side.
DatasetSplit split(const std::vector<ModalitySample>& samples, double test_fraction,
                   std::uint64_t seed, SplitMode mode = SplitMode::kStratified);

/// Subset of `samples` whose ids are listed, in listed order.
std::vector<ModalitySample> select(const std::vector<ModalitySample>& samples,
                                   const std::vector<std::string>& ids);

struct SyntheticSpec {
  int n_classes = 4;
  int samples_per_class = 200;
  int image_size = 32;
  double noise_level = 0.1;
  std::uint64_t seed = 0;
};

struct LabeledDataset {
  std::vector<ModalitySample> samples;
  ClassTaxonomy taxonomy;
};

/// Shape family used for synthetic class k.
ShapeFamily synthetic_family(int class_id);
ClassTaxonomy synthetic_taxonomy(int n_classes, int image_size);

/// Noisy soft-profile "photos" paired with clean class symbols. Sample i
/// belongs to class i % n_classes and is drawn from its own seeded stream.
LabeledDataset generate_synthetic(const SyntheticSpec& spec);

/// images/<id>.png, symbols/class_<k>.png, taxonomy.json, manifest.json.
void export_synthetic(const LabeledDataset& data, const SyntheticSpec& spec,
                      const std::filesystem::path& dir);
LabeledDataset load_synthetic_dir(const std::filesystem::path& dir);

struct LoadOptions {
  /// Taxonomy file; empty selects the bundled one.
  std::filesystem::path taxonomy_path;
  /// Resample images and symbols to this size after validation; 0 keeps native.
  int image_size = 0;
};

/// Galaxy10 DECaLS HDF5: "images" uint8 N x 256 x 256 x 3 and "ans" labels.
LabeledDataset load_galaxy10(const std::filesystem::path& path, const LoadOptions& options = {});

/// GalaxyMNIST HDF5 files ("images" uint8 N x 64 x 64 x 3, "labels"). `path`
/// is either one file or a directory holding train_dataset.hdf5 and
/// test_dataset.hdf5.
LabeledDataset load_galaxymnist(const std::filesystem::path& path,
                                const LoadOptions& options = {});

std::filesystem::path bundled_assets_dir();

struct ModalityBatch {
  std::vector<Image> images;
  std::vector<Image> symbols;
  std::vector<std::string> texts;
  std::vector<int> class_ids;
  std::vector<std::string> sample_ids;

  std::size_t size() const { return class_ids.size(); }
};

/// Rotation by a multiple of 90 degrees, optional horizontal flip, and a
/// center scale in [0.9, 1.1].
Image augment_symbol(const Image& symbol, Rng& rng);

/// Epoch-wise deterministic mini-batches over a fixed id list. The order for
/// epoch e depends only on (seed, e). The samples vector must outlive the
/// stream.
class BatchStream {
 public:
  BatchStream(const std::vector<ModalitySample>& samples, std::vector<std::string> ids,
              int batch_size, std::uint64_t seed, bool augment_symbols);

  void begin_epoch(std::uint64_t epoch);
  std::optional<ModalityBatch> next();

  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;
  std::size_t batches_per_epoch() const;
  std::size_t sample_count() const { return indices_.size(); }
  int batch_size() const { return batch_size_; }

 private:
  ModalityBatch assemble(std::size_t begin, std::size_t end) const;

  const std::vector<ModalitySample>* samples_;
  std::vector<std::size_t> indices_;
  int batch_size_;
  std::uint64_t seed_;
  bool augment_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

BatchStream make_batches(const std::vector<ModalitySample>& samples, const DatasetSplit& split,
                         int batch_size, std::uint64_t seed, bool augment_symbols);

/// Bounded FIFO handing values from one producer to one consumer.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  void push(T value) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(value));
    high_water_ = std::max(high_water_, items_.size());
    not_empty_.notify_one();
  }

  /// Blocks until a value arrives or the queue is closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t high_water() const {
    std::lock_guard lock(mutex_);
    return high_water_;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<T> items_;
  bool closed_ = false;
  std::size_t high_water_ = 0;
};

/// Runs one epoch of a BatchStream on a worker thread, keeping at most
/// `depth` assembled batches in flight. Batches arrive in stream order.
class PrefetchedEpoch {
 public:
  PrefetchedEpoch(BatchStream& stream, std::uint64_t epoch, std::size_t depth);
  ~PrefetchedEpoch();
  PrefetchedEpoch(const PrefetchedEpoch&) = delete;
  PrefetchedEpoch& operator=(const PrefetchedEpoch&) = delete;

  /// Rethrows a producer failure once the queue drains.
  std::optional<ModalityBatch> next();
  std::size_t max_in_flight() const { return queue_.high_water(); }

 private:
  BoundedQueue<ModalityBatch> queue_;
  std::exception_ptr failure_;
  std::thread worker_;
};

}  // namespace tma
