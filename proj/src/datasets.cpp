#include "tma/datasets.hpp"

#include "tma/image_io.hpp"

#include <hdf5.h>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#ifndef TMA_ASSETS_DIR
#define TMA_ASSETS_DIR "assets"
#endif

namespace tma {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string zero_pad(std::size_t value, int width) {
  std::string digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width) {
    digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  }
  return digits;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

// ---------------------------------------------------------------- taxonomy

ClassTaxonomy::ClassTaxonomy(std::vector<TaxonomyClass> classes, std::vector<Image> symbols)
    : classes_(std::move(classes)), symbols_(std::move(symbols)) {
  if (classes_.size() != symbols_.size()) {
    throw DatasetError("taxonomy needs exactly one symbol per class");
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    const auto& c = classes_[i];
    if (c.id != static_cast<int>(i)) {
      throw DatasetError("taxonomy class ids must be 0..K-1 in order; position " +
                         std::to_string(i) + " has id " + std::to_string(c.id));
    }
    if (c.name.empty()) throw DatasetError("taxonomy class " + std::to_string(i) + " has no name");
    if (!names.insert(c.name).second) throw DatasetError("duplicate class name '" + c.name + "'");
    if (c.article != "a" && c.article != "an") {
      throw DatasetError("class '" + c.name + "' has article '" + c.article + "', expected a/an");
    }
    if (symbols_[i].pixels.empty()) {
      throw DatasetError("class '" + c.name + "' has an empty symbol");
    }
  }
}

ClassTaxonomy ClassTaxonomy::load_json(const fs::path& path, int symbol_size) {
  const json doc = read_json_file(path);
  if (!doc.is_array()) throw DatasetError(path.string() + ": taxonomy must be a JSON list");
  std::vector<TaxonomyClass> classes;
  std::vector<Image> symbols;
  for (const auto& row : doc) {
    TaxonomyClass c;
    try {
      c.id = row.at("id").get<int>();
      c.name = row.at("name").get<std::string>();
      c.article = row.at("article").get<std::string>();
      c.symbol_path = row.at("symbol_path").get<std::string>();
    } catch (const json::exception& e) {
      throw DatasetError(path.string() + ": bad taxonomy row: " + e.what());
    }
    fs::path symbol_file = c.symbol_path.is_absolute() ? c.symbol_path
                                                       : path.parent_path() / c.symbol_path;
    Image symbol;
    try {
      symbol = read_png(symbol_file);
    } catch (const IoError& e) {
      throw DatasetError("symbol asset for class " + std::to_string(c.id) + ": " + e.what());
    }
    if (symbol_size > 0) symbol = resize_bilinear(symbol, symbol_size, symbol_size);
    classes.push_back(std::move(c));
    symbols.push_back(std::move(symbol));
  }
  std::vector<std::size_t> order(classes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return classes[a].id < classes[b].id; });
  std::vector<TaxonomyClass> sorted_classes;
  std::vector<Image> sorted_symbols;
  for (const auto i : order) {
    sorted_classes.push_back(classes[i]);
    sorted_symbols.push_back(symbols[i]);
  }
  return ClassTaxonomy(std::move(sorted_classes), std::move(sorted_symbols));
}

void ClassTaxonomy::save_json(const fs::path& path) const {
  json doc = json::array();
  for (const auto& c : classes_) {
    doc.push_back({{"id", c.id},
                   {"name", c.name},
                   {"article", c.article},
                   {"symbol_path", c.symbol_path.generic_string()}});
  }
  write_text_file(path, doc.dump(2) + "\n");
}

const TaxonomyClass& ClassTaxonomy::at(int class_id) const {
  if (!contains(class_id)) {
    throw DatasetError("class id " + std::to_string(class_id) + " not in taxonomy of size " +
                       std::to_string(size()));
  }
  return classes_[static_cast<std::size_t>(class_id)];
}

const Image& ClassTaxonomy::symbol(int class_id) const {
  at(class_id);
  return symbols_[static_cast<std::size_t>(class_id)];
}

std::vector<std::string> ClassTaxonomy::names() const {
  std::vector<std::string> out;
  for (const auto& c : classes_) out.push_back(c.name);
  return out;
}

ClassTaxonomy ClassTaxonomy::with_symbol_size(int size) const {
  std::vector<Image> resized;
  for (const auto& s : symbols_) resized.push_back(resize_bilinear(s, size, size));
  return ClassTaxonomy(classes_, std::move(resized));
}

std::string render_prompt(const ClassTaxonomy& taxonomy, int class_id) {
  const auto& c = taxonomy.at(class_id);
  return "A picture of " + c.article + " " + c.name + ".";
}

// ---------------------------------------------------------------- splits

DatasetSplit split(const std::vector<ModalitySample>& samples, double test_fraction,
                   std::uint64_t seed, SplitMode mode) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw UsageError("test_fraction must lie in (0, 1), got " + std::to_string(test_fraction));
  }
  std::set<std::string> seen;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!seen.insert(samples[i].sample_id).second) {
      throw DatasetError("duplicate sample id '" + samples[i].sample_id + "'");
    }
    by_class[samples[i].class_id].push_back(i);
  }
  for (const auto& [cls, members] : by_class) {
    if (members.size() < 2) {
      throw DatasetError("class " + std::to_string(cls) + " has " +
                         std::to_string(members.size()) + " sample(s); splitting needs at least 2");
    }
  }

  std::vector<char> is_test(samples.size(), 0);
  if (mode == SplitMode::kStratified) {
    for (const auto& [cls, members] : by_class) {
      const auto n = static_cast<long>(members.size());
      const long wanted = std::clamp(std::lround(static_cast<double>(n) * test_fraction), 1L, n - 1);
      std::vector<std::size_t> shuffled = members;
      Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(cls) + 1));
      rng.shuffle(shuffled);
      for (long i = 0; i < wanted; ++i) is_test[shuffled[static_cast<std::size_t>(i)]] = 1;
    }
  } else {
    const auto n = static_cast<long>(samples.size());
    const long wanted = std::clamp(std::lround(static_cast<double>(n) * test_fraction), 1L, n - 1);
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    Rng rng(Rng::derive(seed, 0));
    rng.shuffle(all);
    for (long i = 0; i < wanted; ++i) is_test[all[static_cast<std::size_t>(i)]] = 1;
  }

  DatasetSplit out{.seed = seed, .test_fraction = test_fraction};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (is_test[i] ? out.test_ids : out.train_ids).push_back(samples[i].sample_id);
  }
  return out;
}

std::vector<ModalitySample> select(const std::vector<ModalitySample>& samples,
                                   const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < samples.size(); ++i) index.emplace(samples[i].sample_id, i);
  std::vector<ModalitySample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw DatasetError("unknown sample id '" + id + "'");
    out.push_back(samples[it->second]);
  }
  return out;
}

// ---------------------------------------------------------------- synthetic

namespace {

struct SyntheticClassName {
  const char* name;
  const char* article;
};

constexpr std::array<SyntheticClassName, 10> kSyntheticNames = {{
    {"smooth disk analog", "a"},
    {"ring nebula analog", "a"},
    {"open two-arm spiral analog", "an"},
    {"edge-on bar analog", "an"},
    {"barred spiral analog", "a"},
    {"elongated cigar analog", "an"},
    {"merging pair analog", "a"},
    {"tightly wound spiral analog", "a"},
    {"edge-on bulge analog", "an"},
    {"irregular clump analog", "an"},
}};

void check_spec(const SyntheticSpec& spec) {
  if (spec.n_classes < 1 || spec.n_classes > 10) {
    throw UsageError("n_classes must be in 1..10, got " + std::to_string(spec.n_classes));
  }
  if (spec.samples_per_class < 1) throw UsageError("samples_per_class must be positive");
  if (spec.image_size < 8) throw UsageError("image_size must be at least 8");
  if (!(spec.noise_level >= 0.0) || !std::isfinite(spec.noise_level)) {
    throw UsageError("noise_level must be a finite non-negative number");
  }
}

}  // namespace

ShapeFamily synthetic_family(int class_id) {
  if (class_id < 0 || class_id >= 10) {
    throw UsageError("synthetic class id out of range: " + std::to_string(class_id));
  }
  return static_cast<ShapeFamily>(class_id);
}

ClassTaxonomy synthetic_taxonomy(int n_classes, int image_size) {
  check_spec({.n_classes = n_classes, .samples_per_class = 1, .image_size = image_size});
  std::vector<TaxonomyClass> classes;
  std::vector<Image> symbols;
  for (int k = 0; k < n_classes; ++k) {
    const auto& entry = kSyntheticNames[static_cast<std::size_t>(k)];
    classes.push_back({k, entry.name, entry.article,
                       fs::path("symbols") / ("class_" + std::to_string(k) + ".png")});
    symbols.push_back(render_symbol(synthetic_family(k), image_size));
  }
  return ClassTaxonomy(std::move(classes), std::move(symbols));
}

LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
  check_spec(spec);
  constexpr double kMaxRotation = 20.0 * std::numbers::pi / 180.0;
  LabeledDataset out{.taxonomy = synthetic_taxonomy(spec.n_classes, spec.image_size)};
  const std::size_t total = static_cast<std::size_t>(spec.n_classes) * spec.samples_per_class;
  out.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const int cls = static_cast<int>(i % static_cast<std::size_t>(spec.n_classes));
    Rng rng(Rng::derive(spec.seed, i));
    ShapePose pose;
    pose.rotation = rng.uniform(-kMaxRotation, kMaxRotation);
    pose.scale = rng.uniform(0.9, 1.1);
    pose.dx = rng.uniform(-0.05, 0.05);
    pose.dy = rng.uniform(-0.05, 0.05);
    pose.brightness = rng.uniform(0.75, 1.0);
    for (auto& t : pose.tint) t = rng.uniform(0.85, 1.0);
    pose.detail_seed = rng.next_u64() | 1U;

    Image photo = render_photo(synthetic_family(cls), pose, spec.image_size);
    if (spec.noise_level > 0.0) {
      for (auto& px : photo.pixels) {
        const double v = px + spec.noise_level * rng.normal();
        px = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
    out.samples.push_back({.image = std::move(photo),
                           .symbol = out.taxonomy.symbol(cls),
                           .text = render_prompt(out.taxonomy, cls),
                           .class_id = cls,
                           .sample_id = "syn-" + zero_pad(i, 6)});
  }
  return out;
}

void export_synthetic(const LabeledDataset& data, const SyntheticSpec& spec, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "symbols", ec);
  if (ec || !fs::is_directory(dir / "images")) {
    throw IoError("cannot create dataset directory " + dir.string());
  }
  for (int k = 0; k < data.taxonomy.size(); ++k) {
    write_png(dir / data.taxonomy.at(k).symbol_path, data.taxonomy.symbol(k));
  }
  data.taxonomy.save_json(dir / "taxonomy.json");

  json manifest;
  manifest["format"] = "tma-synthetic-1";
  manifest["spec"] = {{"n_classes", spec.n_classes},
                      {"samples_per_class", spec.samples_per_class},
                      {"image_size", spec.image_size},
                      {"noise_level", spec.noise_level},
                      {"seed", spec.seed}};
  json rows = json::array();
  for (const auto& s : data.samples) {
    const fs::path rel = fs::path("images") / (s.sample_id + ".png");
    write_png(dir / rel, s.image);
    rows.push_back({{"sample_id", s.sample_id},
                    {"class_id", s.class_id},
                    {"text", s.text},
                    {"image", rel.generic_string()}});
  }
  manifest["samples"] = std::move(rows);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

LabeledDataset load_synthetic_dir(const fs::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  LabeledDataset out;
  try {
    const int image_size = manifest.at("spec").at("image_size").get<int>();
    out.taxonomy = ClassTaxonomy::load_json(dir / "taxonomy.json", image_size);
    for (const auto& row : manifest.at("samples")) {
      ModalitySample s;
      s.sample_id = row.at("sample_id").get<std::string>();
      s.class_id = row.at("class_id").get<int>();
      s.text = row.at("text").get<std::string>();
      if (!out.taxonomy.contains(s.class_id)) {
        throw DatasetError("sample '" + s.sample_id + "' has class " +
                           std::to_string(s.class_id) + " outside the taxonomy");
      }
      if (s.text != render_prompt(out.taxonomy, s.class_id)) {
        throw DatasetError("sample '" + s.sample_id + "' text does not match its class prompt");
      }
      s.image = read_png(dir / row.at("image").get<std::string>());
      s.symbol = out.taxonomy.symbol(s.class_id);
      out.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DatasetError("malformed manifest in " + dir.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw DatasetError(e.what());
  }
  return out;
}

// ---------------------------------------------------------------- HDF5 loaders

fs::path bundled_assets_dir() {
  if (const char* env = std::getenv("TMA_ASSETS_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return TMA_ASSETS_DIR;
}

namespace {

class H5Handle {
 public:
  using Closer = herr_t (*)(hid_t);
  H5Handle(hid_t id, Closer closer) : id_(id), closer_(closer) {}
  ~H5Handle() {
    if (id_ >= 0) closer_(id_);
  }
  H5Handle(const H5Handle&) = delete;
  H5Handle& operator=(const H5Handle&) = delete;
  hid_t get() const { return id_; }
  bool valid() const { return id_ >= 0; }

 private:
  hid_t id_;
  Closer closer_;
};

struct ArrayFileLayout {
  const char* dataset;  // for messages
  const char* labels_name;
  int height;
  int width;
  int n_classes;
};

// Reads one HDF5 file of uint8 images plus integer labels; returns nothing
// unless the whole file validates and decodes.
std::vector<ModalitySample> read_labeled_hdf5(const fs::path& path, const ArrayFileLayout& layout,
                                              const ClassTaxonomy& taxonomy,
                                              const std::string& id_prefix, int image_size) {
  const std::string where = std::string(layout.dataset) + " file " + path.string();
  if (!fs::exists(path)) throw DatasetError(where + ": file not found");
  H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);

  H5Handle file(H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
  if (!file.valid()) throw DatasetError(where + ": not a readable HDF5 container");
  H5Handle images(H5Dopen2(file.get(), "images", H5P_DEFAULT), H5Dclose);
  if (!images.valid()) throw DatasetError(where + ": missing dataset 'images'");
  H5Handle labels(H5Dopen2(file.get(), layout.labels_name, H5P_DEFAULT), H5Dclose);
  if (!labels.valid()) {
    throw DatasetError(where + ": missing dataset '" + layout.labels_name + "'");
  }

  H5Handle image_space(H5Dget_space(images.get()), H5Sclose);
  const int rank = H5Sget_simple_extent_ndims(image_space.get());
  if (rank != 4) throw DatasetError(where + ": 'images' must be rank 4, got " + std::to_string(rank));
  hsize_t dims[4] = {0, 0, 0, 0};
  H5Sget_simple_extent_dims(image_space.get(), dims, nullptr);
  const auto count = static_cast<std::size_t>(dims[0]);
  if (count > 0 && (dims[1] != static_cast<hsize_t>(layout.height) ||
                    dims[2] != static_cast<hsize_t>(layout.width) || dims[3] != 3)) {
    throw DatasetError(where + ": record 0 has image shape " + std::to_string(dims[1]) + "x" +
                       std::to_string(dims[2]) + "x" + std::to_string(dims[3]) + ", expected " +
                       std::to_string(layout.height) + "x" + std::to_string(layout.width) + "x3");
  }

  H5Handle label_space(H5Dget_space(labels.get()), H5Sclose);
  const hssize_t label_count = H5Sget_simple_extent_npoints(label_space.get());
  if (label_count < 0 || static_cast<std::size_t>(label_count) != count) {
    throw DatasetError(where + ": " + std::to_string(count) + " images but " +
                       std::to_string(label_count) + " labels");
  }
  std::vector<long long> label_values(count);
  if (count > 0 && H5Dread(labels.get(), H5T_NATIVE_LLONG, H5S_ALL, H5S_ALL, H5P_DEFAULT,
                           label_values.data()) < 0) {
    throw DatasetError(where + ": cannot read labels (truncated or corrupt file)");
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (label_values[i] < 0 || label_values[i] >= layout.n_classes) {
      throw DatasetError(where + ": record " + std::to_string(i) + " has label " +
                         std::to_string(label_values[i]) + " outside 0.." +
                         std::to_string(layout.n_classes - 1));
    }
  }

  const std::size_t record_bytes = static_cast<std::size_t>(layout.height) * layout.width * 3;
  std::vector<unsigned char> buffer(record_bytes);
  hsize_t mem_dims[1] = {record_bytes};
  H5Handle mem_space(H5Screate_simple(1, mem_dims, nullptr), H5Sclose);
  const int out_size = image_size > 0 ? image_size : layout.height;
  const ClassTaxonomy sized = taxonomy.with_symbol_size(out_size);

  std::vector<ModalitySample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    hsize_t start[4] = {i, 0, 0, 0};
    hsize_t extent[4] = {1, dims[1], dims[2], dims[3]};
    H5Sselect_hyperslab(image_space.get(), H5S_SELECT_SET, start, nullptr, extent, nullptr);
    if (H5Dread(images.get(), H5T_NATIVE_UCHAR, mem_space.get(), image_space.get(), H5P_DEFAULT,
                buffer.data()) < 0) {
      throw DatasetError(where + ": cannot read record " + std::to_string(i) +
                         " (truncated or corrupt file)");
    }
    Image img(layout.height, layout.width, 3);
    for (std::size_t b = 0; b < record_bytes; ++b) img.pixels[b] = buffer[b] / 255.0F;
    if (out_size != layout.height) img = resize_bilinear(img, out_size, out_size);
    const int cls = static_cast<int>(label_values[i]);
    samples.push_back({.image = std::move(img),
                       .symbol = sized.symbol(cls),
                       .text = render_prompt(sized, cls),
                       .class_id = cls,
                       .sample_id = id_prefix + zero_pad(i, 6)});
  }
  return samples;
}

ClassTaxonomy bundled_or_given(const LoadOptions& options, const char* bundled_name,
                               int expected_classes, int native_size) {
  const fs::path path = options.taxonomy_path.empty()
                            ? bundled_assets_dir() / "taxonomies" / bundled_name
                            : options.taxonomy_path;
  ClassTaxonomy taxonomy = ClassTaxonomy::load_json(
      path, options.image_size > 0 ? options.image_size : native_size);
  if (taxonomy.size() != expected_classes) {
    throw DatasetError(path.string() + ": expected " + std::to_string(expected_classes) +
                       " classes, found " + std::to_string(taxonomy.size()));
  }
  return taxonomy;
}

}  // namespace

LabeledDataset load_galaxy10(const fs::path& path, const LoadOptions& options) {
  if (!fs::exists(path)) throw DatasetError("Galaxy10 file not found: " + path.string());
  LabeledDataset out{.taxonomy = bundled_or_given(options, "galaxy10.json", 10, 256)};
  out.samples = read_labeled_hdf5(path, {"Galaxy10", "ans", 256, 256, 10}, out.taxonomy,
                                  "galaxy10-", options.image_size);
  return out;
}

LabeledDataset load_galaxymnist(const fs::path& path, const LoadOptions& options) {
  if (!fs::exists(path)) throw DatasetError("GalaxyMNIST path not found: " + path.string());
  LabeledDataset out{.taxonomy = bundled_or_given(options, "galaxymnist.json", 4, 64)};
  const ArrayFileLayout layout{"GalaxyMNIST", "labels", 64, 64, 4};
  if (fs::is_directory(path)) {
    for (const char* part : {"train", "test"}) {
      auto chunk = read_labeled_hdf5(path / (std::string(part) + "_dataset.hdf5"), layout,
                                     out.taxonomy, std::string("galaxymnist-") + part + "-",
                                     options.image_size);
      std::move(chunk.begin(), chunk.end(), std::back_inserter(out.samples));
    }
  } else {
    out.samples = read_labeled_hdf5(path, layout, out.taxonomy, "galaxymnist-", options.image_size);
  }
  if (options.image_size > 0) out.taxonomy = out.taxonomy.with_symbol_size(options.image_size);
  return out;
}

// ---------------------------------------------------------------- batching

Image augment_symbol(const Image& symbol, Rng& rng) {
  const auto quarter_turns = static_cast<int>(rng.below(4));
  const bool flip = rng.below(2) == 1;
  const double scale = rng.uniform(0.9, 1.1);

  const int h = symbol.height;
  const int w = symbol.width;
  Image scaled(h, w, symbol.channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sy = (y + 0.5 - h / 2.0) / scale + h / 2.0 - 0.5;
      const double sx = (x + 0.5 - w / 2.0) / scale + w / 2.0 - 0.5;
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      const double wy = sy - y0;
      const double wx = sx - x0;
      for (int c = 0; c < symbol.channels; ++c) {
        auto px = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
          return symbol.at(yy, xx, c);
        };
        const double v = (px(y0, x0) * (1 - wx) + px(y0, x0 + 1) * wx) * (1 - wy) +
                         (px(y0 + 1, x0) * (1 - wx) + px(y0 + 1, x0 + 1) * wx) * wy;
        scaled.at(y, x, c) = static_cast<float>(v);
      }
    }
  }

  // Non-square symbols only admit the half turn.
  Image out(h, w, symbol.channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int sy = y;
      int sx = x;
      if (h == w) {
        for (int t = 0; t < quarter_turns; ++t) {
          const int ny = sx;
          sx = w - 1 - sy;
          sy = ny;
        }
      } else if (quarter_turns >= 2) {
        sy = h - 1 - sy;
        sx = w - 1 - sx;
      }
      if (flip) sx = w - 1 - sx;
      for (int c = 0; c < symbol.channels; ++c) out.at(y, x, c) = scaled.at(sy, sx, c);
    }
  }
  return out;
}

BatchStream::BatchStream(const std::vector<ModalitySample>& samples, std::vector<std::string> ids,
                         int batch_size, std::uint64_t seed, bool augment_symbols)
    : samples_(&samples), batch_size_(batch_size), seed_(seed), augment_(augment_symbols) {
  if (batch_size < 2) throw UsageError("batch_size must be at least 2");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < samples.size(); ++i) index.emplace(samples[i].sample_id, i);
  indices_.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw DatasetError("batch stream: unknown sample id '" + id + "'");
    indices_.push_back(it->second);
  }
  begin_epoch(0);
}

std::vector<std::size_t> BatchStream::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order(indices_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(Rng::derive(seed_, 2 * epoch + 1));
  rng.shuffle(order);
  return order;
}

void BatchStream::begin_epoch(std::uint64_t epoch) {
  epoch_ = epoch;
  order_ = epoch_order(epoch);
  cursor_ = 0;
}

std::size_t BatchStream::batches_per_epoch() const {
  const auto b = static_cast<std::size_t>(batch_size_);
  return (indices_.size() + b - 1) / b;
}

std::optional<ModalityBatch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
  ModalityBatch batch = assemble(cursor_, end);
  cursor_ = end;
  return batch;
}

ModalityBatch BatchStream::assemble(std::size_t begin, std::size_t end) const {
  ModalityBatch batch;
  for (std::size_t pos = begin; pos < end; ++pos) {
    const ModalitySample& s = (*samples_)[indices_[order_[pos]]];
    batch.images.push_back(s.image);
    if (augment_) {
      Rng rng(Rng::derive(Rng::derive(seed_, 2 * epoch_ + 2), order_[pos]));
      batch.symbols.push_back(augment_symbol(s.symbol, rng));
    } else {
      batch.symbols.push_back(s.symbol);
    }
    batch.texts.push_back(s.text);
    batch.class_ids.push_back(s.class_id);
    batch.sample_ids.push_back(s.sample_id);
  }
  return batch;
}

BatchStream make_batches(const std::vector<ModalitySample>& samples, const DatasetSplit& split,
                         int batch_size, std::uint64_t seed, bool augment_symbols) {
  return BatchStream(samples, split.train_ids, batch_size, seed, augment_symbols);
}

PrefetchedEpoch::PrefetchedEpoch(BatchStream& stream, std::uint64_t epoch, std::size_t depth)
    : queue_(depth) {
  stream.begin_epoch(epoch);
  worker_ = std::thread([this, &stream] {
    try {
      while (auto batch = stream.next()) queue_.push(std::move(*batch));
    } catch (...) {
      failure_ = std::current_exception();
    }
    queue_.close();
  });
}

PrefetchedEpoch::~PrefetchedEpoch() {
  queue_.close();
  if (worker_.joinable()) worker_.join();
}

std::optional<ModalityBatch> PrefetchedEpoch::next() {
  auto batch = queue_.pop();
  if (!batch && failure_) std::rethrow_exception(failure_);
  return batch;
}

}  // namespace tma
