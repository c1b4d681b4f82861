#include "tma/encoders.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#ifndef TMA_ASSETS_DIR
#define TMA_ASSETS_DIR "assets"
#endif

namespace tma {
namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint and embedding files are written in host order");

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::kImage:
      return "image";
    case Modality::kSymbol:
      return "symbol";
    case Modality::kText:
      return "text";
  }
  return "image";
}

Modality modality_from_name(std::string_view name) {
  if (name == "image") return Modality::kImage;
  if (name == "symbol") return Modality::kSymbol;
  if (name == "text") return Modality::kText;
  throw UsageError("unknown modality '" + std::string(name) + "'");
}

namespace {

void check_finite(const Matrix& m, const std::string& layer) {
  if (!m.allFinite()) throw EncoderError("non-finite activation in layer " + layer);
}

}  // namespace

// ---------------------------------------------------------------- image

ImageEncoder::ImageEncoder(ImageEncoderConfig config, Rng& rng) : config_(std::move(config)) {
  if (config_.embed_dim < 1) throw UsageError("embed_dim must be positive");
  int extent = config_.image_size;
  int channels = config_.channels;
  for (const auto& spec : config_.convs) {
    Conv2d conv(channels, spec.out_channels, spec.kernel, spec.stride);
    extent = conv.out_extent(extent);
    if (extent < 1) {
      throw UsageError("image_size " + std::to_string(config_.image_size) +
                       " is too small for the conv stack");
    }
    he_uniform(conv.weight.value, spec.kernel * spec.kernel * channels, rng);
    convs.push_back(std::move(conv));
    channels = spec.out_channels;
  }
  head = Linear(extent * extent * channels, config_.embed_dim);
  orthogonal(head.weight.value, rng);
}

Matrix ImageEncoder::encode(std::span<const Image> images) const {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return forward(ptrs, nullptr);
}

Matrix ImageEncoder::forward(std::span<const Image* const> images, Tape* tape) const {
  const int batch = static_cast<int>(images.size());
  const int size = config_.image_size;
  const int ch = config_.channels;
  Matrix act(static_cast<Eigen::Index>(batch) * size * size, ch);
  for (int b = 0; b < batch; ++b) {
    const Image& img = *images[static_cast<std::size_t>(b)];
    if (img.height != size || img.width != size || img.channels != ch) {
      throw EncoderError("input " + std::to_string(b) + " has shape " +
                         std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                         std::to_string(img.channels) + ", encoder expects " +
                         std::to_string(size) + "x" + std::to_string(size) + "x" +
                         std::to_string(ch));
    }
    const Eigen::Index base = static_cast<Eigen::Index>(b) * size * size;
    for (int p = 0; p < size * size; ++p) {
      for (int c = 0; c < ch; ++c) {
        const auto k = static_cast<std::size_t>(c);
        act(base + p, c) =
            (img.pixels[static_cast<std::size_t>(p) * ch + k] - config_.mean[k]) / config_.stddev[k];
      }
    }
  }
  check_finite(act, "image.input");

  if (tape != nullptr) {
    *tape = Tape{};
    tape->batch = batch;
  }
  int extent = size;
  for (std::size_t l = 0; l < convs.size(); ++l) {
    Matrix cols = convs[l].im2col(act, batch, extent, extent);
    act = convs[l].apply(cols).cwiseMax(0.0);
    check_finite(act, "image.conv" + std::to_string(l));
    if (tape != nullptr) {
      tape->cols.push_back(std::move(cols));
      tape->outputs.push_back(act);
      tape->extents.push_back({extent, extent});
    }
    extent = convs[l].out_extent(extent);
  }
  const Eigen::Map<const Matrix> flat(act.data(), batch, act.size() / std::max(batch, 1));
  Matrix out = head.apply(flat);
  check_finite(out, "image.head");
  return out;
}

void ImageEncoder::backward(const Tape& tape, const Matrix& grad_out) {
  const int batch = tape.batch;
  const Matrix& last = tape.outputs.back();
  const Eigen::Map<const Matrix> flat(last.data(), batch, last.size() / std::max(batch, 1));
  Matrix grad_flat = head.backward(flat, grad_out);
  Matrix grad = Eigen::Map<Matrix>(grad_flat.data(), last.rows(), last.cols());
  for (std::size_t l = convs.size(); l-- > 0;) {
    grad = grad.cwiseProduct((tape.outputs[l].array() > 0.0).cast<double>().matrix());
    const auto [h, w] = tape.extents[l];
    grad = convs[l].backward(tape.cols[l], grad, batch, h, w, l > 0);
  }
}

std::vector<NamedParameter> ImageEncoder::parameters(const std::string& prefix) {
  std::vector<NamedParameter> out;
  for (std::size_t l = 0; l < convs.size(); ++l) {
    const std::string base = prefix + ".conv" + std::to_string(l);
    out.push_back({base + ".weight", &convs[l].weight});
    out.push_back({base + ".bias", &convs[l].bias});
  }
  out.push_back({prefix + ".head.weight", &head.weight});
  out.push_back({prefix + ".head.bias", &head.bias});
  return out;
}

std::size_t ImageEncoder::parameter_count() const {
  std::size_t n = static_cast<std::size_t>(head.weight.value.size() + head.bias.value.size());
  for (const auto& c : convs) n += static_cast<std::size_t>(c.weight.value.size() + c.bias.value.size());
  return n;
}

void ImageEncoder::zero_grad() {
  for (auto& c : convs) {
    c.weight.zero_grad();
    c.bias.zero_grad();
  }
  head.weight.zero_grad();
  head.bias.zero_grad();
}

// ---------------------------------------------------------------- text

Vocabulary::Vocabulary() : tokens_{std::string(kOovToken)} {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty() || tokens_.front() != kOovToken) {
    throw EncoderError("vocabulary must start with the OOV token");
  }
}

Vocabulary Vocabulary::from_texts(std::span<const std::string> texts) {
  std::set<std::string> words;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) words.insert(std::move(w));
  }
  std::vector<std::string> tokens{std::string(kOovToken)};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::from_taxonomy(const ClassTaxonomy& taxonomy) {
  std::vector<std::string> prompts;
  for (int k = 0; k < taxonomy.size(); ++k) prompts.push_back(render_prompt(taxonomy, k));
  return from_texts(prompts);
}

std::vector<std::string> Vocabulary::split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (const char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isalnum(c) != 0) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    const auto it = std::lower_bound(tokens_.begin() + 1, tokens_.end(), w);
    ids.push_back(it != tokens_.end() && *it == w ? static_cast<int>(it - tokens_.begin()) : kOov);
  }
  if (ids.empty()) ids.push_back(kOov);
  return ids;
}

TextEncoder::TextEncoder(TextEncoderConfig config, Vocabulary vocab, Rng& rng)
    : embedding(Matrix::Zero(vocab.size(), config.token_dim)),
      mixing(config.token_dim, config.hidden_dim),
      head(config.hidden_dim, config.embed_dim),
      config_(config),
      vocab_(std::move(vocab)) {
  if (!std::is_sorted(vocab_.tokens().begin() + 1, vocab_.tokens().end())) {
    throw EncoderError("vocabulary tokens after the OOV token must be sorted");
  }
  for (Eigen::Index i = 0; i < embedding.value.size(); ++i) embedding.value.data()[i] = rng.normal();
  he_uniform(mixing.weight.value, config.token_dim, rng);
  orthogonal(head.weight.value, rng);
}

Matrix TextEncoder::encode(std::span<const std::string> texts) const { return forward(texts, nullptr); }

Matrix TextEncoder::forward(std::span<const std::string> texts, Tape* tape) const {
  const auto batch = static_cast<Eigen::Index>(texts.size());
  Matrix pooled = Matrix::Zero(batch, config_.token_dim);
  std::vector<std::vector<int>> tokens;
  tokens.reserve(texts.size());
  for (Eigen::Index b = 0; b < batch; ++b) {
    tokens.push_back(vocab_.tokenize(texts[static_cast<std::size_t>(b)]));
    for (const int id : tokens.back()) pooled.row(b) += embedding.value.row(id);
    pooled.row(b) /= static_cast<double>(tokens.back().size());
  }
  Matrix hidden = mixing.apply(pooled).array().tanh().matrix();
  check_finite(hidden, "text.mixing");
  Matrix out = head.apply(hidden);
  check_finite(out, "text.head");
  if (tape != nullptr) {
    tape->tokens = std::move(tokens);
    tape->pooled = std::move(pooled);
    tape->hidden = std::move(hidden);
  }
  return out;
}

void TextEncoder::backward(const Tape& tape, const Matrix& grad_out) {
  const Matrix grad_hidden = head.backward(tape.hidden, grad_out);
  const Matrix grad_pre =
      grad_hidden.cwiseProduct((1.0 - tape.hidden.array().square()).matrix());
  const Matrix grad_pooled = mixing.backward(tape.pooled, grad_pre);
  for (std::size_t b = 0; b < tape.tokens.size(); ++b) {
    const double share = 1.0 / static_cast<double>(tape.tokens[b].size());
    for (const int id : tape.tokens[b]) {
      embedding.grad.row(id) += share * grad_pooled.row(static_cast<Eigen::Index>(b));
    }
  }
}

std::vector<NamedParameter> TextEncoder::parameters(const std::string& prefix) {
  return {{prefix + ".embedding", &embedding},
          {prefix + ".mixing.weight", &mixing.weight},
          {prefix + ".mixing.bias", &mixing.bias},
          {prefix + ".head.weight", &head.weight},
          {prefix + ".head.bias", &head.bias}};
}

std::size_t TextEncoder::parameter_count() const {
  return static_cast<std::size_t>(embedding.value.size() + mixing.weight.value.size() +
                                  mixing.bias.value.size() + head.weight.value.size() +
                                  head.bias.value.size());
}

void TextEncoder::zero_grad() {
  embedding.zero_grad();
  mixing.weight.zero_grad();
  mixing.bias.zero_grad();
  head.weight.zero_grad();
  head.bias.zero_grad();
}

// ---------------------------------------------------------------- temperature

TemperatureParam::TemperatureParam() : param(Matrix::Constant(1, 1, std::log(1.0 / 0.07)), false) {}

TemperatureParam TemperatureParam::from_tau(double tau) {
  if (!(tau > 0.0)) throw UsageError("temperature must be positive");
  return from_log_inverse(-std::log(tau));
}

TemperatureParam TemperatureParam::from_log_inverse(double value) {
  TemperatureParam t;
  t.set_log_inverse_tau(value);
  return t;
}

double TemperatureParam::inverse_tau() const {
  return std::min(std::exp(log_inverse_tau()), kMaxInverse);
}

bool TemperatureParam::clamped() const { return std::exp(log_inverse_tau()) > kMaxInverse; }

void TemperatureParam::project() {
  set_log_inverse_tau(std::min(log_inverse_tau(), std::log(kMaxInverse)));
}

// ---------------------------------------------------------------- encoder set

EncoderSet::EncoderSet(ImageEncoder image, TextEncoder text, TemperatureParam temperature)
    : image_(std::make_shared<ImageEncoder>(std::move(image))),
      symbol_(image_),
      text_(std::make_shared<TextEncoder>(std::move(text))),
      temperature_(std::move(temperature)) {
  if (image_->embed_dim() != text_->embed_dim()) {
    throw EncoderError("image and text encoders disagree on embed_dim");
  }
}

EncoderSet EncoderSet::stage2(ImageEncoder image, ImageEncoder symbol, TextEncoder text,
                              TemperatureParam temperature) {
  EncoderSet set(std::move(image), std::move(text), std::move(temperature));
  if (symbol.embed_dim() != set.embed_dim()) {
    throw EncoderError("symbol encoder embed_dim differs from the image encoder");
  }
  set.symbol_ = std::make_shared<ImageEncoder>(std::move(symbol));
  return set;
}

EncoderSet::EncoderSet(const EncoderSet& other)
    : backbone(other.backbone), temperature_(other.temperature_) {
  if (other.image_) image_ = std::make_shared<ImageEncoder>(*other.image_);
  if (other.symbol_aliases_image()) {
    symbol_ = image_;
  } else if (other.symbol_) {
    symbol_ = std::make_shared<ImageEncoder>(*other.symbol_);
  }
  if (other.text_) text_ = std::make_shared<TextEncoder>(*other.text_);
}

EncoderSet& EncoderSet::operator=(const EncoderSet& other) {
  if (this != &other) {
    EncoderSet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::vector<NamedParameter> EncoderSet::parameters() {
  std::vector<NamedParameter> out = image_->parameters("image");
  if (!symbol_aliases_image()) {
    auto sym = symbol_->parameters("symbol");
    out.insert(out.end(), sym.begin(), sym.end());
  }
  auto txt = text_->parameters("text");
  out.insert(out.end(), txt.begin(), txt.end());
  out.push_back({"temperature.log_inverse_tau", &temperature_.param});
  return out;
}

std::size_t EncoderSet::parameter_count() const {
  std::size_t n = image_->parameter_count() + text_->parameter_count() + 1;
  if (!symbol_aliases_image()) n += symbol_->parameter_count();
  return n;
}

void EncoderSet::zero_grad() {
  image_->zero_grad();
  symbol_->zero_grad();
  text_->zero_grad();
  temperature_.param.zero_grad();
}

EncoderSet transfer_symbol_encoder(const EncoderSet& set) {
  if (set.stage() != 1) {
    throw EncoderError("transfer_symbol_encoder requires a stage-1 set; this set is stage 2");
  }
  EncoderSet out = EncoderSet::stage2(set.image(), set.image(), set.text(), set.temperature());
  out.backbone = set.backbone;
  return out;
}

EncoderSet with_independent_symbol_encoder(const EncoderSet& set, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 0x5359));
  ImageEncoder symbol(set.image().config(), rng);
  EncoderSet out = EncoderSet::stage2(set.image(), std::move(symbol), set.text(), set.temperature());
  out.backbone = set.backbone;
  return out;
}

EncoderSet build_toy_encoders(const ToyEncoderOptions& options, const Vocabulary& vocab,
                              std::uint64_t seed) {
  if (options.embed_dim < 8) throw UsageError("embed_dim must be at least 8");
  Rng image_rng(Rng::derive(seed, 0x494D47));
  Rng text_rng(Rng::derive(seed, 0x545854));
  ImageEncoderConfig image_config;
  image_config.image_size = options.image_size;
  image_config.convs = options.convs;
  image_config.embed_dim = options.embed_dim;
  ImageEncoder image(image_config, image_rng);
  TextEncoder text({options.token_dim, options.hidden_dim, options.embed_dim}, vocab, text_rng);
  return EncoderSet(std::move(image), std::move(text), TemperatureParam());
}

EncoderSet build_toy_encoders(int embed_dim, int image_size, const Vocabulary& vocab,
                              std::uint64_t seed) {
  return build_toy_encoders({.embed_dim = embed_dim, .image_size = image_size}, vocab, seed);
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'T', 'M', 'A', '1'};

json image_config_json(const ImageEncoderConfig& c) {
  json convs = json::array();
  for (const auto& s : c.convs) convs.push_back({s.out_channels, s.kernel, s.stride});
  return {{"image_size", c.image_size}, {"channels", c.channels}, {"convs", convs},
          {"embed_dim", c.embed_dim},   {"mean", c.mean},         {"std", c.stddev}};
}

ImageEncoderConfig image_config_from_json(const json& j) {
  ImageEncoderConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.channels = j.at("channels").get<int>();
  c.convs.clear();
  for (const auto& s : j.at("convs")) {
    c.convs.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()});
  }
  c.embed_dim = j.at("embed_dim").get<int>();
  c.mean = j.at("mean").get<std::array<double, 3>>();
  c.stddev = j.at("std").get<std::array<double, 3>>();
  return c;
}

}  // namespace

void save_checkpoint(const fs::path& path, const EncoderSet& set, const CheckpointInfo& info) {
  auto params = const_cast<EncoderSet&>(set).parameters();
  json manifest;
  manifest["format_version"] = 1;
  manifest["stage"] = set.stage();
  manifest["backbone"] = set.backbone;
  manifest["epoch"] = info.epoch;
  manifest["phase"] = info.phase;
  manifest["config_digest"] = info.config_digest;
  manifest["image"] = image_config_json(set.image().config());
  if (set.stage() == 2) manifest["symbol"] = image_config_json(set.symbol().config());
  const auto& tc = set.text().config();
  manifest["text"] = {{"token_dim", tc.token_dim},
                      {"hidden_dim", tc.hidden_dim},
                      {"embed_dim", tc.embed_dim},
                      {"vocab", set.text().vocab().tokens()}};
  json classes = json::array();
  for (const auto& [name, article] : info.classes) {
    classes.push_back({{"name", name}, {"article", article}});
  }
  manifest["classes"] = classes;
  json arrays = json::array();
  for (const auto& p : params) {
    arrays.push_back({{"name", p.name}, {"rows", p.param->value.rows()}, {"cols", p.param->value.cols()}});
  }
  manifest["arrays"] = arrays;

  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 4);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.param->value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.param->value.size())));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

CheckpointBundle load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError(path.string() + " is not a TMA1 checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 30)) throw IoError(path.string() + ": corrupt manifest length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string() + ": truncated manifest");

  CheckpointBundle bundle;
  try {
    const json manifest = json::parse(text);
    const int stage = manifest.at("stage").get<int>();
    Rng rng(0);
    ImageEncoder image(image_config_from_json(manifest.at("image")), rng);
    const json& t = manifest.at("text");
    TextEncoder text_enc({t.at("token_dim").get<int>(), t.at("hidden_dim").get<int>(),
                          t.at("embed_dim").get<int>()},
                         Vocabulary(t.at("vocab").get<std::vector<std::string>>()), rng);
    if (stage == 1) {
      bundle.set = EncoderSet(std::move(image), std::move(text_enc), TemperatureParam());
    } else if (stage == 2) {
      ImageEncoder symbol(image_config_from_json(manifest.at("symbol")), rng);
      bundle.set = EncoderSet::stage2(std::move(image), std::move(symbol), std::move(text_enc),
                                      TemperatureParam());
    } else {
      throw IoError(path.string() + ": unknown stage " + std::to_string(stage));
    }
    bundle.set.backbone = manifest.value("backbone", "toy");
    bundle.info.epoch = manifest.at("epoch").get<int>();
    bundle.info.phase = manifest.value("phase", "");
    bundle.info.config_digest = manifest.at("config_digest").get<std::string>();
    for (const auto& c : manifest.at("classes")) {
      bundle.info.classes.emplace_back(c.at("name").get<std::string>(),
                                       c.at("article").get<std::string>());
    }

    std::map<std::string, Parameter*> by_name;
    for (const auto& p : bundle.set.parameters()) by_name[p.name] = p.param;
    const json& arrays = manifest.at("arrays");
    if (arrays.size() != by_name.size()) {
      throw IoError(path.string() + ": array inventory does not match the topology");
    }
    for (const auto& a : arrays) {
      const auto name = a.at("name").get<std::string>();
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw IoError(path.string() + ": unexpected array " + name);
      Matrix& value = it->second->value;
      if (value.rows() != a.at("rows").get<Eigen::Index>() ||
          value.cols() != a.at("cols").get<Eigen::Index>()) {
        throw IoError(path.string() + ": array " + name + " has the wrong shape");
      }
      in.read(reinterpret_cast<char*>(value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(value.size())));
      if (!in) throw IoError(path.string() + ": truncated array data at " + name);
    }
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": malformed manifest: " + e.what());
  } catch (const EncoderError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  bundle.set.zero_grad();
  return bundle;
}

// ---------------------------------------------------------------- pretrained

fs::path bundled_pretrained_registry() {
  if (const char* env = std::getenv("TMA_ASSETS_DIR"); env != nullptr && *env != '\0') {
    return fs::path(env) / "pretrained_registry.json";
  }
  return fs::path(TMA_ASSETS_DIR) / "pretrained_registry.json";
}

std::vector<PretrainedDescriptor> load_pretrained_registry(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw EncoderError("cannot open pretrained registry " + path.string());
  std::vector<PretrainedDescriptor> out;
  try {
    const json doc = json::parse(in);
    for (const auto& [name, entry] : doc.items()) {
      PretrainedDescriptor d;
      d.name = name;
      d.backbone = entry.at("backbone").get<std::string>();
      d.image_size = entry.at("image_size").get<int>();
      d.embed_dim = entry.at("embed_dim").get<int>();
      d.mean = entry.at("mean").get<std::array<double, 3>>();
      d.stddev = entry.at("std").get<std::array<double, 3>>();
      d.lr = entry.at("optimizer").at("lr").get<double>();
      d.weight_decay = entry.at("optimizer").at("weight_decay").get<double>();
      out.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw EncoderError("malformed pretrained registry " + path.string() + ": " + e.what());
  }
  return out;
}

const PretrainedDescriptor& find_descriptor(const std::vector<PretrainedDescriptor>& registry,
                                            std::string_view name) {
  for (const auto& d : registry) {
    if (d.name == name) return d;
  }
  std::string known;
  for (const auto& d : registry) known += (known.empty() ? "" : ", ") + d.name;
  throw UsageError("unknown pretrained descriptor '" + std::string(name) + "' (known: " + known + ")");
}

EncoderSet load_pretrained(const std::string& descriptor, const fs::path& weights,
                           const fs::path& registry) {
  const auto descriptors = load_pretrained_registry(registry);
  const PretrainedDescriptor& d = find_descriptor(descriptors, descriptor);
  if (!fs::exists(weights)) {
    throw EncoderError("pretrained weights for '" + descriptor + "' not found: " + weights.string());
  }
  CheckpointBundle bundle;
  try {
    bundle = load_checkpoint(weights);
  } catch (const IoError& e) {
    throw EncoderError("pretrained weights for '" + descriptor + "': " + e.what());
  }
  auto mismatch = [&](const std::string& what) {
    return EncoderError("topology mismatch for '" + descriptor + "' (" + weights.string() +
                        "): " + what);
  };
  if (d.backbone != "conv") {
    throw mismatch("descriptor expects a '" + d.backbone +
                   "' backbone, which has no in-process runtime; weights hold a conv backbone");
  }
  const auto& ic = bundle.set.image().config();
  if (ic.image_size != d.image_size) {
    throw mismatch("image_size " + std::to_string(ic.image_size) + " != " + std::to_string(d.image_size));
  }
  if (bundle.set.embed_dim() != d.embed_dim) {
    throw mismatch("embed_dim " + std::to_string(bundle.set.embed_dim()) + " != " +
                   std::to_string(d.embed_dim));
  }
  if (ic.mean != d.mean || ic.stddev != d.stddev) {
    throw mismatch("input normalization constants differ");
  }
  EncoderSet set = bundle.set.stage() == 1 ? std::move(bundle.set)
                                            : EncoderSet(bundle.set.image(), bundle.set.text(),
                                                         bundle.set.temperature());
  set.backbone = descriptor;
  return set;
}

}  // namespace tma
