#pragma once

#include "tma/common.hpp"
#include "tma/datasets.hpp"
#include "tma/nn.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tma {

enum class Modality { kImage, kSymbol, kText };
std::string_view modality_name(Modality m);
Modality modality_from_name(std::string_view name);

struct ConvSpec {
  int out_channels = 8;
  int kernel = 3;
  int stride = 1;
};

struct ImageEncoderConfig {
  int image_size = 32;
  int channels = 3;
  std::vector<ConvSpec> convs = {{8, 3, 2}, {16, 3, 2}, {32, 3, 1}};
  int embed_dim = 32;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

/// Convolutional backbone (valid convs + ReLU, flattened) followed by a
/// linear projection head.
class ImageEncoder {
 public:
  struct Tape {
    int batch = 0;
    std::vector<Matrix> cols;     // unfolded input of each conv
    std::vector<Matrix> outputs;  // post-ReLU output of each conv
    std::vector<std::array<int, 2>> extents;  // input height/width of each conv
  };

  ImageEncoder() = default;
  ImageEncoder(ImageEncoderConfig config, Rng& rng);

  const ImageEncoderConfig& config() const { return config_; }
  int embed_dim() const { return config_.embed_dim; }

  /// Raw (unnormalized) embeddings, one row per image.
  Matrix encode(std::span<const Image> images) const;
  Matrix forward(std::span<const Image* const> images, Tape* tape) const;
  /// Accumulates parameter gradients for the tape's forward pass.
  void backward(const Tape& tape, const Matrix& grad_out);

  std::vector<NamedParameter> parameters(const std::string& prefix);
  std::size_t parameter_count() const;
  void zero_grad();

  std::vector<Conv2d> convs;
  Linear head;

 private:
  ImageEncoderConfig config_;
};

/// Lowercase word tokenizer over a fixed vocabulary; id 0 is the OOV token.
class Vocabulary {
 public:
  static constexpr int kOov = 0;
  static constexpr std::string_view kOovToken = "<oov>";

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);
  static Vocabulary from_texts(std::span<const std::string> texts);
  static Vocabulary from_taxonomy(const ClassTaxonomy& taxonomy);

  /// Lowercases and splits on anything that is not a letter or digit.
  static std::vector<std::string> split_words(std::string_view text);
  /// Never empty: a text without known words maps to {kOov}.
  std::vector<int> tokenize(std::string_view text) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
};

struct TextEncoderConfig {
  int token_dim = 32;
  int hidden_dim = 64;
  int embed_dim = 32;
};

/// Token embeddings mean-pooled, one tanh mixing layer, linear projection head.
class TextEncoder {
 public:
  struct Tape {
    std::vector<std::vector<int>> tokens;
    Matrix pooled;
    Matrix hidden;
  };

  TextEncoder() = default;
  TextEncoder(TextEncoderConfig config, Vocabulary vocab, Rng& rng);

  const TextEncoderConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  int embed_dim() const { return config_.embed_dim; }

  Matrix encode(std::span<const std::string> texts) const;
  Matrix forward(std::span<const std::string> texts, Tape* tape) const;
  void backward(const Tape& tape, const Matrix& grad_out);

  std::vector<NamedParameter> parameters(const std::string& prefix);
  std::size_t parameter_count() const;
  void zero_grad();

  Parameter embedding;  // vocab x token_dim
  Linear mixing;
  Linear head;

 private:
  TextEncoderConfig config_;
  Vocabulary vocab_;
};

/// Learnable log(1/tau). The effective inverse temperature is
/// exp(log_inverse_tau) clamped to (0, 100].
class TemperatureParam {
 public:
  static constexpr double kMaxInverse = 100.0;

  TemperatureParam();  // 1/tau = 1/0.07
  static TemperatureParam from_tau(double tau);
  static TemperatureParam from_log_inverse(double value);

  double log_inverse_tau() const { return param.value(0, 0); }
  void set_log_inverse_tau(double v) { param.value(0, 0) = v; }
  double inverse_tau() const;
  double tau() const { return 1.0 / inverse_tau(); }
  bool clamped() const;
  /// Pulls log_inverse_tau back to the clamp boundary after an update.
  void project();

  Parameter param;
};

/// E_img, E_sym, E_txt and the shared temperature. In stage 1 the symbol
/// encoder is the image encoder (same object); in stage 2 it is separate.
/// Copies are deep and keep that aliasing structure.
class EncoderSet {
 public:
  EncoderSet() = default;
  EncoderSet(ImageEncoder image, TextEncoder text, TemperatureParam temperature);
  static EncoderSet stage2(ImageEncoder image, ImageEncoder symbol, TextEncoder text,
                           TemperatureParam temperature);

  EncoderSet(const EncoderSet& other);
  EncoderSet& operator=(const EncoderSet& other);
  EncoderSet(EncoderSet&&) noexcept = default;
  EncoderSet& operator=(EncoderSet&&) noexcept = default;

  int stage() const { return symbol_aliases_image() ? 1 : 2; }
  bool symbol_aliases_image() const { return symbol_ == image_; }

  ImageEncoder& image() { return *image_; }
  const ImageEncoder& image() const { return *image_; }
  ImageEncoder& symbol() { return *symbol_; }
  const ImageEncoder& symbol() const { return *symbol_; }
  TextEncoder& text() { return *text_; }
  const TextEncoder& text() const { return *text_; }
  TemperatureParam& temperature() { return temperature_; }
  const TemperatureParam& temperature() const { return temperature_; }

  int embed_dim() const { return image_->embed_dim(); }

  /// Each distinct parameter once: image.*, symbol.* (stage 2 only), text.*,
  /// temperature.
  std::vector<NamedParameter> parameters();
  std::size_t parameter_count() const;
  void zero_grad();

  /// Free-form provenance ("toy" or a pretrained descriptor name).
  std::string backbone = "toy";

 private:
  std::shared_ptr<ImageEncoder> image_;
  std::shared_ptr<ImageEncoder> symbol_;
  std::shared_ptr<TextEncoder> text_;
  TemperatureParam temperature_;
};

/// Stage-2 set whose symbol encoder is a deep copy of the stage-1 image encoder.
EncoderSet transfer_symbol_encoder(const EncoderSet& set);

/// Stage-2 set with a freshly initialized symbol encoder (no warm-up transfer).
EncoderSet with_independent_symbol_encoder(const EncoderSet& set, std::uint64_t seed);

struct ToyEncoderOptions {
  int embed_dim = 32;
  int image_size = 32;
  std::vector<ConvSpec> convs = {{8, 3, 2}, {16, 3, 2}, {32, 3, 1}};
  int token_dim = 32;
  int hidden_dim = 64;
};

EncoderSet build_toy_encoders(const ToyEncoderOptions& options, const Vocabulary& vocab,
                              std::uint64_t seed);
EncoderSet build_toy_encoders(int embed_dim, int image_size, const Vocabulary& vocab,
                              std::uint64_t seed);

// ---------------------------------------------------------------- checkpoints

struct CheckpointInfo {
  int epoch = 0;
  std::string phase;
  std::string config_digest;
  /// (name, article) per class, in id order.
  std::vector<std::pair<std::string, std::string>> classes;
};

struct CheckpointBundle {
  EncoderSet set;
  CheckpointInfo info;
};

/// "TMA1" magic, u64 little-endian manifest length, JSON manifest, then the
/// parameter arrays as little-endian float64 in manifest order.
void save_checkpoint(const std::filesystem::path& path, const EncoderSet& set,
                     const CheckpointInfo& info);
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------- pretrained

struct PretrainedDescriptor {
  std::string name;
  std::string backbone;  // "conv" runs in-process; others need an external runtime
  int image_size = 224;
  int embed_dim = 512;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
  double lr = 1e-4;
  double weight_decay = 0.0;
};

std::vector<PretrainedDescriptor> load_pretrained_registry(const std::filesystem::path& path);
std::filesystem::path bundled_pretrained_registry();
const PretrainedDescriptor& find_descriptor(const std::vector<PretrainedDescriptor>& registry,
                                            std::string_view name);

/// Loads a descriptor's weights (a TMA1 bundle) and checks them against the
/// descriptor's topology. Never falls back to random initialization.
EncoderSet load_pretrained(const std::string& descriptor, const std::filesystem::path& weights,
                           const std::filesystem::path& registry = bundled_pretrained_registry());

}  // namespace tma
