#include "tma/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace tma {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : UsageError("invalid configuration:\n  " + join(problems, "\n  ")),
      problems_(std::move(problems)) {}

// ---------------------------------------------------------------- TOML reader

namespace {

class TomlReader {
 public:
  explicit TomlReader(std::string_view text) : text_(text) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        if (!eof() && peek() == '[') fail("arrays of tables are not supported");
        skip_spaces();
        const auto path = parse_key_path();
        skip_spaces();
        expect(']');
        table = &descend(root, path, true);
        end_of_line();
        continue;
      }
      const auto path = parse_key_path();
      skip_spaces();
      expect('=');
      skip_spaces();
      json value = parse_value();
      json& parent = descend(*table, {path.begin(), path.end() - 1}, false);
      if (parent.contains(path.back())) fail("duplicate key '" + path.back() + "'");
      parent[path.back()] = std::move(value);
      end_of_line();
    }
    return root;
  }

  json parse_single_value() {
    skip_spaces();
    json value = parse_value();
    skip_spaces();
    if (!eof()) fail("trailing characters after value");
    return value;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError({"TOML line " + std::to_string(line_) + ": " + msg});
  }

  bool eof() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  void expect(char c) {
    if (eof() || peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_spaces() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (!eof() && peek() == '#') {
      while (!eof() && peek() != '\n') ++pos_;
    }
  }

  void skip_blank_lines() {
    while (!eof()) {
      skip_spaces();
      skip_comment();
      if (!eof() && (peek() == '\n' || peek() == '\r')) {
        if (peek() == '\n') ++line_;
        ++pos_;
        continue;
      }
      break;
    }
  }

  // Whitespace, comments and newlines inside arrays.
  void skip_array_space() {
    while (!eof()) {
      skip_spaces();
      skip_comment();
      if (!eof() && (peek() == '\n' || peek() == '\r')) {
        if (peek() == '\n') ++line_;
        ++pos_;
        continue;
      }
      break;
    }
  }

  void end_of_line() {
    skip_spaces();
    skip_comment();
    if (eof()) return;
    if (peek() == '\r') ++pos_;
    if (eof() || peek() != '\n') fail("unexpected characters at end of line");
    ++pos_;
    ++line_;
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> path;
    while (true) {
      skip_spaces();
      if (eof()) fail("expected a key");
      if (peek() == '"') {
        path.push_back(parse_basic_string());
      } else if (peek() == '\'') {
        path.push_back(parse_literal_string());
      } else {
        const std::size_t start = pos_;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' ||
                          peek() == '-')) {
          ++pos_;
        }
        if (start == pos_) fail("expected a key");
        path.emplace_back(text_.substr(start, pos_ - start));
      }
      skip_spaces();
      if (!eof() && peek() == '.') {
        ++pos_;
        continue;
      }
      return path;
    }
  }

  json& descend(json& base, const std::vector<std::string>& path, bool header) {
    json* node = &base;
    for (std::size_t i = 0; i < path.size(); ++i) {
      json& child = (*node)[path[i]];
      if (child.is_null()) {
        child = json::object();
      } else if (!child.is_object()) {
        fail("key '" + path[i] + "' is not a table");
      } else if (header && i + 1 == path.size() && defined_.count(&child) != 0) {
        fail("table '" + join(path, ".") + "' defined twice");
      }
      node = &child;
    }
    if (header) defined_.insert(node);
    return *node;
  }

  std::string parse_basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = text_[pos_++];
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      const char e = text_[pos_++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'u': {
          if (pos_ + 4 > text_.size()) fail("short \\u escape");
          unsigned code = 0;
          const auto res = std::from_chars(text_.data() + pos_, text_.data() + pos_ + 4, code, 16);
          if (res.ptr != text_.data() + pos_ + 4) fail("bad \\u escape");
          pos_ += 4;
          if (code < 0x80) {
            out += static_cast<char>(code);
          } else if (code < 0x800) {
            out += static_cast<char>(0xC0 | (code >> 6));
            out += static_cast<char>(0x80 | (code & 0x3F));
          } else {
            out += static_cast<char>(0xE0 | (code >> 12));
            out += static_cast<char>(0x80 | ((code >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (code & 0x3F));
          }
          break;
        }
        default: fail(std::string("unknown escape \\") + e);
      }
    }
  }

  std::string parse_literal_string() {
    expect('\'');
    const std::size_t start = pos_;
    while (!eof() && peek() != '\'' && peek() != '\n') ++pos_;
    if (eof() || peek() != '\'') fail("unterminated string");
    std::string out(text_.substr(start, pos_ - start));
    ++pos_;
    return out;
  }

  json parse_value() {
    if (eof()) fail("expected a value");
    const char c = peek();
    if (c == '"') return parse_basic_string();
    if (c == '\'') return parse_literal_string();
    if (c == '[') return parse_array();
    if (c == '{') return parse_inline_table();
    const std::size_t start = pos_;
    while (!eof() && peek() != ',' && peek() != ']' && peek() != '}' && peek() != '#' &&
           peek() != '\n' && peek() != '\r' && peek() != ' ' && peek() != '\t') {
      ++pos_;
    }
    const std::string token(text_.substr(start, pos_ - start));
    if (token == "true") return true;
    if (token == "false") return false;
    return parse_number(token);
  }

  json parse_number(std::string token) {
    if (token.empty()) fail("expected a value");
    token.erase(std::remove(token.begin(), token.end(), '_'), token.end());
    std::string body = token;
    if (!body.empty() && body[0] == '+') body.erase(0, 1);
    if (body == "inf" || body == "-inf") {
      return body[0] == '-' ? -std::numeric_limits<double>::infinity()
                            : std::numeric_limits<double>::infinity();
    }
    if (body == "nan" || body == "-nan") return std::numeric_limits<double>::quiet_NaN();
    const bool is_float = body.find_first_of(".eE") != std::string::npos;
    const char* first = body.data();
    const char* last = body.data() + body.size();
    if (!is_float) {
      std::int64_t v = 0;
      const auto res = std::from_chars(first, last, v);
      if (res.ec == std::errc() && res.ptr == last) return v;
    } else {
      double v = 0;
      const auto res = std::from_chars(first, last, v);
      if (res.ec == std::errc() && res.ptr == last) return v;
    }
    fail("cannot read value '" + token + "'");
  }

  json parse_array() {
    expect('[');
    json arr = json::array();
    while (true) {
      skip_array_space();
      if (eof()) fail("unterminated array");
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(parse_value());
      skip_array_space();
      if (!eof() && peek() == ',') {
        ++pos_;
        continue;
      }
      skip_array_space();
      expect(']');
      return arr;
    }
  }

  json parse_inline_table() {
    expect('{');
    json obj = json::object();
    skip_spaces();
    if (!eof() && peek() == '}') {
      ++pos_;
      return obj;
    }
    while (true) {
      const auto path = parse_key_path();
      skip_spaces();
      expect('=');
      skip_spaces();
      json value = parse_value();
      json* node = &obj;
      for (std::size_t i = 0; i + 1 < path.size(); ++i) node = &(*node)[path[i]];
      (*node)[path.back()] = std::move(value);
      skip_spaces();
      if (!eof() && peek() == ',') {
        ++pos_;
        continue;
      }
      expect('}');
      return obj;
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  std::set<const json*> defined_;
};

std::string toml_string(const std::string& s) {
  std::string out = "\"";
  for (const char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

std::string toml_key(const std::string& key) {
  const bool bare = !key.empty() && std::all_of(key.begin(), key.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
  return bare ? key : toml_string(key);
}

std::string toml_scalar(const json& v) {
  switch (v.type()) {
    case json::value_t::string: return toml_string(v.get<std::string>());
    case json::value_t::boolean: return v.get<bool>() ? "true" : "false";
    case json::value_t::number_integer: return std::to_string(v.get<std::int64_t>());
    case json::value_t::number_unsigned: return std::to_string(v.get<std::uint64_t>());
    case json::value_t::number_float: {
      const double d = v.get<double>();
      if (std::isnan(d)) return "nan";
      if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
      char buf[64];
      const auto res = std::to_chars(buf, buf + sizeof(buf), d);
      std::string s(buf, res.ptr);
      if (s.find_first_of(".e") == std::string::npos) s += ".0";
      return s;
    }
    case json::value_t::array: {
      std::string out = "[";
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) out += ", ";
        out += toml_scalar(v[i]);
      }
      return out + "]";
    }
    case json::value_t::object: {
      std::string out = "{";
      bool first = true;
      for (const auto& [k, item] : v.items()) {
        if (!first) out += ", ";
        first = false;
        out += toml_key(k) + " = " + toml_scalar(item);
      }
      return out + "}";
    }
    default: throw UsageError("value cannot be written as TOML");
  }
}

void write_table(std::ostringstream& out, const json& table, const std::string& prefix) {
  for (const auto& [k, v] : table.items()) {
    if (!v.is_object()) out << toml_key(k) << " = " << toml_scalar(v) << '\n';
  }
  for (const auto& [k, v] : table.items()) {
    if (!v.is_object()) continue;
    const std::string name = prefix.empty() ? toml_key(k) : prefix + "." + toml_key(k);
    out << "\n[" << name << "]\n";
    write_table(out, v, name);
  }
}

}  // namespace

json parse_toml(std::string_view text) { return TomlReader(text).parse(); }

json parse_toml_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot read config file " + path.string()});
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_toml(buf.str());
  } catch (const ConfigError& e) {
    std::vector<std::string> problems;
    for (const auto& p : e.problems()) problems.push_back(path.string() + ": " + p);
    throw ConfigError(problems);
  }
}

std::string to_toml(const json& doc) {
  if (!doc.is_object()) throw UsageError("TOML document must be a table");
  std::ostringstream out;
  write_table(out, doc, "");
  return out.str();
}

// ---------------------------------------------------------------- experiment

const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> kVariants = {"full", "v1", "v2", "v3", "scratch", "bimodal"};
  return kVariants;
}

namespace {

/// Walks one table, reading known keys and reporting unknown ones.
class TableReader {
 public:
  TableReader(const json& table, std::string prefix, std::vector<std::string>& problems)
      : table_(table), prefix_(std::move(prefix)), problems_(problems) {
    if (!table_.is_object()) problems_.push_back(where("") + " must be a table");
  }

  ~TableReader() = default;

  void finish() {
    if (!table_.is_object()) return;
    for (const auto& [k, v] : table_.items()) {
      if (seen_.count(k) == 0) problems_.push_back("unknown key '" + where(k) + "'");
    }
  }

  template <typename Fn>
  void field(const std::string& key, Fn&& read) {
    seen_.insert(key);
    if (!table_.is_object() || !table_.contains(key)) return;
    if (!read(table_.at(key))) problems_.push_back(where(key) + ": " + expected_);
  }

  void get(const std::string& key, std::string& out) {
    expected_ = "expected a string";
    field(key, [&](const json& v) {
      if (!v.is_string()) return false;
      out = v.get<std::string>();
      return true;
    });
  }
  void get(const std::string& key, fs::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  void get(const std::string& key, bool& out) {
    expected_ = "expected true or false";
    field(key, [&](const json& v) {
      if (!v.is_boolean()) return false;
      out = v.get<bool>();
      return true;
    });
  }
  void get(const std::string& key, int& out) {
    expected_ = "expected an integer";
    field(key, [&](const json& v) {
      if (!v.is_number_integer()) return false;
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) return false;
      out = static_cast<int>(x);
      return true;
    });
  }
  void get(const std::string& key, std::uint64_t& out) {
    expected_ = "expected a non-negative integer";
    field(key, [&](const json& v) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                     v.get<std::int64_t>() < 0)) {
        return false;
      }
      out = v.get<std::uint64_t>();
      return true;
    });
  }
  void get(const std::string& key, double& out) {
    expected_ = "expected a number";
    field(key, [&](const json& v) {
      if (!v.is_number()) return false;
      out = v.get<double>();
      return true;
    });
  }

  const json* sub(const std::string& key) {
    seen_.insert(key);
    if (!table_.is_object() || !table_.contains(key)) return nullptr;
    return &table_.at(key);
  }

  std::string where(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  const json& table_;
  std::string prefix_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
  std::string expected_;
};

}  // namespace

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  std::vector<std::string> problems;
  TableReader top(doc, "", problems);
  top.get("name", c.name);
  top.get("variant", c.variant);
  top.get("stage1_epochs", c.stage1_epochs);
  top.get("stage2_epochs", c.stage2_epochs);
  top.get("convergence_epochs", c.convergence_epochs);
  top.get("batch_size", c.batch_size);
  top.get("seed", c.seed);
  top.get("repeats", c.repeats);
  top.get("symmetric_loss", c.symmetric_loss);
  top.get("label_masked_negatives", c.label_masked_negatives);
  top.get("validation_fraction", c.validation_fraction);
  top.get("prefetch", c.prefetch);
  top.get("runs_dir", c.runs_dir);

  if (const json* t = top.sub("optimizer")) {
    TableReader r(*t, "optimizer", problems);
    r.get("name", c.optimizer.name);
    r.get("lr", c.optimizer.lr);
    r.get("weight_decay", c.optimizer.weight_decay);
    r.finish();
  }
  if (const json* t = top.sub("dataset")) {
    TableReader r(*t, "dataset", problems);
    r.get("kind", c.dataset.kind);
    r.get("path", c.dataset.path);
    r.get("taxonomy", c.dataset.taxonomy);
    r.get("test_fraction", c.dataset.test_fraction);
    r.get("split_seed", c.dataset.split_seed);
    std::string mode = c.dataset.split_mode == SplitMode::kStratified ? "stratified" : "uniform";
    r.get("split", mode);
    if (mode == "stratified") {
      c.dataset.split_mode = SplitMode::kStratified;
    } else if (mode == "uniform") {
      c.dataset.split_mode = SplitMode::kUniform;
    } else {
      problems.push_back("dataset.split: expected \"stratified\" or \"uniform\", got \"" + mode + "\"");
    }
    r.get("augment_symbols", c.dataset.augment_symbols);
    if (const json* s = r.sub("synthetic")) {
      TableReader rs(*s, "dataset.synthetic", problems);
      rs.get("n_classes", c.dataset.synthetic.n_classes);
      rs.get("samples_per_class", c.dataset.synthetic.samples_per_class);
      rs.get("image_size", c.dataset.synthetic.image_size);
      rs.get("noise_level", c.dataset.synthetic.noise_level);
      rs.get("seed", c.dataset.synthetic.seed);
      rs.finish();
    }
    r.finish();
  }
  if (const json* t = top.sub("encoder")) {
    TableReader r(*t, "encoder", problems);
    r.get("kind", c.encoder.kind);
    r.get("descriptor", c.encoder.descriptor);
    r.get("weights", c.encoder.weights);
    r.get("registry", c.encoder.registry);
    r.get("embed_dim", c.encoder.embed_dim);
    r.get("image_size", c.encoder.image_size);
    r.finish();
  }
  if (const json* t = top.sub("eval")) {
    TableReader r(*t, "eval", problems);
    r.get("map_k", c.eval.map_k);
    r.get("linear_probe", c.eval.linear_probe);
    r.finish();
  }
  top.finish();
  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json doc;
  doc["name"] = c.name;
  doc["variant"] = c.variant;
  doc["stage1_epochs"] = c.stage1_epochs;
  doc["stage2_epochs"] = c.stage2_epochs;
  doc["convergence_epochs"] = c.convergence_epochs;
  doc["batch_size"] = c.batch_size;
  doc["seed"] = c.seed;
  doc["repeats"] = c.repeats;
  doc["symmetric_loss"] = c.symmetric_loss;
  doc["label_masked_negatives"] = c.label_masked_negatives;
  doc["validation_fraction"] = c.validation_fraction;
  doc["prefetch"] = c.prefetch;
  if (!c.runs_dir.empty()) doc["runs_dir"] = c.runs_dir.string();
  doc["optimizer"] = {{"name", c.optimizer.name},
                      {"lr", c.optimizer.lr},
                      {"weight_decay", c.optimizer.weight_decay}};
  json ds = {{"kind", c.dataset.kind},
             {"test_fraction", c.dataset.test_fraction},
             {"split_seed", c.dataset.split_seed},
             {"split", c.dataset.split_mode == SplitMode::kStratified ? "stratified" : "uniform"},
             {"augment_symbols", c.dataset.augment_symbols}};
  if (!c.dataset.path.empty()) ds["path"] = c.dataset.path.string();
  if (!c.dataset.taxonomy.empty()) ds["taxonomy"] = c.dataset.taxonomy.string();
  if (c.dataset.kind == "synthetic") {
    ds["synthetic"] = {{"n_classes", c.dataset.synthetic.n_classes},
                       {"samples_per_class", c.dataset.synthetic.samples_per_class},
                       {"image_size", c.dataset.synthetic.image_size},
                       {"noise_level", c.dataset.synthetic.noise_level},
                       {"seed", c.dataset.synthetic.seed}};
  }
  doc["dataset"] = ds;
  json enc = {{"kind", c.encoder.kind},
              {"embed_dim", c.encoder.embed_dim},
              {"image_size", c.encoder.image_size}};
  if (!c.encoder.descriptor.empty()) enc["descriptor"] = c.encoder.descriptor;
  if (!c.encoder.weights.empty()) enc["weights"] = c.encoder.weights.string();
  if (!c.encoder.registry.empty()) enc["registry"] = c.encoder.registry.string();
  doc["encoder"] = enc;
  doc["eval"] = {{"map_k", c.eval.map_k}, {"linear_probe", c.eval.linear_probe}};
  return doc;
}

std::vector<std::string> validate(const ExperimentConfig& c) {
  std::vector<std::string> p;
  const auto& variants = known_variants();
  if (std::find(variants.begin(), variants.end(), c.variant) == variants.end()) {
    p.push_back("variant: unknown '" + c.variant + "' (expected " + join(variants, "|") + ")");
  }
  if (c.name.empty() || c.name.find('/') != std::string::npos || c.name == "." || c.name == "..") {
    p.push_back("name: must be a non-empty directory name");
  }
  if (c.stage1_epochs < 0) p.push_back("stage1_epochs: must be >= 0");
  if (c.stage2_epochs < 0) p.push_back("stage2_epochs: must be >= 0");
  if (c.convergence_epochs < 0) p.push_back("convergence_epochs: must be >= 0");
  if (c.batch_size < 2) p.push_back("batch_size: must be >= 2");
  if (c.repeats < 1) p.push_back("repeats: must be >= 1");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    p.push_back("validation_fraction: must be in [0, 1)");
  }
  if (c.prefetch < 0) p.push_back("prefetch: must be >= 0");
  if (c.optimizer.name != "adam") p.push_back("optimizer.name: only \"adam\" is supported");
  if (!(c.optimizer.lr > 0.0) || !std::isfinite(c.optimizer.lr)) p.push_back("optimizer.lr: must be > 0");
  if (!(c.optimizer.weight_decay >= 0.0) || !std::isfinite(c.optimizer.weight_decay)) {
    p.push_back("optimizer.weight_decay: must be >= 0");
  }

  const auto& d = c.dataset;
  static const std::vector<std::string> kKinds = {"synthetic", "synthetic-dir", "galaxy10", "galaxymnist"};
  if (std::find(kKinds.begin(), kKinds.end(), d.kind) == kKinds.end()) {
    p.push_back("dataset.kind: unknown '" + d.kind + "' (expected " + join(kKinds, "|") + ")");
  } else if (d.kind != "synthetic" && d.path.empty()) {
    p.push_back("dataset.path: required for dataset kind '" + d.kind + "'");
  }
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) p.push_back("dataset.test_fraction: must be in (0, 1)");
  if (d.kind == "synthetic") {
    const auto& s = d.synthetic;
    if (s.n_classes < 1 || s.n_classes > 10) p.push_back("dataset.synthetic.n_classes: must be in 1..10");
    if (s.samples_per_class < 2) p.push_back("dataset.synthetic.samples_per_class: must be >= 2");
    if (s.image_size < 8) p.push_back("dataset.synthetic.image_size: must be >= 8");
    if (!(s.noise_level >= 0.0)) p.push_back("dataset.synthetic.noise_level: must be >= 0");
  }

  const auto& e = c.encoder;
  if (e.kind != "toy" && e.kind != "pretrained") {
    p.push_back("encoder.kind: unknown '" + e.kind + "' (expected toy|pretrained)");
  }
  if (e.kind == "pretrained" && c.variant != "scratch") {
    if (e.descriptor.empty()) p.push_back("encoder.descriptor: required for pretrained encoders");
    if (e.weights.empty()) p.push_back("encoder.weights: required for pretrained encoders");
  }
  if (e.embed_dim < 8) p.push_back("encoder.embed_dim: must be >= 8");
  if (e.image_size < 8) p.push_back("encoder.image_size: must be >= 8");
  if (c.eval.map_k < 1) p.push_back("eval.map_k: must be >= 1");
  return p;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError({"override '" + std::string(assignment) + "' must look like key=value"});
  }
  auto strip = [](std::string_view v) {
    const auto b = v.find_first_not_of(" \t");
    if (b == std::string_view::npos) return std::string();
    return std::string(v.substr(b, v.find_last_not_of(" \t") - b + 1));
  };
  const std::string key = strip(assignment.substr(0, eq));
  const std::string raw = strip(assignment.substr(eq + 1));
  json value;
  try {
    value = TomlReader(raw).parse_single_value();
  } catch (const ConfigError&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError({"override key '" + key + "' is malformed"});
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    json& child = (*node)[part];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError({"override key '" + key + "': '" + part + "' is not a table"});
    node = &child;
    start = dot + 1;
  }
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json doc = path.empty() ? json::object() : parse_toml_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  ExperimentConfig config = config_from_json(doc);
  if (!path.empty()) {
    // Relative paths in a config file are relative to the file.
    const fs::path base = path.parent_path();
    auto rebase = [&](fs::path& p) {
      if (!p.empty() && p.is_relative() && !base.empty() && !fs::exists(p)) p = base / p;
    };
    rebase(config.dataset.path);
    rebase(config.dataset.taxonomy);
    rebase(config.encoder.weights);
    rebase(config.encoder.registry);
  }
  const auto problems = validate(config);
  if (!problems.empty()) throw ConfigError(problems);
  return config;
}

std::string config_digest(const ExperimentConfig& config) {
  return fnv1a_hex(config_to_json(config).dump());
}

fs::path resolve_runs_dir(const ExperimentConfig& config) {
  if (!config.runs_dir.empty()) return config.runs_dir;
  const char* env = std::getenv("TMA_RUNS_DIR");
  if (env != nullptr && *env != '\0') return env;
  return "runs";
}

}  // namespace tma
