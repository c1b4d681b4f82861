#include "doctest.h"
#include "support.hpp"

#include "tma/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

using namespace tma;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_SUITE("config") {

TEST_CASE("toml subset parses the supported value kinds") {
  const json doc = parse_toml(R"(
# comment
name = "run # not a comment"
literal = 'C:\path'
count = 1_000
neg = -3
ratio = 2.5e-3
flag = true
off = false
big = inf
list = [1, 2,
  3]
mixed = ["a", 'b']
point = { x = 1, y = "two" }
a.b.c = 4

[optimizer]
lr = 0.001   # trailing comment

[dataset.synthetic]
n_classes = 3
)");
  CHECK(doc["name"] == "run # not a comment");
  CHECK(doc["literal"] == "C:\\path");
  CHECK(doc["count"] == 1000);
  CHECK(doc["neg"] == -3);
  CHECK(doc["ratio"].get<double>() == doctest::Approx(2.5e-3));
  CHECK(doc["flag"] == true);
  CHECK(doc["off"] == false);
  CHECK(std::isinf(doc["big"].get<double>()));
  CHECK(doc["list"] == json::array({1, 2, 3}));
  CHECK(doc["mixed"] == json::array({"a", "b"}));
  CHECK(doc["point"]["y"] == "two");
  CHECK(doc["a"]["b"]["c"] == 4);
  CHECK(doc["optimizer"]["lr"].get<double>() == doctest::Approx(0.001));
  CHECK(doc["dataset"]["synthetic"]["n_classes"] == 3);
}

TEST_CASE("toml escapes and errors") {
  CHECK(parse_toml(R"(s = "tab\tquote\"nl\n")")["s"] == "tab\tquote\"nl\n");
  CHECK_THROWS_AS(parse_toml("a = 1\na = 2"), ConfigError);
  CHECK_THROWS_AS(parse_toml("[t]\nx=1\n[t]\ny=2"), ConfigError);
  CHECK_THROWS_AS(parse_toml("[[runs]]\nx=1"), ConfigError);
  CHECK_THROWS_AS(parse_toml("x = "), ConfigError);
  CHECK_THROWS_AS(parse_toml("x = \"unterminated"), ConfigError);
  CHECK_THROWS_AS(parse_toml("x = [1, 2"), ConfigError);
  CHECK_THROWS_AS(parse_toml("just words"), ConfigError);
}

TEST_CASE("toml writer round-trips through the parser") {
  ExperimentConfig c;
  c.name = "round \"trip\"";
  c.variant = "bimodal";
  c.optimizer.lr = 3.5e-4;
  c.seed = 123456789;
  c.dataset.synthetic.noise_level = 0.25;
  c.dataset.split_mode = SplitMode::kUniform;
  c.runs_dir = "/tmp/somewhere";
  const json doc = config_to_json(c);
  const json back = parse_toml(to_toml(doc));
  CHECK(back == doc);
  const auto c2 = config_from_json(back);
  CHECK(config_digest(c2) == config_digest(c));
  CHECK(c2.dataset.split_mode == SplitMode::kUniform);
}

TEST_CASE("defaults") {
  const auto c = config_from_json(json::object());
  CHECK(c.variant == "full");
  CHECK(c.stage1_epochs == 12);
  CHECK(c.batch_size == 64);
  CHECK(c.optimizer.name == "adam");
  CHECK(validate(c).empty());
  CHECK(known_variants().size() == 6);
}

TEST_CASE("unknown keys and type errors are all reported at once") {
  const json doc = parse_toml(R"(
variant = 7
stage1_epoch = 3
[optimizer]
learning_rate = 0.1
[dataset]
split = "random"
)");
  try {
    config_from_json(doc);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const auto& p = e.problems();
    CHECK(p.size() >= 4);
    const std::string all = e.what();
    CHECK(all.find("variant") != std::string::npos);
    CHECK(all.find("stage1_epoch") != std::string::npos);
    CHECK(all.find("optimizer.learning_rate") != std::string::npos);
    CHECK(all.find("dataset.split") != std::string::npos);
  }
}

TEST_CASE("validation catches out-of-range values") {
  ExperimentConfig c;
  c.variant = "v9";
  c.batch_size = 1;
  c.repeats = 0;
  c.optimizer.lr = 0.0;
  c.dataset.synthetic.n_classes = 11;
  c.dataset.test_fraction = 1.0;
  c.encoder.kind = "pretrained";
  const auto p = validate(c);
  CHECK(p.size() >= 7);
  ExperimentConfig g;
  g.dataset.kind = "galaxy10";
  CHECK(validate(g).size() == 1);
}

TEST_CASE("overrides parse values as TOML with a string fallback") {
  json doc = json::object();
  apply_override(doc, "optimizer.lr=0.01");
  apply_override(doc, "variant=v2");
  apply_override(doc, "symmetric_loss=true");
  apply_override(doc, "dataset.synthetic.n_classes = 3");
  CHECK(doc["optimizer"]["lr"].get<double>() == doctest::Approx(0.01));
  CHECK(doc["variant"] == "v2");
  CHECK(doc["symmetric_loss"] == true);
  CHECK(doc["dataset"]["synthetic"]["n_classes"] == 3);
  CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
  const auto c = config_from_json(doc);
  CHECK(c.variant == "v2");
  CHECK(c.dataset.synthetic.n_classes == 3);
}

TEST_CASE("load_config reads a file, applies overrides and rebases paths") {
  const auto dir = test::scratch_dir("config");
  std::ofstream(dir / "exp.toml") << "name = \"x\"\n[dataset]\nkind = \"galaxy10\"\npath = \"data/g10.h5\"\n";
  const auto c = load_config(dir / "exp.toml", {"repeats=3"});
  CHECK(c.repeats == 3);
  CHECK(c.dataset.path == dir / "data/g10.h5");
  CHECK_THROWS_AS(load_config(dir / "exp.toml", {"batch_size=0"}), ConfigError);
  CHECK_THROWS(load_config(dir / "missing.toml", {}));
}

TEST_CASE("runs directory resolution") {
  ExperimentConfig c;
  c.runs_dir = "explicit";
  CHECK(resolve_runs_dir(c) == "explicit");
  c.runs_dir.clear();
  ::setenv("TMA_RUNS_DIR", "/tmp/env-runs", 1);
  CHECK(resolve_runs_dir(c) == "/tmp/env-runs");
  ::unsetenv("TMA_RUNS_DIR");
  CHECK(resolve_runs_dir(c) == "runs");
}

TEST_CASE("digest changes with any field") {
  ExperimentConfig a;
  ExperimentConfig b;
  CHECK(config_digest(a) == config_digest(b));
  b.dataset.synthetic.seed = 1;
  CHECK(config_digest(a) != config_digest(b));
}

}  // TEST_SUITE
