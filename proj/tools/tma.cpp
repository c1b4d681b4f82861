#include "tma/config.hpp"
#include "tma/datasets.hpp"
#include "tma/encoders.hpp"
#include "tma/evaluation.hpp"
#include "tma/image_io.hpp"
#include "tma/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void write_snapshot(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw tma::IoError("cannot write " + path.string());
  out << tma::to_toml(doc);
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------- gen-synth

struct GenSynthArgs {
  fs::path out = "synthetic";
  tma::SyntheticSpec spec;
};

int cmd_gen_synth(const GenSynthArgs& a) {
  if (a.spec.n_classes < 1 || a.spec.n_classes > 10) {
    throw tma::UsageError("--classes must be between 1 and 10 (got " + std::to_string(a.spec.n_classes) + ")");
  }
  if (a.spec.samples_per_class < 1) throw tma::UsageError("--per-class must be positive");
  if (a.spec.image_size < 8) throw tma::UsageError("--size must be at least 8");
  if (a.spec.noise_level < 0) throw tma::UsageError("--noise must be non-negative");
  fs::create_directories(a.out);
  write_snapshot(a.out / "gen-synth.toml", {{"n_classes", a.spec.n_classes},
                                            {"samples_per_class", a.spec.samples_per_class},
                                            {"image_size", a.spec.image_size},
                                            {"noise_level", a.spec.noise_level},
                                            {"seed", a.spec.seed}});
  const auto data = tma::generate_synthetic(a.spec);
  tma::export_synthetic(data, a.spec, a.out);
  std::cout << "wrote " << data.samples.size() << " samples in " << data.taxonomy.size()
            << " classes to " << a.out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path config;
  std::vector<std::string> overrides;
  std::optional<std::string> name, variant, runs_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> repeats, stage1_epochs, stage2_epochs, batch_size, prefetch;
  std::optional<double> lr, weight_decay;
  bool symmetric = false;
  bool masked = false;
  bool linear_probe = false;
  bool quiet = false;
};

std::string epoch_line(std::uint64_t seed, const tma::EpochRecord& r) {
  std::ostringstream out;
  out << "seed " << seed << " " << r.phase << " epoch " << r.epoch << ": loss " << fixed(r.mean.total);
  for (const auto& [k, v] : r.mean.per_pair) out << "  " << k << " " << fixed(v);
  out << "  tau " << fixed(r.mean.temperature_value, 5);
  if (r.validation_loss) out << "  val " << fixed(*r.validation_loss);
  return out.str();
}

int cmd_train(const TrainArgs& a) {
  std::vector<std::string> overrides;
  auto add = [&](const char* key, const auto& value) {
    if (!value) return;
    std::ostringstream v;
    if constexpr (std::is_same_v<std::decay_t<decltype(*value)>, std::string>) {
      v << '"' << *value << '"';
    } else {
      v.precision(17);
      v << *value;
    }
    overrides.push_back(std::string(key) + "=" + v.str());
  };
  add("name", a.name);
  add("variant", a.variant);
  add("runs_dir", a.runs_dir);
  add("seed", a.seed);
  add("repeats", a.repeats);
  add("stage1_epochs", a.stage1_epochs);
  add("stage2_epochs", a.stage2_epochs);
  add("batch_size", a.batch_size);
  add("prefetch", a.prefetch);
  if (a.lr) overrides.push_back("optimizer.lr=" + json(*a.lr).dump());
  if (a.weight_decay) overrides.push_back("optimizer.weight_decay=" + json(*a.weight_decay).dump());
  if (a.symmetric) overrides.emplace_back("symmetric_loss=true");
  if (a.masked) overrides.emplace_back("label_masked_negatives=true");
  if (a.linear_probe) overrides.emplace_back("eval.linear_probe=true");
  overrides.insert(overrides.end(), a.overrides.begin(), a.overrides.end());

  const tma::ExperimentConfig config = tma::load_config(a.config, overrides);
  tma::ExperimentHooks hooks;
  if (!a.quiet) {
    hooks.on_epoch = [](std::uint64_t seed, const tma::EpochRecord& r) {
      std::cout << epoch_line(seed, r) << '\n' << std::flush;
    };
    hooks.log = [](const std::string& msg) { std::cout << msg << '\n' << std::flush; };
  }
  const auto report = tma::run_experiment(config, hooks);

  std::cout << "\nresults (" << config.variant << ", " << config.repeats << " run"
            << (config.repeats == 1 ? "" : "s") << ")\n";
  for (const auto& [metric, summary] : report.aggregate.at("metrics").items()) {
    std::cout << "  " << metric << std::string(metric.size() < 16 ? 16 - metric.size() : 1, ' ')
              << fixed(summary.at("mean").get<double>()) << " +/- "
              << fixed(summary.at("std").get<double>()) << '\n';
  }
  std::cout << "metrics: " << (report.directory / "metrics.json").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- checkpoint-driven commands

struct DataArgs {
  fs::path checkpoint;
  fs::path config;
  std::vector<std::string> overrides;
  std::optional<std::string> dataset;
  std::optional<fs::path> data_path;
  std::string split = "test";
};

struct Loaded {
  tma::CheckpointBundle bundle;
  tma::ExperimentConfig config;
  tma::ClassTaxonomy taxonomy;
  std::vector<tma::ModalitySample> samples;
  std::vector<tma::ModalitySample> train;
};

fs::path inferred_config(const fs::path& checkpoint) {
  // runs/<name>/<seed>/checkpoints/<file>.tma
  const fs::path candidate = checkpoint.parent_path().parent_path() / "config.toml";
  return fs::exists(candidate) ? candidate : fs::path();
}

Loaded load_for_checkpoint(const DataArgs& a) {
  if (a.split != "test" && a.split != "train" && a.split != "all") {
    throw tma::UsageError("--split must be test, train or all");
  }
  if (!fs::exists(a.checkpoint)) throw tma::UsageError("checkpoint not found: " + a.checkpoint.string());
  Loaded out;
  out.bundle = tma::load_checkpoint(a.checkpoint);

  std::vector<std::string> overrides;
  if (a.dataset) overrides.push_back("dataset.kind=\"" + *a.dataset + "\"");
  if (a.data_path) overrides.push_back("dataset.path=" + json(a.data_path->string()).dump());
  overrides.insert(overrides.end(), a.overrides.begin(), a.overrides.end());
  const fs::path config_path = a.config.empty() ? inferred_config(a.checkpoint) : a.config;
  out.config = tma::load_config(config_path, overrides);
  out.config.encoder.kind = "toy";
  out.config.encoder.image_size = out.bundle.set.image().config().image_size;
  out.config.encoder.embed_dim = out.bundle.set.embed_dim();

  tma::PreparedData data = tma::prepare_data(out.config);
  out.taxonomy = std::move(data.taxonomy);
  const auto& classes = out.bundle.info.classes;
  bool match = static_cast<int>(classes.size()) == out.taxonomy.size();
  for (int k = 0; match && k < out.taxonomy.size(); ++k) {
    match = classes[static_cast<std::size_t>(k)].first == out.taxonomy.at(k).name;
  }
  if (!match) {
    throw tma::DatasetError("taxonomy mismatch: checkpoint has " + std::to_string(classes.size()) +
                            " classes, dataset has " + std::to_string(out.taxonomy.size()) +
                            (classes.size() == static_cast<std::size_t>(out.taxonomy.size())
                                 ? " with different names"
                                 : ""));
  }
  out.train = std::move(data.train);
  out.train.insert(out.train.end(), data.validation.begin(), data.validation.end());
  if (a.split == "test") {
    out.samples = std::move(data.test);
  } else if (a.split == "train") {
    out.samples = out.train;
  } else {
    out.samples = out.train;
    out.samples.insert(out.samples.end(), data.test.begin(), data.test.end());
  }
  return out;
}

json data_snapshot(const DataArgs& a, const char* command) {
  json doc = {{"command", command}, {"checkpoint", a.checkpoint.string()}, {"split", a.split}};
  if (!a.config.empty()) doc["config"] = a.config.string();
  if (!a.overrides.empty()) doc["overrides"] = a.overrides;
  if (a.dataset) doc["dataset"] = *a.dataset;
  if (a.data_path) doc["data_path"] = a.data_path->string();
  return doc;
}

fs::path default_out(const DataArgs& a) { return a.checkpoint.parent_path() / (a.checkpoint.stem().string() + "-" + a.split); }

// ---------------------------------------------------------------- eval

struct EvalArgs {
  DataArgs data;
  std::string metric = "all";
  int k = 5;
  bool linear_probe = false;
  std::optional<fs::path> out;
};

int cmd_eval(const EvalArgs& a) {
  static const std::vector<std::string> kMetrics = {"all", "accuracy", "f1", "map", "map-all"};
  if (std::find(kMetrics.begin(), kMetrics.end(), a.metric) == kMetrics.end()) {
    throw tma::UsageError("--metric must be one of all, accuracy, f1, map, map-all");
  }
  if (a.k < 1) throw tma::UsageError("--k must be at least 1");
  const fs::path out = a.out.value_or(default_out(a.data));
  json snap = data_snapshot(a.data, "eval");
  snap["metric"] = a.metric;
  snap["k"] = a.k;
  write_snapshot(out / "eval.toml", snap);

  const Loaded l = load_for_checkpoint(a.data);
  const auto report = tma::evaluate(l.bundle.set, l.taxonomy, l.samples, l.train, {a.k, a.linear_probe});
  report.confusion.write_csv(out / "confusion.csv", l.taxonomy.names());
  const std::string map_key = "map@" + std::to_string(a.k);
  auto show = [&](const std::string& key, double v) { std::cout << key << " = " << fixed(v, 6) << '\n'; };
  if (a.metric == "all" || a.metric == "accuracy") show("accuracy", report.accuracy);
  if (a.metric == "all" || a.metric == "f1") show("macro_f1", report.macro_f1);
  if (a.metric == "all" || a.metric == "map") show(map_key, report.map_at_k.value);
  if (a.metric == "all" || a.metric == "map-all") show("map", report.map_all.value);
  if (report.probe_confusion && a.metric == "all") {
    show("probe_accuracy", tma::accuracy(*report.probe_confusion));
    show("probe_macro_f1", tma::macro_f1(*report.probe_confusion));
  }
  if (report.map_at_k.excluded_queries > 0) {
    std::cerr << report.map_at_k.excluded_queries << " queries without relevant items excluded from mAP\n";
  }
  json metrics = tma::metric_map(report, {a.k, a.linear_probe});
  std::ofstream(out / "metrics.json") << metrics.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------- search

struct SearchArgs {
  DataArgs data;
  std::optional<std::string> query;
  std::optional<fs::path> image;
  int k = 7;
  std::optional<fs::path> sheet;
};

int cmd_search(SearchArgs a) {
  if (a.query.has_value() == a.image.has_value()) throw tma::UsageError("give exactly one of --query or --image");
  if (a.k < 1) throw tma::UsageError("--k must be at least 1");
  const fs::path snap_path = a.sheet ? fs::path(a.sheet->string() + ".toml") : default_out(a.data) / "search.toml";
  json snap = data_snapshot(a.data, "search");
  if (a.query) snap["query"] = *a.query;
  if (a.image) snap["image"] = a.image->string();
  snap["k"] = a.k;
  write_snapshot(snap_path, snap);

  const Loaded l = load_for_checkpoint(a.data);
  const tma::EmbeddingFile corpus = tma::compute_embeddings(l.bundle.set, l.samples, tma::Modality::kImage);
  const tma::EmbeddingBatch batch = corpus.to_batch();

  tma::RowVector q;
  std::optional<std::size_t> self;
  int label = -1;
  std::string query_id;
  tma::Image query_image;
  if (a.query) {
    const auto it = std::find(corpus.sample_ids.begin(), corpus.sample_ids.end(), *a.query);
    if (it == corpus.sample_ids.end()) {
      throw tma::UsageError("unknown query id '" + *a.query + "' in the " + a.data.split + " split");
    }
    self = static_cast<std::size_t>(it - corpus.sample_ids.begin());
    q = batch.vectors.row(static_cast<Eigen::Index>(*self));
    label = corpus.class_ids[*self];
    query_id = *a.query;
    query_image = l.samples[*self].image;
  } else {
    const int size = l.bundle.set.image().config().image_size;
    query_image = tma::resize_bilinear(tma::read_png(*a.image), size, size);
    const std::vector<tma::Image> one{query_image};
    q = tma::normalize({l.bundle.set.image().encode(one), tma::Modality::kImage, false}).vectors.row(0);
    query_id = a.image->string();
  }
  const auto result = tma::search_corpus(batch, corpus.class_ids, corpus.sample_ids, q, self, label, a.k, query_id);

  std::cout << "query " << result.query_id;
  if (label >= 0) std::cout << " (" << l.taxonomy.at(label).name << ")";
  std::cout << '\n';
  std::vector<tma::Image> neighbors;
  for (std::size_t i = 0; i < result.neighbor_ids.size(); ++i) {
    const auto pos = static_cast<std::size_t>(
        std::find(corpus.sample_ids.begin(), corpus.sample_ids.end(), result.neighbor_ids[i]) -
        corpus.sample_ids.begin());
    std::cout << (i + 1) << "\t" << result.neighbor_ids[i] << "\t" << fixed(result.scores[i], 6) << "\t"
              << l.taxonomy.at(corpus.class_ids[pos]).name << '\n';
    neighbors.push_back(l.samples[pos].image);
  }
  if (a.sheet) {
    tma::write_png(*a.sheet, tma::render_contact_sheet(query_image, neighbors));
    std::cout << "sheet: " << a.sheet->string() << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- visualize

struct VisualizeArgs {
  DataArgs data;
  std::string mode = "grid";
  int grid = 32;
  int thumb = 16;
  std::string method = "pca";
  std::optional<std::string> tsne_cmd;
  double perplexity = 30.0;
  std::uint64_t tsne_seed = 0;
  std::optional<int> limit;
  std::optional<fs::path> out;
};

int cmd_visualize(const VisualizeArgs& a) {
  if (a.mode != "grid" && a.mode != "scatter") throw tma::UsageError("--mode must be grid or scatter");
  if (a.method != "pca" && a.method != "external-tsne") throw tma::UsageError("--method must be pca or external-tsne");
  if (a.grid < 1 || a.thumb < 1) throw tma::UsageError("--grid and --thumb must be positive");
  const fs::path out = a.out.value_or(default_out(a.data));
  json snap = data_snapshot(a.data, "visualize");
  snap["mode"] = a.mode;
  snap["grid"] = a.grid;
  snap["method"] = a.method;
  if (a.limit) snap["limit"] = *a.limit;
  write_snapshot(out / ("visualize-" + a.mode + ".toml"), snap);

  Loaded l = load_for_checkpoint(a.data);
  if (a.limit) {
    if (*a.limit < 1) throw tma::UsageError("--limit must be positive");
    if (static_cast<std::size_t>(*a.limit) < l.samples.size()) l.samples.resize(static_cast<std::size_t>(*a.limit));
  }
  const tma::EmbeddingFile emb = tma::compute_embeddings(l.bundle.set, l.samples, tma::Modality::kImage);
  tma::write_embeddings(out / "embeddings.tme", emb);

  if (a.mode == "grid") {
    const auto capacity = static_cast<std::size_t>(a.grid) * static_cast<std::size_t>(a.grid);
    if (l.samples.size() > capacity) {
      throw tma::UsageError(std::to_string(l.samples.size()) + " samples do not fit a " + std::to_string(a.grid) +
                            "x" + std::to_string(a.grid) + " grid; raise --grid or set --limit");
    }
    std::vector<tma::Image> thumbs;
    for (const auto& s : l.samples) thumbs.push_back(s.image);
    const auto layout = tma::pca_grid(emb.to_batch().vectors, emb.sample_ids, thumbs, a.grid, a.thumb);
    tma::write_png(out / "grid.png", layout.composite);
    tma::write_grid_csv(out / "grid.csv", layout);
    std::cout << "grid: " << (out / "grid.png").string() << ", " << (out / "grid.csv").string() << '\n';
  } else {
    tma::ExternalTsneOptions tsne;
    if (a.tsne_cmd) tsne.command = *a.tsne_cmd;
    tsne.perplexity = a.perplexity;
    tsne.seed = a.tsne_seed;
    const auto proj = tma::project_2d_export(emb, a.method, out / "projection.csv", tsne);
    tma::write_png(out / "scatter.png", tma::render_scatter(proj.coords, proj.class_ids));
    std::cout << "scatter: " << (out / "projection.csv").string() << ", " << (out / "scatter.png").string() << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::vector<fs::path> runs;
  bool json_output = false;
};

int cmd_report(const ReportArgs& a) {
  json all = json::object();
  std::vector<std::string> metric_names;
  for (const auto& dir : a.runs) {
    const fs::path file = fs::is_directory(dir) ? dir / "metrics.json" : dir;
    std::ifstream in(file);
    if (!in) throw tma::UsageError("no metrics.json at " + file.string());
    json doc = json::parse(in);
    if (!doc.contains("metrics")) throw tma::IoError(file.string() + " has no metrics");
    for (const auto& [k, v] : doc.at("metrics").items()) {
      if (std::find(metric_names.begin(), metric_names.end(), k) == metric_names.end()) metric_names.push_back(k);
    }
    all[dir.string()] = std::move(doc);
  }
  if (a.json_output) {
    std::cout << all.dump(2) << '\n';
    return 0;
  }
  std::cout << "run\tvariant\trepeats";
  for (const auto& m : metric_names) std::cout << '\t' << m;
  std::cout << '\n';
  for (const auto& [name, doc] : all.items()) {
    std::cout << name << '\t' << doc.value("variant", "?") << '\t' << doc.value("repeats", 1);
    for (const auto& m : metric_names) {
      std::cout << '\t';
      const auto& metrics = doc.at("metrics");
      if (!metrics.contains(m)) {
        std::cout << '-';
      } else if (metrics.at(m).is_object()) {
        std::cout << fixed(metrics.at(m).at("mean").get<double>()) << "+/-"
                  << fixed(metrics.at(m).at("std").get<double>());
      } else {
        std::cout << fixed(metrics.at(m).get<double>());
      }
    }
    std::cout << '\n';
  }
  return 0;
}

void add_data_options(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--checkpoint", d.checkpoint, "Checkpoint file (.tma)")->required();
  cmd->add_option("--config", d.config, "Experiment config (defaults to the run's snapshot)");
  cmd->add_option("--set", d.overrides, "Config override key=value");
  cmd->add_option("--dataset", d.dataset, "Dataset kind");
  cmd->add_option("--data-path", d.data_path, "Dataset file or directory");
  cmd->add_option("--split", d.split, "test, train or all");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tri-modal contrastive alignment toolkit"};
  app.require_subcommand(1);

  GenSynthArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Write the synthetic dataset to a directory");
  gen_cmd->add_option("--out", gen.out, "Output directory");
  gen_cmd->add_option("--classes", gen.spec.n_classes, "Number of classes (max 10)");
  gen_cmd->add_option("--per-class", gen.spec.samples_per_class, "Samples per class");
  gen_cmd->add_option("--size", gen.spec.image_size, "Image size in pixels");
  gen_cmd->add_option("--noise", gen.spec.noise_level, "Additive noise standard deviation");
  gen_cmd->add_option("--seed", gen.spec.seed, "Generator seed");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run an experiment");
  train_cmd->add_option("--config", train.config, "TOML experiment config");
  train_cmd->add_option("--set", train.overrides, "Config override key=value (repeatable)");
  train_cmd->add_option("--name", train.name);
  train_cmd->add_option("--variant", train.variant, "full|v1|v2|v3|scratch|bimodal");
  train_cmd->add_option("--runs-dir", train.runs_dir);
  train_cmd->add_option("--seed", train.seed);
  train_cmd->add_option("--repeats", train.repeats);
  train_cmd->add_option("--stage1-epochs", train.stage1_epochs);
  train_cmd->add_option("--stage2-epochs", train.stage2_epochs);
  train_cmd->add_option("--batch-size", train.batch_size);
  train_cmd->add_option("--prefetch", train.prefetch);
  train_cmd->add_option("--lr", train.lr);
  train_cmd->add_option("--weight-decay", train.weight_decay);
  train_cmd->add_flag("--symmetric-loss", train.symmetric);
  train_cmd->add_flag("--label-masked-negatives", train.masked);
  train_cmd->add_flag("--linear-probe", train.linear_probe);
  train_cmd->add_flag("-q,--quiet", train.quiet);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_data_options(eval_cmd, eval.data);
  eval_cmd->add_option("--metric", eval.metric, "all|accuracy|f1|map|map-all");
  eval_cmd->add_option("--k", eval.k, "Cutoff for mAP@k");
  eval_cmd->add_flag("--linear-probe", eval.linear_probe);
  eval_cmd->add_option("--out", eval.out, "Output directory");

  SearchArgs search;
  auto* search_cmd = app.add_subcommand("search", "Similarity search from a query image");
  add_data_options(search_cmd, search.data);
  search.data.split = "all";
  search_cmd->add_option("--query", search.query, "Sample id in the chosen split");
  search_cmd->add_option("--image", search.image, "PNG file to embed on the fly");
  search_cmd->add_option("--k", search.k, "Number of neighbors");
  search_cmd->add_option("--sheet", search.sheet, "Contact sheet PNG");

  VisualizeArgs vis;
  auto* vis_cmd = app.add_subcommand("visualize", "PCA grid or 2-D scatter of embeddings");
  add_data_options(vis_cmd, vis.data);
  vis_cmd->add_option("--mode", vis.mode, "grid|scatter");
  vis_cmd->add_option("--grid", vis.grid, "Grid side length");
  vis_cmd->add_option("--thumb", vis.thumb, "Thumbnail size in pixels");
  vis_cmd->add_option("--method", vis.method, "pca|external-tsne");
  vis_cmd->add_option("--tsne-cmd", vis.tsne_cmd, "External t-SNE executable");
  vis_cmd->add_option("--perplexity", vis.perplexity);
  vis_cmd->add_option("--tsne-seed", vis.tsne_seed);
  vis_cmd->add_option("--limit", vis.limit, "Use only the first N samples");
  vis_cmd->add_option("--out", vis.out, "Output directory");

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Summarize experiment metrics");
  rep_cmd->add_option("runs", rep.runs, "Experiment directories or metrics.json files")->required();
  rep_cmd->add_flag("--json", rep.json_output);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_synth(gen);
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(eval);
    if (*search_cmd) return cmd_search(search);
    if (*vis_cmd) return cmd_visualize(vis);
    if (*rep_cmd) return cmd_report(rep);
  } catch (const tma::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
