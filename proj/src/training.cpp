#include "tma/training.hpp"

#include "tma/image_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace tma {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view phase_name(PhaseKind kind) {
  switch (kind) {
    case PhaseKind::kStage1: return "stage1";
    case PhaseKind::kTransfer: return "transfer";
    case PhaseKind::kStage2: return "stage2";
  }
  return "unknown";
}

StagePlan resolve_variant(const ExperimentConfig& config) {
  StagePlan plan;
  plan.variant = config.variant;
  const Phase s1{PhaseKind::kStage1, config.stage1_epochs};
  const Phase transfer{PhaseKind::kTransfer, 0};
  const Phase s2{PhaseKind::kStage2, config.stage2_epochs};
  if (config.variant == "full") {
    plan.phases = {s1, transfer, s2};
  } else if (config.variant == "v1") {
    plan.phases = {s1};
  } else if (config.variant == "v2") {
    plan.phases = {s2};
    plan.independent_symbol = true;
  } else if (config.variant == "v3") {
    plan.phases = {{PhaseKind::kStage1, config.convergence_epochs}};
  } else if (config.variant == "scratch") {
    plan.phases = {s1, transfer, s2};
    plan.use_pretrained = false;
  } else if (config.variant == "bimodal") {
    plan.phases = {s1, s2};
    plan.include_symbol = false;
  } else {
    throw UsageError("unknown variant '" + config.variant + "'");
  }
  return plan;
}

// ---------------------------------------------------------------- stages

namespace {

struct Embedded {
  EmbeddingBatch image;
  EmbeddingBatch symbol;
  EmbeddingBatch text;
  Matrix image_raw;
  Matrix symbol_raw;
  Matrix text_raw;
  ImageEncoder::Tape image_tape;
  ImageEncoder::Tape symbol_tape;
  TextEncoder::Tape text_tape;
};

// With a shared encoder, images and symbols go through it as one batch of 2N.
void embed(const EncoderSet& set, const ModalityBatch& batch, bool include_symbol, bool record,
           Embedded& e) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  const bool shared = set.symbol_aliases_image();
  std::vector<const Image*> images;
  for (const auto& im : batch.images) images.push_back(&im);
  if (include_symbol && shared) {
    for (const auto& im : batch.symbols) images.push_back(&im);
  }
  const Matrix out = set.image().forward(images, record ? &e.image_tape : nullptr);
  e.image_raw = out.topRows(n);
  if (include_symbol) {
    if (shared) {
      e.symbol_raw = out.bottomRows(n);
    } else {
      std::vector<const Image*> symbols;
      for (const auto& im : batch.symbols) symbols.push_back(&im);
      e.symbol_raw = set.symbol().forward(symbols, record ? &e.symbol_tape : nullptr);
    }
  }
  e.text_raw = set.text().forward(batch.texts, record ? &e.text_tape : nullptr);
  e.image = normalize({e.image_raw, Modality::kImage, false});
  if (include_symbol) e.symbol = normalize({e.symbol_raw, Modality::kSymbol, false});
  e.text = normalize({e.text_raw, Modality::kText, false});
}

LossResult batch_loss(const EncoderSet& set, const Embedded& e, const ModalityBatch& batch,
                      int stage, const StageOptions& options) {
  LossOptions lo;
  lo.symmetric = options.symmetric;
  lo.label_masked_negatives = options.label_masked_negatives;
  lo.include_symbol = options.include_symbol;
  lo.labels = batch.class_ids;
  return stage == 1 ? stage1_loss(e.image, e.symbol, e.text, set.temperature(), lo)
                    : stage2_loss(e.image, e.symbol, e.text, set.temperature(), lo);
}

void backward(EncoderSet& set, const Embedded& e, const LossGradients& grad, bool include_symbol) {
  set.zero_grad();
  const Matrix g_image = normalize_backward(e.image_raw, grad.image);
  if (include_symbol) {
    const Matrix g_symbol = normalize_backward(e.symbol_raw, grad.symbol);
    if (set.symbol_aliases_image()) {
      Matrix stacked(g_image.rows() + g_symbol.rows(), g_image.cols());
      stacked << g_image, g_symbol;
      set.image().backward(e.image_tape, stacked);
    } else {
      set.image().backward(e.image_tape, g_image);
      set.symbol().backward(e.symbol_tape, g_symbol);
    }
  } else {
    set.image().backward(e.image_tape, g_image);
  }
  set.text().backward(e.text_tape, normalize_backward(e.text_raw, grad.text));
  set.temperature().param.grad(0, 0) += grad.log_inverse_tau;
}

void accumulate(LossBreakdown& sum, const LossBreakdown& x) {
  sum.total += x.total;
  for (const auto& [k, v] : x.per_pair) sum.per_pair[k] += v;
}

void scale(LossBreakdown& b, double factor) {
  b.total *= factor;
  for (auto& [k, v] : b.per_pair) v *= factor;
}

std::string position(int epoch, std::size_t batch) {
  return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch);
}

StageOutcome run_stage(EncoderSet set, const std::vector<ModalitySample>& train,
                       const StageOptions& options, int stage) {
  StageOutcome out;
  out.set = std::move(set);
  if (options.epochs < 0) throw TrainingError("negative epoch budget");
  if (options.epochs == 0) return out;
  if (train.empty()) throw TrainingError("no training samples");

  std::vector<std::string> ids;
  ids.reserve(train.size());
  for (const auto& s : train) ids.push_back(s.sample_id);
  BatchStream stream(train, std::move(ids), options.batch_size, options.seed, options.augment_symbols);

  // Parameter pointers stay valid: `out.set` is not moved until the stage ends.
  Adam adam(out.set.parameters(), options.adam);
  const bool validate = options.validation != nullptr && !options.validation->empty();

  for (int local = 0; local < options.epochs; ++local) {
    const int epoch = options.first_epoch + local;
    std::optional<PrefetchedEpoch> prefetched;
    if (options.prefetch > 0) {
      prefetched.emplace(stream, static_cast<std::uint64_t>(local), options.prefetch);
    } else {
      stream.begin_epoch(static_cast<std::uint64_t>(local));
    }

    EpochRecord record;
    record.phase = stage == 1 ? "stage1" : "stage2";
    record.epoch = epoch;
    while (true) {
      std::optional<ModalityBatch> batch = prefetched ? prefetched->next() : stream.next();
      if (!batch) break;
      Embedded e;
      LossResult loss;
      std::string failure;
      try {
        embed(out.set, *batch, options.include_symbol, true, e);
        loss = batch_loss(out.set, e, *batch, stage, options);
        if (!std::isfinite(loss.breakdown.total)) failure = "loss is not finite";
      } catch (const EncoderError& err) {
        failure = err.what();
      } catch (const LossError& err) {
        failure = err.what();
      }
      if (!failure.empty()) {
        std::string saved;
        if (!options.checkpoint_dir.empty()) {
          CheckpointInfo info = options.checkpoint_info;
          info.epoch = epoch;
          info.phase = std::string(record.phase) + "-last-finite";
          const fs::path path = options.checkpoint_dir / "last_finite.tma";
          save_checkpoint(path, out.set, info);
          saved = "; last finite state saved to " + path.string();
        }
        throw TrainingError(record.phase + " diverged at " + position(epoch, record.batches) + ": " +
                            failure + saved);
      }
      backward(out.set, e, loss.grad, options.include_symbol);
      adam.step();
      out.set.temperature().project();
      accumulate(record.mean, loss.breakdown);
      ++record.batches;
    }
    if (prefetched) out.prefetch_high_water = std::max(out.prefetch_high_water, prefetched->max_in_flight());
    scale(record.mean, 1.0 / static_cast<double>(record.batches));
    record.mean.temperature_value = out.set.temperature().tau();

    if (validate) {
      const double v = evaluate_loss(out.set, *options.validation, stage, options).total;
      record.validation_loss = v;
      if (stage == 2 && (!out.best || v < out.best_validation_loss)) {
        out.best = out.set;
        out.best_epoch = epoch;
        out.best_validation_loss = v;
      }
    }
    out.history.push_back(record);
    if (options.on_epoch) options.on_epoch(record);
  }
  out.optimizer_steps = adam.steps();
  return out;
}

}  // namespace

StageOutcome run_stage1(EncoderSet set, const std::vector<ModalitySample>& train,
                        const StageOptions& options) {
  if (set.stage() != 1) throw TrainingError("stage 1 needs a set whose symbol encoder is the image encoder");
  return run_stage(std::move(set), train, options, 1);
}

StageOutcome run_stage2(EncoderSet set, const std::vector<ModalitySample>& train,
                        const StageOptions& options) {
  if (set.stage() != 2 && options.include_symbol) {
    throw TrainingError("stage 2 needs an independent symbol encoder; transfer it first");
  }
  return run_stage(std::move(set), train, options, 2);
}

LossBreakdown evaluate_loss(const EncoderSet& set, const std::vector<ModalitySample>& samples,
                            int stage, const StageOptions& options) {
  LossBreakdown sum;
  if (samples.empty()) return sum;
  const auto step = static_cast<std::size_t>(options.batch_size);
  std::size_t count = 0;
  for (std::size_t start = 0; start < samples.size(); start += step) {
    const std::size_t end = std::min(samples.size(), start + step);
    ModalityBatch batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.images.push_back(samples[i].image);
      batch.symbols.push_back(samples[i].symbol);
      batch.texts.push_back(samples[i].text);
      batch.class_ids.push_back(samples[i].class_id);
      batch.sample_ids.push_back(samples[i].sample_id);
    }
    Embedded e;
    embed(set, batch, options.include_symbol, false, e);
    LossBreakdown b = batch_loss(set, e, batch, stage, options).breakdown;
    scale(b, static_cast<double>(end - start));
    accumulate(sum, b);
    count += end - start;
  }
  scale(sum, 1.0 / static_cast<double>(count));
  sum.temperature_value = set.temperature().tau();
  return sum;
}

// ---------------------------------------------------------------- data and encoders

namespace {

bool uses_pretrained(const ExperimentConfig& config) {
  return config.encoder.kind == "pretrained" && resolve_variant(config).use_pretrained;
}

fs::path registry_path(const ExperimentConfig& config) {
  return config.encoder.registry.empty() ? bundled_pretrained_registry() : config.encoder.registry;
}

int input_size(const ExperimentConfig& config) {
  if (uses_pretrained(config)) {
    const auto registry = load_pretrained_registry(registry_path(config));
    return find_descriptor(registry, config.encoder.descriptor).image_size;
  }
  return config.encoder.image_size;
}

void resample(LabeledDataset& data, int size) {
  if (!data.samples.empty() && data.samples.front().image.height == size &&
      data.samples.front().image.width == size && data.samples.front().symbol.height == size) {
    return;
  }
  data.taxonomy = data.taxonomy.with_symbol_size(size);
  for (auto& s : data.samples) {
    s.image = resize_bilinear(s.image, size, size);
    s.symbol = data.taxonomy.symbol(s.class_id);
  }
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config) {
  const auto& d = config.dataset;
  const int size = input_size(config);
  LabeledDataset data;
  LoadOptions load{d.taxonomy, size};
  if (d.kind == "synthetic") {
    data = generate_synthetic(d.synthetic);
    resample(data, size);
  } else if (d.kind == "synthetic-dir") {
    data = load_synthetic_dir(d.path);
    resample(data, size);
  } else if (d.kind == "galaxy10") {
    data = load_galaxy10(d.path, load);
  } else if (d.kind == "galaxymnist") {
    data = load_galaxymnist(d.path, load);
  } else {
    throw UsageError("unknown dataset kind '" + d.kind + "'");
  }

  PreparedData out;
  out.taxonomy = std::move(data.taxonomy);
  const DatasetSplit outer = split(data.samples, d.test_fraction, d.split_seed, d.split_mode);
  out.test = select(data.samples, outer.test_ids);
  std::vector<ModalitySample> train = select(data.samples, outer.train_ids);
  if (config.validation_fraction > 0.0) {
    const DatasetSplit inner =
        split(train, config.validation_fraction, Rng::derive(d.split_seed, 0x56414C), d.split_mode);
    out.validation = select(train, inner.test_ids);
    out.train = select(train, inner.train_ids);
  } else {
    out.train = std::move(train);
  }
  return out;
}

std::vector<std::string> check_encoder_compatibility(const ExperimentConfig& config) {
  std::vector<std::string> problems;
  if (!uses_pretrained(config)) return problems;
  std::vector<PretrainedDescriptor> registry;
  try {
    registry = load_pretrained_registry(registry_path(config));
  } catch (const Error& e) {
    problems.push_back(std::string("encoder.registry: ") + e.what());
    return problems;
  }
  const PretrainedDescriptor* desc = nullptr;
  for (const auto& r : registry) {
    if (r.name == config.encoder.descriptor) desc = &r;
  }
  if (desc == nullptr) {
    problems.push_back("encoder.descriptor: '" + config.encoder.descriptor + "' is not in the registry");
    return problems;
  }
  if (config.encoder.embed_dim != desc->embed_dim) {
    problems.push_back("encoder.embed_dim: " + std::to_string(config.encoder.embed_dim) +
                       " does not match descriptor '" + desc->name + "' (" +
                       std::to_string(desc->embed_dim) + ")");
  }
  if (!fs::exists(config.encoder.weights)) {
    problems.push_back("encoder.weights: file not found: " + config.encoder.weights.string());
  }
  if (config.dataset.kind == "synthetic" && config.dataset.synthetic.image_size > desc->image_size) {
    problems.push_back("dataset.synthetic.image_size: larger than the descriptor input size " +
                       std::to_string(desc->image_size));
  }
  return problems;
}

EncoderSet build_initial_encoders(const ExperimentConfig& config, const ClassTaxonomy& taxonomy,
                                  std::uint64_t seed) {
  const StagePlan plan = resolve_variant(config);
  EncoderSet set;
  if (uses_pretrained(config)) {
    set = load_pretrained(config.encoder.descriptor, config.encoder.weights, registry_path(config));
  } else {
    set = build_toy_encoders(config.encoder.embed_dim, config.encoder.image_size,
                             Vocabulary::from_taxonomy(taxonomy), seed);
  }
  if (plan.independent_symbol) set = with_independent_symbol_encoder(set, seed);
  return set;
}

// ---------------------------------------------------------------- experiments

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::map<std::string, double> metric_map(const EvaluationReport& report, const EvalConfig& eval) {
  std::map<std::string, double> m;
  m["accuracy"] = report.accuracy;
  m["macro_f1"] = report.macro_f1;
  m["map@" + std::to_string(eval.map_k)] = report.map_at_k.value;
  m["map"] = report.map_all.value;
  if (report.probe_confusion) {
    m["probe_accuracy"] = accuracy(*report.probe_confusion);
    m["probe_macro_f1"] = macro_f1(*report.probe_confusion);
  }
  return m;
}

namespace {

const char* const kPairs[] = {kImgTxt, kImgSym, kSymTxt};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_loss_history(const fs::path& path, const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "phase,epoch,batches,total";
  for (const char* p : kPairs) out << ',' << p;
  out << ",temperature,validation_loss\n";
  for (const auto& r : history) {
    out << r.phase << ',' << r.epoch << ',' << r.batches << ',' << r.mean.total;
    for (const char* p : kPairs) {
      out << ',';
      if (const auto it = r.mean.per_pair.find(p); it != r.mean.per_pair.end()) out << it->second;
    }
    out << ',' << r.mean.temperature_value << ',';
    if (r.validation_loss) out << *r.validation_loss;
    out << '\n';
  }
  write_text(path, out.str());
}

double max_transfer_gap(const EncoderSet& set, const std::vector<ModalitySample>& samples) {
  std::vector<const Image*> symbols;
  for (std::size_t i = 0; i < std::min<std::size_t>(samples.size(), 32); ++i) {
    symbols.push_back(&samples[i].symbol);
  }
  if (symbols.empty()) return 0.0;
  const Matrix a = set.image().forward(symbols, nullptr);
  const Matrix b = set.symbol().forward(symbols, nullptr);
  return (a - b).cwiseAbs().maxCoeff();
}

CheckpointInfo base_info(const ExperimentConfig& config, const ClassTaxonomy& taxonomy) {
  CheckpointInfo info;
  info.config_digest = config_digest(config);
  for (const auto& c : taxonomy.classes()) info.classes.emplace_back(c.name, c.article);
  return info;
}

json run_metrics_json(const ExperimentConfig& config, const RunRecord& r) {
  json doc;
  doc["seed"] = r.seed;
  doc["variant"] = config.variant;
  doc["phases"] = r.phases_run;
  doc["metrics"] = r.metrics;
  doc["final_loss"] = r.final_loss;
  doc["optimizer_steps"] = r.optimizer_steps;
  if (r.transfer_max_abs_diff) doc["transfer_max_abs_diff"] = *r.transfer_max_abs_diff;
  return doc;
}

}  // namespace

RunRecord run_single(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed,
                     const fs::path& dir, const ExperimentHooks& hooks) {
  const auto started = std::chrono::steady_clock::now();
  const StagePlan plan = resolve_variant(config);
  RunRecord record;
  record.seed = seed;
  record.directory = dir;
  const fs::path ckpt_dir = dir / "checkpoints";
  fs::create_directories(ckpt_dir);

  ExperimentConfig snapshot = config;
  snapshot.seed = seed;
  snapshot.repeats = 1;
  write_text(dir / "config.toml", to_toml(config_to_json(snapshot)));

  auto log = [&](const std::string& msg) {
    if (hooks.log) hooks.log(msg);
  };

  try {
    EncoderSet set = build_initial_encoders(config, data.taxonomy, seed);
    const CheckpointInfo info = base_info(config, data.taxonomy);

    StageOptions opts;
    opts.batch_size = config.batch_size;
    opts.adam.lr = config.optimizer.lr;
    opts.adam.weight_decay = config.optimizer.weight_decay;
    opts.symmetric = config.symmetric_loss;
    opts.label_masked_negatives = config.label_masked_negatives;
    opts.include_symbol = plan.include_symbol;
    opts.augment_symbols = config.dataset.augment_symbols;
    opts.prefetch = static_cast<std::size_t>(config.prefetch);
    opts.validation = data.validation.empty() ? nullptr : &data.validation;
    opts.checkpoint_dir = ckpt_dir;
    opts.checkpoint_info = info;
    opts.on_epoch = [&](const EpochRecord& r) {
      if (hooks.on_epoch) hooks.on_epoch(seed, r);
    };

    int epoch = 0;
    auto finish_stage = [&](StageOutcome& out, const std::string& name) {
      set = std::move(out.set);
      record.optimizer_steps[name] = out.optimizer_steps;
      if (!out.history.empty()) {
        const LossBreakdown& last = out.history.back().mean;
        auto& fl = record.final_loss[name];
        fl["total"] = last.total;
        for (const auto& [k, v] : last.per_pair) fl[k] = v;
      }
      record.history.insert(record.history.end(), out.history.begin(), out.history.end());
      epoch += static_cast<int>(out.history.size());
      CheckpointInfo ci = info;
      ci.epoch = epoch;
      ci.phase = name;
      save_checkpoint(ckpt_dir / (name + ".tma"), set, ci);
      record.checkpoints[name] = "checkpoints/" + name + ".tma";
    };

    for (const Phase& phase : plan.phases) {
      record.phases_run.emplace_back(phase_name(phase.kind));
      if (phase.kind == PhaseKind::kTransfer) {
        set = transfer_symbol_encoder(set);
        record.transfer_max_abs_diff = max_transfer_gap(set, data.train);
        log("transfer: max |E_sym - E_img| = " + std::to_string(*record.transfer_max_abs_diff));
        continue;
      }
      opts.epochs = phase.epochs;
      opts.first_epoch = epoch;
      if (phase.kind == PhaseKind::kStage1) {
        opts.seed = Rng::derive(seed, 1);
        StageOutcome out = run_stage1(std::move(set), data.train, opts);
        finish_stage(out, "stage1");
      } else {
        opts.seed = Rng::derive(seed, 2);
        StageOutcome out = run_stage2(std::move(set), data.train, opts);
        if (out.best) {
          CheckpointInfo ci = info;
          ci.epoch = out.best_epoch;
          ci.phase = "stage2-best";
          save_checkpoint(ckpt_dir / "best.tma", *out.best, ci);
          record.checkpoints["best"] = "checkpoints/best.tma";
        }
        finish_stage(out, "stage2");
      }
    }

    const EvaluationReport report = evaluate(set, data.taxonomy, data.test, data.train,
                                             {config.eval.map_k, config.eval.linear_probe});
    record.metrics = metric_map(report, config.eval);
    record.confusion = report.confusion;
    report.confusion.write_csv(dir / "confusion.csv", data.taxonomy.names());
    write_loss_history(dir / "loss_history.csv", record.history);
    write_text(dir / "metrics.json", run_metrics_json(config, record).dump(2) + "\n");
  } catch (const std::exception& e) {
    record.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    json failed = {{"seed", seed}, {"status", "failed"}, {"error", e.what()},
                   {"phases", record.phases_run}, {"checkpoints", record.checkpoints}};
    write_loss_history(dir / "loss_history.csv", record.history);
    write_text(dir / "run_record.json", failed.dump(2) + "\n");
    throw;
  }

  record.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  json run = run_metrics_json(config, record);
  run["status"] = "ok";
  run["checkpoints"] = record.checkpoints;
  run["wall_time_seconds"] = record.wall_time_seconds;
  run["epochs"] = record.history.size();
  write_text(dir / "run_record.json", run.dump(2) + "\n");
  return record;
}

namespace {

json summarize(const std::vector<double>& values) {
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return {{"mean", mean}, {"std", sample_std(values)}, {"values", values}};
}

json aggregate_runs(const ExperimentConfig& config, const std::vector<RunRecord>& runs) {
  json doc;
  doc["name"] = config.name;
  doc["variant"] = config.variant;
  doc["repeats"] = config.repeats;
  doc["completed_runs"] = runs.size();
  doc["config_digest"] = config_digest(config);
  json seeds = json::array();
  for (const auto& r : runs) seeds.push_back(r.seed);
  doc["seeds"] = seeds;
  if (runs.empty()) return doc;

  std::map<std::string, std::vector<double>> metrics;
  std::map<std::string, std::map<std::string, std::vector<double>>> losses;
  for (const auto& r : runs) {
    for (const auto& [k, v] : r.metrics) metrics[k].push_back(v);
    for (const auto& [stage, pairs] : r.final_loss) {
      for (const auto& [k, v] : pairs) losses[stage][k].push_back(v);
    }
  }
  json m = json::object();
  for (const auto& [k, v] : metrics) m[k] = summarize(v);
  doc["metrics"] = m;
  json l = json::object();
  for (const auto& [stage, pairs] : losses) {
    for (const auto& [k, v] : pairs) l[stage][k] = summarize(v);
  }
  doc["final_loss"] = l;
  return doc;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentHooks& hooks) {
  auto problems = validate(config);
  const auto compat = check_encoder_compatibility(config);
  problems.insert(problems.end(), compat.begin(), compat.end());
  if (!problems.empty()) throw ConfigError(problems);

  ExperimentReport report;
  report.config = config;
  report.directory = resolve_runs_dir(config) / config.name;
  fs::create_directories(report.directory);
  write_text(report.directory / "config.toml", to_toml(config_to_json(config)));

  const PreparedData data = prepare_data(config);
  if (hooks.log) {
    hooks.log("data: " + std::to_string(data.train.size()) + " train, " +
              std::to_string(data.validation.size()) + " validation, " +
              std::to_string(data.test.size()) + " test, " + std::to_string(data.taxonomy.size()) +
              " classes");
  }
  for (int r = 0; r < config.repeats; ++r) {
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(r);
    try {
      report.runs.push_back(
          run_single(config, data, seed, report.directory / std::to_string(seed), hooks));
    } catch (...) {
      json partial = aggregate_runs(config, report.runs);
      partial["status"] = "failed";
      partial["failed_seed"] = seed;
      write_text(report.directory / "metrics.json", partial.dump(2) + "\n");
      throw;
    }
  }
  report.aggregate = aggregate_runs(config, report.runs);
  write_text(report.directory / "metrics.json", report.aggregate.dump(2) + "\n");
  return report;
}

}  // namespace tma
