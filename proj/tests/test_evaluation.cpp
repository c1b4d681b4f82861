#include "doctest.h"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>

using namespace tma;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%03zu", i);
    ids.emplace_back(buf);
  }
  return ids;
}

// Full ranking by loops: score descending, id ascending, self excluded.
std::vector<std::size_t> brute_ranking(const Matrix& z, const std::vector<std::string>& ids, std::size_t q) {
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < ids.size(); ++j)
    if (j != q) order.push_back(j);
  auto score = [&](std::size_t j) {
    double s = 0.0;
    for (Eigen::Index d = 0; d < z.cols(); ++d)
      s += z(static_cast<Eigen::Index>(q), d) * z(static_cast<Eigen::Index>(j), d);
    return s;
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = score(a);
    const double sb = score(b);
    if (sa != sb) return sa > sb;
    return ids[a] < ids[b];
  });
  return order;
}

std::vector<ModalitySample> tiny_dataset(int classes, int per_class, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_classes = classes;
  spec.samples_per_class = per_class;
  spec.image_size = 32;
  spec.noise_level = 0.1;
  spec.seed = seed;
  return generate_synthetic(spec).samples;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("accuracy and macro F1 on a hand-computed confusion matrix") {
  ConfusionMatrix cm(2);
  for (int i = 0; i < 5; ++i) cm.add(0, 0);
  for (int i = 0; i < 5; ++i) cm.add(0, 1);
  for (int i = 0; i < 10; ++i) cm.add(1, 1);
  CHECK(cm.total() == 20);
  CHECK(cm.row_sum(0) == 10);
  CHECK(cm.col_sum(1) == 15);
  CHECK(accuracy(cm) == doctest::Approx(0.75));
  // F1 = 2/3 for class 0 and 0.8 for class 1.
  CHECK(macro_f1(cm) == doctest::Approx(0.733333).epsilon(1e-5));
  CHECK_THROWS(cm.add(2, 0));
}

TEST_CASE("macro F1 skips absent classes and scores missed ones as zero") {
  ConfusionMatrix cm(3);
  cm.add(0, 0);
  cm.add(1, 0);
  // Class 2 never appears; class 1 appears and is never predicted.
  CHECK(macro_f1(cm) == doctest::Approx((2.0 / 3.0 + 0.0) / 2.0));
}

TEST_CASE("macro F1 matches the precision/recall oracle on random matrices") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(8));
    ConfusionMatrix cm(k);
    std::vector<std::vector<long long>> counts(static_cast<std::size_t>(k), std::vector<long long>(static_cast<std::size_t>(k)));
    const int n = 1 + static_cast<int>(rng.below(200));
    for (int i = 0; i < n; ++i) {
      const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
      const int p = rng.uniform() < 0.6 ? t : static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
      cm.add(t, p);
      ++counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }
    CHECK(macro_f1(cm) == doctest::Approx(test::brute_macro_f1(counts)).epsilon(1e-12));
    long long diag = 0;
    for (int c = 0; c < k; ++c) diag += counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    CHECK(accuracy(cm) == doctest::Approx(static_cast<double>(diag) / n));
  }
}

TEST_CASE("confusion matrix csv") {
  const auto dir = test::scratch_dir("confusion");
  const std::vector<int> truth = {0, 1, 1};
  const std::vector<int> pred = {0, 0, 1};
  const auto cm = ConfusionMatrix::from_predictions(truth, pred, 2);
  cm.write_csv(dir / "c.csv", {"round", "spiral"});
  std::ifstream in(dir / "c.csv");
  std::string all((std::istreambuf_iterator<char>(in)), {});
  CHECK(all.find("round,1,0") != std::string::npos);
  CHECK(all.find("spiral,1,1") != std::string::npos);
}

TEST_CASE("average precision hand case") {
  RetrievalResult r;
  r.relevant = {true, false, true};
  r.neighbor_ids = {"a", "b", "c"};
  r.scores = {0.9, 0.8, 0.7};
  r.total_relevant = 2;
  CHECK(average_precision(r, 3) == doctest::Approx(0.833333).epsilon(1e-5));
  CHECK(average_precision(r, 1) == doctest::Approx(1.0));
  r.total_relevant = 5;
  // Denominator min(R, k) = 3.
  CHECK(average_precision(r, 3) == doctest::Approx((1.0 + 2.0 / 3.0) / 3.0));
}

TEST_CASE("retrieval and mAP agree with a brute-force oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = static_cast<std::size_t>(6 + rng.below(20));
    const auto z = test::random_unit(rng, static_cast<Eigen::Index>(n), 4, Modality::kImage);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.below(3));
    const auto ids = make_ids(n);
    for (const std::optional<int> k : {std::optional<int>(5), std::optional<int>()}) {
      const auto results = retrieve(z, labels, ids, k);
      REQUIRE(results.size() == n);
      double sum = 0.0;
      std::size_t included = 0;
      for (std::size_t q = 0; q < n; ++q) {
        const auto order = brute_ranking(z.vectors, ids, q);
        const std::size_t depth = k ? std::min<std::size_t>(static_cast<std::size_t>(*k), n - 1) : n - 1;
        REQUIRE(results[q].neighbor_ids.size() == depth);
        std::vector<bool> rel;
        std::size_t total = 0;
        for (std::size_t j = 0; j < order.size(); ++j) {
          const bool same = labels[order[j]] == labels[q];
          total += same ? 1 : 0;
          if (j < depth) {
            CHECK(results[q].neighbor_ids[j] == ids[order[j]]);
            rel.push_back(same);
          }
        }
        CHECK(results[q].total_relevant == total);
        if (total == 0) continue;
        ++included;
        sum += test::brute_average_precision(rel, total, depth);
      }
      const auto report = mean_average_precision(results, k);
      CHECK(report.included_queries == included);
      CHECK(report.excluded_queries == n - included);
      CHECK(report.value == doctest::Approx(included ? sum / static_cast<double>(included) : 0.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("ties are broken by ascending sample id") {
  const Matrix same = Matrix::Constant(4, 3, 1.0);
  const auto z = normalize({same, Modality::kImage, false});
  const std::vector<int> labels = {0, 0, 1, 1};
  const std::vector<std::string> ids = {"d", "b", "c", "a"};
  const auto results = retrieve(z, labels, ids, std::nullopt);
  CHECK(results[0].neighbor_ids == std::vector<std::string>{"a", "b", "c"});
  CHECK(results[3].neighbor_ids == std::vector<std::string>{"b", "c", "d"});
}

TEST_CASE("two-item corpus and capped k") {
  Matrix m(2, 2);
  m << 1, 0, 0.6, 0.8;
  const auto z = normalize({m, Modality::kImage, false});
  const std::vector<int> same = {1, 1};
  const std::vector<std::string> ids = {"x", "y"};
  const auto results = retrieve(z, same, ids, 10);
  CHECK(results[0].neighbor_ids == std::vector<std::string>{"y"});
  CHECK(results[0].scores[0] == doctest::Approx(0.6));
  CHECK(mean_average_precision(results, 10).value == doctest::Approx(1.0));
  const std::vector<int> diff = {0, 1};
  const auto report = mean_average_precision(retrieve(z, diff, ids, 1), 1);
  CHECK(report.included_queries == 0);
  CHECK(report.excluded_queries == 2);
}

TEST_CASE("search_corpus validates k and honours exclusion") {
  Rng rng(3);
  const auto z = test::random_unit(rng, 6, 4, Modality::kImage);
  const std::vector<int> labels = {0, 1, 0, 1, 0, 1};
  const auto ids = make_ids(6);
  const auto hit = search_corpus(z, labels, ids, z.vectors.row(2), 2, 0, 5, "s002");
  const auto ref = retrieve(z, labels, ids, 5)[2];
  CHECK(hit.neighbor_ids == ref.neighbor_ids);
  CHECK(hit.total_relevant == ref.total_relevant);
  CHECK_THROWS_WITH_AS(search_corpus(z, labels, ids, z.vectors.row(2), 2, 0, 6, "s002"),
                       doctest::Contains("k <="), UsageError);
  const auto open = search_corpus(z, labels, ids, z.vectors.row(2), std::nullopt, -1, 6, "q");
  CHECK(open.neighbor_ids.front() == "s002");
  CHECK(open.total_relevant == 0);
}

TEST_CASE("similarity prediction breaks ties towards the lowest class id") {
  Matrix img(2, 2);
  img << 1, 0, 0, 1;
  Matrix prompts(3, 2);
  prompts << 0.6, 0.8, 0.6, 0.8, 1, 0;
  const auto pi = normalize({img, Modality::kImage, false});
  const auto pp = normalize({prompts, Modality::kText, false});
  CHECK(predict_by_similarity(pi, pp) == std::vector<int>{2, 0});

  // Permuting the prompt rows permutes the predictions the same way.
  Rng rng(4);
  const auto x = test::random_unit(rng, 20, 5, Modality::kImage);
  const auto p = test::random_unit(rng, 4, 5, Modality::kText);
  const std::vector<int> perm = {2, 0, 3, 1};
  Matrix permuted(4, 5);
  for (int k = 0; k < 4; ++k) permuted.row(k) = p.vectors.row(perm[static_cast<std::size_t>(k)]);
  const auto base = predict_by_similarity(x, p);
  const auto moved = predict_by_similarity(x, EmbeddingBatch{permuted, Modality::kText, true});
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(perm[static_cast<std::size_t>(moved[i])] == base[i]);
}

TEST_CASE("prompt classification with a single class predicts it everywhere") {
  const auto taxonomy = synthetic_taxonomy(1, 32);
  const auto set = build_toy_encoders(16, 32, Vocabulary::from_taxonomy(taxonomy), 1);
  Rng rng(5);
  std::vector<Image> images;
  for (int i = 0; i < 5; ++i) {
    Image im(32, 32, 3);
    for (auto& v : im.pixels) v = static_cast<float>(rng.uniform());
    images.push_back(im);
  }
  CHECK(classify_by_prompt(set.image(), set.text(), taxonomy, images) == std::vector<int>(5, 0));
}

TEST_CASE("linear probe separates separable features") {
  Rng rng(6);
  Matrix x(60, 3);
  std::vector<int> y(60);
  for (int i = 0; i < 60; ++i) {
    y[static_cast<std::size_t>(i)] = i % 3;
    x.row(i) = test::random_matrix(rng, 1, 3) * 0.1;
    x(i, i % 3) += 2.0;
  }
  const auto probe = LinearProbe::fit(x, y, 3);
  CHECK(probe.predict(x) == y);
}

TEST_CASE("embedding files round-trip exactly") {
  const auto dir = test::scratch_dir("embeddings");
  Rng rng(7);
  EmbeddingFile f;
  f.modality = Modality::kSymbol;
  f.vectors = test::random_unit(rng, 5, 7, Modality::kSymbol).vectors.cast<float>();
  f.sample_ids = {"a", "b,c", "d", "e", "f"};
  f.class_ids = {0, 1, 2, 1, 0};
  write_embeddings(dir / "e.tme", f);
  const auto back = read_embeddings(dir / "e.tme");
  CHECK(back.modality == Modality::kSymbol);
  CHECK(back.sample_ids == f.sample_ids);
  CHECK(back.class_ids == f.class_ids);
  CHECK(back.vectors == f.vectors);
  f.sample_ids[1] = "b";
  write_embeddings_csv(dir / "e.csv", f);
  const auto csv = read_embeddings_csv(dir / "e.csv");
  CHECK(csv.vectors == f.vectors);
  CHECK(csv.sample_ids == f.sample_ids);
  std::ofstream(dir / "bad.tme") << "XXXX";
  CHECK_THROWS(read_embeddings(dir / "bad.tme"));
}

TEST_CASE("offline retrieval from exported embeddings matches in-process retrieval") {
  const auto dir = test::scratch_dir("offline");
  const auto data = tiny_dataset(3, 6, 1);
  const auto set = build_toy_encoders(16, 32, Vocabulary::from_taxonomy(synthetic_taxonomy(3, 32)), 2);
  const auto emb = compute_embeddings(set, data, Modality::kImage, 5);
  REQUIRE(emb.vectors.rows() == 18);
  for (Eigen::Index i = 0; i < 18; ++i) CHECK(emb.vectors.row(i).cast<double>().norm() == doctest::Approx(1.0).epsilon(1e-6));
  export_embeddings(set, data, dir / "img.tme", Modality::kImage, true);
  CHECK(fs::exists(dir / "img.csv"));
  const auto file = read_embeddings(dir / "img.tme");
  const auto a = retrieve(emb.to_batch(), emb.class_ids, emb.sample_ids, 5);
  const auto b = retrieve(file.to_batch(), file.class_ids, file.sample_ids, 5);
  for (std::size_t q = 0; q < a.size(); ++q) CHECK(a[q].neighbor_ids == b[q].neighbor_ids);
  CHECK(mean_average_precision(a, 5).value == mean_average_precision(b, 5).value);
}

TEST_CASE("pca recovers the dominant axes with fixed signs") {
  Rng rng(8);
  Matrix x(200, 3);
  for (int i = 0; i < 200; ++i) {
    x(i, 0) = 1.0 + 5.0 * rng.normal();
    x(i, 1) = -2.0 + 0.1 * rng.normal();
    x(i, 2) = 2.0 * rng.normal();
  }
  const auto pca = fit_pca2(x);
  CHECK(std::abs(pca.components(0, 0)) == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(std::abs(pca.components(1, 2)) == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(pca.components(0, 0) > 0.0);
  CHECK(pca.components(1, 2) > 0.0);
  CHECK(pca.variances[0] > pca.variances[1]);
  CHECK((pca.components * pca.components.transpose() - Matrix::Identity(2, 2)).norm() < 1e-10);
  const Matrix flipped = -x;
  const auto pf = fit_pca2(flipped);
  CHECK((pf.components - pca.components).norm() < 1e-10);
  const Matrix proj = pca_project(pca, x);
  CHECK(proj.col(0).mean() == doctest::Approx(0.0).scale(1.0));
  CHECK_THROWS(fit_pca2(x.topRows(1)));
  CHECK_THROWS(fit_pca2(Matrix::Ones(5, 3)));
}

TEST_CASE("grid assignment gives every sample its own cell") {
  Rng rng(9);
  for (int g : {3, 5}) {
    const int n = g * g;
    Matrix scaled(n, 2);
    for (int i = 0; i < n; ++i) {
      scaled(i, 0) = rng.uniform(0.0, g - 1.0);
      scaled(i, 1) = rng.uniform(0.0, g - 1.0);
    }
    const auto cells = assign_grid_cells(scaled, g);
    std::set<std::pair<int, int>> used;
    for (const auto& c : cells) {
      CHECK(c[0] >= 0);
      CHECK(c[0] < g);
      CHECK(c[1] >= 0);
      CHECK(c[1] < g);
      used.insert({c[0], c[1]});
    }
    CHECK(used.size() == static_cast<std::size_t>(n));
  }
  // An uncontested point lands on its rounded position (row from y, col from x).
  Matrix one(1, 2);
  one << 3.2, 0.9;
  CHECK(assign_grid_cells(one, 5)[0] == std::array<int, 2>{1, 3});
}

TEST_CASE("pca grid layout") {
  const auto dir = test::scratch_dir("grid");
  Rng rng(10);
  const auto z = test::random_unit(rng, 9, 4, Modality::kImage);
  const auto ids = make_ids(9);
  std::vector<Image> thumbs(9, Image(8, 8, 3, 0.5F));
  const auto layout = pca_grid(z.vectors, ids, thumbs, 3, 4);
  CHECK(layout.cells.size() == 9);
  CHECK(layout.composite.width == 12);
  write_grid_csv(dir / "g.csv", layout);
  std::ifstream in(dir / "g.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "sample_id,row,col");
  CHECK_THROWS(pca_grid(z.vectors, ids, thumbs, 2, 4));
  const std::vector<std::string> single = {"only"};
  const auto centered = pca_grid(z.vectors.topRows(1), single, {}, 5, 4);
  CHECK(centered.cells[0].row == 2);
  CHECK(centered.cells[0].col == 2);
}

TEST_CASE("2-D export via pca and an external tool") {
  const auto dir = test::scratch_dir("project");
  Rng rng(11);
  EmbeddingFile f;
  f.vectors = test::random_unit(rng, 6, 4, Modality::kImage).vectors.cast<float>();
  f.sample_ids = make_ids(6);
  f.class_ids = {0, 1, 0, 1, 2, 2};
  const auto p = project_2d_export(f, "pca", dir / "pca.csv");
  CHECK(p.coords.rows() == 6);
  std::ifstream in(dir / "pca.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "sample_id,x,y,class_id");

  ExternalTsneOptions missing;
  missing.command = "definitely-not-a-real-tsne-tool";
  CHECK_THROWS_WITH_AS(project_2d_export(f, "external-tsne", dir / "t.csv", missing),
                       doctest::Contains("--method pca"), EvaluationError);
  CHECK_THROWS_AS(project_2d_export(f, "umap", dir / "u.csv"), UsageError);

  // A stand-in tool that echoes its arguments and emits one row per sample.
  const fs::path script = dir / "fake-tsne.sh";
  std::ofstream(script) << "#!/bin/sh\n"
                           "while [ $# -gt 0 ]; do case $1 in --output) out=$2;; esac; shift; done\n"
                           "printf 'x,y\\n' > \"$out\"\n"
                           "for i in 0 1 2 3 4 5; do printf '%s,%s\\n' $i -$i >> \"$out\"; done\n";
  fs::permissions(script, fs::perms::owner_all);
  ExternalTsneOptions fake;
  fake.command = script.string();
  fake.perplexity = 2.0;
  fake.seed = 3;
  const auto t = project_2d_export(f, "external-tsne", dir / "t.csv", fake);
  CHECK(t.coords(5, 0) == 5.0);
  CHECK(t.coords(5, 1) == -5.0);
  CHECK(fs::exists(dir / "t.tsne.json"));
  CHECK(fs::exists(dir / "t.tsne-input.tme"));
}

TEST_CASE("evaluate reports bounded metrics and an optional probe") {
  const auto data = tiny_dataset(3, 8, 2);
  const auto taxonomy = synthetic_taxonomy(3, 32);
  const auto set = build_toy_encoders(16, 32, Vocabulary::from_taxonomy(taxonomy), 3);
  const auto sp = split(data, 0.25, 0);
  const auto train = select(data, sp.train_ids);
  const auto test_set = select(data, sp.test_ids);
  EvaluationOptions opts;
  opts.map_k = 2;
  opts.linear_probe = true;
  const auto report = evaluate(set, taxonomy, test_set, train, opts);
  CHECK(report.confusion.total() == static_cast<long long>(test_set.size()));
  CHECK(report.accuracy >= 0.0);
  CHECK(report.accuracy <= 1.0);
  CHECK(report.macro_f1 <= 1.0);
  CHECK(report.map_at_k.value <= 1.0);
  CHECK(report.map_all.value > 0.0);
  REQUIRE(report.probe_confusion.has_value());
  CHECK(report.probe_confusion->total() == static_cast<long long>(test_set.size()));
}

TEST_CASE("scatter and contact sheet render") {
  Matrix c(3, 2);
  c << 0, 0, 1, 1, 0.5, 0.2;
  const std::vector<int> labels = {0, 1, 2};
  const Image s = render_scatter(c, labels, 64);
  CHECK(s.width == 64);
  std::vector<Image> neighbors(3, Image(10, 10, 3, 0.2F));
  const Image sheet = render_contact_sheet(Image(10, 10, 3, 0.8F), neighbors, 16);
  CHECK(sheet.height >= 16);
  CHECK(sheet.width >= 4 * 16);
}

}  // TEST_SUITE
