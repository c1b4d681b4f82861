#include "doctest.h"
#include "support.hpp"

#include "tma/datasets.hpp"
#include "tma/image_io.hpp"

#include <cmath>
#include <map>
#include <set>

using namespace tma;
namespace fs = std::filesystem;

namespace {

ClassTaxonomy two_class_taxonomy() {
  std::vector<TaxonomyClass> classes = {{0, "unbarred-spiral galaxy", "an", "a.png"},
                                        {1, "cigar round smooth galaxy", "a", "b.png"}};
  return ClassTaxonomy(classes, {Image(4, 4, 3), Image(4, 4, 3, 1.0F)});
}

std::vector<ModalitySample> tiny_samples(const std::vector<int>& counts) {
  std::vector<ModalitySample> out;
  int id = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    for (int i = 0; i < counts[k]; ++i) {
      ModalitySample s;
      s.class_id = static_cast<int>(k);
      s.sample_id = "s" + std::to_string(id++);
      s.image = Image(1, 1, 1);
      s.symbol = Image(1, 1, 1);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<std::uint8_t> gradient_pixels(std::size_t count, int h, int w) {
  std::vector<std::uint8_t> px(count * static_cast<std::size_t>(h) * w * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>((i * 7) % 256);
  return px;
}

}  // namespace

TEST_SUITE("datasets") {

TEST_CASE("prompts follow the article template exactly") {
  const auto t = two_class_taxonomy();
  CHECK(render_prompt(t, 0) == "A picture of an unbarred-spiral galaxy.");
  CHECK(render_prompt(t, 1) == "A picture of a cigar round smooth galaxy.");
  CHECK_THROWS_AS(render_prompt(t, 2), DatasetError);
  CHECK_THROWS_AS(render_prompt(t, -1), DatasetError);
}

TEST_CASE("taxonomy invariants are enforced") {
  CHECK_THROWS(ClassTaxonomy({{1, "x", "a", ""}}, {Image(2, 2, 3)}));
  CHECK_THROWS(ClassTaxonomy({{0, "x", "the", ""}}, {Image(2, 2, 3)}));
  CHECK_THROWS(ClassTaxonomy({{0, "", "a", ""}}, {Image(2, 2, 3)}));
  CHECK_THROWS(ClassTaxonomy({{0, "x", "a", ""}, {1, "y", "a", ""}}, {Image(2, 2, 3)}));
}

TEST_CASE("bundled taxonomies load with one symbol per class") {
  const auto g10 = ClassTaxonomy::load_json(bundled_assets_dir() / "taxonomies" / "galaxy10.json", 32);
  REQUIRE(g10.size() == 10);
  for (int k = 0; k < 10; ++k) {
    CHECK(g10.symbol(k).height == 32);
    const char first = g10.at(k).name.front();
    const bool vowel = std::string("aeiou").find(first) != std::string::npos;
    CHECK(g10.at(k).article == (vowel ? "an" : "a"));
  }
  const auto mnist = ClassTaxonomy::load_json(bundled_assets_dir() / "taxonomies" / "galaxymnist.json", 0);
  CHECK(mnist.size() == 4);
  CHECK(mnist.symbol(0).height == 128);
}

TEST_CASE("synthetic generation is deterministic and self-consistent") {
  SyntheticSpec spec{.n_classes = 4, .samples_per_class = 50, .image_size = 24, .noise_level = 0.1, .seed = 7};
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  REQUIRE(a.samples.size() == 200);
  CHECK(a.taxonomy.size() == 4);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto& s = a.samples[i];
    CHECK(s.image == b.samples[i].image);
    CHECK(s.sample_id == b.samples[i].sample_id);
    CHECK(s.symbol == a.taxonomy.symbol(s.class_id));
    CHECK(s.text == render_prompt(a.taxonomy, s.class_id));
    CHECK(s.image.height == 24);
    CHECK(s.image.channels == 3);
    for (const float p : s.image.pixels) {
      REQUIRE(p >= 0.0F);
      REQUIRE(p <= 1.0F);
    }
  }
  spec.seed = 8;
  CHECK_FALSE(generate_synthetic(spec).samples[0].image == a.samples[0].image);
  spec.n_classes = 11;
  CHECK_THROWS(generate_synthetic(spec));
}

TEST_CASE("noise-free synthetic classes are separable by nearest centroid") {
  const auto data = generate_synthetic({.n_classes = 4, .samples_per_class = 50, .image_size = 32,
                                        .noise_level = 0.0, .seed = 3});
  const std::size_t dim = data.samples[0].image.pixels.size();
  std::vector<std::vector<double>> centroid(4, std::vector<double>(dim, 0.0));
  std::vector<int> count(4, 0);
  for (const auto& s : data.samples) {
    for (std::size_t j = 0; j < dim; ++j) centroid[static_cast<std::size_t>(s.class_id)][j] += s.image.pixels[j];
    ++count[static_cast<std::size_t>(s.class_id)];
  }
  for (int k = 0; k < 4; ++k)
    for (auto& v : centroid[static_cast<std::size_t>(k)]) v /= count[static_cast<std::size_t>(k)];
  int correct = 0;
  for (const auto& s : data.samples) {
    int best = 0;
    double best_d = 1e300;
    for (int k = 0; k < 4; ++k) {
      double d = 0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = s.image.pixels[j] - centroid[static_cast<std::size_t>(k)][j];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    correct += best == s.class_id ? 1 : 0;
  }
  CHECK(correct == 200);
}

TEST_CASE("stratified split takes a rounded share of every class") {
  const auto samples = tiny_samples({25, 25, 25, 25});
  const auto s = split(samples, 0.2, 11);
  CHECK(s.test_ids.size() == 20);
  CHECK(s.train_ids.size() == 80);
  std::map<char, int> per_class;
  std::set<std::string> all(s.test_ids.begin(), s.test_ids.end());
  for (const auto& id : s.train_ids) CHECK(all.insert(id).second);
  CHECK(all.size() == 100);
  const auto test = select(samples, s.test_ids);
  std::vector<int> counts(4, 0);
  for (const auto& t : test) ++counts[static_cast<std::size_t>(t.class_id)];
  CHECK(counts == std::vector<int>{5, 5, 5, 5});

  const auto again = split(samples, 0.2, 11);
  CHECK(again.test_ids == s.test_ids);
  CHECK(again.train_ids == s.train_ids);
  CHECK(split(samples, 0.2, 12).test_ids != s.test_ids);
}

TEST_CASE("split size on Galaxy10 class counts matches per-class rounding") {
  const std::vector<int> counts = {1081, 1853, 2645, 2027, 334, 2043, 1829, 2628, 1423, 1873};
  const auto samples = tiny_samples(counts);
  CHECK(samples.size() == 17736);
  std::size_t expected = 0;
  for (const int n : counts) expected += static_cast<std::size_t>(std::floor(n * 0.2 + 0.5));
  const auto s = split(samples, 0.2, 0);
  CHECK(s.test_ids.size() == expected);
  const auto test = select(samples, s.test_ids);
  std::vector<int> got(10, 0);
  for (const auto& t : test) ++got[static_cast<std::size_t>(t.class_id)];
  for (std::size_t k = 0; k < counts.size(); ++k) CHECK(std::abs(got[k] - 0.2 * counts[k]) < 1.0);
}

TEST_CASE("split stratification bound holds for random class sizes") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> counts;
    const int k = 1 + static_cast<int>(rng.below(6));
    for (int i = 0; i < k; ++i) counts.push_back(2 + static_cast<int>(rng.below(40)));
    const double f = rng.uniform(0.05, 0.95);
    const auto samples = tiny_samples(counts);
    const auto test = select(samples, split(samples, f, rng.next_u64()).test_ids);
    std::vector<int> got(counts.size(), 0);
    for (const auto& t : test) ++got[static_cast<std::size_t>(t.class_id)];
    for (std::size_t c = 0; c < counts.size(); ++c) CHECK(std::abs(got[c] - f * counts[c]) < 1.0);
  }
}

TEST_CASE("split rejects bad inputs") {
  CHECK_THROWS_AS(split(tiny_samples({3, 1}), 0.2, 0), DatasetError);
  CHECK_THROWS(split(tiny_samples({3, 3}), 0.0, 0));
  CHECK_THROWS(split(tiny_samples({3, 3}), 1.0, 0));
  auto dup = tiny_samples({3, 3});
  dup[1].sample_id = dup[0].sample_id;
  CHECK_THROWS(split(dup, 0.5, 0));
  const auto uniform = split(tiny_samples({10, 10}), 0.25, 1, SplitMode::kUniform);
  CHECK(uniform.test_ids.size() == 5);
}

TEST_CASE("batches keep the final short batch") {
  const auto data = generate_synthetic({.n_classes = 2, .samples_per_class = 5, .image_size = 16, .noise_level = 0.1, .seed = 1});
  std::vector<std::string> ids;
  for (const auto& s : data.samples) ids.push_back(s.sample_id);
  BatchStream stream(data.samples, ids, 4, 3, false);
  stream.begin_epoch(0);
  std::vector<std::size_t> sizes;
  while (auto b = stream.next()) {
    sizes.push_back(b->size());
    for (std::size_t i = 0; i < b->size(); ++i) CHECK(b->symbols[i] == data.taxonomy.symbol(b->class_ids[i]));
  }
  CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
  CHECK(stream.batches_per_epoch() == 3);
  CHECK_THROWS_AS(BatchStream(data.samples, ids, 1, 0, false), UsageError);
}

TEST_CASE("epoch order depends only on seed and epoch") {
  const auto samples = tiny_samples({20, 20});
  DatasetSplit s;
  for (const auto& x : samples) s.train_ids.push_back(x.sample_id);
  auto record = [&](std::uint64_t seed) {
    BatchStream stream = make_batches(samples, s, 8, seed, false);
    std::vector<std::vector<std::string>> epochs;
    for (std::uint64_t e = 0; e < 3; ++e) {
      stream.begin_epoch(e);
      std::vector<std::string> order;
      while (auto b = stream.next()) order.insert(order.end(), b->sample_ids.begin(), b->sample_ids.end());
      epochs.push_back(order);
    }
    return epochs;
  };
  const auto a = record(9);
  const auto b = record(9);
  CHECK(a == b);
  CHECK(a[0] != a[1]);
  CHECK(a[1] != a[2]);
  auto sorted0 = a[0];
  auto sorted1 = a[1];
  std::sort(sorted0.begin(), sorted0.end());
  std::sort(sorted1.begin(), sorted1.end());
  CHECK(sorted0 == sorted1);
  CHECK(record(10)[0] != a[0]);
}

TEST_CASE("symbol augmentation stays in range and is reproducible") {
  const auto data = generate_synthetic({.n_classes = 3, .samples_per_class = 4, .image_size = 24, .noise_level = 0.1, .seed = 2});
  std::vector<std::string> ids;
  for (const auto& s : data.samples) ids.push_back(s.sample_id);
  BatchStream a(data.samples, ids, 12, 5, true);
  BatchStream b(data.samples, ids, 12, 5, true);
  a.begin_epoch(0);
  b.begin_epoch(0);
  const auto ba = a.next();
  const auto bb = b.next();
  int changed = 0;
  for (std::size_t i = 0; i < ba->size(); ++i) {
    CHECK(ba->symbols[i] == bb->symbols[i]);
    CHECK(ba->symbols[i].same_shape(data.taxonomy.symbol(ba->class_ids[i])));
    changed += ba->symbols[i] == data.taxonomy.symbol(ba->class_ids[i]) ? 0 : 1;
    for (const float p : ba->symbols[i].pixels) REQUIRE((p >= 0.0F && p <= 1.0F));
  }
  CHECK(changed > 0);
}

TEST_CASE("prefetch preserves order and bounds in-flight batches") {
  const auto samples = tiny_samples({30, 30});
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.sample_id);
  BatchStream direct(samples, ids, 4, 1, false);
  BatchStream fetched(samples, ids, 4, 1, false);
  for (std::uint64_t e = 0; e < 2; ++e) {
    direct.begin_epoch(e);
    PrefetchedEpoch pre(fetched, e, 2);
    std::size_t n = 0;
    while (auto d = direct.next()) {
      const auto p = pre.next();
      REQUIRE(p.has_value());
      CHECK(p->sample_ids == d->sample_ids);
      ++n;
    }
    CHECK_FALSE(pre.next().has_value());
    CHECK(n == 15);
    CHECK(pre.max_in_flight() <= 2);
  }
  BoundedQueue<int> q(3);
  for (int i = 0; i < 3; ++i) q.push(i);
  q.close();
  for (int i = 0; i < 3; ++i) CHECK(q.pop().value() == i);
  CHECK_FALSE(q.pop().has_value());
}

TEST_CASE("synthetic directory round trip") {
  const SyntheticSpec spec{.n_classes = 3, .samples_per_class = 4, .image_size = 16, .noise_level = 0.05, .seed = 4};
  const auto data = generate_synthetic(spec);
  const auto dir = test::scratch_dir("synthetic-dir");
  export_synthetic(data, spec, dir);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "symbols" / "class_0.png"));
  const auto back = load_synthetic_dir(dir);
  REQUIRE(back.samples.size() == data.samples.size());
  for (std::size_t i = 0; i < back.samples.size(); ++i) {
    CHECK(back.samples[i].sample_id == data.samples[i].sample_id);
    CHECK(back.samples[i].text == data.samples[i].text);
    double worst = 0;
    for (std::size_t j = 0; j < data.samples[i].image.pixels.size(); ++j) {
      worst = std::max(worst, std::abs(double(back.samples[i].image.pixels[j]) - data.samples[i].image.pixels[j]));
    }
    CHECK(worst <= 0.5 / 255.0 + 1e-6);
  }
}

TEST_CASE("Galaxy10 loader") {
  const auto dir = test::scratch_dir("galaxy10");
  const auto bundled = ClassTaxonomy::load_json(bundled_assets_dir() / "taxonomies" / "galaxy10.json", 0);

  SUBCASE("empty file keeps the 10-class taxonomy") {
    test::write_array_file(dir / "empty.h5", {}, 0, 256, 256, {}, "ans");
    const auto data = load_galaxy10(dir / "empty.h5");
    CHECK(data.samples.empty());
    CHECK(data.taxonomy.size() == 10);
  }
  SUBCASE("one record labeled 3 carries the class-3 prompt") {
    test::write_array_file(dir / "one.h5", gradient_pixels(1, 256, 256), 1, 256, 256, {3}, "ans");
    const auto data = load_galaxy10(dir / "one.h5");
    REQUIRE(data.samples.size() == 1);
    const auto& s = data.samples[0];
    CHECK(s.text == "A picture of " + bundled.at(3).article + " " + bundled.at(3).name + ".");
    CHECK(s.class_id == 3);
    CHECK(s.image.height == 256);
    CHECK(s.image.at(0, 0, 1) == doctest::Approx(7.0 / 255.0));
    CHECK(s.symbol.height == 256);
  }
  SUBCASE("resampled on request") {
    test::write_array_file(dir / "two.h5", gradient_pixels(2, 256, 256), 2, 256, 256, {0, 9}, "ans");
    const auto data = load_galaxy10(dir / "two.h5", {.image_size = 32});
    CHECK(data.samples[1].image.height == 32);
    CHECK(data.samples[1].symbol.height == 32);
  }
  SUBCASE("bad label names the record") {
    test::write_array_file(dir / "bad.h5", gradient_pixels(2, 256, 256), 2, 256, 256, {1, 10}, "ans");
    try {
      load_galaxy10(dir / "bad.h5");
      FAIL("expected an error");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
  }
  SUBCASE("wrong image shape is rejected") {
    test::write_array_file(dir / "shape.h5", gradient_pixels(1, 64, 64), 1, 64, 64, {0}, "ans");
    CHECK_THROWS_AS(load_galaxy10(dir / "shape.h5"), DatasetError);
  }
  SUBCASE("missing file names the path") {
    try {
      load_galaxy10(dir / "nope.h5");
      FAIL("expected an error");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find("nope.h5") != std::string::npos);
    }
  }
}

TEST_CASE("GalaxyMNIST loader") {
  const auto dir = test::scratch_dir("galaxymnist");
  test::write_array_file(dir / "train_dataset.hdf5", gradient_pixels(3, 64, 64), 3, 64, 64, {0, 1, 2}, "labels");
  test::write_array_file(dir / "test_dataset.hdf5", gradient_pixels(1, 64, 64), 1, 64, 64, {3}, "labels");

  const auto data = load_galaxymnist(dir);
  CHECK(data.taxonomy.size() == 4);
  REQUIRE(data.samples.size() == 4);
  CHECK(data.samples[0].symbol == data.taxonomy.symbol(0));
  CHECK(data.samples[0].image.height == 64);
  CHECK(data.samples[3].sample_id.find("test") != std::string::npos);

  const auto single = load_galaxymnist(dir / "train_dataset.hdf5");
  CHECK(single.samples.size() == 3);

  // Truncate the image payload: nothing partial may come back.
  test::write_array_file(dir / "cut.hdf5", gradient_pixels(40, 64, 64), 40, 64, 64,
                         std::vector<long long>(40, 1), "labels");
  fs::resize_file(dir / "cut.hdf5", fs::file_size(dir / "cut.hdf5") / 2);
  CHECK_THROWS_AS(load_galaxymnist(dir / "cut.hdf5"), DatasetError);
}

}  // TEST_SUITE
