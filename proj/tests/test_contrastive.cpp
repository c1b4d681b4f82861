#include "doctest.h"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace tma;

namespace {

EmbeddingBatch unit(const Matrix& m, Modality mod) { return normalize({m, mod, false}); }

Matrix permute_rows(const Matrix& m, const std::vector<int>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  return out;
}

using LossFn = LossResult (*)(const EmbeddingBatch&, const EmbeddingBatch&, const EmbeddingBatch&,
                              const TemperatureParam&, const LossOptions&);

// Central differences through the normalization of raw rows.
void check_gradients(LossFn fn, const LossOptions& options, std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::Index n = 5;
  const Eigen::Index d = 4;
  Matrix raw[3] = {test::random_matrix(rng, n, d), test::random_matrix(rng, n, d),
                   test::random_matrix(rng, n, d)};
  const auto temperature = TemperatureParam::from_tau(0.3);
  auto eval = [&](double log_inv) {
    const auto t = TemperatureParam::from_log_inverse(log_inv);
    return fn(unit(raw[0], Modality::kImage), unit(raw[1], Modality::kSymbol),
              unit(raw[2], Modality::kText), t, options)
        .breakdown.total;
  };
  const auto result = fn(unit(raw[0], Modality::kImage), unit(raw[1], Modality::kSymbol),
                         unit(raw[2], Modality::kText), temperature, options);
  const Matrix* grads[3] = {&result.grad.image, &result.grad.symbol, &result.grad.text};
  const double h = 1e-6;
  const double log_inv = temperature.log_inverse_tau();
  for (int m = 0; m < 3; ++m) {
    if (m == 1 && !options.include_symbol) {
      CHECK(result.grad.symbol.size() == 0);
      continue;
    }
    const Matrix analytic = normalize_backward(raw[m], *grads[m]);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < d; ++k) {
        const double keep = raw[m](i, k);
        raw[m](i, k) = keep + h;
        const double up = eval(log_inv);
        raw[m](i, k) = keep - h;
        const double down = eval(log_inv);
        raw[m](i, k) = keep;
        CHECK(analytic(i, k) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5).scale(1.0));
      }
    }
  }
  const double fd_tau = (eval(log_inv + h) - eval(log_inv - h)) / (2 * h);
  CHECK(result.grad.log_inverse_tau == doctest::Approx(fd_tau).epsilon(1e-5).scale(1.0));
}

}  // namespace

TEST_SUITE("contrastive") {

TEST_CASE("normalize produces unit rows and rejects zero rows") {
  Matrix m(2, 3);
  m << 3, 4, 0, 0, 0, -2;
  const auto z = unit(m, Modality::kText);
  CHECK(z.normalized);
  CHECK(z.vectors(0, 0) == doctest::Approx(0.6));
  CHECK(z.vectors(0, 1) == doctest::Approx(0.8));
  CHECK(z.vectors(1, 2) == doctest::Approx(-1.0));
  Matrix zero = Matrix::Zero(1, 3);
  CHECK_THROWS_AS(unit(zero, Modality::kImage), LossError);
  Matrix nan = Matrix::Constant(1, 3, std::nan(""));
  CHECK_THROWS_AS(unit(nan, Modality::kImage), LossError);
}

TEST_CASE("similarity matrix equals pairwise dot products") {
  Rng rng(1);
  const auto a = test::random_unit(rng, 4, 6, Modality::kImage);
  const auto b = test::random_unit(rng, 3, 6, Modality::kText);
  const Matrix s = similarity_matrix(a, b);
  REQUIRE(s.rows() == 4);
  REQUIRE(s.cols() == 3);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 6; ++k) dot += a.vectors(i, k) * b.vectors(j, k);
      CHECK(s(i, j) == doctest::Approx(dot).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(similarity_matrix(EmbeddingBatch{a.vectors, Modality::kImage, false}, b), LossError);
  const auto c = test::random_unit(rng, 3, 5, Modality::kText);
  CHECK_THROWS_AS(similarity_matrix(a, c), LossError);
}

TEST_CASE("single-pair batch has zero loss") {
  Rng rng(2);
  const auto t = TemperatureParam::from_tau(0.07);
  const auto img = test::random_unit(rng, 1, 8, Modality::kImage);
  const auto sym = test::random_unit(rng, 1, 8, Modality::kSymbol);
  const auto txt = test::random_unit(rng, 1, 8, Modality::kText);
  CHECK(stage1_loss(img, sym, txt, t).breakdown.total == doctest::Approx(0.0));
  CHECK(stage2_loss(img, sym, txt, t).breakdown.total == doctest::Approx(0.0));
}

TEST_CASE("identical embeddings give log N per term") {
  for (int n : {2, 4, 8}) {
    const Matrix same = Matrix::Constant(n, 5, 1.0);
    const auto z = unit(same, Modality::kImage);
    for (double tau : {0.07, 1.0}) {
      const auto t = TemperatureParam::from_tau(tau);
      const auto s1 = stage1_loss(z, z, z, t);
      const auto s2 = stage2_loss(z, z, z, t);
      CHECK(s1.breakdown.total == doctest::Approx(std::log(n)).epsilon(1e-12));
      CHECK(s2.breakdown.total == doctest::Approx(3.0 * std::log(n)).epsilon(1e-12));
      // At the uniform point every softmax is flat, so the loss has no pull on tau.
      CHECK(s2.grad.log_inverse_tau == doctest::Approx(0.0).scale(1.0));
    }
  }
}

TEST_CASE("two-sample hand case at unit temperature") {
  Matrix eye = Matrix::Identity(2, 2);
  const auto z = unit(eye, Modality::kImage);
  const auto t = TemperatureParam::from_tau(1.0);
  // Each row: -log(e / (e + 1)).
  const double direction = std::log1p(std::exp(-1.0));
  CHECK(stage1_loss(z, z, z, t).breakdown.total == doctest::Approx(direction).epsilon(1e-12));
  CHECK(stage2_loss(z, z, z, t).breakdown.total == doctest::Approx(3.0 * direction).epsilon(1e-12));
}

TEST_CASE("random batches match the loop oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Index n = 3 + trial;
    const auto img = test::random_unit(rng, n, 6, Modality::kImage);
    const auto sym = test::random_unit(rng, n, 6, Modality::kSymbol);
    const auto txt = test::random_unit(rng, n, 6, Modality::kText);
    const auto t = TemperatureParam::from_tau(trial == 0 ? 0.5 : 0.07 * (trial + 1));
    const double inv = t.inverse_tau();
    const auto s1 = stage1_loss(img, sym, txt, t);
    const auto s2 = stage2_loss(img, sym, txt, t);
    CHECK(s1.breakdown.total ==
          doctest::Approx(test::brute_stage1(img.vectors, sym.vectors, txt.vectors, inv)).epsilon(1e-10));
    CHECK(s2.breakdown.total ==
          doctest::Approx(test::brute_stage2(img.vectors, sym.vectors, txt.vectors, inv)).epsilon(1e-10));
    CHECK(s2.breakdown.per_pair.at(kImgSym) ==
          doctest::Approx(test::brute_direction(img.vectors, sym.vectors, inv)).epsilon(1e-10));
    CHECK(s1.breakdown.per_pair.count(kImgSym) == 0);
    double sum = 0.0;
    for (const auto& [_, v] : s2.breakdown.per_pair) sum += v;
    CHECK(sum == doctest::Approx(s2.breakdown.total).epsilon(1e-12));
    CHECK(s2.breakdown.temperature_value == doctest::Approx(t.tau()));

    LossOptions sym_opts;
    sym_opts.symmetric = true;
    const double expected = 0.5 * (test::brute_direction(img.vectors, txt.vectors, inv) +
                                   test::brute_direction(txt.vectors, img.vectors, inv));
    CHECK(stage2_loss(img, sym, txt, t, sym_opts).breakdown.per_pair.at(kImgTxt) ==
          doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("loss is invariant to a joint permutation of the batch") {
  Rng rng(4);
  const auto img = test::random_unit(rng, 6, 5, Modality::kImage);
  const auto sym = test::random_unit(rng, 6, 5, Modality::kSymbol);
  const auto txt = test::random_unit(rng, 6, 5, Modality::kText);
  std::vector<int> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  const auto t = TemperatureParam::from_tau(0.2);
  const auto p = [&](const EmbeddingBatch& z) {
    return EmbeddingBatch{permute_rows(z.vectors, perm), z.modality, true};
  };
  CHECK(stage2_loss(p(img), p(sym), p(txt), t).breakdown.total ==
        doctest::Approx(stage2_loss(img, sym, txt, t).breakdown.total).epsilon(1e-12));
  CHECK(stage1_loss(p(img), p(sym), p(txt), t).breakdown.total ==
        doctest::Approx(stage1_loss(img, sym, txt, t).breakdown.total).epsilon(1e-12));
}

TEST_CASE("bimodal mode keeps only the image-text pair") {
  Rng rng(5);
  const auto img = test::random_unit(rng, 4, 5, Modality::kImage);
  const auto txt = test::random_unit(rng, 4, 5, Modality::kText);
  LossOptions opts;
  opts.include_symbol = false;
  const auto t = TemperatureParam::from_tau(0.1);
  const double expected = test::brute_direction(img.vectors, txt.vectors, t.inverse_tau());
  for (const auto& r : {stage1_loss(img, {}, txt, t, opts), stage2_loss(img, {}, txt, t, opts)}) {
    CHECK(r.breakdown.total == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.breakdown.per_pair.size() == 1);
    CHECK(r.grad.symbol.size() == 0);
  }
}

TEST_CASE("label masking drops same-class negatives") {
  Matrix same = Matrix::Constant(4, 3, 1.0);
  const auto z = unit(same, Modality::kImage);
  const std::vector<int> labels = {0, 0, 1, 1};
  LossOptions opts;
  opts.label_masked_negatives = true;
  opts.labels = labels;
  const auto t = TemperatureParam::from_tau(0.07);
  // Each row keeps itself and two other-class candidates.
  CHECK(stage2_loss(z, z, z, t, opts).breakdown.total == doctest::Approx(3.0 * std::log(3.0)).epsilon(1e-12));
  const std::vector<int> short_labels = {0, 1};
  opts.labels = short_labels;
  CHECK_THROWS_AS(stage2_loss(z, z, z, t, opts), LossError);
}

TEST_CASE("malformed inputs are rejected") {
  Rng rng(6);
  const auto a = test::random_unit(rng, 4, 5, Modality::kImage);
  const auto b = test::random_unit(rng, 3, 5, Modality::kText);
  const auto t = TemperatureParam::from_tau(0.1);
  CHECK_THROWS_AS(stage2_loss(a, a, b, t), LossError);
  EmbeddingBatch raw{test::random_matrix(rng, 4, 5), Modality::kText, false};
  CHECK_THROWS_AS(stage1_loss(a, a, raw, t), LossError);
  raw.normalized = true;
  CHECK_THROWS_AS(stage1_loss(a, a, raw, t), LossError);
  CHECK_THROWS_AS(stage2_loss(EmbeddingBatch{}, EmbeddingBatch{}, EmbeddingBatch{}, t), LossError);
}

TEST_CASE("analytic gradients match finite differences") {
  LossOptions plain;
  check_gradients(&stage1_loss, plain, 10);
  check_gradients(&stage2_loss, plain, 11);
  LossOptions symmetric;
  symmetric.symmetric = true;
  check_gradients(&stage1_loss, symmetric, 12);
  check_gradients(&stage2_loss, symmetric, 13);
  const std::vector<int> labels = {0, 1, 0, 2, 1};
  LossOptions masked;
  masked.label_masked_negatives = true;
  masked.labels = labels;
  check_gradients(&stage2_loss, masked, 14);
  LossOptions bimodal;
  bimodal.include_symbol = false;
  check_gradients(&stage2_loss, bimodal, 15);
}

TEST_CASE("clamped temperature receives no gradient") {
  Rng rng(7);
  const auto z = test::random_unit(rng, 4, 5, Modality::kImage);
  const auto w = test::random_unit(rng, 4, 5, Modality::kText);
  const auto t = TemperatureParam::from_log_inverse(std::log(1000.0));
  const auto r = stage2_loss(z, z, w, t);
  CHECK(r.grad.log_inverse_tau == 0.0);
  CHECK(r.breakdown.temperature_value == doctest::Approx(0.01));
}

}  // TEST_SUITE
