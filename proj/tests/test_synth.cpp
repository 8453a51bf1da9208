#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "test_util.hpp"

using namespace cfeval;
using testutil::expect_errc;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_per_class = 40;
  s.dim = 32;
  s.classes = 5;
  s.marker_dims = 8;
  s.class_separation = 10.0;
  s.noise_sd = 1.0;
  s.seed = 7;
  return s;
}

// Two classes, one marker dim, no ambiguity: flawed centroids at 0 and 10.
SyntheticWorld hand_world() {
  SyntheticWorld w;
  w.spec.dim = 2;
  w.spec.classes = 2;
  w.spec.marker_dims = 1;
  w.spec.noise_sd = 1.0;
  w.spec.class_separation = 10.0;
  w.spec.n_per_class = 1;
  w.flawed_centroids = {{0.0}, {10.0}};
  w.centroids = {{0.0, 0.0}, {10.0, 0.0}};
  w.label_directions = {{1.0, 0.0}};
  return w;
}

TEST(ValidateSpec, RejectsDegenerateParameters) {
  SyntheticSpec s = small_spec();
  s.marker_dims = s.dim;
  expect_errc(Errc::spec_invalid, [&] { validate_spec(s); });
  s = small_spec();
  s.classes = 1;
  expect_errc(Errc::spec_invalid, [&] { validate_spec(s); });
  s = small_spec();
  s.class_separation = 0.0;
  expect_errc(Errc::spec_invalid, [&] { validate_spec(s); });
  s = small_spec();
  s.noise_sd = -1.0;
  expect_errc(Errc::spec_invalid, [&] { validate_spec(s); });
  s = small_spec();
  s.n_per_class = 0;
  expect_errc(Errc::spec_invalid, [&] { validate_spec(s); });
  EXPECT_NO_THROW(validate_spec(small_spec()));
}

TEST(GenWorld, ShapesLabelsAndDeterminism) {
  SyntheticWorld w = gen_world(small_spec());
  EXPECT_EQ(w.data.n(), 200u);
  EXPECT_EQ(w.data.sample_size(), 32u);
  EXPECT_EQ(w.labels.size(), 200u);
  EXPECT_EQ(w.labels[0], 0u);
  EXPECT_EQ(w.labels[39], 0u);
  EXPECT_EQ(w.labels[40], 1u);
  EXPECT_EQ(w.labels[199], 4u);
  EXPECT_EQ(w.centroids.size(), 5u);
  EXPECT_EQ(w.flawed_centroids[0].size(), 8u);
  EXPECT_EQ(w.class_autoencoders.size(), 5u);
  EXPECT_EQ(w.global_autoencoder.k, 8u);

  SyntheticWorld again = gen_world(small_spec());
  EXPECT_TRUE(testutil::same_bits(w.data.values, again.data.values));

  SyntheticSpec other = small_spec();
  other.seed = 8;
  EXPECT_FALSE(testutil::same_bits(w.data.values, gen_world(other).data.values));
}

TEST(GenWorld, CentroidGeometryMatchesSeparationSplit) {
  SyntheticSpec spec = small_spec();
  SyntheticWorld w = gen_world(spec);
  const double sep = spec.class_separation;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) {
      double marker2 = 0.0, total2 = 0.0;
      for (std::size_t d = 0; d < spec.dim; ++d) {
        double diff = w.centroids[i][d] - w.centroids[j][d];
        total2 += diff * diff;
        if (d < spec.marker_dims) marker2 += diff * diff;
      }
      EXPECT_NEAR(std::sqrt(total2), sep, 1e-9);
      EXPECT_NEAR(marker2 / total2, kMarkerShare, 1e-12);
    }
}

TEST(GenWorld, MarkerBlockFallsBackToColinearWhenNarrow) {
  SyntheticSpec spec = small_spec();
  spec.marker_dims = 3;  // fewer marker dims than the 5 classes
  SyntheticWorld w = gen_world(spec);
  for (std::size_t c = 0; c < 5; ++c) {
    for (std::size_t d = 1; d < 3; ++d) EXPECT_DOUBLE_EQ(w.flawed_centroids[c][d], 0.0);
  }
  double gap = w.flawed_centroids[1][0] - w.flawed_centroids[0][0];
  EXPECT_NEAR(gap, std::sqrt(kMarkerShare) * spec.class_separation, 1e-12);
}

TEST(GenWorld, LabelDirectionsAreUnitAndDecoupled) {
  SyntheticWorld w = gen_world(small_spec());
  ASSERT_EQ(w.label_directions.size(), 4u);
  EXPECT_EQ(label_names(w),
            (std::vector<std::string>{"aligned", "ortho1", "ortho2", "ortho3"}));
  for (const Vector& dir : w.label_directions) {
    double n2 = 0.0;
    for (double v : dir) n2 += v * v;
    EXPECT_NEAR(n2, 1.0, 1e-12);
  }
  // ortho1..3 are orthogonal to every centroid and to the aligned direction.
  for (std::size_t a = 1; a < 4; ++a) {
    for (const Vector& c : w.centroids) {
      double dot = 0.0;
      for (std::size_t d = 0; d < c.size(); ++d) dot += w.label_directions[a][d] * c[d];
      EXPECT_NEAR(dot, 0.0, 1e-9);
    }
    for (std::size_t b = 0; b < a; ++b) {
      double dot = 0.0;
      for (std::size_t d = 0; d < w.spec.dim; ++d)
        dot += w.label_directions[a][d] * w.label_directions[b][d];
      EXPECT_NEAR(dot, 0.0, 1e-9);
    }
  }
}

TEST(Classify, ProbabilitiesAreSoftmaxClean) {
  SyntheticWorld w = gen_world(small_spec());
  for (std::size_t i : {0u, 50u, 199u}) {
    Vector p = classify(w, w.data.row(i), WhichClassifier::oracle);
    ASSERT_EQ(p.size(), 5u);
    double sum = 0.0;
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Classify, FlawedClassifierIgnoresNonMarkerDims) {
  SyntheticWorld w = gen_world(small_spec());
  Vector x(w.data.row(3).begin(), w.data.row(3).end());
  Vector flawed_before = classify(w, x, WhichClassifier::flawed);
  Vector oracle_before = classify(w, x, WhichClassifier::oracle);
  for (std::size_t d = w.spec.marker_dims; d < w.spec.dim; ++d) x[d] += 100.0;
  EXPECT_TRUE(testutil::same_bits(flawed_before, classify(w, x, WhichClassifier::flawed)));
  EXPECT_FALSE(testutil::same_bits(oracle_before, classify(w, x, WhichClassifier::oracle)));
}

TEST(Classify, OracleRecoversPlantedLabelsAlmostAlways) {
  SyntheticWorld w = gen_world(small_spec());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < w.data.n(); ++i)
    hits += argmax(classify(w, w.data.row(i), WhichClassifier::oracle)) == w.labels[i];
  EXPECT_GT(hits, w.data.n() * 99 / 100);
}

TEST(LabelOracle, BinaryLogisticOutputs) {
  SyntheticWorld w = gen_world(small_spec());
  Vector p = label_oracle(w, w.data.row(0), 0);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_GT(p[0], 0.0);
  EXPECT_GT(p[1], 0.0);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
  expect_errc(Errc::unknown_attribute, [&] { label_oracle(w, w.data.row(0), 9); });
}

TEST(CfTinyChange, HandCaseLandsJustPastTheBoundary) {
  SyntheticWorld w = hand_world();
  Vector x{1.0, 0.0};
  Vector c = cf_tiny_change(w, x, 1);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_NEAR(c[0], 5.01, 1e-12);
  EXPECT_TRUE(testutil::same_bits(c[1], 0.0));  // non-marker dims untouched
  EXPECT_EQ(argmax(classify(w, c, WhichClassifier::flawed)), 1u);
}

TEST(CfTinyChange, AlreadyTargetAndRangeErrors) {
  SyntheticWorld w = hand_world();
  Vector near_target{9.0, 0.0};
  expect_errc(Errc::already_target, [&] { cf_tiny_change(w, near_target, 1); });
  Vector x{1.0, 0.0};
  expect_errc(Errc::out_of_range, [&] { cf_tiny_change(w, x, 2); });
}

TEST(CfTinyChange, FlipsFlawedAndOnlyTouchesMarkers) {
  SyntheticWorld w = gen_world(small_spec());
  Rng tr(123);
  for (std::size_t i = 0; i < 50; ++i) {
    std::span<const double> x = w.data.row(i * 4);
    std::size_t lab = w.labels[i * 4];
    std::size_t target = (lab + 1 + tr.next_below(4)) % 5;
    if (argmax(classify(w, x, WhichClassifier::flawed)) == target) continue;
    Vector c = cf_tiny_change(w, x, target);
    EXPECT_EQ(argmax(classify(w, c, WhichClassifier::flawed)), target);
    for (std::size_t d = w.spec.marker_dims; d < w.spec.dim; ++d)
      EXPECT_TRUE(testutil::same_bits(c[d], x[d]));
  }
}

TEST(CfPrototypeBlend, HandCasePicksSmallestGridAlpha) {
  SyntheticWorld w = hand_world();
  Vector x{1.0, 0.0};
  Vector c = cf_prototype_blend(w, x, 1);
  EXPECT_NEAR(c[0], 5.05, 1e-12);  // alpha = 0.45, the first grid point past 4/9
  EXPECT_NEAR(c[1], 0.0, 1e-15);
  EXPECT_EQ(argmax(classify(w, c, WhichClassifier::flawed)), 1u);
  EXPECT_EQ(argmax(classify(w, c, WhichClassifier::oracle)), 1u);
}

TEST(CfPrototypeBlend, ReturnedAlphaIsMinimal) {
  SyntheticWorld w = gen_world(small_spec());
  for (std::size_t i : {1u, 45u, 90u, 130u, 170u}) {
    std::span<const double> x = w.data.row(i);
    std::size_t target = (w.labels[i] + 2) % 5;
    Vector c = cf_prototype_blend(w, x, target);
    // Recover alpha from the first dim the blend moved.
    double alpha = 0.0;
    for (std::size_t d = 0; d < w.spec.dim; ++d) {
      double denom = w.centroids[target][d] - x[d];
      if (std::abs(denom) > 1e-9) {
        alpha = (c[d] - x[d]) / denom;
        break;
      }
    }
    long grid = std::lround(alpha * 20.0);
    EXPECT_NEAR(alpha * 20.0, static_cast<double>(grid), 1e-9);
    ASSERT_GE(grid, 1);
    if (grid > 1) {
      double prev = static_cast<double>(grid - 1) / 20.0;
      Vector smaller(w.spec.dim);
      for (std::size_t d = 0; d < w.spec.dim; ++d)
        smaller[d] = x[d] + prev * (w.centroids[target][d] - x[d]);
      bool both = argmax(classify(w, smaller, WhichClassifier::flawed)) == target &&
                  argmax(classify(w, smaller, WhichClassifier::oracle)) == target;
      EXPECT_FALSE(both) << "sample " << i << " had a smaller working alpha";
    }
  }
}

TEST(CfPrototypeBlend, ExhaustedGridFails) {
  SyntheticWorld w = hand_world();
  w.flawed_centroids = {{0.0}, {-50.0}};  // flawed classifier never picks class 1
  Vector x{1.0, 0.0};
  expect_errc(Errc::no_valid_alpha, [&] { cf_prototype_blend(w, x, 1); });
}

TEST(CfMid, CopiesBlendMarkersAndFlipsFlawed) {
  SyntheticWorld w = gen_world(small_spec());
  std::span<const double> x = w.data.row(10);
  std::size_t target = (w.labels[10] + 3) % 5;
  Rng r1 = Rng::stream(9, "cf_mid", 10);
  Vector c = cf_mid(w, x, target, r1);
  EXPECT_EQ(argmax(classify(w, c, WhichClassifier::flawed)), target);

  Vector blend = cf_prototype_blend(w, x, target);
  for (std::size_t d = 0; d < w.spec.marker_dims; ++d)
    EXPECT_TRUE(testutil::same_bits(c[d], blend[d]));

  // Non-marker dims: roughly a quarter get nudged, never all, never none.
  std::size_t changed = 0;
  for (std::size_t d = w.spec.marker_dims; d < w.spec.dim; ++d)
    changed += !testutil::same_bits(c[d], x[d]);
  EXPECT_GT(changed, 0u);
  EXPECT_LT(changed, w.spec.dim - w.spec.marker_dims);

  Rng r2 = Rng::stream(9, "cf_mid", 10);
  Vector c2 = cf_mid(w, x, target, r2);
  EXPECT_TRUE(testutil::same_bits(c, c2));
}

TEST(CfMid, RejectsAlreadyTarget) {
  SyntheticWorld w = gen_world(small_spec());
  Rng r(1);
  expect_errc(Errc::already_target,
              [&] { cf_mid(w, w.data.row(0), w.labels[0], r); });
}

TEST(Reconstruct, ZeroMeanAutoencodersAreLinear) {
  SyntheticWorld w = gen_world(small_spec());
  Vector x(w.data.row(7).begin(), w.data.row(7).end());
  Vector rx = reconstruct(w.global_autoencoder, x);
  Vector sx = x;
  for (double& v : sx) v *= 0.6;
  Vector rsx = reconstruct(w.global_autoencoder, sx);
  for (std::size_t d = 0; d < x.size(); ++d)
    EXPECT_NEAR(rsx[d], 0.6 * rx[d], 1e-12 * std::max(1.0, std::abs(rx[d])));
}

TEST(Reconstruct, ComponentRowsAreOrthonormal) {
  SyntheticWorld w = gen_world(small_spec());
  const Matrix& c = w.global_autoencoder.components;
  Matrix gram = matmul(c, c.transposed());
  for (std::size_t i = 0; i < gram.rows; ++i)
    for (std::size_t j = 0; j < gram.cols; ++j)
      EXPECT_NEAR(gram.at(i, j), i == j ? 1.0 : 0.0, 1e-9);
}

TEST(Reconstruct, ProjectionIsIdempotent) {
  SyntheticWorld w = gen_world(small_spec());
  Vector x(w.data.row(12).begin(), w.data.row(12).end());
  Vector once = reconstruct(w.global_autoencoder, x);
  Vector twice = reconstruct(w.global_autoencoder, once);
  for (std::size_t d = 0; d < x.size(); ++d)
    EXPECT_NEAR(twice[d], once[d], 1e-9);
}

TEST(Embed, NegativeSquaredCentroidDistances) {
  SyntheticWorld w = gen_world(small_spec());
  std::span<const double> x = w.data.row(5);
  Vector e = embed(w, x);
  ASSERT_EQ(e.size(), 5u);
  for (std::size_t c = 0; c < 5; ++c) {
    double d2 = 0.0;
    for (std::size_t d = 0; d < w.spec.dim; ++d)
      d2 += (x[d] - w.centroids[c][d]) * (x[d] - w.centroids[c][d]);
    EXPECT_NEAR(e[c], -d2, 1e-9);
    EXPECT_LE(e[c], 0.0);
  }
  EXPECT_EQ(argmax(e), w.labels[5]);
}

TEST(MakeFakemnist, PaintsLabelsIntoRowZero) {
  Rng rng(2);
  TensorSet images = testutil::make_tensor("digits", 30, 16, {});
  images.values.resize(30 * 16);
  for (auto& v : images.values) v = 0.2 + 0.6 * rng.next_double();

  FakeMnist fm = make_fakemnist(images, 4, 4, 4, 11, {0.0, 1.0});
  EXPECT_EQ(fm.images.n(), 30u);
  ASSERT_EQ(fm.labels.size(), 30u);
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < 30; ++i) {
    std::size_t label = fm.labels[i];
    ASSERT_LT(label, 4u);
    seen.insert(label);
    std::span<const double> row = fm.images.row(i);
    for (std::size_t col = 0; col < 4; ++col)
      EXPECT_DOUBLE_EQ(row[col], col == label ? 1.0 : 0.0);
  }
  EXPECT_EQ(seen.size(), 4u);
}

TEST(MakeFakemnist, ShufflePreservesNonPaintedPixels) {
  Rng rng(3);
  TensorSet images = testutil::make_tensor("digits", 25, 12, {});
  images.values.resize(25 * 12);
  for (auto& v : images.values) v = rng.next_double();

  FakeMnist fm = make_fakemnist(images, 3, 4, 3, 5, {0.0, 1.0});
  auto tails = [](const TensorSet& t) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < t.n(); ++i) {
      std::span<const double> r = t.row(i);
      rows.emplace_back(r.begin() + 4, r.end());  // skip the painted first row
    }
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  EXPECT_EQ(tails(images), tails(fm.images));

  FakeMnist again = make_fakemnist(images, 3, 4, 3, 5, {0.0, 1.0});
  EXPECT_TRUE(testutil::same_bits(fm.images.values, again.images.values));
  EXPECT_EQ(fm.labels, again.labels);
}

TEST(MakeFakemnist, RejectsBadGeometry) {
  TensorSet images = testutil::make_tensor("digits", 4, 6, std::vector<double>(24, 0.5));
  expect_errc(Errc::too_narrow, [&] { make_fakemnist(images, 2, 3, 4, 1, {0, 1}); });
  expect_errc(Errc::dimension_mismatch, [&] { make_fakemnist(images, 2, 4, 3, 1, {0, 1}); });
  expect_errc(Errc::spec_invalid, [&] { make_fakemnist(images, 2, 3, 3, 1, {1, 1}); });
}

TEST(BuildBundle, ProducesValidDeterministicBundles) {
  SyntheticWorld w = gen_world(small_spec());
  EvaluationBundle b = build_bundle(w, CfMethod::tiny, 60, 3);
  EXPECT_EQ(b.method_name, "tiny");
  EXPECT_EQ(b.n(), 60u);
  EXPECT_TRUE(validate_bundle(b).empty());
  ASSERT_TRUE(b.has_targets());
  ASSERT_TRUE(b.has_reconstructions());
  ASSERT_TRUE(b.has_embeddings());
  ASSERT_TRUE(b.has_oracle());
  EXPECT_EQ(b.embeddings_reference->n(), w.data.n());
  EXPECT_EQ(b.embeddings_counterfactuals->n(), 60u);
  EXPECT_EQ(b.label_oracles.size(), 4u);

  EvaluationBundle again = build_bundle(w, CfMethod::tiny, 60, 3);
  EXPECT_TRUE(testutil::same_bits(b.inputs.values, again.inputs.values));
  EXPECT_TRUE(testutil::same_bits(b.counterfactuals.values, again.counterfactuals.values));
  EXPECT_EQ(*b.targets, *again.targets);

  EvaluationBundle other = build_bundle(w, CfMethod::tiny, 60, 4);
  EXPECT_FALSE(testutil::same_bits(b.inputs.values, other.inputs.values));
}

TEST(BuildBundle, TargetsNeverEqualSourceLabels) {
  SyntheticWorld w = gen_world(small_spec());
  for (CfMethod m : {CfMethod::tiny, CfMethod::mid, CfMethod::prototype}) {
    EvaluationBundle b = build_bundle(w, m, 80, 17);
    for (std::size_t i = 0; i < b.n(); ++i) {
      std::size_t input_pred = b.f_probs_inputs.predicted(i);
      EXPECT_LT((*b.targets)[i], 5u);
      // The flawed classifier nails its own planted markers, so the input
      // prediction recovers the source label; targets must differ from it.
      EXPECT_NE((*b.targets)[i], input_pred) << "sample " << i;
    }
  }
}

TEST(BuildBundle, RejectsOversizedEvalSet) {
  SyntheticWorld w = gen_world(small_spec());
  expect_errc(Errc::out_of_range, [&] { build_bundle(w, CfMethod::tiny, 1000, 3); });
  expect_errc(Errc::out_of_range, [&] { build_bundle(w, CfMethod::tiny, 0, 3); });
}

TEST(RescaleBundle, AffineReexpressionScalesDistances) {
  SyntheticWorld w = gen_world(small_spec());
  EvaluationBundle b = build_bundle(w, CfMethod::mid, 50, 3);
  EvaluationBundle r = rescale_bundle(b, {0.0, 255.0});
  EXPECT_DOUBLE_EQ(r.normalization_range.high, 255.0);
  EXPECT_TRUE(validate_bundle(r).empty());

  MetricConfig cfg;
  MetricReport ra = build_report(b, cfg);
  MetricReport rb = build_report(r, cfg);
  const MetricEntry* en_a = ra.find("EN");
  const MetricEntry* en_b = rb.find("EN");
  ASSERT_NE(en_a, nullptr);
  ASSERT_NE(en_b, nullptr);
  EXPECT_NEAR(en_b->stat.mean, 255.0 * en_a->stat.mean,
              1e-9 * std::abs(en_b->stat.mean));
  // Probabilities pass through untouched: TCV identical.
  EXPECT_DOUBLE_EQ(ra.find("TCV")->stat.mean, rb.find("TCV")->stat.mean);
}

}  // namespace
