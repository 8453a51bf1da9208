#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "cfeval/data.hpp"
#include "cfeval/error.hpp"
#include "cfeval/linalg.hpp"
#include "cfeval/numeric.hpp"
#include "cfeval/rng.hpp"

namespace cfeval {

// Share of the squared class separation carried by the marker dims. High
// enough that a small marker-only step flips the marker-blind classifier,
// low enough that the full-feature oracle still sees the class signal in the
// untouched dims; tuned so the qualitative method orderings hold across seeds.
inline constexpr double kMarkerShare = 0.84;

struct SyntheticSpec {
  std::size_t n_per_class = 200;
  std::size_t dim = 64;
  std::size_t classes = 5;
  std::size_t marker_dims = 8;
  double class_separation = 10.0;
  double noise_sd = 1.0;
  std::uint64_t seed = 7;
};

inline void validate_spec(const SyntheticSpec& s) {
  require(s.marker_dims >= 1 && s.marker_dims < s.dim, Errc::spec_invalid,
          "need 1 <= marker_dims < dim");
  require(s.classes >= 2, Errc::spec_invalid, "need at least 2 classes");
  require(s.class_separation > 0.0, Errc::spec_invalid, "class_separation must be positive");
  require(s.noise_sd > 0.0, Errc::spec_invalid, "noise_sd must be positive");
  require(s.n_per_class >= 1, Errc::spec_invalid, "n_per_class must be >= 1");
}

// Zero-mean linear auto-encoder: project onto k orthonormal components.
struct LinearAutoencoder {
  Vector mean;
  Matrix components;  // k x dim, one component per row
  std::size_t k = 0;
};

inline Vector reconstruct(const LinearAutoencoder& ae, std::span<const double> sample) {
  require(sample.size() == ae.mean.size(), Errc::dimension_mismatch,
          "reconstruct: sample dimension differs from auto-encoder");
  const std::size_t dim = ae.mean.size();
  Vector out = ae.mean;
  for (std::size_t r = 0; r < ae.k; ++r) {
    double coef = 0.0;
    for (std::size_t d = 0; d < dim; ++d) coef += ae.components.at(r, d) * (sample[d] - ae.mean[d]);
    for (std::size_t d = 0; d < dim; ++d) out[d] += coef * ae.components.at(r, d);
  }
  return out;
}

struct SyntheticWorld {
  TensorSet data;  // (K * n_per_class) x dim, class blocks in label order
  std::vector<std::size_t> labels;
  std::vector<Vector> centroids;          // full dim, seen by the oracle
  std::vector<Vector> flawed_centroids;   // marker dims only
  std::vector<Vector> label_directions;   // unit vectors; [0] = aligned attribute
  std::vector<LinearAutoencoder> class_autoencoders;
  LinearAutoencoder global_autoencoder;
  SyntheticSpec spec;
};

inline std::vector<std::string> label_names(const SyntheticWorld& w) {
  std::vector<std::string> names{"aligned"};
  for (std::size_t i = 1; i < w.label_directions.size(); ++i)
    names.push_back("ortho" + std::to_string(i));
  return names;
}

namespace detail {

// One scaled one-hot per class, or points along slot 0 when the block is too
// narrow; adjacent classes sit exactly `pairwise` apart either way.
inline std::vector<Vector> place_block(std::size_t classes, std::size_t slots, double pairwise) {
  std::vector<Vector> cents(classes, Vector(slots, 0.0));
  for (std::size_t c = 0; c < classes; ++c) {
    if (slots >= classes)
      cents[c][c] = pairwise / std::numbers::sqrt2;
    else
      cents[c][0] = pairwise * static_cast<double>(c);
  }
  return cents;
}

inline LinearAutoencoder fit_zero_mean_pca(const SyntheticWorld& w,
                                           const std::vector<std::size_t>& rows,
                                           std::size_t k) {
  const std::size_t dim = w.spec.dim;
  Matrix moment(dim, dim);  // uncentered second moment, so the map is linear
  for (std::size_t i : rows) {
    std::span<const double> x = w.data.row(i);
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = a; b < dim; ++b) moment.at(a, b) += x[a] * x[b];
  }
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (std::size_t a = 0; a < dim; ++a)
    for (std::size_t b = a; b < dim; ++b) {
      moment.at(a, b) *= inv_n;
      moment.at(b, a) = moment.at(a, b);
    }
  EigenDecomposition eig = sym_eigen(moment);
  LinearAutoencoder ae;
  ae.k = k;
  ae.mean = Vector(dim, 0.0);
  ae.components = Matrix(k, dim);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t d = 0; d < dim; ++d) ae.components.at(r, d) = eig.vectors.at(d, r);
  return ae;
}

}  // namespace detail

inline SyntheticWorld gen_world(const SyntheticSpec& spec) {
  validate_spec(spec);
  const std::size_t K = spec.classes, dim = spec.dim, m = spec.marker_dims;
  SyntheticWorld w;
  w.spec = spec;

  const double marker_gap = std::sqrt(kMarkerShare) * spec.class_separation;
  const double rest_gap = std::sqrt(1.0 - kMarkerShare) * spec.class_separation;
  w.flawed_centroids = detail::place_block(K, m, marker_gap);
  std::vector<Vector> rest = detail::place_block(K, dim - m, rest_gap);
  w.centroids.assign(K, Vector(dim, 0.0));
  for (std::size_t c = 0; c < K; ++c) {
    for (std::size_t d = 0; d < m; ++d) w.centroids[c][d] = w.flawed_centroids[c][d];
    for (std::size_t d = m; d < dim; ++d) w.centroids[c][d] = rest[c][d - m];
  }

  const std::size_t n_total = K * spec.n_per_class;
  w.data.name = "world";
  w.data.shape = {n_total, dim};
  w.data.values.resize(n_total * dim);
  w.labels.resize(n_total);
  Rng g = Rng::stream(spec.seed, "data");
  for (std::size_t i = 0; i < n_total; ++i) {
    std::size_t lab = i / spec.n_per_class;
    w.labels[i] = lab;
    std::span<double> row = w.data.row(i);
    for (std::size_t d = 0; d < dim; ++d)
      row[d] = w.centroids[lab][d] + spec.noise_sd * g.next_gaussian();
  }

  // Attribute 0 follows the class-0 -> class-1 direction; the rest are unit
  // axes from the tail of the coordinate list, orthogonalized against the
  // centroid span so no counterfactual target drags them directly.
  {
    Vector aligned(dim);
    double norm2 = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      aligned[d] = w.centroids[1][d] - w.centroids[0][d];
      norm2 += aligned[d] * aligned[d];
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (double& v : aligned) v *= inv;
    w.label_directions.push_back(aligned);

    std::vector<Vector> basis;  // orthonormal span of centroids + accepted dirs
    auto orthogonalize = [&](Vector v) {
      for (const Vector& b : basis) {
        double dot = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dot += v[d] * b[d];
        for (std::size_t d = 0; d < dim; ++d) v[d] -= dot * b[d];
      }
      double n2 = 0.0;
      for (double x : v) n2 += x * x;
      if (n2 <= 1e-12) return Vector{};
      double s = 1.0 / std::sqrt(n2);
      for (double& x : v) x *= s;
      return v;
    };
    for (std::size_t c = 0; c < K; ++c) {
      Vector b = orthogonalize(w.centroids[c]);
      if (!b.empty()) basis.push_back(std::move(b));
    }
    for (std::size_t d = dim; d-- > 0 && w.label_directions.size() < 4;) {
      Vector v(dim, 0.0);
      v[d] = 1.0;
      Vector b = orthogonalize(std::move(v));
      if (b.empty()) continue;
      basis.push_back(b);
      w.label_directions.push_back(std::move(b));
    }
  }

  const std::size_t k = std::min<std::size_t>(8, dim - 1);
  std::vector<std::vector<std::size_t>> by_class(K);
  std::vector<std::size_t> everything(n_total);
  for (std::size_t i = 0; i < n_total; ++i) {
    by_class[w.labels[i]].push_back(i);
    everything[i] = i;
  }
  for (std::size_t c = 0; c < K; ++c)
    w.class_autoencoders.push_back(detail::fit_zero_mean_pca(w, by_class[c], k));
  w.global_autoencoder = detail::fit_zero_mean_pca(w, everything, k);
  return w;
}

enum class WhichClassifier { flawed, oracle };

// Softmax over negative squared centroid distances; the flawed classifier
// only ever looks at the marker dims.
inline Vector classify(const SyntheticWorld& w, std::span<const double> sample,
                       WhichClassifier which) {
  require(sample.size() == w.spec.dim, Errc::dimension_mismatch,
          "classify: sample dimension differs from world");
  const std::size_t K = w.spec.classes;
  Vector scores(K);
  for (std::size_t c = 0; c < K; ++c) {
    const Vector& cent = which == WhichClassifier::flawed ? w.flawed_centroids[c]
                                                          : w.centroids[c];
    double d2 = 0.0;
    for (std::size_t d = 0; d < cent.size(); ++d)
      d2 += (sample[d] - cent[d]) * (sample[d] - cent[d]);
    scores[c] = -d2;
  }
  double top = scores[argmax(scores)];
  double sum = 0.0;
  for (double& s : scores) {
    s = std::exp(s - top);
    sum += s;
  }
  for (double& s : scores) s /= sum;
  return scores;
}

// Binary logistic oracle for one semantic attribute.
inline Vector label_oracle(const SyntheticWorld& w, std::span<const double> sample,
                           std::size_t attribute) {
  require(attribute < w.label_directions.size(), Errc::unknown_attribute,
          "label_oracle: no such attribute");
  require(sample.size() == w.spec.dim, Errc::dimension_mismatch,
          "label_oracle: sample dimension differs from world");
  double proj = 0.0;
  for (std::size_t d = 0; d < sample.size(); ++d)
    proj += w.label_directions[attribute][d] * sample[d];
  double sig = 1.0 / (1.0 + std::exp(-proj / w.spec.noise_sd));
  return {1.0 - sig, sig};
}

// Minimal marker-only step that flips the flawed classifier to the target:
// walk along the flawed-centroid gap just past the nearest decision boundary.
// Everything the oracle relies on outside the marker block stays untouched.
inline Vector cf_tiny_change(const SyntheticWorld& w, std::span<const double> x,
                             std::size_t target) {
  require(target < w.spec.classes, Errc::out_of_range, "target class out of range");
  const std::size_t m = w.spec.marker_dims;
  Vector probs = classify(w, x, WhichClassifier::flawed);
  std::size_t cur = argmax(probs);
  require(cur != target, Errc::already_target,
          "flawed classifier already predicts the target class");

  const Vector& fc_t = w.flawed_centroids[target];
  const Vector& fc_c = w.flawed_centroids[cur];
  Vector u(m);
  double gap2 = 0.0;
  for (std::size_t d = 0; d < m; ++d) {
    u[d] = fc_t[d] - fc_c[d];
    gap2 += u[d] * u[d];
  }
  double gap = std::sqrt(gap2);
  for (double& v : u) v /= gap;

  // p(beta) = x_m + beta*u must end nearer fc_t than any competitor r:
  // a_r + beta*s_r < 0 with a_r = |x-fc_t|^2 - |x-fc_r|^2, s_r = 2u.(fc_r-fc_t).
  double d2_t = 0.0;
  for (std::size_t d = 0; d < m; ++d) d2_t += (x[d] - fc_t[d]) * (x[d] - fc_t[d]);
  double beta = 0.0;
  for (std::size_t r = 0; r < w.spec.classes; ++r) {
    if (r == target) continue;
    const Vector& fc_r = w.flawed_centroids[r];
    double d2_r = 0.0, s_r = 0.0;
    for (std::size_t d = 0; d < m; ++d) {
      d2_r += (x[d] - fc_r[d]) * (x[d] - fc_r[d]);
      s_r += 2.0 * u[d] * (fc_r[d] - fc_t[d]);
    }
    double a_r = d2_t - d2_r;
    if (s_r < 0.0) beta = std::max(beta, a_r / -s_r);
  }
  beta += 1e-3 * gap;

  Vector c(x.begin(), x.end());
  for (std::size_t d = 0; d < m; ++d) c[d] += beta * u[d];
  return c;
}

// Smallest grid blend toward the target centroid that convinces BOTH
// classifiers; every dim moves.
inline Vector cf_prototype_blend(const SyntheticWorld& w, std::span<const double> x,
                                 std::size_t target) {
  require(target < w.spec.classes, Errc::out_of_range, "target class out of range");
  const Vector& proto = w.centroids[target];
  for (int i = 1; i <= 20; ++i) {
    double alpha = static_cast<double>(i) / 20.0;
    Vector c(x.size());
    for (std::size_t d = 0; d < x.size(); ++d) c[d] = x[d] + alpha * (proto[d] - x[d]);
    if (argmax(classify(w, c, WhichClassifier::flawed)) == target &&
        argmax(classify(w, c, WhichClassifier::oracle)) == target)
      return c;
  }
  fail(Errc::no_valid_alpha, "no blend in the alpha grid flips both classifiers");
}

// Middle ground: the prototype's marker dims, plus noise on a random quarter
// of the remaining dims. Flips the flawed classifier by construction; only
// sometimes flips the oracle.
inline Vector cf_mid(const SyntheticWorld& w, std::span<const double> x, std::size_t target,
                     Rng& rng) {
  require(target < w.spec.classes, Errc::out_of_range, "target class out of range");
  require(argmax(classify(w, x, WhichClassifier::flawed)) != target, Errc::already_target,
          "flawed classifier already predicts the target class");
  Vector proto = cf_prototype_blend(w, x, target);
  Vector c(x.begin(), x.end());
  for (std::size_t d = 0; d < w.spec.marker_dims; ++d) c[d] = proto[d];
  for (std::size_t d = w.spec.marker_dims; d < c.size(); ++d)
    if (rng.next_double() < 0.25) c[d] += w.spec.noise_sd * rng.next_gaussian();
  return c;
}

// Deterministic FID embedding stand-in: negative squared distances to the
// oracle centroids.
inline Vector embed(const SyntheticWorld& w, std::span<const double> sample) {
  require(sample.size() == w.spec.dim, Errc::dimension_mismatch,
          "embed: sample dimension differs from world");
  Vector e(w.spec.classes);
  for (std::size_t c = 0; c < w.spec.classes; ++c) {
    double d2 = 0.0;
    for (std::size_t d = 0; d < sample.size(); ++d)
      d2 += (sample[d] - w.centroids[c][d]) * (sample[d] - w.centroids[c][d]);
    e[c] = -d2;
  }
  return e;
}

struct FakeMnist {
  TensorSet images;
  std::vector<std::size_t> labels;
};

// Shuffle, relabel uniformly at random, and paint the label into row 0:
// columns 0..classes-1 get the range minimum, column `label` the maximum.
inline FakeMnist make_fakemnist(const TensorSet& images, std::size_t height, std::size_t width,
                                std::size_t num_classes, std::uint64_t seed,
                                NormalizationRange range) {
  require(num_classes >= 1 && width >= num_classes, Errc::too_narrow,
          "image width cannot hold one pixel per class");
  require(height >= 1 && images.sample_size() == height * width, Errc::dimension_mismatch,
          "sample size does not equal height*width");
  require(range.low < range.high, Errc::spec_invalid, "range low must be below high");
  const std::size_t n = images.n();
  FakeMnist out;
  out.images.name = "fakemnist";
  out.images.shape = images.shape;
  out.images.values.resize(images.values.size());
  out.labels.resize(n);

  std::vector<std::size_t> perm = Rng::stream(seed, "shuffle").permutation(n);
  Rng labeler = Rng::stream(seed, "labels");
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> src = images.row(perm[i]);
    std::span<double> dst = out.images.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
    std::size_t label = labeler.next_below(num_classes);
    out.labels[i] = label;
    for (std::size_t col = 0; col < num_classes; ++col) dst[col] = range.low;
    dst[label] = range.high;
  }
  return out;
}

enum class CfMethod { tiny, mid, prototype };

inline std::string to_string(CfMethod m) {
  switch (m) {
    case CfMethod::tiny: return "tiny";
    case CfMethod::mid: return "mid";
    default: return "prototype";
  }
}

// Assembles everything the metrics need for one method: counterfactuals,
// classifier and oracle outputs, per-class/global reconstructions, embeddings
// (reference side = the whole world dataset), and per-attribute label oracles.
inline EvaluationBundle build_bundle(const SyntheticWorld& w, CfMethod method,
                                     std::size_t n_eval, std::uint64_t seed) {
  require(n_eval >= 1 && n_eval <= w.data.n(), Errc::out_of_range,
          "n_eval must be in [1, world sample count]");
  const std::size_t dim = w.spec.dim, K = w.spec.classes;

  std::vector<std::size_t> pick = Rng::stream(seed, "eval").permutation(w.data.n());
  pick.resize(n_eval);
  std::vector<std::size_t> targets(n_eval);
  {
    Rng tr = Rng::stream(seed, "targets");
    for (std::size_t i = 0; i < n_eval; ++i) {
      std::size_t lab = w.labels[pick[i]];
      std::size_t t = tr.next_below(K - 1);
      targets[i] = t + (t >= lab ? 1 : 0);
    }
  }

  EvaluationBundle b;
  b.method_name = to_string(method);
  b.normalization_range = {0.0, 1.0};
  b.targets = targets;
  auto tensor = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    TensorSet t;
    t.name = name;
    t.shape = {rows, cols};
    t.values.resize(rows * cols);
    return t;
  };
  b.inputs = tensor("inputs", n_eval, dim);
  b.counterfactuals = tensor("counterfactuals", n_eval, dim);
  b.f_probs_inputs = {K, std::vector<double>(n_eval * K)};
  b.f_probs_counterfactuals = {K, std::vector<double>(n_eval * K)};
  b.oracle_probs_counterfactuals = PredictionSet{K, std::vector<double>(n_eval * K)};
  b.reconstructions = ReconstructionTriplet{tensor("ae_target", n_eval, dim),
                                            tensor("ae_input_class", n_eval, dim),
                                            tensor("ae_full", n_eval, dim)};
  b.embeddings_counterfactuals = tensor("embeddings_counterfactuals", n_eval, K);
  std::vector<std::string> attrs = label_names(w);
  for (const auto& name : attrs)
    b.label_oracles.push_back({name,
                               {2, std::vector<double>(n_eval * 2)},
                               {2, std::vector<double>(n_eval * 2)}});

  auto put = [](std::span<double> dst, const Vector& src) {
    std::copy(src.begin(), src.end(), dst.begin());
  };
  parallel_for(n_eval, [&](std::size_t i) {
    std::span<const double> x = w.data.row(pick[i]);
    std::copy(x.begin(), x.end(), b.inputs.row(i).begin());
    Vector c;
    switch (method) {
      case CfMethod::tiny:
        c = cf_tiny_change(w, x, targets[i]);
        break;
      case CfMethod::prototype:
        c = cf_prototype_blend(w, x, targets[i]);
        break;
      case CfMethod::mid: {
        Rng r = Rng::stream(seed, "cf_mid", i);
        c = cf_mid(w, x, targets[i], r);
        break;
      }
    }
    put(b.counterfactuals.row(i), c);
    put({b.f_probs_inputs.probs.data() + i * K, K}, classify(w, x, WhichClassifier::flawed));
    put({b.f_probs_counterfactuals.probs.data() + i * K, K},
        classify(w, c, WhichClassifier::flawed));
    put({b.oracle_probs_counterfactuals->probs.data() + i * K, K},
        classify(w, c, WhichClassifier::oracle));
    put(b.reconstructions->ae_target.row(i), reconstruct(w.class_autoencoders[targets[i]], c));
    put(b.reconstructions->ae_input_class.row(i),
        reconstruct(w.class_autoencoders[w.labels[pick[i]]], c));
    put(b.reconstructions->ae_full.row(i), reconstruct(w.global_autoencoder, c));
    put(b.embeddings_counterfactuals->row(i), embed(w, c));
    for (std::size_t a = 0; a < attrs.size(); ++a) {
      put({b.label_oracles[a].probs_inputs.probs.data() + i * 2, 2}, label_oracle(w, x, a));
      put({b.label_oracles[a].probs_counterfactuals.probs.data() + i * 2, 2},
          label_oracle(w, c, a));
    }
  });

  TensorSet ref = tensor("embeddings_reference", w.data.n(), K);
  parallel_for(w.data.n(), [&](std::size_t i) { put(ref.row(i), embed(w, w.data.row(i))); });
  b.embeddings_reference = std::move(ref);

  std::vector<Finding> findings = validate_bundle(b);
  require(findings.empty(), Errc::validation_failed,
          findings.empty() ? "" : findings[0].field + ": " + findings[0].message);
  return b;
}

// Re-expresses a bundle's data in a new normalization range (affine map).
// Probability outputs are argmax-equivalent under the rescaled models and
// pass through; squared-distance embeddings pick up the squared scale.
inline EvaluationBundle rescale_bundle(const EvaluationBundle& b, NormalizationRange target) {
  require(target.low < target.high, Errc::spec_invalid, "range low must be below high");
  const double s = target.width() / b.normalization_range.width();
  const double t = target.low - s * b.normalization_range.low;
  EvaluationBundle out = b;
  auto affine = [&](TensorSet& ts) {
    for (double& v : ts.values) v = s * v + t;
  };
  affine(out.inputs);
  affine(out.counterfactuals);
  if (out.reconstructions) {
    affine(out.reconstructions->ae_target);
    affine(out.reconstructions->ae_input_class);
    affine(out.reconstructions->ae_full);
  }
  auto scale_sq = [&](TensorSet& ts) {
    for (double& v : ts.values) v *= s * s;
  };
  if (out.embeddings_reference) scale_sq(*out.embeddings_reference);
  if (out.embeddings_counterfactuals) scale_sq(*out.embeddings_counterfactuals);
  out.normalization_range = target;
  return out;
}

}  // namespace cfeval
