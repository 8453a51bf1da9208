#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfeval/data.hpp"
#include "cfeval/error.hpp"
#include "cfeval/linalg.hpp"
#include "cfeval/numeric.hpp"

namespace cfeval {

enum class JsLogBase { natural, base2 };
enum class CovarianceKind { unbiased };
enum class OracleMode { agreement, target_both };

struct MetricConfig {
  double epsilon = 1e-10;
  JsLogBase js_log_base = JsLogBase::natural;
  CovarianceKind covariance = CovarianceKind::unbiased;
  ValidityMode validity_mode = ValidityMode::target_match;
  OracleMode oracle_mode = OracleMode::target_both;
};

// One metric's per-sample values. higher_is_better stays unset for metrics
// reported raw (LVS).
struct PerSampleScores {
  std::string metric_name;
  std::vector<double> values;
  std::optional<bool> higher_is_better;
};

inline double l1_distance(std::span<const double> x, std::span<const double> c) {
  require(x.size() == c.size(), Errc::dimension_mismatch, "l1_distance: dimensions differ");
  KahanSum s;
  for (std::size_t i = 0; i < x.size(); ++i) s.add(std::abs(x[i] - c[i]));
  return s.value();
}

inline double l2_distance(std::span<const double> x, std::span<const double> c) {
  require(x.size() == c.size(), Errc::dimension_mismatch, "l2_distance: dimensions differ");
  KahanSum s;
  for (std::size_t i = 0; i < x.size(); ++i) s.add((x[i] - c[i]) * (x[i] - c[i]));
  return std::sqrt(s.value());
}

inline double en_distance(std::span<const double> x, std::span<const double> c) {
  return l1_distance(x, c) + l2_distance(x, c);
}

// Fraction of valid counterfactuals; always computed on the unfiltered bundle.
inline double tcv(const EvaluationBundle& b, const MetricConfig& cfg) {
  ValidityMask m = compute_validity_mask(b, cfg.validity_mode);
  return static_cast<double>(m.valid_count) / static_cast<double>(b.n());
}

namespace detail {

inline double squared_l2(std::span<const double> a, std::span<const double> b) {
  KahanSum s;
  for (std::size_t i = 0; i < a.size(); ++i) s.add((a[i] - b[i]) * (a[i] - b[i]));
  return s.value();
}

}  // namespace detail

// ||c - AE_q(c)||^2 / (||c - AE_p(c)||^2 + eps); lower is better.
inline double im1(std::span<const double> c, std::span<const double> ae_q_c,
                  std::span<const double> ae_p_c, const MetricConfig& cfg) {
  require(c.size() == ae_q_c.size() && c.size() == ae_p_c.size(), Errc::dimension_mismatch,
          "im1: dimensions differ");
  return detail::squared_l2(c, ae_q_c) / (detail::squared_l2(c, ae_p_c) + cfg.epsilon);
}

// ||AE_q(c) - AE(c)||^2 / (||c||_1 + eps); lower is better.
inline double im2(std::span<const double> c, std::span<const double> ae_q_c,
                  std::span<const double> ae_full_c, const MetricConfig& cfg) {
  require(c.size() == ae_q_c.size() && c.size() == ae_full_c.size(), Errc::dimension_mismatch,
          "im2: dimensions differ");
  KahanSum l1;
  for (double v : c) l1.add(std::abs(v));
  return detail::squared_l2(ae_q_c, ae_full_c) / (l1.value() + cfg.epsilon);
}

// Frechet distance between Gaussian fits of two embedding sets, via the
// symmetrized square root sqrt(S1^1/2 S2 S1^1/2) whose trace equals
// tr sqrt(S1 S2). Tiny negative results from rounding clamp to zero.
inline double fid(const TensorSet& emb_ref, const TensorSet& emb_cf, const MetricConfig&) {
  require(emb_ref.sample_size() == emb_cf.sample_size(), Errc::dimension_mismatch,
          "fid: embedding dimensions differ");
  require(emb_ref.n() >= 2 && emb_cf.n() >= 2, Errc::too_few_samples,
          "fid: each embedding set needs at least 2 samples");
  const std::size_t d = emb_ref.sample_size();
  auto as_matrix = [d](const TensorSet& t) {
    Matrix m(t.n(), d);
    m.a = t.values;
    return m;
  };
  MeanCov a = mean_and_cov(as_matrix(emb_ref));
  MeanCov b = mean_and_cov(as_matrix(emb_cf));

  KahanSum mean_gap;
  for (std::size_t i = 0; i < d; ++i)
    mean_gap.add((a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]));

  Matrix root_a = sqrtm_psd(a.cov);
  Matrix inner = matmul(matmul(root_a, b.cov), root_a);
  for (std::size_t i = 0; i < d; ++i)  // symmetrize away rounding skew
    for (std::size_t j = i + 1; j < d; ++j) {
      double v = 0.5 * (inner.at(i, j) + inner.at(j, i));
      inner.at(i, j) = v;
      inner.at(j, i) = v;
    }
  double cross = sqrtm_psd(inner).trace();
  double result = mean_gap.value() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  if (result < 0.0 && result > -1e-8) result = 0.0;
  return result;
}

// Jensen-Shannon divergence with the 0*log0 := 0 convention.
inline double js_divergence(std::span<const double> p, std::span<const double> q,
                            const MetricConfig& cfg) {
  require(p.size() == q.size(), Errc::support_mismatch, "js_divergence: support sizes differ");
  auto check = [](std::span<const double> r) {
    KahanSum s;
    for (double v : r) {
      require(v >= 0.0, Errc::not_a_distribution, "js_divergence: negative probability");
      s.add(v);
    }
    require(std::abs(s.value() - 1.0) <= 1e-6, Errc::not_a_distribution,
            "js_divergence: probabilities do not sum to 1");
  };
  check(p);
  check(q);
  KahanSum acc;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc.add(0.5 * p[i] * std::log(p[i] / m));
    if (q[i] > 0.0) acc.add(0.5 * q[i] * std::log(q[i] / m));
  }
  double v = acc.value();
  if (cfg.js_log_base == JsLogBase::base2) v /= std::log(2.0);
  return v;
}

// Per-sample JS divergence between a label oracle's outputs on x and cf(x).
inline PerSampleScores lvs(const EvaluationBundle& b, const std::string& label,
                           const MetricConfig& cfg) {
  const LabelOracleOutputs* l = b.find_label(label);
  require(l != nullptr, Errc::unknown_label, "lvs: no label oracle named '" + label + "'");
  PerSampleScores out;
  out.metric_name = "LVS:" + label;
  out.values.resize(l->probs_inputs.n());
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = js_divergence(l->probs_inputs.row(i), l->probs_counterfactuals.row(i), cfg);
  return out;
}

// Per-sample success flags behind the oracle score.
inline std::vector<bool> oracle_flags(const EvaluationBundle& b, const MetricConfig& cfg) {
  require(b.has_oracle(), Errc::missing_oracle, "oracle score needs oracle_probs_counterfactuals");
  require(cfg.oracle_mode == OracleMode::agreement || b.has_targets(), Errc::missing_targets,
          "target-both oracle scoring requires targets");
  std::vector<bool> flags(b.n());
  for (std::size_t i = 0; i < flags.size(); ++i) {
    std::size_t f_pred = b.f_probs_counterfactuals.predicted(i);
    std::size_t o_pred = b.oracle_probs_counterfactuals->predicted(i);
    flags[i] = cfg.oracle_mode == OracleMode::agreement
                   ? f_pred == o_pred
                   : f_pred == (*b.targets)[i] && o_pred == (*b.targets)[i];
  }
  return flags;
}

inline double oracle_score(const EvaluationBundle& b, const MetricConfig& cfg) {
  std::vector<bool> flags = oracle_flags(b, cfg);
  std::size_t hits = 0;
  for (bool f : flags) hits += f ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(flags.size());
}

// Bundle-wide per-sample score vectors for the distance and AE metrics.
inline PerSampleScores scores_l1(const EvaluationBundle& b) {
  PerSampleScores out{"L1", std::vector<double>(b.n()), false};
  for (std::size_t i = 0; i < b.n(); ++i)
    out.values[i] = l1_distance(b.inputs.row(i), b.counterfactuals.row(i));
  return out;
}

inline PerSampleScores scores_l2(const EvaluationBundle& b) {
  PerSampleScores out{"L2", std::vector<double>(b.n()), false};
  for (std::size_t i = 0; i < b.n(); ++i)
    out.values[i] = l2_distance(b.inputs.row(i), b.counterfactuals.row(i));
  return out;
}

inline PerSampleScores scores_en(const EvaluationBundle& b) {
  PerSampleScores out{"EN", std::vector<double>(b.n()), false};
  for (std::size_t i = 0; i < b.n(); ++i)
    out.values[i] = en_distance(b.inputs.row(i), b.counterfactuals.row(i));
  return out;
}

inline PerSampleScores scores_im1(const EvaluationBundle& b, const MetricConfig& cfg) {
  require(b.has_reconstructions(), Errc::missing_field, "IM1 requires reconstructions");
  const auto& r = *b.reconstructions;
  PerSampleScores out{"IM1", std::vector<double>(b.n()), false};
  for (std::size_t i = 0; i < b.n(); ++i)
    out.values[i] = im1(b.counterfactuals.row(i), r.ae_target.row(i), r.ae_input_class.row(i), cfg);
  return out;
}

inline PerSampleScores scores_im2(const EvaluationBundle& b, const MetricConfig& cfg) {
  require(b.has_reconstructions(), Errc::missing_field, "IM2 requires reconstructions");
  const auto& r = *b.reconstructions;
  PerSampleScores out{"IM2", std::vector<double>(b.n()), false};
  for (std::size_t i = 0; i < b.n(); ++i)
    out.values[i] = im2(b.counterfactuals.row(i), r.ae_target.row(i), r.ae_full.row(i), cfg);
  return out;
}

}  // namespace cfeval
