#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfeval/error.hpp"
#include "cfeval/numeric.hpp"

namespace cfeval {

// Named n-dimensional tensor; axis 0 indexes samples, trailing axes are
// flattened per sample.
struct TensorSet {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t n() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t sample_size() const {
    std::size_t s = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) s *= shape[i];
    return s;
  }
  std::size_t total() const {
    std::size_t s = shape.empty() ? 0 : 1;
    for (std::size_t d : shape) s *= d;
    return s;
  }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * sample_size(), sample_size()};
  }
  std::span<double> row(std::size_t i) {
    return {values.data() + i * sample_size(), sample_size()};
  }
};

// Per-sample discrete distributions over `classes` classes, row-major.
struct PredictionSet {
  std::size_t classes = 0;
  std::vector<double> probs;

  std::size_t n() const { return classes == 0 ? 0 : probs.size() / classes; }
  std::span<const double> row(std::size_t i) const {
    return {probs.data() + i * classes, classes};
  }
  std::size_t predicted(std::size_t i) const { return argmax(row(i)); }
};

struct LabelOracleOutputs {
  std::string label_name;
  PredictionSet probs_inputs;
  PredictionSet probs_counterfactuals;
};

struct ReconstructionTriplet {
  TensorSet ae_target;       // AE_q(c): target-class auto-encoder on the counterfactual
  TensorSet ae_input_class;  // AE_p(c): input-class auto-encoder
  TensorSet ae_full;         // AE(c): class-agnostic auto-encoder
};

struct NormalizationRange {
  double low = 0.0;
  double high = 1.0;
  double width() const { return high - low; }
};

struct EvaluationBundle {
  TensorSet inputs;
  TensorSet counterfactuals;
  std::optional<std::vector<std::size_t>> targets;
  PredictionSet f_probs_inputs;
  PredictionSet f_probs_counterfactuals;
  std::optional<PredictionSet> oracle_probs_counterfactuals;
  std::optional<ReconstructionTriplet> reconstructions;
  std::optional<TensorSet> embeddings_reference;
  std::optional<TensorSet> embeddings_counterfactuals;
  std::vector<LabelOracleOutputs> label_oracles;
  std::string method_name;
  NormalizationRange normalization_range;

  std::size_t n() const { return inputs.n(); }
  bool has_targets() const { return targets.has_value(); }
  bool has_oracle() const { return oracle_probs_counterfactuals.has_value(); }
  bool has_reconstructions() const { return reconstructions.has_value(); }
  bool has_embeddings() const {
    return embeddings_reference.has_value() && embeddings_counterfactuals.has_value();
  }
  const LabelOracleOutputs* find_label(const std::string& name) const {
    for (const auto& l : label_oracles)
      if (l.label_name == name) return &l;
    return nullptr;
  }
};

enum class ValidityMode { class_change, target_match };

inline std::string to_string(ValidityMode m) {
  return m == ValidityMode::class_change ? "class-change" : "target-match";
}

struct ValidityMask {
  std::vector<bool> flags;
  ValidityMode mode = ValidityMode::class_change;
  std::size_t valid_count = 0;
};

// A single validation problem: which field, what went wrong.
struct Finding {
  std::string field;
  std::string message;
};

namespace detail {

inline void check_tensor(const TensorSet& t, const std::string& field,
                         std::vector<Finding>& out) {
  if (t.shape.empty() || t.shape[0] < 1) {
    out.push_back({field, "sample count must be >= 1"});
    return;
  }
  if (t.values.size() != t.total())
    out.push_back({field, "value count does not match shape product"});
}

inline void check_predictions(const PredictionSet& p, const std::string& field,
                              std::vector<Finding>& out) {
  if (p.classes < 2) {
    out.push_back({field, "needs at least 2 classes"});
    return;
  }
  if (p.probs.size() % p.classes != 0) {
    out.push_back({field, "value count is not a multiple of the class count"});
    return;
  }
  for (std::size_t i = 0; i < p.n(); ++i) {
    KahanSum s;
    bool neg = false;
    for (double v : p.row(i)) {
      if (v < 0.0) neg = true;
      s.add(v);
    }
    if (neg) {
      out.push_back({field, "row " + std::to_string(i) + " has a negative entry"});
      break;
    }
    if (std::abs(s.value() - 1.0) > 1e-6) {
      out.push_back({field, "row " + std::to_string(i) + " distribution does not sum to 1"});
      break;
    }
  }
}

}  // namespace detail

// Structural validation. Findings are data; nothing throws here.
inline std::vector<Finding> validate_bundle(const EvaluationBundle& b) {
  std::vector<Finding> out;
  detail::check_tensor(b.inputs, "inputs", out);
  detail::check_tensor(b.counterfactuals, "counterfactuals", out);
  detail::check_predictions(b.f_probs_inputs, "f_probs_inputs", out);
  detail::check_predictions(b.f_probs_counterfactuals, "f_probs_counterfactuals", out);

  if (b.inputs.shape != b.counterfactuals.shape)
    out.push_back({"counterfactuals", "sample count mismatch or shape differs from inputs"});

  const std::size_t n = b.inputs.n();
  auto check_n = [&](std::size_t got, const std::string& field) {
    if (got != n)
      out.push_back({field, "sample count mismatch: " + std::to_string(got) +
                                " vs " + std::to_string(n)});
  };
  check_n(b.f_probs_inputs.n(), "f_probs_inputs");
  check_n(b.f_probs_counterfactuals.n(), "f_probs_counterfactuals");
  if (b.f_probs_inputs.classes != b.f_probs_counterfactuals.classes)
    out.push_back({"f_probs_counterfactuals", "class count differs from f_probs_inputs"});

  if (b.targets) {
    check_n(b.targets->size(), "targets");
    for (std::size_t t : *b.targets)
      if (t >= b.f_probs_inputs.classes) {
        out.push_back({"targets", "target class index out of range"});
        break;
      }
  }
  if (b.oracle_probs_counterfactuals) {
    detail::check_predictions(*b.oracle_probs_counterfactuals, "oracle_probs_counterfactuals", out);
    check_n(b.oracle_probs_counterfactuals->n(), "oracle_probs_counterfactuals");
  }
  if (b.reconstructions) {
    const auto& r = *b.reconstructions;
    detail::check_tensor(r.ae_target, "ae_target", out);
    detail::check_tensor(r.ae_input_class, "ae_input_class", out);
    detail::check_tensor(r.ae_full, "ae_full", out);
    if (r.ae_target.shape != b.counterfactuals.shape ||
        r.ae_input_class.shape != b.counterfactuals.shape ||
        r.ae_full.shape != b.counterfactuals.shape)
      out.push_back({"reconstructions", "shape differs from counterfactuals"});
  }
  if (b.embeddings_reference) detail::check_tensor(*b.embeddings_reference, "embeddings_reference", out);
  if (b.embeddings_counterfactuals) {
    detail::check_tensor(*b.embeddings_counterfactuals, "embeddings_counterfactuals", out);
    check_n(b.embeddings_counterfactuals->n(), "embeddings_counterfactuals");
    if (b.embeddings_reference &&
        b.embeddings_reference->sample_size() != b.embeddings_counterfactuals->sample_size())
      out.push_back({"embeddings_counterfactuals", "embedding dimension differs from reference"});
  }
  for (const auto& l : b.label_oracles) {
    const std::string field = "label_oracles[" + l.label_name + "]";
    detail::check_predictions(l.probs_inputs, field, out);
    detail::check_predictions(l.probs_counterfactuals, field, out);
    if (l.probs_inputs.n() != l.probs_counterfactuals.n() ||
        l.probs_inputs.classes != l.probs_counterfactuals.classes)
      out.push_back({field, "input/counterfactual outputs disagree on shape"});
    check_n(l.probs_inputs.n(), field);
  }
  if (!(b.normalization_range.low < b.normalization_range.high))
    out.push_back({"normalization_range", "low must be strictly below high"});
  return out;
}

// Validity per sample. class-change: prediction moved off the input's class;
// target-match: prediction reached the requested target.
inline ValidityMask compute_validity_mask(const EvaluationBundle& b, ValidityMode mode) {
  require(mode == ValidityMode::class_change || b.targets.has_value(), Errc::missing_targets,
          "target-match validity requires targets");
  ValidityMask m;
  m.mode = mode;
  const std::size_t n = b.n();
  m.flags.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t pred_cf = b.f_probs_counterfactuals.predicted(i);
    bool ok = mode == ValidityMode::class_change
                  ? pred_cf != b.f_probs_inputs.predicted(i)
                  : pred_cf == (*b.targets)[i];
    m.flags[i] = ok;
    if (ok) ++m.valid_count;
  }
  return m;
}

// Default mode: target-match when targets were provided.
inline ValidityMode default_validity_mode(const EvaluationBundle& b) {
  return b.has_targets() ? ValidityMode::target_match : ValidityMode::class_change;
}

namespace detail {

inline TensorSet select_rows(const TensorSet& t, const std::vector<bool>& flags,
                             std::size_t kept) {
  TensorSet out;
  out.name = t.name;
  out.shape = t.shape;
  out.shape[0] = kept;
  out.values.reserve(kept * t.sample_size());
  for (std::size_t i = 0; i < t.n(); ++i)
    if (flags[i]) out.values.insert(out.values.end(), t.row(i).begin(), t.row(i).end());
  return out;
}

inline PredictionSet select_rows(const PredictionSet& p, const std::vector<bool>& flags) {
  PredictionSet out;
  out.classes = p.classes;
  for (std::size_t i = 0; i < p.n(); ++i)
    if (flags[i]) out.probs.insert(out.probs.end(), p.row(i).begin(), p.row(i).end());
  return out;
}

}  // namespace detail

// Keeps exactly the flagged samples, preserving order and field availability.
// embeddings_reference is the test-set side of FID and passes through whole.
inline EvaluationBundle filter_by_mask(const EvaluationBundle& b, const ValidityMask& m) {
  require(m.flags.size() == b.n(), Errc::length_mismatch,
          "mask sample count does not match bundle");
  require(m.valid_count > 0, Errc::empty_selection, "no valid samples to keep");
  const auto& f = m.flags;
  EvaluationBundle out;
  out.inputs = detail::select_rows(b.inputs, f, m.valid_count);
  out.counterfactuals = detail::select_rows(b.counterfactuals, f, m.valid_count);
  if (b.targets) {
    out.targets.emplace();
    for (std::size_t i = 0; i < f.size(); ++i)
      if (f[i]) out.targets->push_back((*b.targets)[i]);
  }
  out.f_probs_inputs = detail::select_rows(b.f_probs_inputs, f);
  out.f_probs_counterfactuals = detail::select_rows(b.f_probs_counterfactuals, f);
  if (b.oracle_probs_counterfactuals)
    out.oracle_probs_counterfactuals = detail::select_rows(*b.oracle_probs_counterfactuals, f);
  if (b.reconstructions)
    out.reconstructions = ReconstructionTriplet{
        detail::select_rows(b.reconstructions->ae_target, f, m.valid_count),
        detail::select_rows(b.reconstructions->ae_input_class, f, m.valid_count),
        detail::select_rows(b.reconstructions->ae_full, f, m.valid_count)};
  if (b.embeddings_reference) out.embeddings_reference = *b.embeddings_reference;
  if (b.embeddings_counterfactuals)
    out.embeddings_counterfactuals =
        detail::select_rows(*b.embeddings_counterfactuals, f, m.valid_count);
  for (const auto& l : b.label_oracles)
    out.label_oracles.push_back({l.label_name, detail::select_rows(l.probs_inputs, f),
                                 detail::select_rows(l.probs_counterfactuals, f)});
  out.method_name = b.method_name;
  out.normalization_range = b.normalization_range;
  return out;
}

}  // namespace cfeval
