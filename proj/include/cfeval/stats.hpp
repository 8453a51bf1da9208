#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "cfeval/data.hpp"
#include "cfeval/error.hpp"
#include "cfeval/metrics.hpp"

namespace cfeval {

struct SummaryStat {
  double mean = 0.0;
  std::optional<double> ci95_halfwidth;
  std::size_t n = 0;
};

struct MetricEntry {
  enum class Kind { mean, proportion, scalar };
  Kind kind = Kind::mean;
  SummaryStat stat;
};

struct MetricReport {
  std::string method_name;
  NormalizationRange normalization_range;
  std::vector<std::pair<std::string, MetricEntry>> entries;  // canonical order
  std::vector<PerSampleScores> per_sample;
  MetricConfig config;

  const MetricEntry* find(const std::string& name) const {
    for (const auto& [k, v] : entries)
      if (k == name) return &v;
    return nullptr;
  }
  const PerSampleScores* find_scores(const std::string& name) const {
    for (const auto& s : per_sample)
      if (s.metric_name == name) return &s;
    return nullptr;
  }
};

struct MetricRanking {
  std::string metric_name;
  bool higher_is_better = false;
  std::vector<std::string> methods;  // best first
  std::string best_method;
  bool tie = false;
};

struct RankingTable {
  std::vector<MetricRanking> rankings;
  const MetricRanking* find(const std::string& name) const {
    for (const auto& r : rankings)
      if (r.metric_name == name) return &r;
    return nullptr;
  }
};

// Fixed ranking directions; LVS is reported raw and never ranked.
inline std::optional<bool> ranking_direction(const std::string& metric) {
  if (metric == "L1" || metric == "L2" || metric == "EN" || metric == "IM1" ||
      metric == "IM2" || metric == "FID")
    return false;
  if (metric == "TCV" || metric == "Oracle") return true;
  return std::nullopt;
}

// Mean with 95% normal CI. Values are summed in ascending sorted order so any
// permutation of the input produces a bit-identical result.
inline SummaryStat summarize_mean(std::vector<double> values) {
  require(!values.empty(), Errc::empty_input, "summarize_mean: no values");
  require(all_finite(values), Errc::out_of_range, "summarize_mean: non-finite value");
  std::sort(values.begin(), values.end());
  SummaryStat s;
  s.n = values.size();
  s.mean = kahan_total(values) / static_cast<double>(s.n);
  if (s.n >= 2) {
    KahanSum sq;
    for (double v : values) sq.add((v - s.mean) * (v - s.mean));
    double sd = std::sqrt(sq.value() / static_cast<double>(s.n - 1));
    s.ci95_halfwidth = 1.96 * sd / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

inline SummaryStat summarize_proportion(std::size_t successes, std::size_t n) {
  require(n >= 1 && successes <= n, Errc::out_of_range,
          "summarize_proportion: need 0 <= successes <= n, n >= 1");
  SummaryStat s;
  s.n = n;
  s.mean = static_cast<double>(successes) / static_cast<double>(n);
  s.ci95_halfwidth = 1.96 * std::sqrt(s.mean * (1.0 - s.mean) / static_cast<double>(n));
  return s;
}

namespace detail {

// Best method for one metric: extremal mean, ties to the lexicographically
// first name. Works for a single report (rank_methods proper needs >= 2).
inline std::pair<std::string, bool> best_method_for(
    const std::vector<const MetricReport*>& reports, const std::string& metric,
    bool higher_is_better) {
  std::vector<std::pair<double, std::string>> rows;
  for (const MetricReport* r : reports) {
    const MetricEntry* e = r->find(metric);
    require(e != nullptr, Errc::metric_mismatch,
            "reports disagree on available metrics: missing " + metric);
    rows.emplace_back(e->stat.mean, r->method_name);
  }
  std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return higher_is_better ? a.first > b.first : a.first < b.first;
    return a.second < b.second;
  });
  bool tie = rows.size() >= 2 && rows[0].first == rows[1].first;
  return {rows[0].second, tie};
}

}  // namespace detail

inline RankingTable rank_methods(const std::vector<MetricReport>& reports) {
  require(reports.size() >= 2, Errc::metric_mismatch, "rank_methods: need at least 2 reports");
  for (const auto& r : reports) {
    require(r.entries.size() == reports[0].entries.size(), Errc::metric_mismatch,
            "reports disagree on available metrics");
    for (const auto& [name, entry] : reports[0].entries)
      require(r.find(name) != nullptr, Errc::metric_mismatch,
              "reports disagree on available metrics: missing " + name);
  }
  RankingTable table;
  for (const auto& [name, entry] : reports[0].entries) {
    std::optional<bool> dir = ranking_direction(name);
    if (!dir) continue;
    MetricRanking rank;
    rank.metric_name = name;
    rank.higher_is_better = *dir;
    std::vector<std::pair<double, std::string>> rows;
    for (const auto& r : reports) rows.emplace_back(r.find(name)->stat.mean, r.method_name);
    std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return *dir ? a.first > b.first : a.first < b.first;
      return a.second < b.second;
    });
    for (const auto& [mean, method] : rows) rank.methods.push_back(method);
    rank.best_method = rows[0].second;
    rank.tie = rows.size() >= 2 && rows[0].first == rows[1].first;
    table.rankings.push_back(std::move(rank));
  }
  return table;
}

// Paper-style cells: "16.07 (0.18)", "93.13% (0.50)", FID "98.35".
inline std::string format_two(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string format_mean_ci(double mean, std::optional<double> ci) {
  return ci ? format_two(mean) + " (" + format_two(*ci) + ")" : format_two(mean);
}

inline std::string format_percent_ci(double mean, std::optional<double> ci) {
  std::string out = format_two(mean * 100.0) + "%";
  if (ci) out += " (" + format_two(*ci * 100.0) + ")";
  return out;
}

// scale multiplies mean and CI before formatting (the 100*IM2 table column).
inline std::string render_cell(const MetricEntry& e, double scale = 1.0) {
  switch (e.kind) {
    case MetricEntry::Kind::proportion:
      return format_percent_ci(e.stat.mean, e.stat.ci95_halfwidth);
    case MetricEntry::Kind::scalar:
      return format_two(e.stat.mean * scale);
    case MetricEntry::Kind::mean:
    default: {
      std::optional<double> ci = e.stat.ci95_halfwidth;
      if (ci) ci = *ci * scale;
      return format_mean_ci(e.stat.mean * scale, ci);
    }
  }
}

struct NormalizationAudit {
  std::vector<std::pair<std::string, bool>> best_agreement;  // ranked metrics only
  double width_ratio = 1.0;
  bool en_scaling_ok = true;
  bool passed = true;
  std::string rendering;  // side-by-side markdown table
};

inline NormalizationAudit normalization_audit(const std::vector<MetricReport>& reports_a,
                                              const std::vector<MetricReport>& reports_b) {
  require(!reports_a.empty() && !reports_b.empty(), Errc::method_set_mismatch,
          "normalization_audit: empty report set");
  auto sorted_ptrs = [](const std::vector<MetricReport>& v) {
    std::vector<const MetricReport*> p;
    for (const auto& r : v) p.push_back(&r);
    std::sort(p.begin(), p.end(),
              [](const MetricReport* x, const MetricReport* y) {
                return x->method_name < y->method_name;
              });
    return p;
  };
  std::vector<const MetricReport*> a = sorted_ptrs(reports_a);
  std::vector<const MetricReport*> b = sorted_ptrs(reports_b);
  require(a.size() == b.size(), Errc::method_set_mismatch,
          "normalization_audit: method sets differ in size");
  for (std::size_t i = 0; i < a.size(); ++i)
    require(a[i]->method_name == b[i]->method_name, Errc::method_set_mismatch,
            "normalization_audit: method sets differ: " + a[i]->method_name + " vs " +
                b[i]->method_name);

  NormalizationAudit audit;
  audit.width_ratio =
      b[0]->normalization_range.width() / a[0]->normalization_range.width();

  for (std::size_t i = 0; i < a.size(); ++i) {
    const MetricEntry* ea = a[i]->find("EN");
    const MetricEntry* eb = b[i]->find("EN");
    require(ea != nullptr && eb != nullptr, Errc::metric_mismatch,
            "normalization_audit: EN missing from a report");
    double expected = audit.width_ratio * ea->stat.mean;
    double tol = 1e-9 * std::max({std::abs(expected), std::abs(eb->stat.mean), 1e-300});
    if (std::abs(eb->stat.mean - expected) > tol) audit.en_scaling_ok = false;
  }

  for (const auto& [name, entry] : a[0]->entries) {
    std::optional<bool> dir = ranking_direction(name);
    if (!dir) continue;
    auto [best_a, tie_a] = detail::best_method_for(a, name, *dir);
    auto [best_b, tie_b] = detail::best_method_for(b, name, *dir);
    (void)tie_a;
    (void)tie_b;
    audit.best_agreement.emplace_back(name, best_a == best_b);
  }

  audit.passed = audit.en_scaling_ok;
  for (const auto& [name, ok] : audit.best_agreement) audit.passed = audit.passed && ok;

  auto range_tag = [](const NormalizationRange& r) {
    return "[" + format_two(r.low) + "," + format_two(r.high) + "]";
  };
  std::string ta = range_tag(a[0]->normalization_range);
  std::string tb = range_tag(b[0]->normalization_range);
  std::string out = "| Method |";
  std::string rule = "| --- |";
  for (const auto& [name, entry] : a[0]->entries) {
    std::string shown = name == "IM2" ? "100\xC2\xB7IM2" : name;
    out += " " + shown + " " + ta + " | " + shown + " " + tb + " |";
    rule += " --- | --- |";
  }
  out += "\n" + rule + "\n";
  for (std::size_t i = 0; i < a.size(); ++i) {
    out += "| " + a[i]->method_name + " |";
    for (const auto& [name, entry] : a[i]->entries) {
      double scale = name == "IM2" ? 100.0 : 1.0;
      const MetricEntry* eb = b[i]->find(name);
      require(eb != nullptr, Errc::metric_mismatch,
              "normalization_audit: metric sets differ: " + name);
      out += " " + render_cell(entry, scale) + " | " + render_cell(*eb, scale) + " |";
    }
    out += "\n";
  }
  out += "\nbest-method agreement:";
  for (const auto& [name, ok] : audit.best_agreement)
    out += " " + name + "=" + (ok ? "yes" : "no");
  out += "\nEN scaling (expected ratio " + format_two(audit.width_ratio) +
         "): " + (audit.en_scaling_ok ? "ok" : "VIOLATED") + "\n";
  audit.rendering = out;
  return audit;
}

// Canonical metric order for reports and tables.
inline std::vector<std::string> available_metrics(const EvaluationBundle& b,
                                                  const MetricConfig& cfg) {
  std::vector<std::string> out;
  if (cfg.validity_mode == ValidityMode::class_change || b.has_targets())
    out.push_back("TCV");
  out.push_back("L1");
  out.push_back("L2");
  out.push_back("EN");
  if (b.has_reconstructions()) {
    out.push_back("IM1");
    out.push_back("IM2");
  }
  if (b.has_embeddings()) out.push_back("FID");
  if (b.has_oracle() && (cfg.oracle_mode == OracleMode::agreement || b.has_targets()))
    out.push_back("Oracle");
  for (const auto& l : b.label_oracles) out.push_back("LVS:" + l.label_name);
  return out;
}

// Scores one bundle into a report. TCV is computed on the unfiltered bundle;
// every other metric runs on the valid-only subset unless valid_only is off.
inline MetricReport build_report(const EvaluationBundle& bundle, const MetricConfig& cfg,
                                 std::vector<std::string> metrics = {},
                                 bool valid_only = true, bool keep_per_sample = false) {
  if (metrics.empty()) metrics = available_metrics(bundle, cfg);

  MetricReport report;
  report.method_name = bundle.method_name;
  report.normalization_range = bundle.normalization_range;
  report.config = cfg;

  bool needs_filtered = false;
  for (const auto& m : metrics)
    if (m != "TCV") needs_filtered = true;

  const EvaluationBundle* scored = &bundle;
  EvaluationBundle filtered;
  std::optional<ValidityMask> mask;
  if (needs_filtered && valid_only) {
    mask = compute_validity_mask(bundle, cfg.validity_mode);
    filtered = filter_by_mask(bundle, *mask);
    scored = &filtered;
  }

  auto push_mean = [&](PerSampleScores scores) {
    MetricEntry e;
    e.kind = MetricEntry::Kind::mean;
    e.stat = summarize_mean(scores.values);
    report.entries.emplace_back(scores.metric_name, e);
    if (keep_per_sample) report.per_sample.push_back(std::move(scores));
  };

  for (const auto& name : metrics) {
    if (name == "TCV") {
      ValidityMask full = mask ? *mask : compute_validity_mask(bundle, cfg.validity_mode);
      MetricEntry e;
      e.kind = MetricEntry::Kind::proportion;
      e.stat = summarize_proportion(full.valid_count, bundle.n());
      report.entries.emplace_back("TCV", e);
    } else if (name == "L1") {
      push_mean(scores_l1(*scored));
    } else if (name == "L2") {
      push_mean(scores_l2(*scored));
    } else if (name == "EN") {
      push_mean(scores_en(*scored));
    } else if (name == "IM1") {
      push_mean(scores_im1(*scored, cfg));
    } else if (name == "IM2") {
      push_mean(scores_im2(*scored, cfg));
    } else if (name == "FID") {
      require(scored->has_embeddings(), Errc::missing_field,
              "FID requires embeddings_reference and embeddings_counterfactuals");
      MetricEntry e;
      e.kind = MetricEntry::Kind::scalar;
      e.stat.mean = fid(*scored->embeddings_reference, *scored->embeddings_counterfactuals, cfg);
      e.stat.n = scored->embeddings_counterfactuals->n();
      report.entries.emplace_back("FID", e);
    } else if (name == "Oracle") {
      std::vector<bool> flags = oracle_flags(*scored, cfg);
      std::size_t hits = 0;
      for (bool f : flags) hits += f ? 1 : 0;
      MetricEntry e;
      e.kind = MetricEntry::Kind::proportion;
      e.stat = summarize_proportion(hits, flags.size());
      report.entries.emplace_back("Oracle", e);
    } else if (name.rfind("LVS:", 0) == 0) {
      push_mean(lvs(*scored, name.substr(4), cfg));
    } else {
      fail(Errc::unknown_metric, "unknown metric '" + name + "'");
    }
  }
  return report;
}

}  // namespace cfeval
