#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfeval/data.hpp"
#include "cfeval/error.hpp"
#include "cfeval/metrics.hpp"
#include "cfeval/stats.hpp"

namespace cfeval {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

enum class TensorFormat { npy, csv };

namespace detail {

inline std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io_failure, "cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require(!f.bad(), Errc::io_failure, "cannot read " + path.string());
  return buf;
}

inline std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void check_writable_tensor(const TensorSet& t) {
  require(!t.shape.empty() && t.shape[0] >= 1 && t.values.size() == t.total(),
          Errc::ragged_rows, "tensor has an empty or inconsistent sample axis");
  require(all_finite(t.values), Errc::out_of_range,
          "refusing to write non-finite tensor values");
}

// --- NPY v1.0 subset: little-endian <f8/<f4/<i8, C order, any rank ---

inline void write_npy(const TensorSet& t, const fs::path& path) {
  check_writable_tensor(t);
  std::string dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    dict += std::to_string(t.shape[i]);
    if (i + 1 < t.shape.size()) dict += ", ";
  }
  if (t.shape.size() == 1) dict += ",";
  dict += "), }";
  std::size_t total = 10 + dict.size() + 1;  // magic+version+len, trailing newline
  dict.append((64 - total % 64) % 64, ' ');
  dict += '\n';

  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::io_failure, "cannot open " + path.string() + " for writing");
  const unsigned char magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  f.write(reinterpret_cast<const char*>(magic), 8);
  std::uint16_t hlen = static_cast<std::uint16_t>(dict.size());
  unsigned char len_le[2] = {static_cast<unsigned char>(hlen & 0xff),
                             static_cast<unsigned char>(hlen >> 8)};
  f.write(reinterpret_cast<const char*>(len_le), 2);
  f.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  f.write(reinterpret_cast<const char*>(t.values.data()),
          static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  require(f.good(), Errc::io_failure, "write failed: " + path.string());
}

inline std::string header_field(const std::string& header, const std::string& key) {
  std::size_t at = header.find("'" + key + "'");
  require(at != std::string::npos, Errc::malformed_header, "npy header missing " + key);
  at = header.find(':', at);
  require(at != std::string::npos, Errc::malformed_header, "npy header missing " + key);
  ++at;
  while (at < header.size() && header[at] == ' ') ++at;
  return header.substr(at);
}

inline TensorSet parse_npy(const std::string& buf, const std::string& name) {
  require(buf.size() >= 10, Errc::malformed_header, "npy file truncated");
  const unsigned char magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  require(std::memcmp(buf.data(), magic, 6) == 0, Errc::malformed_header, "not an npy file");
  require(buf[6] == 1 && buf[7] == 0, Errc::malformed_header, "only npy format 1.0 is supported");
  std::size_t hlen = static_cast<unsigned char>(buf[8]) |
                     (static_cast<std::size_t>(static_cast<unsigned char>(buf[9])) << 8);
  require(buf.size() >= 10 + hlen, Errc::malformed_header, "npy header truncated");
  std::string header = buf.substr(10, hlen);

  std::string descr = header_field(header, "descr");
  require(descr.size() >= 5 && (descr[0] == '\'' || descr[0] == '"'),
          Errc::malformed_header, "bad descr in npy header");
  std::string dtype = descr.substr(1, descr.find(descr[0], 1) - 1);
  require(dtype == "<f8" || dtype == "<f4" || dtype == "<i8", Errc::unsupported_dtype,
          "unsupported dtype '" + dtype + "' (need <f8, <f4, or <i8)");

  std::string fortran = header_field(header, "fortran_order");
  require(fortran.rfind("False", 0) == 0 || fortran.rfind("True", 0) == 0,
          Errc::malformed_header, "bad fortran_order in npy header");
  require(fortran.rfind("False", 0) == 0, Errc::unsupported_dtype,
          "fortran-order tensors are not supported");

  std::string shape_str = header_field(header, "shape");
  require(!shape_str.empty() && shape_str[0] == '(', Errc::malformed_header,
          "bad shape in npy header");
  std::size_t close = shape_str.find(')');
  require(close != std::string::npos, Errc::malformed_header, "bad shape in npy header");
  TensorSet t;
  t.name = name;
  std::string body = shape_str.substr(1, close - 1);
  std::size_t pos = 0;
  while (pos < body.size()) {
    while (pos < body.size() && (body[pos] == ' ' || body[pos] == ',')) ++pos;
    if (pos >= body.size()) break;
    std::size_t end = pos;
    while (end < body.size() && body[end] >= '0' && body[end] <= '9') ++end;
    require(end > pos, Errc::malformed_header, "bad shape in npy header");
    t.shape.push_back(std::stoull(body.substr(pos, end - pos)));
    pos = end;
  }
  require(!t.shape.empty(), Errc::malformed_header, "scalar npy tensors are not supported");
  require(t.shape[0] >= 1, Errc::ragged_rows, "tensor has an empty sample axis");

  std::size_t count = t.total();
  std::size_t itemsize = dtype == "<f4" ? 4 : 8;
  require(buf.size() - 10 - hlen == count * itemsize, Errc::malformed_header,
          "npy payload size does not match shape");
  const char* data = buf.data() + 10 + hlen;
  t.values.resize(count);
  if (dtype == "<f8") {
    std::memcpy(t.values.data(), data, count * 8);
  } else if (dtype == "<f4") {
    for (std::size_t i = 0; i < count; ++i) {
      float v;
      std::memcpy(&v, data + i * 4, 4);
      t.values[i] = static_cast<double>(v);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::int64_t v;
      std::memcpy(&v, data + i * 8, 8);
      t.values[i] = static_cast<double>(v);
    }
  }
  return t;
}

// --- headered CSV: first row names the columns, one sample per row ---

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline TensorSet parse_csv(const std::string& buf, const std::string& name) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= buf.size()) {
    std::size_t nl = buf.find('\n', start);
    std::string line = nl == std::string::npos ? buf.substr(start)
                                               : buf.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  require(!lines.empty(), Errc::malformed_header, "csv file has no header row");
  std::size_t cols = split_csv_line(lines[0]).size();
  require(cols >= 1, Errc::malformed_header, "csv header names no columns");
  require(lines.size() >= 2, Errc::ragged_rows, "csv file has no data rows");

  TensorSet t;
  t.name = name;
  t.shape = {lines.size() - 1, cols};
  t.values.reserve(t.total());
  for (std::size_t r = 1; r < lines.size(); ++r) {
    std::vector<std::string> cells = split_csv_line(lines[r]);
    require(cells.size() == cols, Errc::ragged_rows,
            "csv row " + std::to_string(r) + " has " + std::to_string(cells.size()) +
                " cells, expected " + std::to_string(cols));
    for (const std::string& cell : cells) {
      const char* s = cell.c_str();
      char* end = nullptr;
      double v = std::strtod(s, &end);
      require(end != s && *end == '\0', Errc::malformed_header,
              "csv cell '" + cell + "' is not numeric");
      t.values.push_back(v);
    }
  }
  return t;
}

inline void write_csv(const TensorSet& t, const fs::path& path,
                      const std::vector<std::string>& columns = {}) {
  check_writable_tensor(t);
  const std::size_t d = t.sample_size();
  require(columns.empty() || columns.size() == d, Errc::length_mismatch,
          "column name count does not match tensor width");
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::io_failure, "cannot open " + path.string() + " for writing");
  for (std::size_t j = 0; j < d; ++j) {
    if (j) f << ',';
    f << (columns.empty() ? "c" + std::to_string(j) : columns[j]);
  }
  f << '\n';
  for (std::size_t i = 0; i < t.n(); ++i) {
    std::span<const double> row = t.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      if (j) f << ',';
      f << g17(row[j]);
    }
    f << '\n';
  }
  require(f.good(), Errc::io_failure, "write failed: " + path.string());
}

}  // namespace detail

inline TensorSet read_tensor(const fs::path& path) {
  std::string buf = detail::slurp(path);
  const unsigned char magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  if (buf.size() >= 6 && std::memcmp(buf.data(), magic, 6) == 0)
    return detail::parse_npy(buf, path.stem().string());
  return detail::parse_csv(buf, path.stem().string());
}

inline void write_tensor(const TensorSet& t, const fs::path& path,
                         TensorFormat format = TensorFormat::npy) {
  if (format == TensorFormat::npy)
    detail::write_npy(t, path);
  else
    detail::write_csv(t, path);
}

// --- bundle directories: role files + manifest.json ---

struct LoadedBundle {
  EvaluationBundle bundle;
  std::optional<double> epsilon;  // manifest "config" pin, if any
  std::vector<std::string> warnings;
};

namespace detail {

inline TensorSet prediction_tensor(const PredictionSet& p, const std::string& name) {
  return TensorSet{name, {p.n(), p.classes}, p.probs};
}

inline PredictionSet tensor_prediction(const TensorSet& t) {
  return PredictionSet{t.sample_size(), t.values};
}

}  // namespace detail

inline void save_bundle(const EvaluationBundle& b, const fs::path& dir,
                        std::optional<double> epsilon = std::nullopt) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, Errc::io_failure, "cannot create " + dir.string());

  ordered_json files;
  auto put_tensor = [&](const TensorSet& t, const std::string& role) {
    std::string fname = role + ".npy";
    detail::write_npy(t, dir / fname);
    files[role] = fname;
  };
  auto put_probs = [&](const PredictionSet& p, const std::string& role) {
    put_tensor(detail::prediction_tensor(p, role), role);
  };
  put_tensor(b.inputs, "inputs");
  put_tensor(b.counterfactuals, "counterfactuals");
  if (b.targets) {
    TensorSet t{"targets", {b.targets->size(), 1}, {}};
    for (std::size_t v : *b.targets) t.values.push_back(static_cast<double>(v));
    detail::write_csv(t, dir / "targets.csv", {"target"});
    files["targets"] = "targets.csv";
  }
  put_probs(b.f_probs_inputs, "f_probs_inputs");
  put_probs(b.f_probs_counterfactuals, "f_probs_counterfactuals");
  if (b.oracle_probs_counterfactuals)
    put_probs(*b.oracle_probs_counterfactuals, "oracle_probs_counterfactuals");
  if (b.reconstructions) {
    put_tensor(b.reconstructions->ae_target, "ae_target");
    put_tensor(b.reconstructions->ae_input_class, "ae_input_class");
    put_tensor(b.reconstructions->ae_full, "ae_full");
  }
  if (b.embeddings_reference) put_tensor(*b.embeddings_reference, "embeddings_reference");
  if (b.embeddings_counterfactuals)
    put_tensor(*b.embeddings_counterfactuals, "embeddings_counterfactuals");
  if (!b.label_oracles.empty()) {
    ordered_json oracles = ordered_json::array();
    for (const auto& l : b.label_oracles) {
      std::string fin = "label_" + l.label_name + "_inputs.npy";
      std::string fcf = "label_" + l.label_name + "_counterfactuals.npy";
      detail::write_npy(detail::prediction_tensor(l.probs_inputs, l.label_name), dir / fin);
      detail::write_npy(detail::prediction_tensor(l.probs_counterfactuals, l.label_name),
                        dir / fcf);
      oracles.push_back({{"name", l.label_name}, {"inputs", fin}, {"counterfactuals", fcf}});
    }
    files["label_oracles"] = oracles;
  }

  ordered_json manifest;
  manifest["version"] = "1";
  manifest["method_name"] = b.method_name;
  manifest["normalization_range"] = {b.normalization_range.low, b.normalization_range.high};
  manifest["files"] = files;
  if (epsilon) manifest["config"] = ordered_json{{"epsilon", *epsilon}};

  std::ofstream f(dir / "manifest.json", std::ios::binary);
  require(f.good(), Errc::io_failure, "cannot write manifest in " + dir.string());
  f << manifest.dump(2) << '\n';
  require(f.good(), Errc::io_failure, "cannot write manifest in " + dir.string());
}

inline LoadedBundle load_bundle(const fs::path& dir) {
  fs::path mpath = dir / "manifest.json";
  require(fs::exists(mpath), Errc::missing_manifest, "no manifest.json in " + dir.string());
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(detail::slurp(mpath));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::malformed_header, "manifest.json: " + std::string(e.what()));
  }

  LoadedBundle out;
  require(manifest.value("version", "") == "1", Errc::malformed_header,
          "manifest version must be \"1\"");
  for (const auto& [key, value] : manifest.items())
    if (key != "version" && key != "method_name" && key != "normalization_range" &&
        key != "files" && key != "config")
      out.warnings.push_back("manifest: unknown key '" + key + "' ignored");

  EvaluationBundle& b = out.bundle;
  b.method_name = manifest.value("method_name", "unnamed");
  if (manifest.contains("normalization_range")) {
    const auto& r = manifest["normalization_range"];
    require(r.is_array() && r.size() == 2, Errc::malformed_header,
            "normalization_range must be [low, high]");
    b.normalization_range = {r[0].get<double>(), r[1].get<double>()};
  }
  require(manifest.contains("files") && manifest["files"].is_object(), Errc::missing_manifest,
          "manifest has no files map");
  const auto& files = manifest["files"];
  for (const char* role : {"inputs", "counterfactuals", "f_probs_inputs",
                           "f_probs_counterfactuals"})
    require(files.contains(role), Errc::missing_manifest,
            std::string("manifest missing required role '") + role + "'");

  auto tensor_at = [&](const std::string& role) {
    return read_tensor(dir / files[role].get<std::string>());
  };
  b.inputs = tensor_at("inputs");
  b.inputs.name = "inputs";
  b.counterfactuals = tensor_at("counterfactuals");
  b.counterfactuals.name = "counterfactuals";
  b.f_probs_inputs = detail::tensor_prediction(tensor_at("f_probs_inputs"));
  b.f_probs_counterfactuals = detail::tensor_prediction(tensor_at("f_probs_counterfactuals"));
  if (files.contains("targets")) {
    TensorSet t = tensor_at("targets");
    require(t.sample_size() == 1, Errc::validation_failed, "targets must be a single column");
    std::vector<std::size_t> targets;
    for (double v : t.values) {
      require(v >= 0.0 && v == std::floor(v), Errc::validation_failed,
              "targets must be non-negative integers");
      targets.push_back(static_cast<std::size_t>(v));
    }
    b.targets = std::move(targets);
  }
  if (files.contains("oracle_probs_counterfactuals"))
    b.oracle_probs_counterfactuals =
        detail::tensor_prediction(tensor_at("oracle_probs_counterfactuals"));
  if (files.contains("ae_target") || files.contains("ae_input_class") ||
      files.contains("ae_full")) {
    for (const char* role : {"ae_target", "ae_input_class", "ae_full"})
      require(files.contains(role), Errc::missing_manifest,
              std::string("reconstructions need all three roles; missing '") + role + "'");
    b.reconstructions = ReconstructionTriplet{tensor_at("ae_target"), tensor_at("ae_input_class"),
                                              tensor_at("ae_full")};
  }
  if (files.contains("embeddings_reference"))
    b.embeddings_reference = tensor_at("embeddings_reference");
  if (files.contains("embeddings_counterfactuals"))
    b.embeddings_counterfactuals = tensor_at("embeddings_counterfactuals");
  if (files.contains("label_oracles")) {
    for (const auto& entry : files["label_oracles"]) {
      LabelOracleOutputs l;
      l.label_name = entry.value("name", "");
      require(!l.label_name.empty(), Errc::malformed_header, "label oracle entry without name");
      l.probs_inputs =
          detail::tensor_prediction(read_tensor(dir / entry["inputs"].get<std::string>()));
      l.probs_counterfactuals = detail::tensor_prediction(
          read_tensor(dir / entry["counterfactuals"].get<std::string>()));
      b.label_oracles.push_back(std::move(l));
    }
  }
  for (const auto& [key, value] : files.items()) {
    static const char* known[] = {"inputs",
                                  "counterfactuals",
                                  "targets",
                                  "f_probs_inputs",
                                  "f_probs_counterfactuals",
                                  "oracle_probs_counterfactuals",
                                  "ae_target",
                                  "ae_input_class",
                                  "ae_full",
                                  "embeddings_reference",
                                  "embeddings_counterfactuals",
                                  "label_oracles"};
    bool found = false;
    for (const char* k : known) found = found || key == k;
    if (!found) out.warnings.push_back("manifest: unknown file role '" + key + "' ignored");
  }
  if (manifest.contains("config")) {
    for (const auto& [key, value] : manifest["config"].items()) {
      if (key == "epsilon")
        out.epsilon = value.get<double>();
      else
        out.warnings.push_back("manifest: unknown config key '" + key + "' ignored");
    }
  }

  std::vector<Finding> findings = validate_bundle(b);
  if (!findings.empty()) {
    std::string msg = "bundle validation failed:";
    for (const auto& f : findings) msg += "\n  " + f.field + ": " + f.message;
    fail(Errc::validation_failed, msg);
  }
  return out;
}

// --- report serialization and rendering ---

inline ordered_json report_to_json(const MetricReport& r) {
  ordered_json j;
  j["method_name"] = r.method_name;
  j["normalization_range"] = {r.normalization_range.low, r.normalization_range.high};
  j["config"] = {
      {"epsilon", r.config.epsilon},
      {"js_log_base", r.config.js_log_base == JsLogBase::natural ? "natural" : "base2"},
      {"covariance", "unbiased"},
      {"validity_mode", to_string(r.config.validity_mode)},
      {"oracle_mode", r.config.oracle_mode == OracleMode::agreement ? "agreement" : "target-both"},
      {"ci_method", "normal-approximation-1.96"},
  };
  j["entries"] = ordered_json::array();
  for (const auto& [name, e] : r.entries) {
    ordered_json je;
    je["name"] = name;
    je["kind"] = e.kind == MetricEntry::Kind::proportion ? "proportion"
                 : e.kind == MetricEntry::Kind::scalar   ? "scalar"
                                                         : "mean";
    je["mean"] = e.stat.mean;
    if (e.stat.ci95_halfwidth)
      je["ci95_halfwidth"] = *e.stat.ci95_halfwidth;
    else
      je["ci95_halfwidth"] = nullptr;
    je["n"] = e.stat.n;
    j["entries"].push_back(je);
  }
  if (!r.per_sample.empty()) {
    ordered_json ps;
    for (const auto& s : r.per_sample) ps[s.metric_name] = s.values;
    j["per_sample"] = ps;
  }
  return j;
}

inline MetricReport report_from_json(const ordered_json& j) {
  MetricReport r;
  try {
    r.method_name = j.at("method_name").get<std::string>();
    r.normalization_range = {j.at("normalization_range")[0].get<double>(),
                             j.at("normalization_range")[1].get<double>()};
    if (j.contains("config")) {
      const auto& c = j["config"];
      r.config.epsilon = c.value("epsilon", 1e-10);
      r.config.js_log_base =
          c.value("js_log_base", "natural") == "base2" ? JsLogBase::base2 : JsLogBase::natural;
      r.config.validity_mode = c.value("validity_mode", "target-match") == "class-change"
                                   ? ValidityMode::class_change
                                   : ValidityMode::target_match;
      r.config.oracle_mode = c.value("oracle_mode", "target-both") == "agreement"
                                 ? OracleMode::agreement
                                 : OracleMode::target_both;
    }
    for (const auto& je : j.at("entries")) {
      MetricEntry e;
      std::string kind = je.at("kind").get<std::string>();
      e.kind = kind == "proportion" ? MetricEntry::Kind::proportion
               : kind == "scalar"   ? MetricEntry::Kind::scalar
                                    : MetricEntry::Kind::mean;
      e.stat.mean = je.at("mean").get<double>();
      if (je.contains("ci95_halfwidth") && !je["ci95_halfwidth"].is_null())
        e.stat.ci95_halfwidth = je["ci95_halfwidth"].get<double>();
      e.stat.n = je.value("n", 0u);
      r.entries.emplace_back(je.at("name").get<std::string>(), e);
    }
    if (j.contains("per_sample"))
      for (const auto& [name, values] : j["per_sample"].items()) {
        PerSampleScores s;
        s.metric_name = name;
        s.values = values.get<std::vector<double>>();
        s.higher_is_better = ranking_direction(name);
        r.per_sample.push_back(std::move(s));
      }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::malformed_header, "report json: " + std::string(e.what()));
  }
  return r;
}

inline void save_report(const MetricReport& r, const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::io_failure, "cannot open " + path.string() + " for writing");
  f << report_to_json(r).dump(2) << '\n';
  require(f.good(), Errc::io_failure, "write failed: " + path.string());
}

inline MetricReport load_report(const fs::path& path) {
  try {
    return report_from_json(ordered_json::parse(detail::slurp(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::malformed_header, path.string() + ": " + std::string(e.what()));
  }
}

// Accepts either a single report object or an array of them (the shape
// `evaluate --out` writes as combined.json).
inline std::vector<MetricReport> load_reports(const fs::path& path) {
  try {
    ordered_json j = ordered_json::parse(detail::slurp(path));
    std::vector<MetricReport> out;
    if (j.is_array()) {
      for (const auto& e : j) out.push_back(report_from_json(e));
    } else {
      out.push_back(report_from_json(j));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::malformed_header, path.string() + ": " + std::string(e.what()));
  }
}

struct RenderedReport {
  std::string format;  // "markdown", "json", or "csv"
  std::string content;
};

namespace detail {

inline std::string shown_name(const std::string& metric) {
  return metric == "IM2" ? "100\xC2\xB7IM2" : metric;
}

inline std::string render_markdown(const std::vector<MetricReport>& reports) {
  std::optional<RankingTable> ranking;
  if (reports.size() >= 2) ranking = rank_methods(reports);

  std::string out = "| Method |";
  std::string rule = "| --- |";
  for (const auto& [name, e] : reports[0].entries) {
    out += " " + shown_name(name) + " |";
    rule += " --- |";
  }
  out += "\n" + rule + "\n";
  for (const auto& r : reports) {
    out += "| " + r.method_name + " |";
    for (const auto& [name, e0] : reports[0].entries) {
      const MetricEntry* e = r.find(name);
      require(e != nullptr, Errc::metric_mismatch,
              "reports disagree on available metrics: missing " + name);
      std::string cell = render_cell(*e, name == "IM2" ? 100.0 : 1.0);
      if (ranking) {
        const MetricRanking* mr = ranking->find(name);
        if (mr && mr->best_method == r.method_name) cell = "**" + cell + "**";
      }
      out += " " + cell + " |";
    }
    out += "\n";
  }
  if (ranking) {
    out += "\nbest per metric:";
    for (const auto& mr : ranking->rankings)
      out += " " + mr.metric_name + "=" + mr.best_method + (mr.tie ? "*" : "");
    out += "\n";
  }
  return out;
}

inline std::string render_csv(const std::vector<MetricReport>& reports) {
  std::string out = "method,metric,kind,mean,ci95_halfwidth,n\n";
  for (const auto& r : reports)
    for (const auto& [name, e] : r.entries) {
      out += r.method_name + "," + name + ",";
      out += e.kind == MetricEntry::Kind::proportion ? "proportion"
             : e.kind == MetricEntry::Kind::scalar   ? "scalar"
                                                     : "mean";
      out += "," + g17(e.stat.mean) + ",";
      if (e.stat.ci95_halfwidth) out += g17(*e.stat.ci95_halfwidth);
      out += "," + std::to_string(e.stat.n) + "\n";
    }
  return out;
}

}  // namespace detail

inline RenderedReport render_report(const std::vector<MetricReport>& reports,
                                    const std::string& format) {
  require(!reports.empty(), Errc::empty_report_set, "no reports to render");
  if (format == "json") {
    ordered_json arr = ordered_json::array();
    for (const auto& r : reports) arr.push_back(report_to_json(r));
    return {"json", arr.dump(2) + "\n"};
  }
  if (format == "csv") return {"csv", detail::render_csv(reports)};
  require(format == "md" || format == "markdown", Errc::usage,
          "unknown report format '" + format + "'");
  return {"markdown", detail::render_markdown(reports)};
}

// The K lowest and K highest scoring samples per metric, for eyeballing what
// a score is rewarding. Indices refer to the scored (valid-only) sample set.
inline std::string render_extremes(const std::vector<MetricReport>& reports, std::size_t k) {
  require(!reports.empty(), Errc::empty_report_set, "no reports to render");
  std::string out;
  for (const auto& r : reports) {
    for (const auto& s : r.per_sample) {
      std::vector<std::size_t> order(s.values.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return s.values[a] < s.values[b];
      });
      out += "### " + r.method_name + " " + detail::shown_name(s.metric_name) + "\n";
      out += "| end | sample | score |\n| --- | --- | --- |\n";
      std::size_t take = std::min(k, order.size());
      for (std::size_t i = 0; i < take; ++i)
        out += "| low | " + std::to_string(order[i]) + " | " +
               detail::g17(s.values[order[i]]) + " |\n";
      for (std::size_t i = order.size() - take; i < order.size(); ++i)
        out += "| high | " + std::to_string(order[i]) + " | " +
               detail::g17(s.values[order[i]]) + " |\n";
      out += "\n";
    }
  }
  return out;
}

}  // namespace cfeval
