#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cfeval/cfeval.hpp"

namespace {

using namespace cfeval;

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::usage:
      return 3;
    case Errc::io_failure:
    case Errc::unsupported_dtype:
    case Errc::malformed_header:
    case Errc::ragged_rows:
    case Errc::missing_manifest:
      return 2;
    default:
      return 1;
  }
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t comma = csv.find(',', start);
    std::string item =
        comma == std::string::npos ? csv.substr(start) : csv.substr(start, comma - start);
    while (!item.empty() && item.front() == ' ') item.erase(item.begin());
    while (!item.empty() && item.back() == ' ') item.pop_back();
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

NormalizationRange parse_range(const std::string& text) {
  std::vector<std::string> parts = split_list(text);
  require(parts.size() == 2, Errc::usage, "--range expects LO,HI");
  char* end = nullptr;
  double lo = std::strtod(parts[0].c_str(), &end);
  require(end && *end == '\0', Errc::usage, "--range expects numeric LO,HI");
  double hi = std::strtod(parts[1].c_str(), &end);
  require(end && *end == '\0', Errc::usage, "--range expects numeric LO,HI");
  require(lo < hi, Errc::usage, "--range low must be below high");
  return {lo, hi};
}

// Map user metric names onto canonical ones; bare "lvs" expands to every
// label oracle in the bundle. Unknown names pass through and fail later with
// a domain error naming them.
std::vector<std::string> resolve_metrics(const std::string& csv, const EvaluationBundle& b) {
  std::vector<std::string> out;
  for (const std::string& raw : split_list(csv)) {
    std::string name = lower(raw);
    if (name == "tcv") out.push_back("TCV");
    else if (name == "l1") out.push_back("L1");
    else if (name == "l2") out.push_back("L2");
    else if (name == "en") out.push_back("EN");
    else if (name == "im1") out.push_back("IM1");
    else if (name == "im2") out.push_back("IM2");
    else if (name == "fid") out.push_back("FID");
    else if (name == "oracle") out.push_back("Oracle");
    else if (name == "lvs")
      for (const auto& l : b.label_oracles) out.push_back("LVS:" + l.label_name);
    else if (name.rfind("lvs:", 0) == 0)
      out.push_back("LVS:" + raw.substr(4));
    else
      out.push_back(raw);
  }
  return out;
}

struct EvaluateOpts {
  std::vector<std::string> bundles;
  std::string metrics;
  std::string validity = "auto";
  bool valid_only = true;
  double epsilon = 1e-10;
  bool epsilon_set = false;
  std::string js_base = "nat";
  std::string oracle_mode = "target-both";
  std::string out;
  std::string format = "md";
};

int run_evaluate(const EvaluateOpts& o) {
  std::vector<LoadedBundle> loaded;
  for (const std::string& dir : o.bundles) loaded.push_back(load_bundle(dir));
  for (const auto& lb : loaded)
    for (const auto& w : lb.warnings) std::cerr << "warning: " << w << '\n';

  std::optional<double> pinned;
  for (const auto& lb : loaded) {
    if (!lb.epsilon) continue;
    require(!pinned || *pinned == *lb.epsilon, Errc::validation_failed,
            "bundles pin conflicting epsilon values; not comparable");
    pinned = lb.epsilon;
  }
  MetricConfig cfg;
  cfg.epsilon = o.epsilon;
  if (pinned) {
    require(!o.epsilon_set || o.epsilon == *pinned, Errc::validation_failed,
            "--epsilon conflicts with the epsilon pinned in a bundle manifest");
    cfg.epsilon = *pinned;
  }
  cfg.js_log_base = o.js_base == "2" ? JsLogBase::base2 : JsLogBase::natural;
  cfg.oracle_mode =
      o.oracle_mode == "agreement" ? OracleMode::agreement : OracleMode::target_both;
  if (o.validity == "auto") {
    bool all_targets = true;
    for (const auto& lb : loaded) all_targets = all_targets && lb.bundle.has_targets();
    cfg.validity_mode = all_targets ? ValidityMode::target_match : ValidityMode::class_change;
  } else {
    cfg.validity_mode = o.validity == "class-change" ? ValidityMode::class_change
                                                     : ValidityMode::target_match;
  }

  std::vector<MetricReport> reports;
  for (const auto& lb : loaded)
    reports.push_back(build_report(lb.bundle, cfg, resolve_metrics(o.metrics, lb.bundle),
                                   o.valid_only, true));

  if (!o.out.empty()) {
    std::error_code ec;
    fs::create_directories(o.out, ec);
    require(!ec, Errc::io_failure, "cannot create " + o.out);
    std::vector<std::string> used;
    for (const auto& r : reports) {
      std::string name = r.method_name;
      while (std::find(used.begin(), used.end(), name) != used.end()) name += "_dup";
      used.push_back(name);
      save_report(r, fs::path(o.out) / (name + ".report.json"));
    }
    RenderedReport combined = render_report(reports, o.format);
    std::string ext = o.format == "markdown" ? "md" : o.format;
    std::ofstream f(fs::path(o.out) / ("combined." + ext), std::ios::binary);
    require(f.good(), Errc::io_failure, "cannot write combined report in " + o.out);
    f << combined.content;
    require(f.good(), Errc::io_failure, "cannot write combined report in " + o.out);
  }
  std::cout << render_report(reports, "md").content;
  return 0;
}

int run_audit(const std::vector<std::string>& files_a, const std::vector<std::string>& files_b) {
  std::vector<MetricReport> a, b;
  for (const auto& f : files_a) a.push_back(load_report(f));
  for (const auto& f : files_b) b.push_back(load_report(f));
  NormalizationAudit audit = normalization_audit(a, b);
  std::cout << audit.rendering;
  return audit.passed ? 0 : 1;
}

struct SynthOpts {
  std::uint64_t seed = 7;
  std::size_t n_eval = 500;
  std::size_t per_class = 200;
  std::size_t dim = 64;
  std::size_t classes = 5;
  std::size_t markers = 8;
  double separation = 10.0;
  double noise_sd = 1.0;
  std::string methods = "tiny,mid,prototype";
  std::string range = "0,1";
  std::string out;
};

int run_synth(const SynthOpts& o) {
  SyntheticSpec spec;
  spec.seed = o.seed;
  spec.n_per_class = o.per_class;
  spec.dim = o.dim;
  spec.classes = o.classes;
  spec.marker_dims = o.markers;
  spec.class_separation = o.separation;
  spec.noise_sd = o.noise_sd;
  NormalizationRange range = parse_range(o.range);

  std::vector<CfMethod> methods;
  for (const std::string& name : split_list(o.methods)) {
    std::string n = lower(name);
    if (n == "tiny") methods.push_back(CfMethod::tiny);
    else if (n == "mid") methods.push_back(CfMethod::mid);
    else if (n == "prototype") methods.push_back(CfMethod::prototype);
    else fail(Errc::usage, "unknown method '" + name + "' (expected tiny, mid, prototype)");
  }
  require(!methods.empty(), Errc::usage, "--methods named no methods");

  SyntheticWorld world = gen_world(spec);
  std::error_code ec;
  fs::create_directories(o.out, ec);
  require(!ec && !o.out.empty(), Errc::io_failure, "cannot create " + o.out);
  for (CfMethod m : methods) {
    EvaluationBundle bundle = build_bundle(world, m, o.n_eval, spec.seed);
    if (range.low != 0.0 || range.high != 1.0) bundle = rescale_bundle(bundle, range);
    save_bundle(bundle, fs::path(o.out) / to_string(m));
  }

  ordered_json prov;
  prov["version"] = "1";
  prov["spec"] = {{"n_per_class", spec.n_per_class}, {"dim", spec.dim},
                  {"classes", spec.classes},         {"marker_dims", spec.marker_dims},
                  {"class_separation", spec.class_separation},
                  {"noise_sd", spec.noise_sd},       {"seed", spec.seed}};
  prov["n_eval"] = o.n_eval;
  ordered_json names = ordered_json::array();
  for (CfMethod m : methods) names.push_back(to_string(m));
  prov["methods"] = names;
  prov["range"] = {range.low, range.high};
  std::ofstream f(fs::path(o.out) / "world.json", std::ios::binary);
  require(f.good(), Errc::io_failure, "cannot write world.json in " + o.out);
  f << prov.dump(2) << '\n';
  require(f.good(), Errc::io_failure, "cannot write world.json in " + o.out);
  return 0;
}

struct FakeMnistOpts {
  std::string images;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 10;
  std::uint64_t seed = 7;
  std::string range = "0,1";
  std::string out;
};

int run_fakemnist(const FakeMnistOpts& o) {
  TensorSet images = read_tensor(o.images);
  if (o.classes > 10)
    std::cerr << "warning: " << o.classes
              << " classes paints that many row-0 pixels; 10 or fewer is the intended use\n";
  FakeMnist fm = make_fakemnist(images, o.height, o.width, o.classes, o.seed, parse_range(o.range));
  std::error_code ec;
  fs::create_directories(o.out, ec);
  require(!ec, Errc::io_failure, "cannot create " + o.out);
  write_tensor(fm.images, fs::path(o.out) / "images.npy");
  TensorSet labels{"labels", {fm.labels.size(), 1}, {}};
  for (std::size_t v : fm.labels) labels.values.push_back(static_cast<double>(v));
  detail::write_csv(labels, fs::path(o.out) / "labels.csv", {"label"});
  return 0;
}

struct ReportOpts {
  std::vector<std::string> in;
  std::string format = "md";
  std::string out;
  std::size_t extremes = 0;
};

int run_report(const ReportOpts& o) {
  std::vector<MetricReport> reports;
  for (const auto& f : o.in) {
    for (auto& r : load_reports(f)) reports.push_back(std::move(r));
  }
  RenderedReport rendered = render_report(reports, o.format);
  std::string content = rendered.content;
  if (o.extremes > 0) {
    require(o.format == "md" || o.format == "markdown", Errc::usage,
            "--per-sample-extremes requires --format md");
    content += "\n" + render_extremes(reports, o.extremes);
  }
  if (!o.out.empty()) {
    std::ofstream f(o.out, std::ios::binary);
    require(f.good(), Errc::io_failure, "cannot open " + o.out + " for writing");
    f << content;
    require(f.good(), Errc::io_failure, "write failed: " + o.out);
  } else {
    std::cout << content;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evaluation harness for visual counterfactual explanations"};
  app.require_subcommand(1);

  EvaluateOpts ev;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score bundles and render a table");
  evaluate->add_option("--bundle", ev.bundles, "bundle directory (repeatable)")
      ->required()
      ->take_all();
  evaluate->add_option("--metrics", ev.metrics, "comma list (default: all available)");
  evaluate->add_option("--validity", ev.validity, "validity mode")
      ->check(CLI::IsMember({"auto", "class-change", "target-match"}));
  evaluate->add_flag("--valid-only,!--no-valid-only", ev.valid_only,
                     "score valid counterfactuals only (default on; TCV is always unfiltered)");
  CLI::Option* eps_opt = evaluate->add_option("--epsilon", ev.epsilon, "denominator guard");
  evaluate->add_option("--js-base", ev.js_base, "JS divergence log base")
      ->check(CLI::IsMember({"nat", "2"}));
  evaluate->add_option("--oracle-mode", ev.oracle_mode, "oracle scoring rule")
      ->check(CLI::IsMember({"agreement", "target-both"}));
  evaluate->add_option("--out", ev.out, "directory for per-bundle and combined reports");
  evaluate->add_option("--format", ev.format, "combined report format")
      ->check(CLI::IsMember({"md", "json", "csv"}));

  std::vector<std::string> audit_a, audit_b;
  CLI::App* audit = app.add_subcommand("audit", "compare reports across normalizations");
  audit->add_option("--reports-a", audit_a, "json reports, side A")->required()->take_all();
  audit->add_option("--reports-b", audit_b, "json reports, side B")->required()->take_all();

  SynthOpts sy;
  CLI::App* synth = app.add_subcommand("synth", "generate benchmark bundles");
  synth->add_option("--seed", sy.seed, "master seed");
  synth->add_option("--n", sy.n_eval, "evaluation samples per bundle");
  synth->add_option("--per-class", sy.per_class, "world samples per class");
  synth->add_option("--dim", sy.dim, "sample dimensionality");
  synth->add_option("--classes", sy.classes, "number of classes");
  synth->add_option("--markers", sy.markers, "marker dimensions");
  synth->add_option("--separation", sy.separation, "centroid separation");
  synth->add_option("--noise-sd", sy.noise_sd, "noise standard deviation");
  synth->add_option("--methods", sy.methods, "comma list of tiny, mid, prototype");
  synth->add_option("--range", sy.range, "normalization range LO,HI");
  synth->add_option("--out", sy.out, "output directory")->required();

  FakeMnistOpts fm;
  CLI::App* fakemnist = app.add_subcommand("fakemnist", "paint labels into image row 0");
  fakemnist->add_option("--images", fm.images, "input tensor file")->required();
  fakemnist->add_option("--height", fm.height, "image height")->required();
  fakemnist->add_option("--width", fm.width, "image width")->required();
  fakemnist->add_option("--classes", fm.classes, "number of classes");
  fakemnist->add_option("--seed", fm.seed, "shuffle/label seed");
  fakemnist->add_option("--range", fm.range, "normalization range LO,HI");
  fakemnist->add_option("--out", fm.out, "output directory")->required();

  ReportOpts rp;
  CLI::App* report = app.add_subcommand("report", "render saved json reports");
  report->add_option("--in", rp.in, "json report files")->required()->take_all();
  report->add_option("--format", rp.format, "output format")
      ->check(CLI::IsMember({"md", "csv"}));
  report->add_option("--out", rp.out, "output path (default: standard output)");
  report->add_option("--per-sample-extremes", rp.extremes,
                     "list the K lowest/highest samples per metric");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  }

  try {
    if (evaluate->parsed()) {
      ev.epsilon_set = eps_opt->count() > 0;
      return run_evaluate(ev);
    }
    if (audit->parsed()) return run_audit(audit_a, audit_b);
    if (synth->parsed()) return run_synth(sy);
    if (fakemnist->parsed()) return run_fakemnist(fm);
    if (report->parsed()) return run_report(rp);
  } catch (const cfeval::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 3;
}
