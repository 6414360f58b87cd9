// gmlot command-line driver.
//
//   gmlot fit              --source X --target Z [--method Proposed] --out DIR
//   gmlot adapt            --source S --target T [--target-test E] --out DIR
//   gmlot experiment-skew  --images I --labels L [--reduced] --out DIR
//   gmlot experiment-office --features-dir DIR --out DIR
//   gmlot summarize        --in runs.csv [--out DIR]
//
// Exit codes: 0 ok, 1 config error, 2 data error, 3 numerical failure.

#include "gmlot/gmlot.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gmlot;

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDataError = 2, kNumericalError = 3 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::vector<std::string> methods;
  std::string d_choice = "identity";
  std::vector<double> lambdas;
  std::optional<int> outer_iters;
  std::optional<double> eps;
  std::string eps_mode = "relative";
  std::optional<double> sinkhorn_tol;
  std::optional<int> sinkhorn_max_iter;
  std::optional<std::string> sinkhorn_method;
  std::optional<std::string> lambda_scale;
  std::optional<double> objective_rtol;
  std::vector<std::uint64_t> seeds;

  std::string source, target, target_test, format, input;
  bool labeled = false;
  std::string images, labels, features_dir;
  bool reduced = false;
  std::optional<int> sample_size;
  std::vector<double> skews;
  std::vector<int> classes;

  std::string out;
  bool deterministic = false;
  bool strict = false;
  unsigned workers = 1;
};

template <class T>
std::vector<T> as_list(const json& v) {
  if (v.is_array()) return v.get<std::vector<T>>();
  return {v.get<T>()};
}

// Every key must be known; values are type-checked by nlohmann.
void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "method") c.methods = as_list<std::string>(v);
    else if (key == "d_choice") c.d_choice = v.get<std::string>();
    else if (key == "lambda" || key == "lambda_grid") c.lambdas = as_list<double>(v);
    else if (key == "outer_iters") c.outer_iters = v.get<int>();
    else if (key == "eps") c.eps = v.get<double>();
    else if (key == "eps_mode") c.eps_mode = v.get<std::string>();
    else if (key == "sinkhorn_tol") c.sinkhorn_tol = v.get<double>();
    else if (key == "sinkhorn_max_iter") c.sinkhorn_max_iter = v.get<int>();
    else if (key == "sinkhorn_method") c.sinkhorn_method = v.get<std::string>();
    else if (key == "lambda_scale") c.lambda_scale = v.get<std::string>();
    else if (key == "objective_rtol") c.objective_rtol = v.get<double>();
    else if (key == "seed" || key == "seeds") c.seeds = as_list<std::uint64_t>(v);
    else if (key == "source") c.source = v.get<std::string>();
    else if (key == "target") c.target = v.get<std::string>();
    else if (key == "target_test") c.target_test = v.get<std::string>();
    else if (key == "format") c.format = v.get<std::string>();
    else if (key == "labeled") c.labeled = v.get<bool>();
    else if (key == "input") c.input = v.get<std::string>();
    else if (key == "images") c.images = v.get<std::string>();
    else if (key == "labels") c.labels = v.get<std::string>();
    else if (key == "features_dir") c.features_dir = v.get<std::string>();
    else if (key == "reduced") c.reduced = v.get<bool>();
    else if (key == "sample_size") c.sample_size = v.get<int>();
    else if (key == "skews") c.skews = as_list<double>(v);
    else if (key == "classes") c.classes = as_list<int>(v);
    else if (key == "out") c.out = v.get<std::string>();
    else if (key == "deterministic") c.deterministic = v.get<bool>();
    else if (key == "strict") c.strict = v.get<bool>();
    else if (key == "workers") c.workers = v.get<unsigned>();
    else throw ConfigError("config: unknown key '" + key + "'");
  }
}

// Flags registered on a subcommand; each overrides the config file when given.
struct Flags {
  std::string config;
  RunConfig v;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> bound;

  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& name, T RunConfig::*field, const std::string& help) {
    CLI::Option* o = app->add_option(name, v.*field, help);
    bound.emplace_back(o, [this, field](RunConfig& c) { c.*field = v.*field; });
    return o;
  }
  template <class T>
  void add_opt(CLI::App* app, const std::string& name, std::optional<T> RunConfig::*field, const std::string& help) {
    auto holder = std::make_shared<T>();
    CLI::Option* o = app->add_option(name, *holder, help);
    bound.emplace_back(o, [holder, field](RunConfig& c) { c.*field = *holder; });
  }
  void add_flag(CLI::App* app, const std::string& name, bool RunConfig::*field, const std::string& help) {
    CLI::Option* o = app->add_flag(name, v.*field, help);
    bound.emplace_back(o, [field](RunConfig& c) { c.*field = true; });
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config.empty()) {
      std::string text;
      try {
        text = detail::read_file(config);
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
      try {
        apply_json(c, json::parse(text));
      } catch (const json::exception& e) {
        throw ConfigError("config '" + config + "': " + e.what());
      }
    }
    for (const auto& [opt, set] : bound) {
      if (opt->count() > 0) set(c);
    }
    return c;
  }
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file; flags override its values");
  f.add(app, "--method", &RunConfig::methods, "OT_I, OT_W, OT_Winv, Proposed or all (comma separated)");
  f.add(app, "--lambda", &RunConfig::lambdas, "entropic weight, or a comma separated grid");
  f.add_opt(app, "--outer-iters", &RunConfig::outer_iters, "alternating iterations");
  f.add_opt(app, "--eps", &RunConfig::eps, "εI lift (relative to trace/d unless --eps-mode absolute)");
  f.add(app, "--eps-mode", &RunConfig::eps_mode, "relative or absolute");
  f.add(app, "--d-choice", &RunConfig::d_choice, "identity, gram_sum or gram_sum_inverse");
  f.add_opt(app, "--tol", &RunConfig::sinkhorn_tol, "Sinkhorn marginal L1 tolerance");
  f.add_opt(app, "--max-iter", &RunConfig::sinkhorn_max_iter, "Sinkhorn iteration cap");
  f.add_opt(app, "--sinkhorn", &RunConfig::sinkhorn_method, "log, stabilized or scaling");
  f.add_opt(app, "--lambda-scale", &RunConfig::lambda_scale, "absolute or median");
  f.add(app, "--seed", &RunConfig::seeds, "seed, or a comma separated list");
  f.add(app, "--out", &RunConfig::out, "output directory");
  f.add_flag(app, "--deterministic", &RunConfig::deterministic, "single worker thread");
  f.add_flag(app, "--strict", &RunConfig::strict, "treat Sinkhorn non-convergence as failure (exit 3)");
  for (auto* name : {"--method", "--lambda", "--seed"}) app->get_option(name)->delimiter(',');
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

std::vector<Method> resolve_methods(const std::vector<std::string>& names, std::vector<Method> fallback) {
  if (names.empty()) return fallback;
  std::vector<Method> out;
  for (const auto& n : names) {
    if (n == "all") {
      out.assign(std::begin(kAllMethods), std::end(kAllMethods));
      continue;
    }
    try {
      const Method m = parse_method(n);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

GmlConfig build_gml(const RunConfig& c, GmlConfig g) {
  if (c.outer_iters) g.outer_iters = *c.outer_iters;
  if (c.eps) g.eps.value = *c.eps;
  require(c.eps_mode == "relative" || c.eps_mode == "absolute", "--eps-mode must be relative or absolute");
  g.eps.relative = c.eps_mode == "relative";
  if (c.d_choice == "identity") g.d_choice = DChoice::identity();
  else if (c.d_choice == "gram_sum") g.d_choice = DChoice::gram_sum();
  else if (c.d_choice == "gram_sum_inverse") g.d_choice = DChoice::gram_sum_inverse();
  else throw ConfigError("unknown d_choice '" + c.d_choice + "'");
  if (c.sinkhorn_tol) g.sinkhorn.tol = *c.sinkhorn_tol;
  if (c.sinkhorn_max_iter) g.sinkhorn.max_iter = *c.sinkhorn_max_iter;
  if (c.sinkhorn_method) {
    if (*c.sinkhorn_method == "log") g.sinkhorn.method = SinkhornMethod::LogDomain;
    else if (*c.sinkhorn_method == "stabilized") g.sinkhorn.method = SinkhornMethod::Stabilized;
    else if (*c.sinkhorn_method == "scaling") g.sinkhorn.method = SinkhornMethod::Scaling;
    else throw ConfigError("unknown sinkhorn method '" + *c.sinkhorn_method + "'");
  }
  if (c.lambda_scale) {
    if (*c.lambda_scale == "absolute") g.lambda_scale = LambdaScale::Absolute;
    else if (*c.lambda_scale == "median") g.lambda_scale = LambdaScale::MedianCost;
    else throw ConfigError("unknown lambda scale '" + *c.lambda_scale + "'");
  }
  if (c.objective_rtol) g.objective_rtol = *c.objective_rtol;
  for (double l : c.lambdas) require(l > 0.0 && std::isfinite(l), "lambda values must be positive");
  if (!c.lambdas.empty()) g.sinkhorn.lambda = c.lambdas.front();
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return g;
}

FileFormat resolve_format(const RunConfig& c, const std::string& path) {
  try {
    return c.format.empty() ? format_from_path(path) : parse_format(c.format);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RawDataset load_points(const RunConfig& c, const std::string& path, bool labeled) {
  return load_matrix(path, resolve_format(c, path), labeled || c.labeled);
}

// All results are assembled in memory first so a failure leaves nothing behind.
void write_outputs(const std::string& dir, const std::vector<std::pair<std::string, std::string>>& files) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir + "': " + ec.message());
  for (const auto& [name, bytes] : files) write_file_atomic(fs::path(dir) / name, bytes);
}

int cmd_fit(const RunConfig& c) {
  require(!c.source.empty() && !c.target.empty(), "fit needs --source and --target");
  require(!c.out.empty(), "fit needs --out");
  const auto methods = resolve_methods(c.methods, {Method::Proposed});
  require(methods.size() == 1, "fit takes a single --method");
  require(c.lambdas.size() <= 1, "fit takes a single --lambda");
  const GmlConfig base = build_gml(c, GmlConfig{});
  resolve_format(c, c.source);
  resolve_format(c, c.target);

  const RawDataset xs = load_points(c, c.source, false);
  const RawDataset zs = load_points(c, c.target, false);
  if (xs.dim() != zs.dim()) {
    throw DimensionError("source has dimension " + std::to_string(xs.dim()) + ", target " + std::to_string(zs.dim()));
  }
  const GmlConfig cfg = method_config(xs.features, zs.features, methods.front(), base);
  const Histogram p = Histogram::uniform(xs.size());
  const Histogram q = Histogram::uniform(zs.size());
  const FitResult r = fit(xs.features, zs.features, p, q, cfg);
  if (c.strict && !r.sinkhorn_converged) throw NumericalError("Sinkhorn did not reach tolerance");

  std::string hist = "iter,objective\n";
  for (size_t t = 0; t < r.objective_history.size(); ++t) {
    hist += std::to_string(t + 1) + "," + detail::fmt_double(r.objective_history[t]) + "\n";
  }
  write_outputs(c.out, {{"gamma.f64", encode_rawf64(r.plan.matrix())},
                        {"metric.f64", encode_rawf64(r.metric.matrix())},
                        {"objective.csv", hist}});
  std::cout << "objective " << detail::fmt_double(r.objective_history.back()) << "\n"
            << "iterations " << r.iters_run << "\n"
            << "sinkhorn_iterations " << r.sinkhorn_iterations << "\n"
            << "sinkhorn_converged " << (r.sinkhorn_converged ? "true" : "false") << "\n"
            << "lambda_effective " << detail::fmt_double(r.lambda_effective) << "\n";
  return kOk;
}

int cmd_adapt(const RunConfig& c) {
  require(!c.source.empty() && !c.target.empty(), "adapt needs --source and --target");
  require(!c.out.empty(), "adapt needs --out");
  const auto methods = resolve_methods(c.methods, {std::begin(kAllMethods), std::end(kAllMethods)});
  const GmlConfig gml = build_gml(c, experiment_gml_config());
  const std::vector<double> lambdas = c.lambdas.empty() ? SkewExperimentConfig{}.lambdas : c.lambdas;
  const std::vector<std::uint64_t> seeds = c.seeds.empty() ? SkewExperimentConfig{}.seeds : c.seeds;

  const RawDataset src = load_points(c, c.source, true);
  const RawDataset tgt = load_points(c, c.target, true);
  std::optional<RawDataset> tgt_test;
  if (!c.target_test.empty()) tgt_test = load_points(c, c.target_test, true);
  for (const RawDataset* d : {&src, &tgt}) {
    if (!d->labeled()) throw DataError("adapt needs labeled source and target data");
  }
  if (tgt_test && !tgt_test->labeled()) throw DataError("adapt needs labeled target test data");
  if (src.dim() != tgt.dim() || (tgt_test && tgt_test->dim() != src.dim())) {
    throw DimensionError("source and target feature dimensions differ");
  }

  const LabeledCloud source = src.as_cloud();
  std::vector<ExperimentRow> rows;
  json report = json::array();
  for (std::uint64_t seed : seeds) {
    LabeledCloud train, test;
    if (tgt_test) {
      train = tgt.as_cloud();
      test = tgt_test->as_cloud();
    } else {
      // Per-class halves of the target file, drawn with this seed.
      const auto hist = class_histogram(tgt.labels, tgt.class_count);
      std::vector<int> a(hist.size()), b(hist.size());
      for (size_t k = 0; k < hist.size(); ++k) {
        a[k] = hist[k] / 2;
        b[k] = hist[k] - a[k];
      }
      auto split = draw_disjoint(tgt, {a, b}, seed);
      train = std::move(split[0].cloud);
      test = std::move(split[1].cloud);
      if (train.size() == 0 || test.size() == 0) throw DataError("target too small to split into train and test");
    }
    for (Method m : methods) {
      const AdaptationReport rep = run_task(source, train, test, m, lambdas, gml, seed);
      if (c.strict && !rep.sinkhorn_converged) throw NumericalError("Sinkhorn did not reach tolerance");
      rows.push_back({"adapt", std::nullopt, std::nullopt, rep.method, seed, rep.lambda_chosen, rep.train_accuracy,
                      rep.test_accuracy});
      json scores = json::array();
      for (const auto& [lam, acc] : rep.lambda_scores) scores.push_back({{"lambda", lam}, {"train_acc", acc}});
      report.push_back({{"method", rep.method},
                        {"seed", seed},
                        {"lambda_chosen", rep.lambda_chosen},
                        {"train_acc", rep.train_accuracy},
                        {"test_acc", rep.test_accuracy},
                        {"sinkhorn_converged", rep.sinkhorn_converged},
                        {"lambda_scores", std::move(scores)}});
    }
  }
  const std::string csv = format_rows(rows);
  write_outputs(c.out, {{"report.csv", csv}, {"report.json", report.dump(2) + "\n"}});
  std::cout << csv;
  return kOk;
}

void check_experiment_grid(const std::vector<double>& lambdas, const std::vector<std::uint64_t>& seeds) {
  require(!lambdas.empty(), "empty lambda grid");
  require(!seeds.empty(), "empty seed list");
}

int cmd_experiment_skew(const RunConfig& c) {
  require(!c.images.empty() && !c.labels.empty(), "experiment-skew needs --images and --labels");
  require(!c.out.empty(), "experiment-skew needs --out");
  SkewExperimentConfig s;
  s.gml = build_gml(c, experiment_gml_config());
  s.methods = resolve_methods(c.methods, s.methods);
  if (!c.lambdas.empty()) s.lambdas = c.lambdas;
  if (!c.seeds.empty()) s.seeds = c.seeds;
  if (!c.skews.empty()) s.skews = c.skews;
  if (!c.classes.empty()) s.classes = c.classes;
  const int size = c.sample_size.value_or(c.reduced ? 200 : 500);
  require(size > 0, "sample size must be positive");
  s.source_size = s.target_size = size;
  s.workers = c.deterministic ? 1 : c.workers;
  check_experiment_grid(s.lambdas, s.seeds);

  RawDataset ds = load_idx(c.images, c.labels);
  if (c.reduced) ds = downsample2x(ds);
  for (double w : s.skews) {
    for (int cls : s.classes) {
      try {
        SkewSpec{cls, w, size}.validate(ds.class_count);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
  }
  const auto rows = run_skew_experiment(ds, nullptr, s, [](const ExperimentRow& r) {
    std::cerr << r.task << " seed " << r.seed << " " << r.method << " test " << detail::fmt_double(r.test_acc) << "\n";
  });
  const SummaryTable table = summarize(rows);
  write_outputs(c.out, {{"runs.csv", format_rows(rows)}, {"table.csv", table.to_csv()}});
  std::cout << table.to_csv();
  return kOk;
}

int cmd_experiment_office(const RunConfig& c) {
  require(!c.features_dir.empty(), "experiment-office needs --features-dir");
  require(!c.out.empty(), "experiment-office needs --out");
  OfficeExperimentConfig o;
  o.gml = build_gml(c, experiment_gml_config());
  o.methods = resolve_methods(c.methods, o.methods);
  if (!c.lambdas.empty()) o.lambdas = c.lambdas;
  if (!c.seeds.empty()) o.seeds = c.seeds;
  o.workers = c.deterministic ? 1 : c.workers;
  check_experiment_grid(o.lambdas, o.seeds);

  const auto domains = load_office_domains(c.features_dir);
  if (!domains) throw DataError("'" + c.features_dir + "' lacks one of amazon, caltech, dslr, webcam (.csv or .f64)");
  const auto rows = run_office_experiment(*domains, o);
  const SummaryTable table = with_average_row(summarize(rows));
  write_outputs(c.out, {{"runs.csv", format_rows(rows)}, {"table.csv", table.to_csv()}});
  std::cout << table.to_csv();
  return kOk;
}

int cmd_summarize(const RunConfig& c) {
  require(!c.input.empty(), "summarize needs --in");
  const auto rows = parse_rows(detail::read_file(c.input));
  if (rows.empty()) throw DataError("'" + c.input + "' has no rows");
  const SummaryTable table = summarize(rows);
  if (!c.out.empty()) write_outputs(c.out, {{"table.csv", table.to_csv()}});
  std::cout << table.to_csv();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metric-learned optimal transport for domain adaptation"};
  app.require_subcommand(1);

  Flags fit_f, adapt_f, skew_f, office_f, sum_f;
  auto* fit_cmd = app.add_subcommand("fit", "alternating metric/transport fit; writes gamma.f64, metric.f64, objective.csv");
  add_common(fit_cmd, fit_f);
  fit_f.add(fit_cmd, "--source", &RunConfig::source, "source points (csv, f64)");
  fit_f.add(fit_cmd, "--target", &RunConfig::target, "target points (csv, f64)");
  fit_f.add(fit_cmd, "--format", &RunConfig::format, "csv or rawf64 (default: from extension)");
  fit_f.add_flag(fit_cmd, "--labeled", &RunConfig::labeled, "CSV inputs carry a trailing label column");

  auto* adapt_cmd = app.add_subcommand("adapt", "domain adaptation with λ tuning; writes report.csv and report.json");
  add_common(adapt_cmd, adapt_f);
  adapt_f.add(adapt_cmd, "--source", &RunConfig::source, "labeled source set");
  adapt_f.add(adapt_cmd, "--target", &RunConfig::target, "labeled target set (split per seed unless --target-test)");
  adapt_f.add(adapt_cmd, "--target-test", &RunConfig::target_test, "labeled target test set");
  adapt_f.add(adapt_cmd, "--format", &RunConfig::format, "csv or rawf64 (default: from extension)");

  auto* skew_cmd = app.add_subcommand("experiment-skew", "label-skew digit experiment; writes runs.csv, table.csv");
  add_common(skew_cmd, skew_f);
  skew_f.add(skew_cmd, "--images", &RunConfig::images, "IDX image file");
  skew_f.add(skew_cmd, "--labels", &RunConfig::labels, "IDX label file");
  skew_f.add_flag(skew_cmd, "--reduced", &RunConfig::reduced, "14×14 images, 200 points per set");
  skew_f.add_opt(skew_cmd, "--size", &RunConfig::sample_size, "points per set");
  skew_f.add(skew_cmd, "--skews", &RunConfig::skews, "skew percentages")->delimiter(',');
  skew_f.add(skew_cmd, "--classes", &RunConfig::classes, "skew classes")->delimiter(',');
  skew_f.add(skew_cmd, "--workers", &RunConfig::workers, "worker threads (0 = all cores)");

  auto* office_cmd = app.add_subcommand("experiment-office", "twelve-task office experiment; writes runs.csv, table.csv");
  add_common(office_cmd, office_f);
  office_f.add(office_cmd, "--features-dir", &RunConfig::features_dir, "directory with amazon/caltech/dslr/webcam features");
  office_f.add(office_cmd, "--workers", &RunConfig::workers, "worker threads (0 = all cores)");

  auto* sum_cmd = app.add_subcommand("summarize", "mean test accuracy per group and method");
  sum_f.add(sum_cmd, "--in", &RunConfig::input, "runs.csv or report.csv");
  sum_f.add(sum_cmd, "--out", &RunConfig::out, "also write table.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit_f.resolve());
    if (*adapt_cmd) return cmd_adapt(adapt_f.resolve());
    if (*skew_cmd) return cmd_experiment_skew(skew_f.resolve());
    if (*office_cmd) return cmd_experiment_office(office_f.resolve());
    if (*sum_cmd) return cmd_summarize(sum_f.resolve());
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const PositivityError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericalError;
  }
  return kConfigError;
}
