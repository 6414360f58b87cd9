// Acceptance harness: one PASS/FAIL/SKIP line per criterion.
//
//   gmlot_acceptance [--mnist-dir DIR] [--office-dir DIR] [--full] [--only N[,N...]] [--workers K]

#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <sys/wait.h>

using namespace gmlot;
namespace fs = std::filesystem;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status;
  std::string detail;
};

struct Options {
  fs::path mnist_dir = "data/mnist";
  fs::path office_dir = "data/office";
  bool full = false;
  std::set<int> only;
  unsigned workers = 0;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::Pass : Status::Fail, std::move(detail)}; }

Outcome riccati_residuals() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> logc(0.0, 4.0);
  const int dims[] = {2, 5, 20};
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int d = dims[k % 3];
    const SpdMatrix c = testutil::random_spd(rng, d, std::pow(10.0, logc(rng)));
    const SpdMatrix dm = testutil::random_spd(rng, d, std::pow(10.0, logc(rng)));
    const Matrix a = update_metric(c, dm).matrix();
    worst = std::max(worst, testutil::rel_fro(a * c.matrix() * a, dm.matrix()));
  }
  const double secs = seconds_since(t0);
  return verdict(worst < 1e-8 && secs < 5.0, "max residual " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s");
}

Outcome geometric_mean_identities() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (int k = 0; k < 60; ++k) {
    const int d = 1 + k % 10;
    const SpdMatrix m = testutil::random_spd(rng, d, 1e3);
    const SpdMatrix n = testutil::random_spd(rng, d, 1e3);
    const SpdMatrix i = SpdMatrix::identity(d);
    worst = std::max(worst, testutil::rel_fro(geometric_mean(m, m).matrix(), m.matrix()));
    worst = std::max(worst, testutil::rel_fro(geometric_mean(i, n).matrix(), spd_sqrt(n).matrix()));
    const Matrix mn = geometric_mean(m, n).matrix();
    worst = std::max(worst, testutil::rel_fro(geometric_mean(n, m).matrix(), mn));
    Matrix w = testutil::gaussian(rng, d, d);
    while (std::abs(w.determinant()) < 1e-3) w = testutil::gaussian(rng, d, d);
    const SpdMatrix wm(Matrix(w * m.matrix() * w.transpose()));
    const SpdMatrix wn(Matrix(w * n.matrix() * w.transpose()));
    worst = std::max(worst, testutil::rel_fro(geometric_mean(wm, wn).matrix(), w * mn * w.transpose()));
  }
  const double secs = seconds_since(t0);
  return verdict(worst < 1e-7 && secs < 5.0, "max relative error " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s");
}

Outcome sinkhorn_vs_exact() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  const Histogram u = Histogram::uniform(3);
  SinkhornConfig cfg;
  cfg.lambda = 0.02;
  cfg.tol = 1e-11;
  double worst_gap = 0.0, worst_marg = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Matrix raw = testutil::random_uniform(rng, 3, 3);
    const CostMatrix c(raw);
    const SinkhornResult s = solve(c, u, u, cfg);
    const double exact = transport_cost(exact_ot_oracle(c, u, u), c);
    const double range = raw.maxCoeff() - raw.minCoeff();
    worst_gap = std::max(worst_gap, (transport_cost(s.plan, c) - exact) / range);
    const auto [re, ce] = marginal_error(s.plan, u, u);
    worst_marg = std::max({worst_marg, re, ce});
  }
  const double secs = seconds_since(t0);
  return verdict(worst_gap < 0.05 && worst_marg < 1e-9 && secs < 10.0,
                 "max gap " + fmt("%.4f", worst_gap) + " of range, max marginal error " + fmt("%.2e", worst_marg) +
                     ", " + fmt("%.2f", secs) + " s");
}

Outcome cost_and_cgamma_identities() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> dd(1, 8), nn(1, 10);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const int d = dd(rng), m = nn(rng), n = nn(rng);
    const Matrix x = testutil::gaussian(rng, d, m);
    const Matrix z = testutil::gaussian(rng, d, n);
    const SpdMatrix a = testutil::random_spd(rng, d, 50.0);
    Matrix gamma = testutil::random_uniform(rng, m, n);
    gamma /= gamma.sum();

    Matrix c_naive(m, n);
    Matrix cg_naive = Matrix::Zero(d, d);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        const Vector diff = x.col(i) - z.col(j);
        c_naive(i, j) = diff.dot(a.matrix() * diff);
        cg_naive += gamma(i, j) * diff * diff.transpose();
      }
    }
    worst = std::max(worst, testutil::rel_fro(cost_matrix(x, z, a).matrix(), c_naive));
    worst = std::max(worst, testutil::rel_fro(compute_cgamma_raw(x, z, gamma).matrix(), cg_naive));
    // ⟨C_A, γ⟩ = tr(A C_γ)
    const double lhs = (cost_matrix(x, z, a).matrix().array() * gamma.array()).sum();
    const double rhs = (a.matrix() * cg_naive).trace();
    worst = std::max(worst, std::abs(lhs - rhs) / std::abs(rhs));
  }
  return verdict(worst < 1e-10, "max relative error " + fmt("%.2e", worst));
}

Outcome alternating_descent() {
  std::mt19937_64 rng(505);
  double worst_rise = -std::numeric_limits<double>::infinity();
  int steps = 0;
  bool converged = true;
  for (int k = 0; k < 20; ++k) {
    const Matrix x = testutil::gaussian(rng, 5, 20);
    const Matrix z = testutil::gaussian(rng, 5, 20) + Matrix::Constant(5, 20, 0.5);
    const Histogram u = Histogram::uniform(20);
    GmlConfig cfg;
    cfg.sinkhorn.lambda = 0.1;
    cfg.outer_iters = 10;
    cfg.objective_rtol = 0.0;
    const FitResult r = fit(x, z, u, u, cfg);
    converged = converged && r.sinkhorn_converged;
    const auto& h = r.objective_history;
    for (size_t t = 1; t < h.size(); ++t) {
      worst_rise = std::max(worst_rise, h[t] - h[t - 1]);
      ++steps;
    }
  }
  return verdict(steps > 0 && worst_rise <= 1e-8,
                 std::to_string(steps) + " steps, largest step change " + fmt("%+.2e", worst_rise) +
                     (converged ? "" : ", some Sinkhorn solves hit the iteration cap"));
}

Outcome reduction_and_pipeline() {
  std::mt19937_64 rng(606);
  std::vector<std::string> problems;
  for (int k = 0; k < 5; ++k) {
    const int per = 6;
    Matrix xs = testutil::gaussian(rng, 4, 3 * per);
    Matrix zt = testutil::gaussian(rng, 4, 3 * per);
    Matrix ze = testutil::gaussian(rng, 4, 3 * per);
    std::vector<int> labels;
    for (int j = 0; j < 3 * per; ++j) {
      const int c = j % 3;
      xs(c, j) += 3.0;
      zt(c, j) += 3.5;
      ze(c, j) += 3.5;
      labels.push_back(c);
    }
    const LabeledCloud src(xs, labels), tr(zt, labels), te(ze, labels);
    const Histogram p = Histogram::uniform(src.size());
    const Histogram q = Histogram::uniform(tr.size());
    GmlConfig cfg;
    cfg.sinkhorn.lambda = 0.5;

    // Frozen Proposed against OT_I and a direct Sinkhorn call on squared distances.
    GmlConfig frozen = cfg;
    frozen.update_metric = false;
    const FitResult a = fit(xs, zt, p, q, frozen);
    const FitResult b = fit(xs, zt, p, q, method_config(xs, zt, Method::OT_I, cfg));
    const SinkhornResult direct = solve(euclidean_cost_matrix(xs, zt), p, q, cfg.sinkhorn);
    if (a.plan.matrix() != b.plan.matrix() || a.plan.matrix() != direct.plan.matrix()) {
      problems.push_back("frozen plan differs on instance " + std::to_string(k));
    }

    const std::vector<double> grid{0.05, 0.5, 2.0};
    for (Method m : kAllMethods) {
      const AdaptationReport rep = run_task(src, tr, te, m, grid, cfg, 9);
      AdaptationReport manual;
      manual.method = std::string(method_name(m));
      manual.seed = 9;
      const GmlConfig mc = method_config(xs, zt, m, cfg);
      LabeledCloud best;
      double best_acc = -1.0;
      for (double lam : grid) {
        GmlConfig c = mc;
        c.sinkhorn.lambda = lam;
        const FitResult f = fit(xs, zt, p, q, c);
        LabeledCloud proj(barycentric_map(f.plan, zt, p).points, labels);
        const double acc = accuracy(knn1_predict(proj, zt), labels);
        manual.lambda_scores.emplace_back(lam, acc);
        manual.sinkhorn_converged = manual.sinkhorn_converged && f.sinkhorn_converged;
        if (acc > best_acc) {
          best_acc = acc;
          manual.lambda_chosen = lam;
          best = proj;
        }
      }
      manual.train_accuracy = best_acc;
      manual.test_accuracy = accuracy(knn1_predict(best, ze), labels);
      const bool same = rep.method == manual.method && rep.seed == manual.seed &&
                        rep.lambda_chosen == manual.lambda_chosen && rep.train_accuracy == manual.train_accuracy &&
                        rep.test_accuracy == manual.test_accuracy && rep.lambda_scores == manual.lambda_scores &&
                        rep.sinkhorn_converged == manual.sinkhorn_converged;
      if (!same) problems.push_back(manual.method + " pipeline differs on instance " + std::to_string(k));
    }
  }
  return verdict(problems.empty(), problems.empty() ? "5 instances, 4 methods" : problems.front());
}

std::optional<std::pair<fs::path, fs::path>> find_mnist(const fs::path& dir) {
  const std::pair<const char*, const char*> names[] = {
      {"train-images-idx3-ubyte", "train-labels-idx1-ubyte"},
      {"train-images.idx3-ubyte", "train-labels.idx1-ubyte"},
      {"mnist10k-images-idx3-ubyte", "mnist10k-labels-idx1-ubyte"},
  };
  for (const auto& [i, l] : names) {
    if (fs::exists(dir / i) && fs::exists(dir / l)) return std::pair{dir / i, dir / l};
  }
  return std::nullopt;
}

std::string table_line(const SummaryTable& t, const std::string& key) {
  std::ostringstream os;
  os << key << ":";
  for (const auto& m : t.methods) os << " " << m << "=" << fmt("%.2f", 100.0 * t.at(key, m));
  return os.str();
}

Outcome skew_reproduction(const Options& opt) {
  const auto files = find_mnist(opt.mnist_dir);
  if (!files) return {Status::Skip, "no IDX files under " + opt.mnist_dir.string()};
  const auto t0 = Clock::now();
  RawDataset pool = load_idx(files->first, files->second);
  SkewExperimentConfig cfg;
  cfg.workers = opt.workers;
  if (!opt.full) {
    pool = downsample2x(pool);
    cfg.source_size = cfg.target_size = 200;
  }
  const SummaryTable t = summarize(run_skew_experiment(pool, nullptr, cfg));
  const double secs = seconds_since(t0);
  for (const auto& key : t.keys) std::cout << "    " << table_line(t, key) << "\n";

  const double gap = 100.0 * (t.at("50", "Proposed") - t.at("50", "OT_I"));
  double lo = 1.0, hi = 0.0, min_lead = std::numeric_limits<double>::infinity();
  for (const auto& key : t.keys) {
    lo = std::min(lo, t.at(key, "Proposed"));
    hi = std::max(hi, t.at(key, "Proposed"));
    min_lead = std::min(min_lead, 100.0 * (t.at(key, "OT_I") - t.at(key, "OT_Winv")));
  }
  const double spread = 100.0 * (hi - lo);
  const bool b = spread < 3.0, c = min_lead > 15.0;
  std::string detail = (opt.full ? "full mode, " : "reduced mode, ") + fmt("%.1f", secs) + " s; (a) gap at 50% " +
                       fmt("%+.2f", gap) + " points; (b) Proposed spread " + fmt("%.2f", spread) + " points" +
                       (b ? " ok" : " not met") + "; (c) smallest OT_I lead over OT_Winv " + fmt("%.2f", min_lead) +
                       " points" + (c ? " ok" : " not met");
  if (opt.full) return verdict(gap >= 4.0 && b && c && secs < 1800.0, detail);
  return verdict(gap >= 2.0 && secs < 300.0, detail + " [(b) and (c) are judged in full mode]");
}

Outcome office_table(const Options& opt) {
  const auto domains = load_office_domains(opt.office_dir);
  if (!domains) return {Status::Skip, "no feature exports under " + opt.office_dir.string()};
  OfficeExperimentConfig cfg;
  cfg.workers = opt.workers;
  const SummaryTable t = with_average_row(summarize(run_office_experiment(*domains, cfg)));
  std::cout << t.to_csv();
  const bool layout = t.keys.size() == 13;
  const double lead = 100.0 * (t.at("AVG", "Proposed") - t.at("AVG", "OT_I"));
  return verdict(layout && lead > 0.0, "average Proposed minus OT_I " + fmt("%+.2f", lead) + " points");
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GMLOT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "gmlot_acceptance_c9";
  fs::remove_all(root);
  fs::create_directories(root);
  std::mt19937_64 rng(909);
  auto write_set = [&](const fs::path& p, double shift) {
    Matrix pts = testutil::gaussian(rng, 3, 30);
    std::vector<int> labels;
    for (int j = 0; j < 30; ++j) {
      pts(j % 3, j) += 3.0 + shift;
      labels.push_back(j % 3);
    }
    write_file_atomic(p, format_csv(pts, labels));
  };
  write_set(root / "s.csv", 0.0);
  write_set(root / "t.csv", 0.4);
  Matrix px = testutil::random_uniform(rng, 16, 300, 0.0, 0.3);
  std::vector<int> labels;
  for (int j = 0; j < 300; ++j) {
    px(j % 10, j) = 1.0;
    labels.push_back(j % 10);
  }
  write_file_atomic(root / "img", encode_idx_images(px, 4, 4));
  write_file_atomic(root / "lab", encode_idx_labels(labels));

  const std::string s = (root / "s.csv").string(), t = (root / "t.csv").string();
  const std::vector<std::pair<std::string, std::string>> commands{
      {"fit", "fit --labeled --source " + s + " --target " + t + " --lambda 0.3 --outer-iters 5"},
      {"adapt", "adapt --source " + s + " --target " + t + " --seed 0,1"},
      {"experiment-skew", "experiment-skew --images " + (root / "img").string() + " --labels " +
                              (root / "lab").string() + " --size 20 --classes 0 --seed 0,1 --outer-iters 3"},
  };
  std::vector<std::string> problems;
  int files = 0;
  for (const auto& [name, args] : commands) {
    for (const char* run : {"a", "b"}) {
      if (run_cli(args + " --deterministic --out " + (root / (name + run)).string()) != 0) {
        problems.push_back(name + " exited nonzero");
      }
    }
  }
  if (run_cli("summarize --in " + (root / "experiment-skewa" / "runs.csv").string() + " --out " +
              (root / "summarizea").string()) != 0 ||
      run_cli("summarize --in " + (root / "experiment-skewa" / "runs.csv").string() + " --out " +
              (root / "summarizeb").string()) != 0) {
    problems.push_back("summarize exited nonzero");
  }
  for (const char* name : {"fit", "adapt", "experiment-skew", "summarize"}) {
    const fs::path a = root / (std::string(name) + "a"), b = root / (std::string(name) + "b");
    if (!fs::exists(a)) continue;
    for (const auto& entry : fs::directory_iterator(a)) {
      ++files;
      const fs::path other = b / entry.path().filename();
      if (!fs::exists(other) || detail::read_file(entry.path()) != detail::read_file(other)) {
        problems.push_back(std::string(name) + "/" + entry.path().filename().string() + " differs");
      }
    }
  }
  fs::remove_all(root);
  return verdict(problems.empty() && files >= 8,
                 problems.empty() ? std::to_string(files) + " output files byte-identical" : problems.front());
}

Options parse_args(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto value = [&]() -> std::string {
      if (i + 1 >= argc) throw std::invalid_argument(a + " needs a value");
      return argv[++i];
    };
    if (a == "--mnist-dir") {
      opt.mnist_dir = value();
    } else if (a == "--office-dir") {
      opt.office_dir = value();
    } else if (a == "--full") {
      opt.full = true;
    } else if (a == "--workers") {
      opt.workers = static_cast<unsigned>(std::stoul(value()));
    } else if (a == "--only") {
      std::stringstream ss(value());
      for (std::string tok; std::getline(ss, tok, ',');) opt.only.insert(std::stoi(tok));
    } else {
      throw std::invalid_argument("unknown argument " + a);
    }
  }
  return opt;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  try {
    opt = parse_args(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, riccati_residuals},
      {2, geometric_mean_identities},
      {3, sinkhorn_vs_exact},
      {4, cost_and_cgamma_identities},
      {5, alternating_descent},
      {6, reduction_and_pipeline},
      {7, [&] { return skew_reproduction(opt); }},
      {8, [&] { return office_table(opt); }},
      {9, cli_determinism},
  };
  int failures = 0;
  for (const auto& [id, check] : criteria) {
    if (!opt.only.empty() && !opt.only.count(id)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
    std::cout << tag << " C" << id << ": " << o.detail << std::endl;
    failures += o.status == Status::Fail ? 1 : 0;
  }
  return failures == 0 ? 0 : 1;
}
