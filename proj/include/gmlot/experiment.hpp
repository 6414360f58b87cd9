#pragma once

// Experiment drivers: the label-skew protocol on digit data, the
// four-domain office protocol on precomputed features, and report
// aggregation. Rows are produced in a fixed (task, seed, method) order.

#include "gmlot/adapt.hpp"
#include "gmlot/data.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace gmlot {

/// One adaptation run.
struct ExperimentRow {
  std::string task;
  std::optional<double> skew;
  std::optional<int> skew_class;
  std::string method;
  std::uint64_t seed = 0;
  double lambda_chosen = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

inline const char* kRowHeader = "task,skew,class,method,seed,lambda_chosen,train_acc,test_acc";

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

/// Runs job(0..n-1) on up to `workers` threads (0 = hardware concurrency).
/// Jobs write only to their own slot, so results do not depend on scheduling.
/// The exception from the lowest failing job index is rethrown.
inline void parallel_jobs(size_t n, unsigned workers, const std::function<void(size_t)>& job) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<size_t>(workers, n));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Fit settings used by the experiment drivers: costs scaled by their median
/// entry, the stabilized solver, and looser stopping rules than the library
/// defaults (marginal tol 1e-6, 2000 Sinkhorn iterations, outer rtol 1e-4).
inline GmlConfig experiment_gml_config() {
  GmlConfig c;
  c.lambda_scale = LambdaScale::MedianCost;
  c.sinkhorn.method = SinkhornMethod::Stabilized;
  c.sinkhorn.tol = 1e-6;
  c.sinkhorn.max_iter = 2000;
  c.objective_rtol = 1e-4;
  return c;
}

inline std::string format_rows(const std::vector<ExperimentRow>& rows) {
  std::string out = std::string(kRowHeader) + "\n";
  for (const auto& r : rows) {
    out += r.task + ",";
    out += (r.skew ? detail::fmt_double(*r.skew) : std::string()) + ",";
    out += (r.skew_class ? std::to_string(*r.skew_class) : std::string()) + ",";
    out += r.method + "," + std::to_string(r.seed) + ",";
    out += detail::fmt_double(r.lambda_chosen) + "," + detail::fmt_double(r.train_acc) + "," +
           detail::fmt_double(r.test_acc) + "\n";
  }
  return out;
}

inline std::vector<ExperimentRow> parse_rows(const std::string& text) {
  std::vector<ExperimentRow> rows;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != kRowHeader) throw DataError("report CSV: unexpected header '" + line + "'");
      continue;
    }
    const auto f = detail::split_commas(line);
    if (f.size() != 8) throw DataError("report CSV: expected 8 fields in '" + line + "'");
    ExperimentRow r;
    r.task = std::string(f[0]);
    if (!f[1].empty()) r.skew = detail::parse_double(f[1]);
    if (!f[2].empty()) r.skew_class = static_cast<int>(detail::parse_double(f[2]).value_or(-1));
    r.method = std::string(f[3]);
    const auto seed = detail::parse_double(f[4]);
    const auto lam = detail::parse_double(f[5]);
    const auto tr = detail::parse_double(f[6]);
    const auto te = detail::parse_double(f[7]);
    if (!seed || !lam || !tr || !te) throw DataError("report CSV: bad numeric field in '" + line + "'");
    r.seed = static_cast<std::uint64_t>(*seed);
    r.lambda_chosen = *lam;
    r.train_acc = *tr;
    r.test_acc = *te;
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Mean test accuracy per (group key, method), methods in canonical order.
struct SummaryTable {
  std::string key_name;
  std::vector<std::string> keys;     // row order: first appearance
  std::vector<std::string> methods;  // canonical order, only those present
  std::vector<std::vector<double>> mean;  // [key][method], NaN when absent

  double at(const std::string& key, const std::string& method) const {
    for (size_t k = 0; k < keys.size(); ++k) {
      if (keys[k] != key) continue;
      for (size_t m = 0; m < methods.size(); ++m) {
        if (methods[m] == method) return mean[k][m];
      }
    }
    return std::numeric_limits<double>::quiet_NaN();
  }

  std::string to_csv() const {
    std::string out = key_name;
    for (const auto& m : methods) out += "," + m;
    out += "\n";
    for (size_t k = 0; k < keys.size(); ++k) {
      out += keys[k];
      for (double v : mean[k]) out += "," + (std::isnan(v) ? std::string() : detail::fmt_double(v));
      out += "\n";
    }
    return out;
  }
};

/// Groups by skew when every row carries one, otherwise by task.
inline SummaryTable summarize(const std::vector<ExperimentRow>& rows) {
  const bool by_skew = !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.skew; });
  SummaryTable t;
  t.key_name = by_skew ? "skew" : "task";
  for (Method m : kAllMethods) {
    const std::string name(method_name(m));
    if (std::any_of(rows.begin(), rows.end(), [&](const auto& r) { return r.method == name; })) t.methods.push_back(name);
  }
  for (const auto& r : rows) {
    if (std::find(t.methods.begin(), t.methods.end(), r.method) == t.methods.end()) t.methods.push_back(r.method);
  }
  std::map<std::pair<std::string, std::string>, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    const std::string key = by_skew ? detail::fmt_double(*r.skew) : r.task;
    if (std::find(t.keys.begin(), t.keys.end(), key) == t.keys.end()) t.keys.push_back(key);
    auto& cell = acc[{key, r.method}];
    cell.first += r.test_acc;
    cell.second += 1;
  }
  for (const auto& key : t.keys) {
    std::vector<double> row;
    for (const auto& m : t.methods) {
      const auto it = acc.find({key, m});
      row.push_back(it == acc.end() ? std::numeric_limits<double>::quiet_NaN()
                                    : it->second.first / it->second.second);
    }
    t.mean.push_back(std::move(row));
  }
  return t;
}

/// Appends an "AVG" row holding the mean over the existing rows.
inline SummaryTable with_average_row(SummaryTable t) {
  if (t.keys.empty()) return t;
  std::vector<double> avg(t.methods.size(), 0.0);
  for (size_t m = 0; m < t.methods.size(); ++m) {
    for (const auto& row : t.mean) avg[m] += row[m];
    avg[m] /= static_cast<double>(t.mean.size());
  }
  t.keys.push_back("AVG");
  t.mean.push_back(std::move(avg));
  return t;
}

using ProgressFn = std::function<void(const ExperimentRow&)>;

struct SkewExperimentConfig {
  std::vector<double> skews{10, 20, 30, 40, 50};
  std::vector<int> classes{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int source_size = 500;
  int target_size = 500;
  std::vector<Method> methods{Method::OT_I, Method::OT_W, Method::OT_Winv, Method::Proposed};
  std::vector<double> lambdas{0.005, 0.01, 0.05, 0.1, 0.5, 1.0};
  GmlConfig gml = experiment_gml_config();
  unsigned workers = 1;  // 0 = one per hardware thread
};

struct SkewSets {
  Sample source;
  Sample target_train;
  Sample target_test;
};

/// Source set with uniform labels and two disjoint skewed target sets. When
/// both pools are the same dataset all three sets are mutually disjoint.
inline SkewSets draw_skew_sets(const RawDataset& source_pool, const RawDataset* target_pool, double skew, int cls,
                               int m, int n, std::uint64_t seed) {
  const int classes = source_pool.class_count;
  const SkewSpec spec{cls, skew, n};
  const auto src_counts = uniform_counts(m, classes);
  const auto tgt_counts = skewed_counts(spec, classes);
  if (target_pool == nullptr || target_pool == &source_pool) {
    auto s = draw_disjoint(source_pool, {src_counts, tgt_counts, tgt_counts}, seed);
    return {std::move(s[0]), std::move(s[1]), std::move(s[2])};
  }
  Sample src = std::move(draw_disjoint(source_pool, {src_counts}, seed).front());
  auto [zt, ze] = disjoint_split(*target_pool, spec, spec, detail::splitmix64(seed));
  return {std::move(src), std::move(zt), std::move(ze)};
}

inline std::vector<ExperimentRow> run_skew_experiment(const RawDataset& source_pool, const RawDataset* target_pool,
                                                      const SkewExperimentConfig& cfg, const ProgressFn& progress = {}) {
  struct Job {
    double skew;
    int cls;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double skew : cfg.skews) {
    for (int cls : cfg.classes) {
      for (std::uint64_t seed : cfg.seeds) jobs.push_back({skew, cls, seed});
    }
  }
  std::vector<std::vector<ExperimentRow>> out(jobs.size());
  std::mutex progress_mu;
  detail::parallel_jobs(jobs.size(), cfg.workers, [&](size_t k) {
    const Job& job = jobs[k];
    const std::uint64_t sample_seed = detail::mix_seed(
        job.seed, static_cast<std::uint64_t>(std::llround(job.skew * 1000)), static_cast<std::uint64_t>(job.cls));
    const SkewSets sets =
        draw_skew_sets(source_pool, target_pool, job.skew, job.cls, cfg.source_size, cfg.target_size, sample_seed);
    std::ostringstream task;
    task << "skew" << job.skew << "_c" << job.cls;
    for (Method method : cfg.methods) {
      const AdaptationReport rep = run_task(sets.source.cloud, sets.target_train.cloud, sets.target_test.cloud, method,
                                            cfg.lambdas, cfg.gml, job.seed);
      ExperimentRow row{task.str(), job.skew, job.cls, rep.method, job.seed, rep.lambda_chosen, rep.train_accuracy,
                        rep.test_accuracy};
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mu);
        progress(row);
      }
      out[k].push_back(std::move(row));
    }
  });
  std::vector<ExperimentRow> rows;
  for (auto& part : out) {
    for (auto& r : part) rows.push_back(std::move(r));
  }
  return rows;
}

// Office domains: amazon (A), caltech (C), dslr (D), webcam (W).
struct OfficeDomain {
  char code;
  const char* name;
};
inline constexpr std::array<OfficeDomain, 4> kOfficeDomains{
    {{'A', "amazon"}, {'C', "caltech"}, {'D', "dslr"}, {'W', "webcam"}}};

/// Finds `<name>.csv` (labeled) or `<name>.f64` (RawF64) for every domain;
/// returns nothing when any domain is missing.
inline std::optional<std::array<RawDataset, 4>> load_office_domains(const std::filesystem::path& dir) {
  std::array<RawDataset, 4> out;
  for (size_t k = 0; k < kOfficeDomains.size(); ++k) {
    const auto csv = dir / (std::string(kOfficeDomains[k].name) + ".csv");
    const auto f64 = dir / (std::string(kOfficeDomains[k].name) + ".f64");
    if (std::filesystem::exists(csv)) {
      out[k] = load_matrix(csv, FileFormat::CSV, true);
    } else if (std::filesystem::exists(f64)) {
      out[k] = load_matrix(f64, FileFormat::RawF64);
    } else {
      return std::nullopt;
    }
    if (!out[k].labeled()) throw DataError(std::string(kOfficeDomains[k].name) + ": features must be labeled");
  }
  int classes = 0;
  for (const auto& d : out) classes = std::max(classes, d.class_count);
  for (auto& d : out) d.class_count = classes;
  return out;
}

struct OfficeExperimentConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int per_class = 10;
  int per_class_small = 8;  // for the dslr source
  std::vector<Method> methods{Method::OT_I, Method::OT_W, Method::OT_Winv, Method::Proposed};
  std::vector<double> lambdas{0.005, 0.01, 0.05, 0.1, 0.5, 1.0};
  GmlConfig gml = experiment_gml_config();
  unsigned workers = 1;
};

/// The twelve ordered source→target tasks. The source set takes a fixed
/// number of images per class; the target is split per class into equal
/// train/test halves.
inline std::vector<ExperimentRow> run_office_experiment(const std::array<RawDataset, 4>& domains,
                                                        const OfficeExperimentConfig& cfg,
                                                        const ProgressFn& progress = {}) {
  struct Job {
    size_t s, t;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (size_t s = 0; s < domains.size(); ++s) {
    for (size_t t = 0; t < domains.size(); ++t) {
      if (s == t) continue;
      for (std::uint64_t seed : cfg.seeds) jobs.push_back({s, t, seed});
    }
  }
  std::vector<std::vector<ExperimentRow>> out(jobs.size());
  std::mutex progress_mu;
  detail::parallel_jobs(jobs.size(), cfg.workers, [&](size_t k) {
    const auto [s, t, seed] = jobs[k];
    const std::string task = std::string(1, kOfficeDomains[s].code) + "->" + kOfficeDomains[t].code;
    const int classes = domains[s].class_count;
    const std::uint64_t sample_seed = detail::mix_seed(seed, s, t);
    const int per = kOfficeDomains[s].code == 'D' ? cfg.per_class_small : cfg.per_class;
    std::vector<int> src_counts(static_cast<size_t>(classes));
    const auto src_hist = class_histogram(domains[s].labels, classes);
    for (int c = 0; c < classes; ++c) src_counts[static_cast<size_t>(c)] = std::min(per, src_hist[static_cast<size_t>(c)]);
    Sample src = std::move(draw_disjoint(domains[s], {src_counts}, sample_seed).front());

    const auto tgt_hist = class_histogram(domains[t].labels, classes);
    std::vector<int> train_counts(static_cast<size_t>(classes)), test_counts(static_cast<size_t>(classes));
    for (int c = 0; c < classes; ++c) {
      train_counts[static_cast<size_t>(c)] = tgt_hist[static_cast<size_t>(c)] / 2;
      test_counts[static_cast<size_t>(c)] = tgt_hist[static_cast<size_t>(c)] - tgt_hist[static_cast<size_t>(c)] / 2;
    }
    auto split = draw_disjoint(domains[t], {train_counts, test_counts}, detail::splitmix64(sample_seed));
    for (Method method : cfg.methods) {
      const AdaptationReport rep = run_task(src.cloud, split[0].cloud, split[1].cloud, method, cfg.lambdas, cfg.gml, seed);
      ExperimentRow row{task, std::nullopt, std::nullopt, rep.method, seed, rep.lambda_chosen, rep.train_accuracy,
                        rep.test_accuracy};
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mu);
        progress(row);
      }
      out[k].push_back(std::move(row));
    }
  });
  std::vector<ExperimentRow> rows;
  for (auto& part : out) {
    for (auto& r : part) rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace gmlot
