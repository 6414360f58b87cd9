#pragma once

// Domain adaptation by barycentric projection: labeled source points are
// moved into the target domain through a transport plan, then target points
// are classified by 1-NN against the projected sources.

#include "gmlot/gml.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gmlot {

struct LabeledCloud {
  PointCloud points;
  std::vector<int> labels;

  LabeledCloud() = default;
  LabeledCloud(PointCloud pts, std::vector<int> lbl) : points(std::move(pts)), labels(std::move(lbl)) {
    validate();
  }

  Index size() const { return points.cols(); }
  Index dim() const { return points.rows(); }

  void validate() const {
    if (static_cast<Index>(labels.size()) != points.cols()) {
      throw DimensionError("LabeledCloud: " + std::to_string(labels.size()) + " labels for " +
                           std::to_string(points.cols()) + " points");
    }
    if (std::any_of(labels.begin(), labels.end(), [](int l) { return l < 0; })) {
      throw std::invalid_argument("LabeledCloud: labels must be nonnegative");
    }
  }
};

enum class Method { OT_I, OT_W, OT_Winv, Proposed };

inline constexpr Method kAllMethods[] = {Method::OT_I, Method::OT_W, Method::OT_Winv, Method::Proposed};

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::OT_I:
      return "OT_I";
    case Method::OT_W:
      return "OT_W";
    case Method::OT_Winv:
      return "OT_Winv";
    case Method::Proposed:
      return "Proposed";
  }
  return "unknown";
}

inline Method parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) + "' (expected OT_I, OT_W, OT_Winv, Proposed)");
}

struct AdaptationReport {
  std::string method;
  double lambda_chosen = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t seed = 0;
  // Train accuracy for every λ tried, in grid order.
  std::vector<std::pair<double, double>> lambda_scores;
  bool sinkhorn_converged = true;
};

struct BarycentricMap {
  PointCloud points;
  std::vector<Index> zero_mass_rows;  // mapped to the q-weighted target mean
};

/// x̂ᵢ = Σⱼ zⱼ γᵢⱼ / pᵢ
inline BarycentricMap barycentric_map(const TransportPlan& plan, const PointCloud& z, const Histogram& p) {
  detail::require_same_dim(plan.rows(), p.size(), "barycentric_map rows");
  detail::require_same_dim(plan.cols(), z.cols(), "barycentric_map cols");
  BarycentricMap out;
  out.points = z * plan.matrix().transpose();
  Vector target_mean;
  for (Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) {
      out.points.col(i) /= p(i);
      continue;
    }
    if (target_mean.size() == 0) target_mean = z * plan.col_marginal().weights();
    out.points.col(i) = target_mean;
    out.zero_mass_rows.push_back(i);
  }
  return out;
}

/// Label of the Euclidean-nearest training column; ties go to the lowest index.
inline std::vector<int> knn1_predict(const LabeledCloud& train, const PointCloud& queries) {
  if (train.size() == 0) throw std::invalid_argument("knn1_predict: empty training set");
  detail::require_same_dim(train.dim(), queries.rows(), "knn1_predict");
  const PointCloud& t = train.points;
  // Screen with the expanded form, then settle near-ties with exact distances.
  const Vector t_norms = t.colwise().squaredNorm().transpose();
  const Matrix cross = t.transpose() * queries;
  std::vector<int> out(static_cast<size_t>(queries.cols()));
  for (Index qi = 0; qi < queries.cols(); ++qi) {
    const Vector approx = t_norms - 2.0 * cross.col(qi);
    const double best_approx = approx.minCoeff();
    const double slack = 1e-9 * (t_norms.maxCoeff() + queries.col(qi).squaredNorm()) + 1e-300;
    Index best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < t.cols(); ++j) {
      if (approx(j) > best_approx + slack) continue;
      const double dist = (t.col(j) - queries.col(qi)).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = j;
      }
    }
    out[static_cast<size_t>(qi)] = train.labels[static_cast<size_t>(best)];
  }
  return out;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw DimensionError("accuracy: length mismatch");
  if (pred.empty()) throw std::invalid_argument("accuracy: empty input");
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// Config for `method`: baselines freeze A at their fixed metric, which does
/// not depend on λ.
inline GmlConfig method_config(const PointCloud& source, const PointCloud& target, Method method,
                               const GmlConfig& cfg) {
  GmlConfig c = cfg;
  if (method == Method::Proposed) return c;
  const BaselineKind kind = method == Method::OT_I ? BaselineKind::I
                            : method == Method::OT_W ? BaselineKind::W
                                                     : BaselineKind::Winv;
  c.update_metric = false;
  c.initial_metric = baseline_metric(kind, source, target, cfg.eps);
  return c;
}

/// One adaptation run: λ is picked by 1-NN accuracy on the target train set
/// (ties go to the smaller λ) and the report carries the target test accuracy
/// for that λ.
inline AdaptationReport run_task(const LabeledCloud& source, const LabeledCloud& target_train,
                                 const LabeledCloud& target_test, Method method, std::vector<double> lambdas,
                                 const GmlConfig& cfg, std::uint64_t seed = 0) {
  source.validate();
  target_train.validate();
  target_test.validate();
  detail::require_same_dim(source.dim(), target_train.dim(), "run_task target_train");
  detail::require_same_dim(source.dim(), target_test.dim(), "run_task target_test");
  if (lambdas.empty()) throw std::invalid_argument("run_task: empty lambda grid");
  std::sort(lambdas.begin(), lambdas.end());
  lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());

  const GmlConfig base = method_config(source.points, target_train.points, method, cfg);
  const Histogram p = Histogram::uniform(source.size());
  const Histogram q = Histogram::uniform(target_train.size());

  AdaptationReport report;
  report.method = std::string(method_name(method));
  report.seed = seed;
  LabeledCloud best_projection;
  double best_acc = -1.0;
  for (double lambda : lambdas) {
    GmlConfig c = base;
    c.sinkhorn.lambda = lambda;
    const FitResult fitted = fit(source.points, target_train.points, p, q, c);
    report.sinkhorn_converged = report.sinkhorn_converged && fitted.sinkhorn_converged;
    LabeledCloud projected(barycentric_map(fitted.plan, target_train.points, p).points, source.labels);
    const double acc = accuracy(knn1_predict(projected, target_train.points), target_train.labels);
    report.lambda_scores.emplace_back(lambda, acc);
    if (acc > best_acc) {
      best_acc = acc;
      report.lambda_chosen = lambda;
      best_projection = std::move(projected);
    }
  }
  report.train_accuracy = best_acc;
  report.test_accuracy = accuracy(knn1_predict(best_projection, target_test.points), target_test.labels);
  return report;
}

}  // namespace gmlot
