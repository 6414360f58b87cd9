#pragma once

// Joint learning of a transport plan γ and an SPD ground metric A:
//
//   min_γ min_{A ≻ 0}  Σᵢⱼ γᵢⱼ ‖xᵢ − zⱼ‖²_A + ⟨A⁻¹, D⟩ + λ Σᵢⱼ γᵢⱼ ln γᵢⱼ
//
// by alternating a closed-form metric step (the Riccati solution
// A·C_γ·A = D, i.e. the geometric mean of C_γ⁻¹ and D) with an entropic
// Sinkhorn step on the Mahalanobis cost C_A.

#include "gmlot/sinkhorn.hpp"
#include "gmlot/spd.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmlot {

/// d×k matrix whose columns are the points.
using PointCloud = Matrix;

/// Scale-relative (default) or absolute εI lift.
struct EpsRule {
  double value = 1e-6;
  bool relative = true;

  /// For the relative rule, value · trace(S)/d, falling back to `value` when
  /// the trace vanishes (all difference vectors zero).
  double resolve(const SymMatrix& s) const {
    if (!relative) return value;
    const double mean_diag = s.matrix().trace() / static_cast<double>(s.dim());
    return mean_diag > 0.0 ? value * mean_diag : value;
  }

  /// Relative rule, kept at least 1e-10 · max(1, gram_scale). C_γ comes from
  /// a difference of Gram terms of size `gram_scale`, so when the plan pairs
  /// nearly identical points its rounding noise can exceed value · trace/d.
  double resolve(const SymMatrix& s, double gram_scale) const {
    const double e = resolve(s);
    return relative ? std::max(e, 1e-10 * std::max(1.0, gram_scale)) : e;
  }

  void validate() const {
    if (!(value > 0.0)) throw std::invalid_argument("EpsRule: eps must be positive");
  }
};

enum class DKind { Identity, GramSum, GramSumInverse, Custom };

struct DChoice {
  DKind kind = DKind::Identity;
  std::optional<SpdMatrix> custom;

  static DChoice identity() { return {}; }
  static DChoice gram_sum() { return {DKind::GramSum, std::nullopt}; }
  static DChoice gram_sum_inverse() { return {DKind::GramSumInverse, std::nullopt}; }
  static DChoice from(SpdMatrix d) { return {DKind::Custom, std::move(d)}; }
};

enum class LambdaScale {
  Absolute,    // λ is used as given
  MedianCost,  // λ is multiplied by the median entry of the first cost matrix
};

struct GmlConfig {
  int outer_iters = 20;
  EpsRule eps;
  DChoice d_choice;
  SinkhornConfig sinkhorn;
  double objective_rtol = 1e-6;
  LambdaScale lambda_scale = LambdaScale::Absolute;
  // With metric updates off, A stays at `initial_metric` (identity when unset)
  // and fit reduces to one Sinkhorn solve on C_A.
  bool update_metric = true;
  std::optional<SpdMatrix> initial_metric;
  // Seed each Sinkhorn solve after the first with the previous potentials.
  bool warm_start = true;

  void validate() const {
    if (outer_iters < 1) throw std::invalid_argument("GmlConfig: outer_iters must be at least 1");
    if (!(objective_rtol >= 0.0)) throw std::invalid_argument("GmlConfig: objective_rtol must be nonnegative");
    eps.validate();
    sinkhorn.validate();
  }
};

struct FitResult {
  TransportPlan plan;
  SpdMatrix metric;
  std::vector<double> objective_history;
  bool converged = false;          // early stop on relative objective change
  int iters_run = 0;               // outer iterations (0 when the metric is frozen)
  bool sinkhorn_converged = true;  // every Sinkhorn solve reached its tolerance
  int sinkhorn_iterations = 0;     // summed over all solves
  double lambda_effective = 0.0;
  double eps_used = 0.0;           // εI lift of the last metric step
};

namespace detail {

inline void require_clouds(const PointCloud& x, const PointCloud& z, const char* what) {
  if (x.rows() == 0 || x.cols() == 0 || z.cols() == 0) {
    throw DimensionError(std::string(what) + ": empty point cloud");
  }
  require_same_dim(x.rows(), z.rows(), what);
}

inline double median(Eigen::Ref<const Eigen::ArrayXd> values) {
  std::vector<double> v(values.data(), values.data() + values.size());
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace detail

/// C_γ = Σᵢⱼ γᵢⱼ (xᵢ − zⱼ)(xᵢ − zⱼ)ᵀ through the expansion
/// X·diag(γ1)·Xᵀ + Z·diag(γᵀ1)·Zᵀ − X·γ·Zᵀ − Z·γᵀ·Xᵀ.
inline SymMatrix compute_cgamma_raw(const PointCloud& x, const PointCloud& z, const Matrix& gamma) {
  detail::require_clouds(x, z, "compute_cgamma");
  detail::require_same_dim(gamma.rows(), x.cols(), "compute_cgamma rows");
  detail::require_same_dim(gamma.cols(), z.cols(), "compute_cgamma cols");
  const Index d = x.rows();
  const Vector row_mass = gamma.rowwise().sum();
  const Vector col_mass = gamma.colwise().sum().transpose();
  Matrix c = Matrix::Zero(d, d);
  c.selfadjointView<Eigen::Lower>().rankUpdate(x * row_mass.cwiseMax(0.0).cwiseSqrt().asDiagonal());
  c.selfadjointView<Eigen::Lower>().rankUpdate(z * col_mass.cwiseMax(0.0).cwiseSqrt().asDiagonal());
  const Matrix cross = (x * gamma) * z.transpose();
  c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
  c -= cross + cross.transpose();
  return SymMatrix(c);
}

/// Mean diagonal of X·diag(γ1)·Xᵀ + Z·diag(γᵀ1)·Zᵀ.
inline double cgamma_gram_scale(const PointCloud& x, const PointCloud& z, const Matrix& gamma) {
  const double rows = x.colwise().squaredNorm().transpose().dot(gamma.rowwise().sum());
  const double cols = z.colwise().squaredNorm().dot(gamma.colwise().sum());
  return (rows + cols) / static_cast<double>(x.rows());
}

inline SpdMatrix compute_cgamma(const PointCloud& x, const PointCloud& z, const TransportPlan& plan, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("compute_cgamma: eps must be positive");
  Matrix c = compute_cgamma_raw(x, z, plan.matrix()).matrix();
  c.diagonal().array() += eps;
  return SpdMatrix::assume_spd(SymMatrix(c));
}

/// Minimizer of ⟨A, C_γ⟩ + ⟨A⁻¹, D⟩ over SPD A, the solution of A·C_γ·A = D.
inline SpdMatrix update_metric(const SpdMatrix& cgamma, const SpdMatrix& d) { return riccati_solve(cgamma, d); }

/// C_A(i,j) = (xᵢ − zⱼ)ᵀ A (xᵢ − zⱼ), computed as
/// diag(XᵀAX)·1ᵀ + 1·diag(ZᵀAZ)ᵀ − 2·XᵀAZ with negative round-off clamped.
inline CostMatrix cost_matrix(const PointCloud& x, const PointCloud& z, const SpdMatrix& a) {
  detail::require_clouds(x, z, "cost_matrix");
  detail::require_same_dim(a.dim(), x.rows(), "cost_matrix metric");
  const Matrix ax = a.matrix() * x;
  const Vector x_norms = (x.array() * ax.array()).colwise().sum().transpose();
  const Vector z_norms = (z.array() * (a.matrix() * z).array()).colwise().sum().transpose();
  Matrix c = -2.0 * (ax.transpose() * z);
  c.colwise() += x_norms;
  c.rowwise() += z_norms.transpose();
  return CostMatrix(c.cwiseMax(0.0));
}

/// Squared Euclidean costs (A = I) without forming the identity.
inline CostMatrix euclidean_cost_matrix(const PointCloud& x, const PointCloud& z) {
  detail::require_clouds(x, z, "euclidean_cost_matrix");
  Matrix c = -2.0 * (x.transpose() * z);
  c.colwise() += x.colwise().squaredNorm().transpose();
  c.rowwise() += z.colwise().squaredNorm();
  return CostMatrix(c.cwiseMax(0.0));
}

/// ⟨γ, C⟩ + trace(A⁻¹D) + λ·Σγ ln γ for an already computed cost matrix.
inline double objective_from_cost(const TransportPlan& plan, const CostMatrix& cost, const SpdMatrix& a,
                                  const SpdMatrix& d, double lambda) {
  detail::require_same_dim(a.dim(), d.dim(), "objective");
  const double phi = a.matrix().llt().solve(d.matrix()).trace();
  return transport_cost(plan, cost) + phi + lambda * entropy(plan);
}

/// The joint objective Σγᵢⱼ‖xᵢ − zⱼ‖²_A + ⟨A⁻¹, D⟩ + λΩ(γ).
inline double objective(const PointCloud& x, const PointCloud& z, const TransportPlan& plan, const SpdMatrix& a,
                        const SpdMatrix& d, double lambda) {
  return objective_from_cost(plan, cost_matrix(x, z, a), a, d, lambda);
}

/// XXᵀ + ZZᵀ lifted by εI.
inline SpdMatrix floored_gram_sum(const PointCloud& x, const PointCloud& z, const EpsRule& eps) {
  detail::require_clouds(x, z, "gram_sum");
  Matrix g = Matrix::Zero(x.rows(), x.rows());
  g.selfadjointView<Eigen::Lower>().rankUpdate(x);
  g.selfadjointView<Eigen::Lower>().rankUpdate(z);
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  const SymMatrix gram(g);
  return eigen_floor(gram, eps.resolve(gram));
}

inline SpdMatrix make_d(const DChoice& choice, const PointCloud& x, const PointCloud& z, const EpsRule& eps = {}) {
  detail::require_clouds(x, z, "make_d");
  switch (choice.kind) {
    case DKind::Identity:
      return SpdMatrix::identity(x.rows());
    case DKind::GramSum:
      return floored_gram_sum(x, z, eps);
    case DKind::GramSumInverse:
      return spd_inverse(floored_gram_sum(x, z, eps));
    case DKind::Custom:
      if (!choice.custom) throw std::invalid_argument("make_d: custom D requested but not provided");
      detail::require_same_dim(choice.custom->dim(), x.rows(), "make_d custom");
      return SpdMatrix(choice.custom->sym());
  }
  throw std::invalid_argument("make_d: unknown choice");
}

enum class BaselineKind { I, W, Winv };

/// Fixed metrics: identity, W = [X,Z][X,Z]ᵀ (floored) and W⁻¹.
inline SpdMatrix baseline_metric(BaselineKind kind, const PointCloud& x, const PointCloud& z,
                                 const EpsRule& eps = {}) {
  detail::require_clouds(x, z, "baseline_metric");
  switch (kind) {
    case BaselineKind::I:
      return SpdMatrix::identity(x.rows());
    case BaselineKind::W:
      return floored_gram_sum(x, z, eps);
    case BaselineKind::Winv:
      return spd_inverse(floored_gram_sum(x, z, eps));
  }
  throw std::invalid_argument("baseline_metric: unknown kind");
}

namespace detail {

inline CostMatrix cost_for(const PointCloud& x, const PointCloud& z, const SpdMatrix& a) {
  return a.matrix().isIdentity(0.0) ? euclidean_cost_matrix(x, z) : cost_matrix(x, z, a);
}

inline double effective_lambda(const GmlConfig& cfg, const CostMatrix& first_cost) {
  if (cfg.lambda_scale == LambdaScale::Absolute) return cfg.sinkhorn.lambda;
  const double med = median(first_cost.matrix().reshaped().array());
  return med > 0.0 ? cfg.sinkhorn.lambda * med : cfg.sinkhorn.lambda;
}

}  // namespace detail

/// Alternating minimization starting from γ⁰ = p·qᵀ:
/// Aᵗ = update_metric(C_{γᵗ⁻¹} + εI, D), γᵗ = Sinkhorn(C_{Aᵗ}, p, q).
/// The objective is recorded after each γ-step.
inline FitResult fit(const PointCloud& x, const PointCloud& z, const Histogram& p, const Histogram& q,
                     const GmlConfig& cfg) {
  cfg.validate();
  detail::require_clouds(x, z, "fit");
  detail::require_same_dim(p.size(), x.cols(), "fit source histogram");
  detail::require_same_dim(q.size(), z.cols(), "fit target histogram");

  const SpdMatrix d = make_d(cfg.d_choice, x, z, cfg.eps);
  SinkhornConfig sink = cfg.sinkhorn;
  FitResult result;

  if (!cfg.update_metric) {
    SpdMatrix a = cfg.initial_metric ? *cfg.initial_metric : SpdMatrix::identity(x.rows());
    detail::require_same_dim(a.dim(), x.rows(), "fit initial metric");
    const CostMatrix cost = detail::cost_for(x, z, a);
    sink.lambda = detail::effective_lambda(cfg, cost);
    SinkhornResult s = solve(cost, p, q, sink);
    result.objective_history.push_back(objective_from_cost(s.plan, cost, a, d, sink.lambda));
    result.sinkhorn_converged = s.converged;
    result.sinkhorn_iterations = s.iterations;
    result.plan = std::move(s.plan);
    result.metric = std::move(a);
    result.lambda_effective = sink.lambda;
    result.converged = true;
    return result;
  }

  TransportPlan gamma = TransportPlan::product(p, q);
  std::optional<DualPotentials> potentials;
  for (int t = 1; t <= cfg.outer_iters; ++t) {
    const SymMatrix raw = compute_cgamma_raw(x, z, gamma.matrix());
    const double eps = cfg.eps.resolve(raw, cgamma_gram_scale(x, z, gamma.matrix()));
    SpdMatrix a = update_metric(compute_cgamma(x, z, gamma, eps), d);
    const CostMatrix cost = cost_matrix(x, z, a);
    if (t == 1) sink.lambda = detail::effective_lambda(cfg, cost);
    const DualPotentials* warm = (cfg.warm_start && potentials) ? &*potentials : nullptr;
    SinkhornResult s = solve(cost, p, q, sink, warm);
    const double obj = objective_from_cost(s.plan, cost, a, d, sink.lambda);

    result.sinkhorn_converged = result.sinkhorn_converged && s.converged;
    result.sinkhorn_iterations += s.iterations;
    result.eps_used = eps;
    result.iters_run = t;
    potentials = std::move(s.potentials);
    gamma = std::move(s.plan);
    result.metric = std::move(a);

    const bool has_prev = !result.objective_history.empty();
    const double prev = has_prev ? result.objective_history.back() : 0.0;
    result.objective_history.push_back(obj);
    if (has_prev) {
      const double scale = std::max(std::abs(prev), std::numeric_limits<double>::min());
      if ((prev - obj) / scale < cfg.objective_rtol) {
        result.converged = true;
        break;
      }
    }
  }
  result.plan = std::move(gamma);
  result.lambda_effective = sink.lambda;
  return result;
}

}  // namespace gmlot
