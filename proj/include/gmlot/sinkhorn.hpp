#pragma once

// Entropic optimal transport between two discrete histograms:
//
//   min_{γ ∈ Γ(p,q)} ⟨γ, C⟩ + λ Σ γᵢⱼ ln γᵢⱼ,   Γ(p,q) = {γ ≥ 0, γ1 = p, γᵀ1 = q}
//
// solved by Sinkhorn iterations on the dual potentials (f, g), with
// γᵢⱼ = exp((fᵢ + gⱼ − Cᵢⱼ)/λ).

#include "gmlot/spd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

namespace gmlot {

/// Probability vector on the simplex.
class Histogram {
 public:
  Histogram() = default;

  explicit Histogram(Vector weights) : w_(std::move(weights)) {
    if (w_.size() == 0) {
      throw std::invalid_argument("Histogram: empty weight vector");
    }
    if (!w_.allFinite() || (w_.array() < 0.0).any()) {
      throw std::invalid_argument("Histogram: weights must be finite and nonnegative");
    }
    const double total = w_.sum();
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("Histogram: weights must sum to 1 (got " + std::to_string(total) + ")");
    }
  }

  static Histogram uniform(Index n) {
    if (n <= 0) {
      throw std::invalid_argument("Histogram::uniform: size must be positive");
    }
    return Histogram(Vector::Constant(n, 1.0 / static_cast<double>(n)));
  }

  Index size() const { return w_.size(); }
  const Vector& weights() const { return w_; }
  double operator()(Index i) const { return w_(i); }

 private:
  Vector w_;
};

/// Nonnegative m×n ground-cost matrix.
class CostMatrix {
 public:
  CostMatrix() = default;

  explicit CostMatrix(Matrix c) : c_(std::move(c)) {
    if (c_.size() == 0) {
      throw DimensionError("CostMatrix: empty matrix");
    }
    if (!c_.allFinite() || (c_.array() < 0.0).any()) {
      throw std::invalid_argument("CostMatrix: entries must be finite and nonnegative");
    }
  }

  Index rows() const { return c_.rows(); }
  Index cols() const { return c_.cols(); }
  const Matrix& matrix() const { return c_; }

 private:
  Matrix c_;
};

/// Nonnegative coupling together with the marginals it was solved for.
class TransportPlan {
 public:
  TransportPlan() = default;

  TransportPlan(Matrix gamma, Histogram p, Histogram q)
      : gamma_(std::move(gamma)), p_(std::move(p)), q_(std::move(q)) {
    if (gamma_.rows() != p_.size() || gamma_.cols() != q_.size()) {
      throw DimensionError("TransportPlan: plan is " + detail::shape(gamma_) + " but marginals have sizes " +
                           std::to_string(p_.size()) + " and " + std::to_string(q_.size()));
    }
    if (!gamma_.allFinite() || (gamma_.array() < 0.0).any()) {
      throw std::invalid_argument("TransportPlan: entries must be finite and nonnegative");
    }
  }

  /// The independent coupling p·qᵀ.
  static TransportPlan product(const Histogram& p, const Histogram& q) {
    return TransportPlan(p.weights() * q.weights().transpose(), p, q);
  }

  Index rows() const { return gamma_.rows(); }
  Index cols() const { return gamma_.cols(); }
  const Matrix& matrix() const { return gamma_; }
  const Histogram& row_marginal() const { return p_; }
  const Histogram& col_marginal() const { return q_; }

 private:
  Matrix gamma_;
  Histogram p_;
  Histogram q_;
};

enum class SinkhornMethod {
  LogDomain,   // log-sum-exp updates of the dual potentials
  Stabilized,  // kernel scaling with periodic absorption into the potentials
  Scaling,     // textbook u/v scaling with K = exp(−C/λ); underflows for small λ
};

struct SinkhornConfig {
  double lambda = 1.0;
  int max_iter = 10000;
  double tol = 1e-9;
  SinkhornMethod method = SinkhornMethod::LogDomain;
  // Problems with at most this many support points (rows + columns) that the
  // iterations leave short of `tol` get Newton steps on the dual. Sinkhorn
  // slows to a crawl when the plan is nearly a permutation (λ far below the
  // cost spread); Newton converges quadratically there. 0 disables.
  int newton_max_size = 1000;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
      throw std::invalid_argument("SinkhornConfig: lambda must be positive");
    }
    if (!(tol > 0.0)) {
      throw std::invalid_argument("SinkhornConfig: tol must be positive");
    }
    if (max_iter < 1) {
      throw std::invalid_argument("SinkhornConfig: max_iter must be at least 1");
    }
    if (newton_max_size < 0) {
      throw std::invalid_argument("SinkhornConfig: newton_max_size must be nonnegative");
    }
  }
};

/// Dual potentials; entries for zero-weight rows/columns are unused.
struct DualPotentials {
  Vector f;
  Vector g;
};

struct SinkhornResult {
  TransportPlan plan;
  DualPotentials potentials;
  int iterations = 0;
  double row_error = 0.0;  // ‖γ1 − p‖₁
  double col_error = 0.0;  // ‖γᵀ1 − q‖₁
  bool converged = false;  // false flags non-convergence at max_iter

  double marginal_error() const { return std::max(row_error, col_error); }
};

/// (‖γ1 − p‖₁, ‖γᵀ1 − q‖₁)
inline std::pair<double, double> marginal_error(const Matrix& gamma, const Histogram& p, const Histogram& q) {
  detail::require_same_dim(gamma.rows(), p.size(), "marginal_error rows");
  detail::require_same_dim(gamma.cols(), q.size(), "marginal_error cols");
  const double row = (gamma.rowwise().sum() - p.weights()).lpNorm<1>();
  const double col = (gamma.colwise().sum().transpose() - q.weights()).lpNorm<1>();
  return {row, col};
}

inline std::pair<double, double> marginal_error(const TransportPlan& plan, const Histogram& p, const Histogram& q) {
  return marginal_error(plan.matrix(), p, q);
}

/// Σᵢⱼ γᵢⱼ ln γᵢⱼ with 0·ln 0 = 0.
inline double entropy(const Matrix& gamma) {
  double total = 0.0;
  for (Index j = 0; j < gamma.cols(); ++j) {
    for (Index i = 0; i < gamma.rows(); ++i) {
      const double v = gamma(i, j);
      if (v > 0.0) total += v * std::log(v);
    }
  }
  return total;
}

inline double entropy(const TransportPlan& plan) { return entropy(plan.matrix()); }

/// ⟨γ, C⟩
inline double transport_cost(const Matrix& gamma, const CostMatrix& c) {
  detail::require_same_dim(gamma.rows(), c.rows(), "transport_cost rows");
  detail::require_same_dim(gamma.cols(), c.cols(), "transport_cost cols");
  return (gamma.array() * c.matrix().array()).sum();
}

inline double transport_cost(const TransportPlan& plan, const CostMatrix& c) {
  return transport_cost(plan.matrix(), c);
}

namespace detail {

inline std::vector<Index> support(const Vector& w) {
  std::vector<Index> idx;
  for (Index i = 0; i < w.size(); ++i) {
    if (w(i) > 0.0) idx.push_back(i);
  }
  return idx;
}

// Row-wise log-sum-exp of (g_j − C_ij)/λ for every row i.
inline Vector row_lse(const Matrix& c, const Vector& g, double lambda) {
  Eigen::ArrayXXd t = (-c.array()).rowwise() + g.transpose().array();
  t /= lambda;
  const Eigen::ArrayXd mx = t.rowwise().maxCoeff();
  t.colwise() -= mx;
  // Terms below e^-700 are negligible next to the leading 1 and would only
  // produce slow subnormal arithmetic.
  return (mx + t.max(-700.0).exp().rowwise().sum().log()).matrix();
}

// Column-wise log-sum-exp of (f_i − C_ij)/λ for every column j.
inline Vector col_lse(const Matrix& c, const Vector& f, double lambda) {
  Eigen::ArrayXXd t = (-c.array()).colwise() + f.array();
  t /= lambda;
  const Eigen::Array<double, 1, Eigen::Dynamic> mx = t.colwise().maxCoeff();
  t.rowwise() -= mx;
  return (mx + t.max(-700.0).exp().colwise().sum().log()).transpose().matrix();
}

inline Matrix plan_from_potentials(const Matrix& c, const Vector& f, const Vector& g, double lambda) {
  Eigen::ArrayXXd t = (-c.array()).colwise() + f.array();
  t.rowwise() += g.transpose().array();
  return (t / lambda).exp().matrix();
}

// Iteration kernel: entries below e^-500 are flushed to zero so that products
// with scalings in [1e-50, 1e50] never go subnormal.
inline Matrix kernel_from_potentials(const Matrix& c, const Vector& f, const Vector& g, double lambda) {
  Eigen::ArrayXXd t = (-c.array()).colwise() + f.array();
  t.rowwise() += g.transpose().array();
  t /= lambda;
  return (t < -500.0).select(0.0, t.exp()).matrix();
}

struct ReducedResult {
  Matrix gamma;
  Vector f;
  Vector g;
  int iterations = 0;
  bool converged = false;
};

inline ReducedResult solve_log_domain(const Matrix& c, const Vector& p, const Vector& q, const SinkhornConfig& cfg,
                                      Vector f, Vector g) {
  const double lambda = cfg.lambda;
  const Vector log_p = p.array().log().matrix();
  const Vector log_q = q.array().log().matrix();
  ReducedResult r;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const Vector lse_r = row_lse(c, g, lambda);
    if (it > 1) {
      // Row sums of the current plan are exp(f/λ + lse_r); columns are exact.
      const double err = ((f / lambda + lse_r).array().exp() - p.array()).abs().sum();
      if (err < cfg.tol) {
        r.iterations = it - 1;
        r.converged = true;
        break;
      }
    }
    f = lambda * (log_p - lse_r);
    g = lambda * (log_q - col_lse(c, f, lambda));
    r.iterations = it;
  }
  r.gamma = plan_from_potentials(c, f, g, lambda);
  r.f = std::move(f);
  r.g = std::move(g);
  return r;
}

// Scaling iterations on the kernel K̃ᵢⱼ = exp((fᵢ + gⱼ − Cᵢⱼ)/λ), updating the
// potentials in place. Scalings that leave [1e-50, 1e50] are absorbed into the
// potentials and the kernel is rebuilt; a row or column whose kernel mass
// underflows gets an exact log-sum-exp update instead. Returns the number of
// iterations and whether the row error fell below `tol`.
inline std::pair<int, bool> stabilized_iterate(const Matrix& c, const Vector& p, const Vector& q, double lambda,
                                               double tol, int max_iter, Vector& f, Vector& g) {
  constexpr double kBound = 1e50;
  constexpr double kTiny = 1e-200;
  const Vector log_p = p.array().log().matrix();
  const Vector log_q = q.array().log().matrix();

  // One log-domain sweep gives a well-scaled starting kernel.
  f = lambda * (log_p - row_lse(c, g, lambda));
  g = lambda * (log_q - col_lse(c, f, lambda));
  Matrix kernel = kernel_from_potentials(c, f, g, lambda);
  Vector u = Vector::Ones(p.size());
  Vector v = Vector::Ones(q.size());

  auto absorb = [&] {
    f += lambda * u.array().log().matrix();
    g += lambda * v.array().log().matrix();
    kernel = kernel_from_potentials(c, f, g, lambda);
    u.setOnes();
    v.setOnes();
  };
  auto lse = [](const Eigen::ArrayXd& t) {
    const double mx = t.maxCoeff();
    return mx + std::log((t - mx).max(-700.0).exp().sum());
  };
  auto repair_row = [&](Index i) {
    const Eigen::ArrayXd t = (g.array() + lambda * v.array().log() - c.row(i).transpose().array()) / lambda;
    f(i) = lambda * (log_p(i) - lse(t));
    u(i) = 1.0;
    const Eigen::ArrayXd e = (f(i) + g.array() - c.row(i).transpose().array()) / lambda;
    kernel.row(i) = (e < -500.0).select(0.0, e.exp()).matrix().transpose();
  };
  auto repair_col = [&](Index j) {
    const Eigen::ArrayXd t = (f.array() + lambda * u.array().log() - c.col(j).array()) / lambda;
    g(j) = lambda * (log_q(j) - lse(t));
    v(j) = 1.0;
    const Eigen::ArrayXd e = (f.array() + g(j) - c.col(j).array()) / lambda;
    kernel.col(j) = (e < -500.0).select(0.0, e.exp()).matrix();
  };

  int iterations = 1;
  bool converged = false;
  Vector kv(p.size());
  Vector ktu(q.size());
  for (int it = 2; it <= max_iter + 1; ++it) {
    kv.noalias() = kernel * v;
    // u∘(K̃v) are the row sums of the current plan; columns are exact.
    const double err = (u.cwiseProduct(kv) - p).lpNorm<1>();
    if (std::isfinite(err) && err < tol) {
      converged = true;
      break;
    }
    if (it > max_iter) break;
    for (Index i = 0; i < kv.size(); ++i) {
      if (kv(i) > kTiny && std::isfinite(kv(i))) {
        u(i) = p(i) / kv(i);
      } else {
        repair_row(i);
      }
    }
    ktu.noalias() = kernel.transpose() * u;
    for (Index j = 0; j < ktu.size(); ++j) {
      if (ktu(j) > kTiny && std::isfinite(ktu(j))) {
        v(j) = q(j) / ktu(j);
      } else {
        repair_col(j);
      }
    }
    iterations = it;
    if (u.maxCoeff() > kBound || v.maxCoeff() > kBound || u.minCoeff() < 1.0 / kBound ||
        v.minCoeff() < 1.0 / kBound) {
      absorb();
    }
  }
  f += lambda * u.array().log().matrix();
  g += lambda * v.array().log().matrix();
  return {iterations, converged};
}

// Stabilized scaling with λ-annealing: when λ is small against the spread of
// the costs, a geometric sequence of larger λ (halving down to the target) is
// solved to a loose tolerance first, each warm-starting the next.
inline ReducedResult solve_stabilized(const Matrix& c, const Vector& p, const Vector& q, const SinkhornConfig& cfg,
                                      Vector f, Vector g, bool anneal = true) {
  constexpr double kStageTol = 1e-3;
  const double spread = c.maxCoeff() - c.minCoeff();
  double stage = spread / 20.0;
  ReducedResult r;
  int budget = cfg.max_iter;
  std::vector<double> stages;
  while (anneal && stage > 2.0 * cfg.lambda) {
    stages.push_back(stage);
    stage /= 2.0;
  }
  for (double lam : stages) {
    if (budget <= 1) break;
    const auto [iters, ok] = stabilized_iterate(c, p, q, lam, std::max(cfg.tol, kStageTol), budget, f, g);
    budget -= iters;
    r.iterations += iters;
  }
  const auto [iters, ok] = stabilized_iterate(c, p, q, cfg.lambda, cfg.tol, std::max(budget, 1), f, g);
  r.iterations += iters;
  r.converged = ok;
  r.gamma = plan_from_potentials(c, f, g, cfg.lambda);
  r.f = std::move(f);
  r.g = std::move(g);
  return r;
}

inline ReducedResult solve_scaling(const Matrix& c, const Vector& p, const Vector& q, const SinkhornConfig& cfg) {
  const Matrix kernel = (-c.array() / cfg.lambda).exp().matrix();
  Vector u = Vector::Ones(p.size());
  Vector v = Vector::Ones(q.size());
  ReducedResult r;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    if (it > 1) {
      const double err = (u.cwiseProduct(kernel * v) - p).lpNorm<1>();
      if (err < cfg.tol) {
        r.iterations = it - 1;
        r.converged = true;
        break;
      }
    }
    u = p.cwiseQuotient(kernel * v);
    v = q.cwiseQuotient(kernel.transpose() * u);
    r.iterations = it;
  }
  if (!u.allFinite() || !v.allFinite()) {
    throw std::runtime_error("sinkhorn: kernel underflow in scaling iterations; use the log-domain solver");
  }
  r.gamma = u.asDiagonal() * kernel * v.asDiagonal();
  r.f = cfg.lambda * u.array().log().matrix();
  r.g = cfg.lambda * v.array().log().matrix();
  return r;
}

inline constexpr int kNewtonSteps = 30;
inline constexpr int kSweepsBeforeNewton = 200;

inline double plan_error(const Matrix& gamma, const Vector& p, const Vector& q) {
  return std::max((gamma.rowwise().sum() - p).lpNorm<1>(), (gamma.colwise().sum().transpose() - q).lpNorm<1>());
}

// Damped Newton on the dual F(f, g) = λ Σ exp((fᵢ + gⱼ − Cᵢⱼ)/λ) − ⟨f, p⟩ − ⟨g, q⟩,
// whose gradient is the marginal residual. The last column potential is held
// fixed to remove the constant shift. Steps are halved until the residual
// drops. Returns the number of Newton steps taken.
inline int newton_polish(const Matrix& c, const Vector& p, const Vector& q, double lambda, double tol, int max_steps,
                         ReducedResult& r) {
  const Index m = p.size(), n = q.size();
  if (n < 1) return 0;
  double err = plan_error(r.gamma, p, q);
  int steps = 0;
  while (steps < max_steps && err >= tol) {
    ++steps;
    const Vector rs = r.gamma.rowwise().sum();
    const Vector cs = r.gamma.colwise().sum().transpose();
    const Index k = m + n - 1;
    Matrix h = Matrix::Zero(k, k);
    h.topLeftCorner(m, m).diagonal() = rs;
    h.bottomRightCorner(n - 1, n - 1).diagonal() = cs.head(n - 1);
    h.topRightCorner(m, n - 1) = r.gamma.leftCols(n - 1);
    h.bottomLeftCorner(n - 1, m) = r.gamma.leftCols(n - 1).transpose();
    Vector grad(k);
    grad << rs - p, (cs - q).head(n - 1);
    // The Schur complement on either block cancels badly for near-permutation
    // plans, so the full system is factored.
    const Eigen::LLT<Matrix> llt(h);
    const Vector delta = -lambda * (llt.info() == Eigen::Success ? Vector(llt.solve(grad)) : Vector(h.ldlt().solve(grad)));
    if (!delta.allFinite()) break;

    bool accepted = false;
    for (double t = 1.0; t > 1e-9; t *= 0.5) {
      Vector f = r.f + t * delta.head(m);
      Vector g = r.g;
      g.head(n - 1) += t * delta.tail(n - 1);
      Matrix gamma = plan_from_potentials(c, f, g, lambda);
      if (!gamma.allFinite()) continue;
      const double e = plan_error(gamma, p, q);
      if (e < err) {
        err = e;
        r.f = std::move(f);
        r.g = std::move(g);
        r.gamma = std::move(gamma);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  return steps;
}

}  // namespace detail

/// Entropic OT plan for cost `c` between `p` and `q`.
///
/// Rows and columns with zero marginal weight are dropped from the iteration
/// and receive zero mass. `warm` seeds the potentials (same sizes as p and q);
/// it is ignored by the scaling method.
inline SinkhornResult solve(const CostMatrix& c, const Histogram& p, const Histogram& q, const SinkhornConfig& cfg,
                            const DualPotentials* warm = nullptr) {
  cfg.validate();
  detail::require_same_dim(c.rows(), p.size(), "sinkhorn::solve rows");
  detail::require_same_dim(c.cols(), q.size(), "sinkhorn::solve cols");

  const auto rows = detail::support(p.weights());
  const auto cols = detail::support(q.weights());
  const bool full = rows.size() == static_cast<size_t>(p.size()) && cols.size() == static_cast<size_t>(q.size());

  Matrix c_red;
  Vector p_red, q_red, f0, g0;
  if (full) {
    c_red = c.matrix();
    p_red = p.weights();
    q_red = q.weights();
  } else {
    c_red = c.matrix()(rows, cols);
    p_red = p.weights()(rows);
    q_red = q.weights()(cols);
  }
  f0 = Vector::Zero(p_red.size());
  g0 = Vector::Zero(q_red.size());
  const bool warm_used = warm != nullptr && warm->f.size() == p.size() && warm->g.size() == q.size();
  if (warm_used) {
    f0 = full ? warm->f : Vector(warm->f(rows));
    g0 = full ? warm->g : Vector(warm->g(cols));
  }

  // Warm potentials already sit near the answer; annealing from a larger λ
  // would throw that away.
  bool anneal = !warm_used;
  auto sweeps = [&](int max_iter, Vector f, Vector g) {
    SinkhornConfig sc = cfg;
    sc.max_iter = max_iter;
    switch (cfg.method) {
      case SinkhornMethod::LogDomain:
        return detail::solve_log_domain(c_red, p_red, q_red, sc, std::move(f), std::move(g));
      case SinkhornMethod::Stabilized:
        return detail::solve_stabilized(c_red, p_red, q_red, sc, std::move(f), std::move(g), anneal);
      case SinkhornMethod::Scaling:
        break;
    }
    return detail::solve_scaling(c_red, p_red, q_red, sc);
  };

  // Newton steps share the max_iter budget with the sweeps. A short sweep
  // phase comes first; if Newton stalls the sweeps resume from its potentials.
  const bool polish = static_cast<Index>(rows.size() + cols.size()) <= cfg.newton_max_size &&
                      cfg.max_iter > 2 * detail::kNewtonSteps;
  detail::ReducedResult r;
  if (!polish) {
    r = sweeps(cfg.max_iter, std::move(f0), std::move(g0));
  } else {
    const int first = std::min(cfg.max_iter - detail::kNewtonSteps, detail::kSweepsBeforeNewton);
    r = sweeps(first, std::move(f0), std::move(g0));
    anneal = false;
    if (!r.converged) {
      r.iterations += detail::newton_polish(c_red, p_red, q_red, cfg.lambda, cfg.tol, detail::kNewtonSteps, r);
      r.converged = detail::plan_error(r.gamma, p_red, q_red) < cfg.tol;
    }
    const int left = cfg.max_iter - r.iterations;
    if (!r.converged && left > 0 && cfg.method != SinkhornMethod::Scaling) {
      const int used = r.iterations;
      r = sweeps(left, std::move(r.f), std::move(r.g));
      r.iterations += used;
    }
  }

  SinkhornResult out;
  Matrix gamma;
  if (full) {
    gamma = std::move(r.gamma);
    out.potentials = {std::move(r.f), std::move(r.g)};
  } else {
    gamma = Matrix::Zero(p.size(), q.size());
    gamma(rows, cols) = r.gamma;
    out.potentials.f = Vector::Zero(p.size());
    out.potentials.g = Vector::Zero(q.size());
    out.potentials.f(rows) = r.f;
    out.potentials.g(cols) = r.g;
  }
  const auto [row_err, col_err] = marginal_error(gamma, p, q);
  out.plan = TransportPlan(std::move(gamma), p, q);
  out.iterations = r.iterations;
  out.row_error = row_err;
  out.col_error = col_err;
  out.converged = std::max(row_err, col_err) < cfg.tol;
  return out;
}

namespace detail {

inline bool next_combination(std::vector<int>& idx, int n) {
  const int k = static_cast<int>(idx.size());
  for (int i = k - 1; i >= 0; --i) {
    if (idx[i] < n - k + i) {
      ++idx[i];
      for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Exact minimizer of the unregularized problem by enumeration.
///
/// Square instances with uniform marginals (m = n ≤ 6) enumerate permutation
/// plans. Otherwise every basis of m + n − 1 cells is tried (m·n ≤ 20) and the
/// cheapest nonnegative basic feasible solution is returned.
inline TransportPlan exact_ot_oracle(const CostMatrix& c, const Histogram& p, const Histogram& q) {
  detail::require_same_dim(c.rows(), p.size(), "exact_ot_oracle rows");
  detail::require_same_dim(c.cols(), q.size(), "exact_ot_oracle cols");
  const Index m = c.rows();
  const Index n = c.cols();
  const Matrix& cost = c.matrix();

  const bool uniform = m == n && (p.weights().array() == p(0)).all() && (q.weights().array() == q(0)).all();
  if (uniform && m <= 6) {
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_perm = perm;
    do {
      double total = 0.0;
      for (Index i = 0; i < m; ++i) total += cost(i, perm[static_cast<size_t>(i)]);
      if (total < best) {
        best = total;
        best_perm = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    Matrix gamma = Matrix::Zero(m, n);
    for (Index i = 0; i < m; ++i) gamma(i, best_perm[static_cast<size_t>(i)]) = 1.0 / static_cast<double>(m);
    return TransportPlan(std::move(gamma), p, q);
  }

  if (m * n > 20) {
    throw std::invalid_argument("exact_ot_oracle: instance too large for enumeration");
  }
  const int cells = static_cast<int>(m * n);
  const int basis = static_cast<int>(m + n - 1);
  // Marginal constraints: rows 0..m-1 for row sums, m..m+n-1 for column sums.
  Vector rhs(m + n);
  rhs << p.weights(), q.weights();
  std::vector<int> idx(static_cast<size_t>(basis));
  std::iota(idx.begin(), idx.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  Matrix best_gamma;
  do {
    Matrix a = Matrix::Zero(m + n, basis);
    for (int k = 0; k < basis; ++k) {
      const Index i = idx[static_cast<size_t>(k)] % m;
      const Index j = idx[static_cast<size_t>(k)] / m;
      a(i, k) = 1.0;
      a(m + j, k) = 1.0;
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(a);
    if (qr.rank() < basis) continue;
    const Vector x = qr.solve(rhs);
    if ((a * x - rhs).lpNorm<Eigen::Infinity>() > 1e-12 || (x.array() < -1e-14).any()) continue;
    Matrix gamma = Matrix::Zero(m, n);
    for (int k = 0; k < basis; ++k) {
      const int cell = idx[static_cast<size_t>(k)];
      gamma(cell % m, cell / m) = std::max(0.0, x(k));
    }
    const double total = (gamma.array() * cost.array()).sum();
    if (total < best) {
      best = total;
      best_gamma = std::move(gamma);
    }
  } while (detail::next_combination(idx, cells));
  return TransportPlan(std::move(best_gamma), p, q);
}

}  // namespace gmlot
