#include "test_util.hpp"

#include <algorithm>
#include <gtest/gtest.h>
#include <numeric>

using namespace gmlot;

namespace {

// Brute-force minimum of Σ C(i, σ(i)) / n over all permutations σ.
double permutation_optimum(const Matrix& c) {
  const int n = static_cast<int>(c.rows());
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += c(i, perm[static_cast<size_t>(i)]);
    best = std::min(best, s / n);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

SinkhornConfig cfg_with(double lambda, SinkhornMethod method = SinkhornMethod::LogDomain) {
  SinkhornConfig c;
  c.lambda = lambda;
  c.method = method;
  return c;
}

constexpr SinkhornMethod kMethods[] = {SinkhornMethod::LogDomain, SinkhornMethod::Stabilized};

}  // namespace

TEST(Histogram, Validation) {
  EXPECT_THROW(Histogram(Eigen::Vector2d(0.5, 0.6)), std::invalid_argument);
  EXPECT_THROW(Histogram(Eigen::Vector2d(-0.5, 1.5)), std::invalid_argument);
  EXPECT_THROW(Histogram{Vector()}, std::invalid_argument);
  EXPECT_NO_THROW(Histogram(Eigen::Vector2d(0.0, 1.0)));
  EXPECT_DOUBLE_EQ(Histogram::uniform(4)(2), 0.25);
}

TEST(CostMatrix, RejectsNegativeAndNonFinite) {
  Matrix m = Matrix::Ones(2, 2);
  m(0, 1) = -1e-3;
  EXPECT_THROW(CostMatrix{m}, std::invalid_argument);
  m(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(CostMatrix{m}, std::invalid_argument);
}

TEST(SinkhornSolve, ZeroCostGivesProduct) {
  const Histogram u = Histogram::uniform(2);
  for (SinkhornMethod m : {SinkhornMethod::LogDomain, SinkhornMethod::Stabilized, SinkhornMethod::Scaling}) {
    const auto r = solve(CostMatrix(Matrix::Zero(2, 2)), u, u, cfg_with(1.0, m));
    EXPECT_LT((r.plan.matrix().array() - 0.25).abs().maxCoeff(), 1e-15);
    EXPECT_TRUE(r.converged);
  }
}

TEST(SinkhornSolve, SmallLambdaApproachesIdentityPermutation) {
  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  const Histogram u = Histogram::uniform(2);
  const Matrix want = exact_ot_oracle(CostMatrix(c), u, u).matrix();
  Matrix diag = Matrix::Zero(2, 2);
  diag.diagonal().setConstant(0.5);
  ASSERT_EQ(want, diag);
  for (SinkhornMethod m : kMethods) {
    const auto r = solve(CostMatrix(c), u, u, cfg_with(0.01, m));
    EXPECT_LT((r.plan.matrix() - want).cwiseAbs().maxCoeff(), 1e-3);
  }
}

TEST(SinkhornSolve, ThreeByThreeAgainstPermutations) {
  std::mt19937_64 rng(21);
  const Histogram u = Histogram::uniform(3);
  for (int rep = 0; rep < 30; ++rep) {
    const Matrix c = testutil::random_uniform(rng, 3, 3);
    const double opt = permutation_optimum(c);
    const double range = c.maxCoeff() - c.minCoeff();
    const auto r = solve(CostMatrix(c), u, u, cfg_with(0.05));
    const double cost = transport_cost(r.plan, CostMatrix(c));
    // Entropic optimum vs LP optimum: 0 ≤ ⟨γ,C⟩ − opt ≤ λ·(H(pqᵀ) − H(γ*)) ≤ λ·ln 3.
    EXPECT_GE(cost, opt - 1e-9);
    EXPECT_LE(cost - opt, 0.05 * std::log(3.0) + 1e-9);
    EXPECT_LT(cost - opt, 0.2 * range + 1e-12);
  }
}

TEST(SinkhornSolve, MarginalsAtTolerance) {
  std::mt19937_64 rng(22);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix c = testutil::random_uniform(rng, 6, 9);
    const Histogram p = testutil::random_histogram(rng, 6);
    const Histogram q = testutil::random_histogram(rng, 9);
    for (SinkhornMethod m : kMethods) {
      const auto r = solve(CostMatrix(c), p, q, cfg_with(0.1, m));
      ASSERT_TRUE(r.converged);
      const auto [re, ce] = marginal_error(r.plan, p, q);
      EXPECT_LT(re, 1e-9);
      EXPECT_LT(ce, 1e-9);
      EXPECT_DOUBLE_EQ(re, r.row_error);
      EXPECT_GT(r.plan.matrix().minCoeff(), 0.0);
    }
  }
}

TEST(SinkhornSolve, CostMonotoneInLambda) {
  std::mt19937_64 rng(23);
  const Histogram u = Histogram::uniform(4);
  for (int rep = 0; rep < 20; ++rep) {
    const CostMatrix c(testutil::random_uniform(rng, 4, 4));
    double prev = -1.0;
    for (double lam : {0.02, 0.05, 0.1, 0.5, 1.0, 5.0}) {
      const double cost = transport_cost(solve(c, u, u, cfg_with(lam)).plan, c);
      EXPECT_GE(cost, prev - 1e-8);
      prev = cost;
    }
  }
}

TEST(SinkhornSolve, ConvergesToOracleFromAbove) {
  std::mt19937_64 rng(24);
  const Histogram u = Histogram::uniform(3);
  for (int rep = 0; rep < 20; ++rep) {
    const CostMatrix c(testutil::random_uniform(rng, 3, 3));
    const double opt = transport_cost(exact_ot_oracle(c, u, u), c);
    const double range = c.matrix().maxCoeff() - c.matrix().minCoeff();
    double prev = 1e300;
    for (double lam : {0.5, 0.1, 0.02}) {
      const double cost = transport_cost(solve(c, u, u, cfg_with(lam)).plan, c);
      EXPECT_GE(cost, opt - 1e-9);
      EXPECT_LE(cost, prev + 1e-9);
      prev = cost;
    }
    EXPECT_LT(prev - opt, 1e-2 * range);
  }
}

TEST(SinkhornSolve, LogDomainMatchesScaling) {
  std::mt19937_64 rng(25);
  for (int rep = 0; rep < 10; ++rep) {
    const CostMatrix c(testutil::random_uniform(rng, 5, 7));
    const Histogram p = testutil::random_histogram(rng, 5);
    const Histogram q = testutil::random_histogram(rng, 7);
    for (double lam : {0.1, 0.5, 2.0}) {
      const Matrix a = solve(c, p, q, cfg_with(lam, SinkhornMethod::LogDomain)).plan.matrix();
      const Matrix b = solve(c, p, q, cfg_with(lam, SinkhornMethod::Scaling)).plan.matrix();
      const Matrix s = solve(c, p, q, cfg_with(lam, SinkhornMethod::Stabilized)).plan.matrix();
      EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_LT((a - s).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(SinkhornSolve, TinyLambdaStaysFinite) {
  std::mt19937_64 rng(26);
  const CostMatrix c(testutil::random_uniform(rng, 30, 30, 0.0, 100.0));
  const Histogram u = Histogram::uniform(30);
  for (SinkhornMethod m : kMethods) {
    SinkhornConfig cfg = cfg_with(1e-3, m);
    cfg.tol = 1e-6;
    const auto r = solve(c, u, u, cfg);
    EXPECT_TRUE(r.plan.matrix().allFinite());
    EXPECT_TRUE(r.potentials.f.allFinite());
    // Plain log-domain updates crawl at λ/range = 1e-5; annealing gets there.
    if (m == SinkhornMethod::Stabilized) {
      EXPECT_TRUE(r.converged);
      EXPECT_LT(r.marginal_error(), 1e-6);
    }
  }
}

TEST(SinkhornSolve, StabilizedMatchesLogDomainAtSmallLambda) {
  std::mt19937_64 rng(27);
  const CostMatrix c(testutil::random_uniform(rng, 12, 15, 0.0, 10.0));
  const Histogram p = testutil::random_histogram(rng, 12);
  const Histogram q = testutil::random_histogram(rng, 15);
  const Matrix a = solve(c, p, q, cfg_with(0.05)).plan.matrix();
  const Matrix b = solve(c, p, q, cfg_with(0.05, SinkhornMethod::Stabilized)).plan.matrix();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SinkhornSolve, ZeroWeightRowsGetNoMass) {
  std::mt19937_64 rng(28);
  const CostMatrix c(testutil::random_uniform(rng, 4, 3));
  const Histogram p(Eigen::Vector4d(0.5, 0.0, 0.5, 0.0));
  const Histogram q(Eigen::Vector3d(0.2, 0.0, 0.8));
  for (SinkhornMethod m : {SinkhornMethod::LogDomain, SinkhornMethod::Stabilized, SinkhornMethod::Scaling}) {
    const auto r = solve(c, p, q, cfg_with(0.1, m));
    EXPECT_EQ(r.plan.matrix().row(1).norm(), 0.0);
    EXPECT_EQ(r.plan.matrix().row(3).norm(), 0.0);
    EXPECT_EQ(r.plan.matrix().col(1).norm(), 0.0);
    EXPECT_TRUE(r.potentials.f.allFinite());
    EXPECT_LT(r.marginal_error(), 1e-9);
  }
}

TEST(SinkhornSolve, WarmStartSameAnswerFewerIterations) {
  std::mt19937_64 rng(29);
  const CostMatrix c(testutil::random_uniform(rng, 20, 20));
  const Histogram u = Histogram::uniform(20);
  for (SinkhornMethod m : kMethods) {
    const auto cold = solve(c, u, u, cfg_with(0.02, m));
    const auto warm = solve(c, u, u, cfg_with(0.02, m), &cold.potentials);
    EXPECT_LE(warm.iterations, cold.iterations);
    EXPECT_LT((warm.plan.matrix() - cold.plan.matrix()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(SinkhornSolve, ReportsNonConvergence) {
  std::mt19937_64 rng(30);
  const CostMatrix c(testutil::random_uniform(rng, 10, 10));
  SinkhornConfig cfg = cfg_with(0.001);
  cfg.max_iter = 2;
  const auto r = solve(c, Histogram::uniform(10), Histogram::uniform(10), cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 2);
  EXPECT_GE(r.marginal_error(), cfg.tol);
}

TEST(SinkhornSolve, RejectsBadInput) {
  const Histogram u = Histogram::uniform(2);
  EXPECT_THROW(solve(CostMatrix(Matrix::Zero(2, 3)), u, u, cfg_with(1.0)), DimensionError);
  EXPECT_THROW(solve(CostMatrix(Matrix::Zero(2, 2)), u, u, cfg_with(0.0)), std::invalid_argument);
  SinkhornConfig bad;
  bad.tol = 0.0;
  EXPECT_THROW(solve(CostMatrix(Matrix::Zero(2, 2)), u, u, bad), std::invalid_argument);
}

TEST(Entropy, Examples) {
  EXPECT_NEAR(entropy(Matrix::Constant(2, 2, 0.25)), -std::log(4.0), 1e-15);
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal().setConstant(0.5);
  EXPECT_NEAR(entropy(d), -std::log(2.0), 1e-15);
}

TEST(Entropy, MatchesSummation) {
  std::mt19937_64 rng(31);
  const auto r = solve(CostMatrix(testutil::random_uniform(rng, 4, 5)), Histogram::uniform(4), Histogram::uniform(5),
                       cfg_with(0.3));
  const Matrix& g = r.plan.matrix();
  double s = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) s += g(i, j) * std::log(g(i, j));
  EXPECT_NEAR(entropy(r.plan), s, 1e-12 * std::abs(s));
}

TEST(MarginalError, Examples) {
  std::mt19937_64 rng(32);
  const Histogram p = testutil::random_histogram(rng, 3);
  const Histogram q = testutil::random_histogram(rng, 4);
  const Matrix prod = p.weights() * q.weights().transpose();
  const auto [a, b] = marginal_error(prod, p, q);
  EXPECT_LT(a, 1e-15);
  EXPECT_LT(b, 1e-15);
  const auto [c, d] = marginal_error(Matrix(0.5 * prod), p, q);
  EXPECT_NEAR(c, 0.5, 1e-15);
  EXPECT_NEAR(d, 0.5, 1e-15);
  EXPECT_THROW(marginal_error(prod, q, p), DimensionError);
}

TEST(ExactOracle, TwoByTwoPicksCheaperPermutation) {
  const Histogram u = Histogram::uniform(2);
  Matrix c(2, 2);
  c << 1, 0, 0, 1;
  Matrix anti(2, 2);
  anti << 0, 0.5, 0.5, 0;
  EXPECT_EQ(exact_ot_oracle(CostMatrix(c), u, u).matrix(), anti);
}

TEST(ExactOracle, DominantAssignment) {
  const Histogram u = Histogram::uniform(4);
  Matrix c = Matrix::Constant(4, 4, 10.0);
  const int sigma[] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i) c(i, sigma[i]) = 0.0;
  const Matrix g = exact_ot_oracle(CostMatrix(c), u, u).matrix();
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g(i, sigma[i]), 0.25);
}

TEST(ExactOracle, BasisEnumerationAgreesWithPermutations) {
  std::mt19937_64 rng(33);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix c = testutil::random_uniform(rng, 3, 3);
    // Marginals that are uniform up to one ulp force the basis path.
    Vector w = Vector::Constant(3, 1.0 / 3.0);
    w(2) = 1.0 - w(0) - w(1);
    const Histogram p(w);
    const double basis = transport_cost(exact_ot_oracle(CostMatrix(c), p, p), CostMatrix(c));
    EXPECT_NEAR(basis, permutation_optimum(c), 1e-12);
  }
}

TEST(ExactOracle, BasisEnumerationBoundsSinkhorn) {
  std::mt19937_64 rng(34);
  for (int rep = 0; rep < 10; ++rep) {
    const CostMatrix c(testutil::random_uniform(rng, 2, 4));
    const Histogram p = testutil::random_histogram(rng, 2);
    const Histogram q = testutil::random_histogram(rng, 4);
    const TransportPlan exact = exact_ot_oracle(c, p, q);
    const auto [re, ce] = marginal_error(exact, p, q);
    EXPECT_LT(std::max(re, ce), 1e-12);
    const double opt = transport_cost(exact, c);
    SinkhornConfig cfg = cfg_with(1e-3);
    cfg.max_iter = 200000;
    const double ent = transport_cost(solve(c, p, q, cfg).plan, c);
    EXPECT_GE(ent, opt - 1e-9);
    EXPECT_LT(ent - opt, 1e-2);
  }
}

TEST(ExactOracle, TooLarge) {
  EXPECT_THROW(exact_ot_oracle(CostMatrix(Matrix::Zero(5, 5)), Histogram(Vector::Constant(5, 0.2).eval()),
                               Histogram(testutil::Vector(Vector::LinSpaced(5, 1, 5) / 15.0))),
               std::invalid_argument);
}

TEST(SinkhornSolve, NewtonStepsFinishNearPermutationPlans) {
  std::mt19937_64 rng(303);
  const Histogram u = Histogram::uniform(3);
  int stalled_without = 0;
  for (int k = 0; k < 50; ++k) {
    const CostMatrix c(testutil::random_uniform(rng, 3, 3));
    SinkhornConfig cfg = cfg_with(0.02, SinkhornMethod::LogDomain);
    const auto r = solve(c, u, u, cfg);
    EXPECT_TRUE(r.converged) << "instance " << k;
    EXPECT_LT(r.marginal_error(), 1e-9);
    EXPECT_LE(r.iterations, cfg.max_iter);
    cfg.newton_max_size = 0;
    stalled_without += solve(c, u, u, cfg).converged ? 0 : 1;
  }
  EXPECT_GT(stalled_without, 0);
}

TEST(SinkhornSolve, NewtonStepsRespectIterationCap) {
  std::mt19937_64 rng(304);
  const CostMatrix c(testutil::random_uniform(rng, 6, 6));
  SinkhornConfig cfg = cfg_with(1e-3, SinkhornMethod::LogDomain);
  cfg.max_iter = 40;
  const auto r = solve(c, Histogram::uniform(6), Histogram::uniform(6), cfg);
  EXPECT_LE(r.iterations, 40);
  cfg.newton_max_size = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
