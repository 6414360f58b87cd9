#pragma once

// Primitives on symmetric positive (semi-)definite matrices. Every matrix
// function goes through a symmetric eigendecomposition.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gmlot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class PositivityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw DimensionError(std::string(what) + ": expected a non-empty square matrix, got " + shape(m));
  }
}

inline void require_same_dim(Index a, Index b, const char* what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": dimension mismatch (" << a << " vs " << b << ")";
    throw DimensionError(os.str());
  }
}

// An eigenvalue counts as non-positive below this scale-relative floor.
inline double positivity_floor(double lambda_max) {
  return 1e-12 * std::max(1.0, lambda_max);
}

}  // namespace detail

/// Square matrix that equals its transpose exactly.
class SymMatrix {
 public:
  SymMatrix() = default;

  /// Symmetrizes `m` as (m + mᵀ)/2.
  explicit SymMatrix(const Matrix& m) {
    detail::require_square(m, "SymMatrix");
    m_ = 0.5 * (m + m.transpose());
  }

  static SymMatrix identity(Index d) { return SymMatrix(Matrix::Identity(d, d)); }

  Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  double operator()(Index i, Index j) const { return m_(i, j); }

 private:
  Matrix m_;
};

/// Eigen-pairs of a symmetric matrix, eigenvalues ascending.
struct EigenDecomposition {
  Vector eigenvalues;
  Matrix eigenvectors;

  /// V·diag(f(λ))·Vᵀ, symmetrized.
  template <typename F>
  Matrix apply(F&& f) const {
    Vector mapped = eigenvalues.unaryExpr(std::forward<F>(f));
    Matrix out = eigenvectors * mapped.asDiagonal() * eigenvectors.transpose();
    return 0.5 * (out + out.transpose());
  }

  Matrix reconstruct() const {
    return apply([](double x) { return x; });
  }

  double min_eigenvalue() const { return eigenvalues(0); }
  double max_eigenvalue() const { return eigenvalues(eigenvalues.size() - 1); }
};

inline EigenDecomposition eigen_decompose(const SymMatrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(s.matrix());
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("eigen_decompose: eigensolver did not converge");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

/// Symmetric positive definite matrix.
///
/// The checked constructor runs an eigendecomposition and rejects any
/// eigenvalue below 1e-12·max(1, λ_max). `assume_spd` skips the check and is
/// meant for values that are SPD by construction (for instance a PSD sum lifted
/// by a positive multiple of the identity); functions that take roots still
/// verify positivity on their own decomposition.
class SpdMatrix {
 public:
  SpdMatrix() = default;

  explicit SpdMatrix(const SymMatrix& s) : m_(s.matrix()) {
    const EigenDecomposition eig = eigen_decompose(s);
    check(eig, "SpdMatrix");
  }

  explicit SpdMatrix(const Matrix& m) : SpdMatrix(SymMatrix(m)) {}

  static SpdMatrix assume_spd(const SymMatrix& s) {
    SpdMatrix out;
    out.m_ = s.matrix();
    return out;
  }

  static SpdMatrix identity(Index d) { return assume_spd(SymMatrix::identity(d)); }

  static void check(const EigenDecomposition& eig, const char* what) {
    const double floor = detail::positivity_floor(eig.max_eigenvalue());
    if (!(eig.min_eigenvalue() >= floor) || !std::isfinite(eig.max_eigenvalue())) {
      std::ostringstream os;
      os << what << ": matrix is not positive definite (smallest eigenvalue " << eig.min_eigenvalue()
         << ", floor " << floor << ")";
      throw PositivityError(os.str());
    }
  }

  Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  SymMatrix sym() const { return SymMatrix(m_); }
  double operator()(Index i, Index j) const { return m_(i, j); }

 private:
  Matrix m_;
};

inline SymMatrix symmetrize(const Matrix& m) { return SymMatrix(m); }

namespace detail {

inline EigenDecomposition checked_eig(const SpdMatrix& s, const char* what) {
  EigenDecomposition eig = eigen_decompose(SymMatrix(s.matrix()));
  SpdMatrix::check(eig, what);
  return eig;
}

}  // namespace detail

inline SpdMatrix spd_sqrt(const SpdMatrix& s) {
  const auto eig = detail::checked_eig(s, "spd_sqrt");
  return SpdMatrix::assume_spd(SymMatrix(eig.apply([](double x) { return std::sqrt(x); })));
}

inline SpdMatrix spd_inv_sqrt(const SpdMatrix& s) {
  const auto eig = detail::checked_eig(s, "spd_inv_sqrt");
  return SpdMatrix::assume_spd(SymMatrix(eig.apply([](double x) { return 1.0 / std::sqrt(x); })));
}

inline SpdMatrix spd_inverse(const SpdMatrix& s) {
  const auto eig = detail::checked_eig(s, "spd_inverse");
  return SpdMatrix::assume_spd(SymMatrix(eig.apply([](double x) { return 1.0 / x; })));
}

/// Unique SPD solution A of A·C·A = D:
/// A = C^{-1/2} (C^{1/2} D C^{1/2})^{1/2} C^{-1/2}.
inline SpdMatrix riccati_solve(const SpdMatrix& c, const SpdMatrix& d) {
  detail::require_same_dim(c.dim(), d.dim(), "riccati_solve");
  const auto eig_c = detail::checked_eig(c, "riccati_solve");
  const Matrix c_inv_half = eig_c.apply([](double x) { return 1.0 / std::sqrt(x); });
  if (d.matrix().isIdentity(0.0)) {
    return SpdMatrix::assume_spd(SymMatrix(c_inv_half));
  }
  const Matrix c_half = eig_c.apply([](double x) { return std::sqrt(x); });
  const SymMatrix middle(c_half * d.matrix() * c_half);
  const auto eig_mid = eigen_decompose(middle);
  SpdMatrix::check(eig_mid, "riccati_solve");
  const Matrix mid_half = eig_mid.apply([](double x) { return std::sqrt(x); });
  return SpdMatrix::assume_spd(SymMatrix(c_inv_half * mid_half * c_inv_half));
}

/// Affine-invariant geometric mean P^{1/2} (P^{-1/2} Q P^{-1/2})^{1/2} P^{1/2}.
inline SpdMatrix geometric_mean(const SpdMatrix& p, const SpdMatrix& q) {
  detail::require_same_dim(p.dim(), q.dim(), "geometric_mean");
  const auto eig_p = detail::checked_eig(p, "geometric_mean");
  const Matrix p_half = eig_p.apply([](double x) { return std::sqrt(x); });
  const Matrix p_inv_half = eig_p.apply([](double x) { return 1.0 / std::sqrt(x); });
  const SymMatrix inner(p_inv_half * q.matrix() * p_inv_half);
  const auto eig_inner = eigen_decompose(inner);
  SpdMatrix::check(eig_inner, "geometric_mean");
  const Matrix inner_half = eig_inner.apply([](double x) { return std::sqrt(x); });
  return SpdMatrix::assume_spd(SymMatrix(p_half * inner_half * p_half));
}

enum class FloorPolicy {
  Always,       // S + eps·I unconditionally
  WhenNeeded,   // lift only when λ_min(S) <= eps
};

/// Lifts a symmetric PSD matrix into the SPD cone by adding eps·I.
inline SpdMatrix eigen_floor(const SymMatrix& s, double eps, FloorPolicy policy = FloorPolicy::Always) {
  if (!(eps > 0.0)) {
    throw std::invalid_argument("eigen_floor: eps must be positive");
  }
  const auto eig = eigen_decompose(s);
  const bool lift = policy == FloorPolicy::Always || eig.min_eigenvalue() <= eps;
  if (!lift) {
    SpdMatrix::check(eig, "eigen_floor");
    return SpdMatrix::assume_spd(s);
  }
  EigenDecomposition lifted = eig;
  lifted.eigenvalues.array() += eps;
  SpdMatrix::check(lifted, "eigen_floor");
  Matrix out = s.matrix();
  out.diagonal().array() += eps;
  return SpdMatrix::assume_spd(SymMatrix(out));
}

/// ⟨A, B⟩ = Σᵢⱼ AᵢⱼBᵢⱼ, which is trace(A·B) for symmetric arguments.
inline double trace_inner(const SymMatrix& a, const SymMatrix& b) {
  detail::require_same_dim(a.dim(), b.dim(), "trace_inner");
  return (a.matrix().array() * b.matrix().array()).sum();
}

inline double trace_inner(const SpdMatrix& a, const SpdMatrix& b) {
  return trace_inner(a.sym(), b.sym());
}

}  // namespace gmlot
