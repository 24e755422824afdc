#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ddmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error
{
public:
  using Error::Error;
};

class InvalidArgument : public Error
{
public:
  using Error::Error;
};

/// Relative singular value threshold shared by lag, minimality and PE checks.
inline constexpr double kDefaultRankTolerance = 1e-9;

namespace linalg {

/// Singular values of m, descending.
inline Vector singular_values(const Matrix & m)
{
  if (m.size() == 0) { return Vector{}; }
  return Eigen::BDCSVD<Matrix>(m).singularValues();
}

/// Number of singular values above rel_tol times the largest one.
inline int numerical_rank(const Matrix & m, double rel_tol = kDefaultRankTolerance)
{
  const Vector s = singular_values(m);
  if (s.size() == 0 || s(0) == 0.0) { return 0; }
  const double threshold = rel_tol * s(0);
  return static_cast<int>((s.array() > threshold).count());
}

inline Matrix pseudo_inverse(const Matrix & m)
{
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(m);
  return cod.pseudoInverse();
}

inline Matrix matrix_power(const Matrix & a, int k)
{
  Matrix result = Matrix::Identity(a.rows(), a.cols());
  for (int i = 0; i < k; ++i) { result = result * a; }
  return result;
}

inline double spectral_radius(const Matrix & a)
{
  if (a.size() == 0) { return 0.0; }
  return Eigen::EigenSolver<Matrix>(a, false).eigenvalues().cwiseAbs().maxCoeff();
}

/// Largest eigenvalue of the symmetric part of m.
inline double max_symmetric_eigenvalue(const Matrix & m)
{
  const Matrix sym = 0.5 * (m + m.transpose());
  return Eigen::SelfAdjointEigenSolver<Matrix>(sym, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

inline double min_symmetric_eigenvalue(const Matrix & m)
{
  const Matrix sym = 0.5 * (m + m.transpose());
  return Eigen::SelfAdjointEigenSolver<Matrix>(sym, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

inline bool is_symmetric(const Matrix & m, double tol)
{
  return m.rows() == m.cols() && (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

/**
 * @brief Solve the discrete Lyapunov equation F' X F - X + W = 0.
 *
 * Uses the doubling iteration X = sum_k (F')^k W F^k, which converges
 * quadratically whenever F is Schur.
 */
inline Matrix solve_discrete_lyapunov(const Matrix & f, const Matrix & w)
{
  if (f.rows() != f.cols() || w.rows() != f.rows() || w.cols() != f.cols()) {
    throw DimensionError("solve_discrete_lyapunov: dimension mismatch");
  }
  if (spectral_radius(f) >= 1.0) {
    throw InvalidArgument("solve_discrete_lyapunov: matrix is not Schur");
  }
  Matrix x = w;
  Matrix ak = f;
  for (int it = 0; it < 64; ++it) {
    const Matrix increment = ak.transpose() * x * ak;
    x += increment;
    ak = ak * ak;
    if (increment.cwiseAbs().maxCoeff() <= 1e-16 * std::max(1.0, x.cwiseAbs().maxCoeff())) { break; }
  }
  return 0.5 * (x + x.transpose());
}

}  // namespace linalg

}  // namespace ddmpc
