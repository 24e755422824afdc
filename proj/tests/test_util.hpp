#pragma once

#include "ddmpc/lti.hpp"

#include <random>

namespace ddmpc::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64 & rng)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) { m.data()[i] = normal(rng); }
  return m;
}

/// Random system with spectral radius `radius`; generically minimal.
inline LtiSystem random_stable_system(int n, int m, int p, std::uint64_t seed, double radius = 0.9, bool with_d = true)
{
  std::mt19937_64 rng(seed);
  Matrix a = random_matrix(n, n, rng);
  a *= radius / linalg::spectral_radius(a);
  Matrix d = with_d ? random_matrix(p, m, rng) : Matrix::Zero(p, m);
  return LtiSystem{a, random_matrix(n, m, rng), random_matrix(p, n, rng), d};
}

inline Matrix random_inputs(int m, int steps, std::mt19937_64 & rng) { return random_matrix(m, steps, rng); }

}  // namespace ddmpc::testing
