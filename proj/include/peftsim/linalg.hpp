#pragma once

#include <cstddef>
#include <vector>

#include "peftsim/matrix.hpp"
#include "peftsim/rng.hpp"

namespace peftsim {

// m = u * diag(singular_values) * vt, with u m x k, vt k x n, k = min(m, n).
// Singular values are non-increasing and non-negative; u has orthonormal
// columns and vt orthonormal rows.
struct SvdResult {
    Matrix u;
    std::vector<double> singular_values;
    Matrix vt;
};

// One-sided Jacobi. Iteration cap 100 sweeps at off-diagonal tolerance
// 1e-12; throws NumericError with the sweep count on non-convergence.
SvdResult svd(const Matrix& m);

// Modified Gram-Schmidt (two passes) on the columns of m. Requires
// m.cols() <= m.rows(). A column whose residual norm drops below 1e-12
// raises NumericError naming the column index.
Matrix gram_schmidt_columns(const Matrix& m);

enum class EffectiveRankMethod { EntropyExp, ThresholdFraction };

// EntropyExp: exp(-sum p_i ln p_i) with p_i = sigma_i / sum(sigma).
// ThresholdFraction: count of sigma_i >= tau * sigma_1.
// Throws NumericError on an all-zero spectrum.
double effective_rank(const std::vector<double>& singular_values, EffectiveRankMethod method,
                      double tau = 0.01);

// Numerical rank: count of sigma_i > rel_tol * sigma_1.
std::size_t numerical_rank(const std::vector<double>& singular_values, double rel_tol = 1e-9);

Matrix random_normal_matrix(std::size_t rows, std::size_t cols, double sigma, RngStream& stream);

}  // namespace peftsim
