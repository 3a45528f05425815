#include "peftsim/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace peftsim {
namespace {

constexpr int kMaxSweeps = 100;
constexpr double kJacobiTol = 1e-12;

// One-sided Jacobi for m >= n: rotates column pairs of a working copy of A
// until all pairs are mutually orthogonal, accumulating the rotations in V.
SvdResult svd_tall(const Matrix& a) {
    const std::size_t m = a.rows(), n = a.cols();
    Matrix w = a;
    Matrix v = Matrix::identity(n);

    // columns this small relative to ||A|| are numerically zero; rotating
    // them only chases roundoff noise on rank-deficient inputs
    double fro2 = 0.0;
    for (const double x : w.data()) fro2 += x * x;
    const double negligible = kJacobiTol * kJacobiTol * fro2;

    int sweep = 0;
    for (; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    app += w(i, p) * w(i, p);
                    aqq += w(i, q) * w(i, q);
                    apq += w(i, p) * w(i, q);
                }
                if (app <= negligible || aqq <= negligible) continue;
                if (std::abs(apq) <= kJacobiTol * std::sqrt(app * aqq)) continue;
                rotated = true;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p), wq = w(i, q);
                    w(i, p) = cs * wp - sn * wq;
                    w(i, q) = sn * wp + cs * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = cs * vp - sn * vq;
                    v(i, q) = sn * vp + cs * vq;
                }
            }
        }
        if (!rotated) break;
    }
    if (sweep == kMaxSweeps)
        throw NumericError("svd: no convergence after " + std::to_string(kMaxSweeps) + " sweeps");

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
        sigma[j] = std::sqrt(s);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SvdResult out;
    out.u = Matrix(m, n);
    out.vt = Matrix(n, n);
    out.singular_values.resize(n);
    const double tiny = 1e-300;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.singular_values[j] = sigma[src];
        if (sigma[src] > tiny) {
            for (std::size_t i = 0; i < m; ++i) out.u(i, j) = w(i, src) / sigma[src];
        }
        for (std::size_t i = 0; i < n; ++i) out.vt(j, i) = v(i, src);
    }

    // Complete zero-sigma columns of u to an orthonormal set.
    for (std::size_t j = 0; j < n; ++j) {
        if (out.singular_values[j] > tiny) continue;
        for (std::size_t e = 0; e < m; ++e) {
            std::vector<double> cand(m, 0.0);
            cand[e] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == j) continue;
                    if (k > j && out.singular_values[k] <= tiny) continue;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < m; ++i) dot += cand[i] * out.u(i, k);
                    for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * out.u(i, k);
                }
            }
            double norm = 0.0;
            for (double vv : cand) norm += vv * vv;
            norm = std::sqrt(norm);
            if (norm > 0.5) {
                for (std::size_t i = 0; i < m; ++i) out.u(i, j) = cand[i] / norm;
                break;
            }
        }
    }
    return out;
}

}  // namespace

SvdResult svd(const Matrix& a) {
    if (a.empty()) throw ShapeError("svd: empty matrix");
    if (!a.all_finite()) throw NumericError("svd: non-finite input");
    if (a.rows() >= a.cols()) return svd_tall(a);
    SvdResult t = svd_tall(transpose(a));
    SvdResult out;
    out.singular_values = std::move(t.singular_values);
    out.u = Matrix(a.rows(), out.singular_values.size());
    // A = Bt => A = V_b Sigma U_b^T
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < out.singular_values.size(); ++j) out.u(i, j) = t.vt(j, i);
    out.vt = transpose(t.u);
    return out;
}

Matrix gram_schmidt_columns(const Matrix& m) {
    const std::size_t rows = m.rows(), cols = m.cols();
    if (cols > rows)
        throw ShapeError("gram_schmidt_columns: cols " + std::to_string(cols) + " > rows " +
                         std::to_string(rows));
    Matrix q = m;
    for (std::size_t j = 0; j < cols; ++j) {
        // two orthogonalization passes against the settled columns
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < j; ++k) {
                double dot = 0.0;
                for (std::size_t i = 0; i < rows; ++i) dot += q(i, j) * q(i, k);
                for (std::size_t i = 0; i < rows; ++i) q(i, j) -= dot * q(i, k);
            }
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < rows; ++i) norm += q(i, j) * q(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-12)
            throw NumericError("gram_schmidt_columns: degenerate column " + std::to_string(j));
        for (std::size_t i = 0; i < rows; ++i) q(i, j) /= norm;
    }
    return q;
}

double effective_rank(const std::vector<double>& sv, EffectiveRankMethod method, double tau) {
    double sum = 0.0;
    for (double s : sv) sum += s;
    if (sum <= 0.0) throw NumericError("effective_rank: all-zero spectrum");
    if (method == EffectiveRankMethod::ThresholdFraction) {
        const double cutoff = tau * sv.front();
        std::size_t count = 0;
        for (double s : sv)
            if (s >= cutoff) ++count;
        return static_cast<double>(count);
    }
    double entropy = 0.0;
    for (double s : sv) {
        const double p = s / sum;
        if (p > 0.0) entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

std::size_t numerical_rank(const std::vector<double>& sv, double rel_tol) {
    if (sv.empty() || sv.front() <= 0.0) return 0;
    const double cutoff = rel_tol * sv.front();
    std::size_t count = 0;
    for (double s : sv)
        if (s > cutoff) ++count;
    return count;
}

Matrix random_normal_matrix(std::size_t rows, std::size_t cols, double sigma, RngStream& stream) {
    if (sigma <= 0.0) throw NumericError("random_normal_matrix: sigma must be > 0");
    Matrix m(rows, cols);
    for (double& v : m.data()) v = sigma * stream.normal();
    return m;
}

}  // namespace peftsim
