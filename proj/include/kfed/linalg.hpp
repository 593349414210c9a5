#ifndef KFED_LINALG_HPP
#define KFED_LINALG_HPP

// Spectral primitives: operator norm, Frobenius norm, rank-k projection.
//
// The top singular subspace comes from block subspace iteration on the
// smaller Gram matrix (M^T M or M M^T) with a Rayleigh-Ritz rotation each
// step. Start vectors are drawn from a fixed internal seed, so results are
// bit-reproducible for a given input.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "error.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace kfed {

struct SubspaceOptions {
    double tol = 1e-10;          // change in the top-k subspace between sweeps
    int max_iterations = 10000;
    std::size_t oversample = 6;  // extra block columns; speeds up convergence
};

// Eigenpairs of a symmetric matrix, values sorted descending.
struct SymmetricEigen {
    std::vector<double> values;
    Matrix vectors;  // column j holds the j-th eigenvector
    int iterations = 0;
    bool converged = false;
};

// Result of the truncated SVD: singular values and either the right
// (when rows >= cols) or the left singular vectors as columns of `basis`.
struct TruncatedSvd {
    std::vector<double> singular_values;
    Matrix basis;
    bool right_vectors = true;
    int iterations = 0;
    bool converged = false;
};

// Rows of `values` are the input rows projected onto the top-`rank` right
// singular subspace.
struct ProjectedMatrix {
    Matrix values;
    std::size_t rank = 0;
    std::vector<double> singular_values;
};

namespace detail {

inline Matrix gram(const Matrix& m, bool columns) {
    const std::size_t n = m.rows();
    const std::size_t d = m.cols();
    if (columns) {
        // M^T M, accumulated row by row
        Matrix g(d, d);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = m.row(i);
            for (std::size_t a = 0; a < d; ++a) {
                const double ra = r[a];
                if (ra == 0.0) continue;
                auto grow = g.row(a);
                for (std::size_t b = a; b < d; ++b) grow[b] += ra * r[b];
            }
        }
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < a; ++b) g(a, b) = g(b, a);
        return g;
    }
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) g(i, j) = g(j, i) = dot(m.row(i), m.row(j));
    return g;
}

// Cyclic Jacobi for the small Rayleigh-Ritz problem. `h` is overwritten.
inline SymmetricEigen jacobi_small(Matrix h) {
    const std::size_t b = h.rows();
    Matrix v = Matrix::identity(b);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        double total = 0.0;
        for (std::size_t p = 0; p < b; ++p)
            for (std::size_t q = 0; q < b; ++q) {
                total += h(p, q) * h(p, q);
                if (p != q) off += h(p, q) * h(p, q);
            }
        if (off <= 1e-30 * total || off == 0.0) break;
        for (std::size_t p = 0; p + 1 < b; ++p) {
            for (std::size_t q = p + 1; q < b; ++q) {
                const double hpq = h(p, q);
                if (hpq == 0.0) continue;
                const double theta = (h(q, q) - h(p, p)) / (2.0 * hpq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t r = 0; r < b; ++r) {
                    const double hrp = h(r, p);
                    const double hrq = h(r, q);
                    h(r, p) = c * hrp - s * hrq;
                    h(r, q) = s * hrp + c * hrq;
                }
                for (std::size_t r = 0; r < b; ++r) {
                    const double hpr = h(p, r);
                    const double hqr = h(q, r);
                    h(p, r) = c * hpr - s * hqr;
                    h(q, r) = s * hpr + c * hqr;
                }
                for (std::size_t r = 0; r < b; ++r) {
                    const double vrp = v(r, p);
                    const double vrq = v(r, q);
                    v(r, p) = c * vrp - s * vrq;
                    v(r, q) = s * vrp + c * vrq;
                }
            }
        }
    }
    std::vector<std::size_t> order(b);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return h(x, x) > h(y, y); });
    SymmetricEigen out;
    out.values.resize(b);
    out.vectors = Matrix(b, b);
    for (std::size_t j = 0; j < b; ++j) {
        out.values[j] = h(order[j], order[j]);
        for (std::size_t r = 0; r < b; ++r) out.vectors(r, j) = v(r, order[j]);
    }
    out.converged = true;
    return out;
}

// x (m x b) times w (b x b)
inline Matrix multiply(const Matrix& x, const Matrix& w) {
    Matrix out(x.rows(), w.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto xr = x.row(i);
        auto orow = out.row(i);
        for (std::size_t l = 0; l < x.cols(); ++l) {
            const double a = xr[l];
            if (a == 0.0) continue;
            auto wr = w.row(l);
            for (std::size_t j = 0; j < w.cols(); ++j) orow[j] += a * wr[j];
        }
    }
    return out;
}

// x^T y for two m x b blocks
inline Matrix multiply_tn(const Matrix& x, const Matrix& y) {
    Matrix out(x.cols(), y.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto xr = x.row(i);
        auto yr = y.row(i);
        for (std::size_t a = 0; a < x.cols(); ++a) {
            const double xa = xr[a];
            if (xa == 0.0) continue;
            auto orow = out.row(a);
            for (std::size_t b = 0; b < y.cols(); ++b) orow[b] += xa * yr[b];
        }
    }
    return out;
}

inline double column_dot(const Matrix& x, std::size_t a, const Matrix& y, std::size_t b) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, a) * y(i, b);
    return s;
}

// Modified Gram-Schmidt on the columns of z, in place. Columns that vanish
// (rank deficiency) are replaced by the matching column of `fallback`, or by
// a fresh random vector, then re-orthogonalized.
inline void orthonormalize(Matrix& z, const Matrix& fallback, CounterRng& rng) {
    const std::size_t m = z.rows();
    const std::size_t b = z.cols();
    double scale = 0.0;
    for (double v : z.values()) scale = std::max(scale, std::abs(v));
    for (std::size_t j = 0; j < b; ++j) {
        for (int attempt = 0;; ++attempt) {
            const double before = std::sqrt(column_dot(z, j, z, j));
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t p = 0; p < j; ++p) {
                    const double proj = column_dot(z, p, z, j);
                    for (std::size_t i = 0; i < m; ++i) z(i, j) -= proj * z(i, p);
                }
            }
            const double nrm = std::sqrt(column_dot(z, j, z, j));
            if (nrm > 1e-10 * before && nrm > 1e-300 && (scale > 0.0 || attempt > 0)) {
                for (std::size_t i = 0; i < m; ++i) z(i, j) /= nrm;
                break;
            }
            require(attempt < 64, "subspace iteration could not complete an orthonormal basis");
            if (attempt == 0 && !fallback.empty()) {
                for (std::size_t i = 0; i < m; ++i) z(i, j) = fallback(i, j);
            } else {
                for (std::size_t i = 0; i < m; ++i) z(i, j) = rng.normal();
            }
        }
    }
}

inline constexpr std::uint64_t kStartSeed = 0x6b666564u;  // fixed start-vector seed

// Top-`k` eigenpairs of a symmetric positive semidefinite matrix.
inline SymmetricEigen top_eigen_psd(const Matrix& g, std::size_t k, const SubspaceOptions& opt) {
    const std::size_t m = g.rows();
    require(k >= 1 && k <= m, "eigen count out of range");
    const std::size_t b = std::min(m, k + opt.oversample);

    CounterRng rng(kStartSeed);
    Matrix q(m, b);
    for (double& v : q.values()) v = rng.normal();
    orthonormalize(q, Matrix{}, rng);

    SymmetricEigen out;
    bool all_zero = true;
    for (double v : g.values())
        if (v != 0.0) { all_zero = false; break; }
    if (all_zero || b == m) {
        // Either nothing to find, or the block spans everything: a single
        // Rayleigh-Ritz step is exact.
        if (b == m) q = Matrix::identity(m);
        Matrix z = multiply(g, q);
        auto ritz = jacobi_small(multiply_tn(q, z));
        Matrix vecs = multiply(q, ritz.vectors);
        out.values.assign(ritz.values.begin(), ritz.values.begin() + static_cast<long>(k));
        out.vectors = Matrix(m, k);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) out.vectors(i, j) = vecs(i, j);
        for (double& v : out.values) v = std::max(v, 0.0);
        out.converged = true;
        return out;
    }

    for (int it = 1; it <= opt.max_iterations; ++it) {
        Matrix z = multiply(g, q);
        auto ritz = jacobi_small(multiply_tn(q, z));
        q = multiply(q, ritz.vectors);
        z = multiply(z, ritz.vectors);
        Matrix previous = q;
        orthonormalize(z, previous, rng);

        // distance between the old and new top-k subspaces: || Z_k - Q_k Q_k^T Z_k ||_F
        double residual = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<double> col(m);
            for (std::size_t i = 0; i < m; ++i) col[i] = z(i, j);
            for (std::size_t p = 0; p < k; ++p) {
                const double proj = column_dot(previous, p, z, j);
                for (std::size_t i = 0; i < m; ++i) col[i] -= proj * previous(i, p);
            }
            for (double c : col) residual += c * c;
        }
        q = std::move(z);
        out.iterations = it;
        if (std::sqrt(residual) < opt.tol) {
            out.converged = true;
            break;
        }
    }

    Matrix z = multiply(g, q);
    auto ritz = jacobi_small(multiply_tn(q, z));
    Matrix vecs = multiply(q, ritz.vectors);
    out.values.assign(ritz.values.begin(), ritz.values.begin() + static_cast<long>(k));
    for (double& v : out.values) v = std::max(v, 0.0);
    out.vectors = Matrix(m, k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) out.vectors(i, j) = vecs(i, j);
    return out;
}

} // namespace detail

inline TruncatedSvd truncated_svd(const Matrix& m, std::size_t k, const SubspaceOptions& opt = {}) {
    if (m.empty()) fail(ErrorKind::parameter, "empty matrix");
    require_finite(m);
    const bool right = m.rows() >= m.cols();
    require(k >= 1 && k <= std::min(m.rows(), m.cols()), "rank k out of range [1, min(n, d)]");
    auto eig = detail::top_eigen_psd(detail::gram(m, right), k, opt);
    TruncatedSvd out;
    out.singular_values.reserve(k);
    for (double v : eig.values) out.singular_values.push_back(std::sqrt(v));
    out.basis = std::move(eig.vectors);
    out.right_vectors = right;
    out.iterations = eig.iterations;
    out.converged = eig.converged;
    return out;
}

// Largest singular value.
inline double operator_norm(const Matrix& m) {
    if (m.empty()) fail(ErrorKind::parameter, "empty matrix");
    return truncated_svd(m, 1).singular_values.front();
}

inline double frobenius_norm(const Matrix& m) {
    require_finite(m);
    double s = 0.0;
    for (double v : m.values()) s += v * v;
    return std::sqrt(s);
}

// Best rank-k approximation M V_k V_k^T (equivalently U_k U_k^T M).
inline ProjectedMatrix top_k_projection(const Matrix& m, std::size_t k,
                                        const SubspaceOptions& opt = {}) {
    if (m.empty()) fail(ErrorKind::parameter, "empty matrix");
    require(k >= 1 && k <= std::min(m.rows(), m.cols()), "rank k out of range [1, min(n, d)]");
    require_finite(m);
    ProjectedMatrix out;
    out.rank = k;
    if (k == std::min(m.rows(), m.cols())) {
        // the top-k subspace is the whole row (or column) space
        out.values = m;
        return out;
    }
    auto svd = truncated_svd(m, k, opt);
    out.singular_values = svd.singular_values;
    const Matrix& basis = svd.basis;
    if (svd.right_vectors) {
        Matrix coords = detail::multiply(m, basis);  // n x k
        out.values = Matrix(m.rows(), m.cols());
        for (std::size_t i = 0; i < m.rows(); ++i) {
            auto orow = out.values.row(i);
            for (std::size_t j = 0; j < k; ++j) {
                const double c = coords(i, j);
                for (std::size_t a = 0; a < m.cols(); ++a) orow[a] += c * basis(a, j);
            }
        }
    } else {
        Matrix coords = detail::multiply_tn(basis, m);  // k x d
        out.values = detail::multiply(basis, coords);
    }
    return out;
}

} // namespace kfed

#endif // KFED_LINALG_HPP
