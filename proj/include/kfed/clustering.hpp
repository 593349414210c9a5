#ifndef KFED_CLUSTERING_HPP
#define KFED_CLUSTERING_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "error.hpp"
#include "matrix.hpp"

namespace kfed {

inline constexpr int kUnassigned = -1;

// Disjoint partition of row indices into k clusters plus one center per
// cluster. Rows labelled kUnassigned belong to no cluster.
struct Clustering {
    std::vector<int> assignment;
    Matrix centers;

    std::size_t k() const noexcept { return centers.rows(); }
};

inline std::vector<std::size_t> cluster_sizes(std::span<const int> labels, std::size_t k) {
    std::vector<std::size_t> sizes(k, 0);
    for (int l : labels) {
        if (l == kUnassigned) continue;
        require(l >= 0 && static_cast<std::size_t>(l) < k, "cluster label out of range");
        ++sizes[static_cast<std::size_t>(l)];
    }
    return sizes;
}

// Per-cluster means. Empty clusters keep the matching row of `fallback` when
// given, otherwise a zero row; `sizes_out` receives member counts.
inline Matrix cluster_means(const Matrix& a, std::span<const int> labels, std::size_t k,
                            const Matrix* fallback = nullptr,
                            std::vector<std::size_t>* sizes_out = nullptr) {
    require(labels.size() == a.rows(), "label count does not match row count");
    Matrix sums(k, a.cols());
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const int l = labels[i];
        if (l == kUnassigned) continue;
        require(l >= 0 && static_cast<std::size_t>(l) < k, "cluster label out of range");
        auto s = sums.row(static_cast<std::size_t>(l));
        auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) s[j] += r[j];
        ++sizes[static_cast<std::size_t>(l)];
    }
    for (std::size_t r = 0; r < k; ++r) {
        auto s = sums.row(r);
        if (sizes[r] == 0) {
            if (fallback != nullptr) {
                auto f = fallback->row(r);
                std::copy(f.begin(), f.end(), s.begin());
            }
            continue;
        }
        const double inv = 1.0 / static_cast<double>(sizes[r]);
        for (double& v : s) v *= inv;
    }
    if (sizes_out != nullptr) *sizes_out = std::move(sizes);
    return sums;
}

inline Clustering make_clustering(const Matrix& a, std::vector<int> labels, std::size_t k) {
    Clustering c;
    c.centers = cluster_means(a, labels, k);
    c.assignment = std::move(labels);
    return c;
}

// Index of the nearest center; ties go to the lowest index.
inline std::size_t nearest_center(std::span<const double> x, const Matrix& centers,
                                  double* best_sq = nullptr) {
    std::size_t best = 0;
    double best_d = squared_distance(x, centers.row(0));
    for (std::size_t r = 1; r < centers.rows(); ++r) {
        const double d = squared_distance(x, centers.row(r));
        if (d < best_d) {
            best_d = d;
            best = r;
        }
    }
    if (best_sq != nullptr) *best_sq = best_d;
    return best;
}

// Sum of squared distances of assigned rows to the given centers.
inline double assignment_cost(const Matrix& a, std::span<const int> labels, const Matrix& centers) {
    double cost = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        if (labels[i] == kUnassigned) continue;
        cost += squared_distance(a.row(i), centers.row(static_cast<std::size_t>(labels[i])));
    }
    return cost;
}

} // namespace kfed

#endif // KFED_CLUSTERING_HPP
