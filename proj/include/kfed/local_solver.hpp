#ifndef KFED_LOCAL_SOLVER_HPP
#define KFED_LOCAL_SOLVER_HPP

// Per-device k-means: spectral projection, seeding on the projected rows,
// a 1/3-ratio thresholded assignment to pick clean initial means, then Lloyd
// steps on the unprojected data.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "clustering.hpp"
#include "error.hpp"
#include "linalg.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace kfed {

struct LloydOptions {
    double tol = 1e-7;  // max center displacement
    int max_iter = 500;
};

struct LloydResult {
    Clustering clustering;
    int iterations = 0;
    bool converged = false;
    std::vector<double> cost_history;  // cost after each assign + update step
};

// Alternates nearest-center assignment and mean updates. An empty cluster
// keeps its previous center.
inline LloydResult lloyd_iterate(const Matrix& a, const Matrix& initial_centers,
                                 const LloydOptions& opt = {}) {
    require(initial_centers.rows() >= 1, "lloyd_iterate needs k >= 1");
    require(initial_centers.cols() == a.cols(), "center dimension does not match data");
    require(opt.max_iter >= 1, "max_iter must be positive");
    const std::size_t k = initial_centers.rows();

    LloydResult out;
    Matrix centers = initial_centers;
    std::vector<int> labels(a.rows(), 0);
    for (int it = 1; it <= opt.max_iter; ++it) {
        for (std::size_t i = 0; i < a.rows(); ++i)
            labels[i] = static_cast<int>(nearest_center(a.row(i), centers));
        Matrix updated = cluster_means(a, labels, k, &centers);
        out.cost_history.push_back(assignment_cost(a, labels, updated));
        double movement = 0.0;
        for (std::size_t r = 0; r < k; ++r)
            movement = std::max(movement, distance(updated.row(r), centers.row(r)));
        centers = std::move(updated);
        out.iterations = it;
        if (movement < opt.tol) {
            out.converged = true;
            break;
        }
    }
    out.clustering.assignment = std::move(labels);
    out.clustering.centers = std::move(centers);
    return out;
}

inline std::size_t count_distinct_rows(const Matrix& a) {
    std::vector<std::size_t> order(a.rows());
    std::iota(order.begin(), order.end(), 0);
    auto less = [&](std::size_t x, std::size_t y) {
        auto rx = a.row(x);
        auto ry = a.row(y);
        return std::lexicographical_compare(rx.begin(), rx.end(), ry.begin(), ry.end());
    };
    std::sort(order.begin(), order.end(), less);
    std::size_t distinct = order.empty() ? 0 : 1;
    for (std::size_t i = 1; i < order.size(); ++i)
        if (less(order[i - 1], order[i])) ++distinct;
    return distinct;
}

struct SeedOptions {
    int restarts = 5;
    LloydOptions lloyd{};
};

// D^2 sampling.
inline Matrix kmeanspp_centers(const Matrix& a, std::size_t k, CounterRng& rng) {
    const std::size_t n = a.rows();
    Matrix centers(k, a.cols());
    std::vector<double> mind(n, std::numeric_limits<double>::infinity());
    std::size_t pick = static_cast<std::size_t>(rng.below(n));
    for (std::size_t c = 0; c < k; ++c) {
        auto src = a.row(pick);
        std::copy(src.begin(), src.end(), centers.row(c).begin());
        if (c + 1 == k) break;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mind[i] = std::min(mind[i], squared_distance(a.row(i), centers.row(c)));
            total += mind[i];
        }
        // total > 0 because at least k distinct rows exist
        const double target = rng.uniform() * total;
        double acc = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (mind[i] <= 0.0) continue;
            acc += mind[i];
            if (acc > target) {
                pick = i;
                break;
            }
        }
        if (pick == n) {
            // rounding left target at the very end of the range
            for (std::size_t i = n; i-- > 0;)
                if (mind[i] > 0.0) { pick = i; break; }
        }
    }
    return centers;
}

// Constant-factor seeding on the projected rows: k-means++ followed by Lloyd,
// best of several restarts.
inline Matrix approx_seed(const Matrix& projected, std::size_t k, std::uint64_t seed,
                          const SeedOptions& opt = {}) {
    require(k >= 1, "k must be positive");
    if (count_distinct_rows(projected) < k) fail(ErrorKind::parameter, "insufficient distinct points");
    Matrix best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < std::max(1, opt.restarts); ++restart) {
        CounterRng rng(seed, static_cast<std::uint64_t>(restart));
        auto start = kmeanspp_centers(projected, k, rng);
        auto refined = lloyd_iterate(projected, start, opt.lloyd);
        const double cost = refined.cost_history.back();
        if (cost < best_cost) {
            best_cost = cost;
            best = std::move(refined.clustering.centers);
        }
    }
    return best;
}

struct ThresholdResult {
    std::vector<int> membership;  // cluster r when the row is in S_r, else kUnassigned
    Matrix centers;               // mean of S_r, or nu_r when S_r is empty
    std::vector<std::size_t> sizes;
    std::size_t unassigned = 0;
};

// Row i joins S_r iff |x_i - nu_r| <= |x_i - nu_s| / 3 for every s != r.
// Means are taken over `original` rows when given (same row order as
// `projected`), otherwise over the projected rows.
inline ThresholdResult threshold_assign(const Matrix& projected, const Matrix& nu,
                                        const Matrix* original = nullptr) {
    require(nu.rows() >= 1 && nu.cols() == projected.cols(), "center shape does not match data");
    const Matrix& source = original != nullptr ? *original : projected;
    require(source.rows() == projected.rows(), "original and projected row counts differ");
    const std::size_t k = nu.rows();

    ThresholdResult out;
    out.membership.assign(projected.rows(), kUnassigned);
    std::vector<double> dist(k);
    for (std::size_t i = 0; i < projected.rows(); ++i) {
        for (std::size_t r = 0; r < k; ++r) dist[r] = distance(projected.row(i), nu.row(r));
        for (std::size_t r = 0; r < k; ++r) {
            bool inside = true;
            for (std::size_t s = 0; s < k && inside; ++s)
                if (s != r && !(3.0 * dist[r] <= dist[s])) inside = false;
            if (inside) {
                out.membership[i] = static_cast<int>(r);
                break;
            }
        }
        if (out.membership[i] == kUnassigned) ++out.unassigned;
    }
    require(source.cols() == nu.cols(), "original data dimension does not match centers");
    out.centers = cluster_means(source, out.membership, k, &nu, &out.sizes);
    return out;
}

struct LocalOptions {
    LloydOptions lloyd{};
    SeedOptions seeding{};
};

struct LocalResult {
    Clustering clusters;  // U_r over device rows, centers theta_r
    std::size_t unassigned_after_threshold = 0;
    int lloyd_iterations = 0;
    std::vector<double> cost_history;

    const Matrix& centers() const noexcept { return clusters.centers; }
};

inline LocalResult local_cluster(const Matrix& data, std::size_t k, std::uint64_t seed,
                                 const LocalOptions& opt = {}) {
    require(!data.empty(), "device has no data");
    require(k >= 1 && k <= data.rows(), "device k out of range");
    require_finite(data, "device data");
    const std::size_t rank = std::min({k, data.rows(), data.cols()});
    const auto projected = top_k_projection(data, rank);
    const Matrix nu = approx_seed(projected.values, k, seed, opt.seeding);
    const auto thresholded = threshold_assign(projected.values, nu, &data);
    auto lloyd = lloyd_iterate(data, thresholded.centers, opt.lloyd);

    LocalResult out;
    out.clusters = std::move(lloyd.clustering);
    out.unassigned_after_threshold = thresholded.unassigned;
    out.lloyd_iterations = lloyd.iterations;
    out.cost_history = std::move(lloyd.cost_history);
    return out;
}

} // namespace kfed

#endif // KFED_LOCAL_SOLVER_HPP
