#ifndef KFED_EVALUATION_HPP
#define KFED_EVALUATION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clustering.hpp"
#include "error.hpp"
#include "matrix.hpp"

namespace kfed {

// Sum over clusters of squared distances to the cluster mean. Unassigned
// rows are ignored.
inline double kmeans_cost(const Matrix& a, std::span<const int> labels) {
    require(labels.size() == a.rows(), "label count does not match row count");
    int max_label = -1;
    for (int l : labels) max_label = std::max(max_label, l);
    if (max_label < 0) return 0.0;
    const auto k = static_cast<std::size_t>(max_label) + 1;
    const Matrix means = cluster_means(a, labels, k);
    return assignment_cost(a, labels, means);
}

// Minimum-cost perfect matching on a square matrix (Kuhn-Munkres with
// potentials, O(n^3)). Returns row -> column.
inline std::vector<std::size_t> hungarian_min(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    if (n == 0) return {};
    constexpr double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; column 0 is a sentinel
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        require(cost[i - 1].size() == n, "cost matrix must be square");
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(n, 0);
    for (std::size_t j = 1; j <= n; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

struct EvalResult {
    std::optional<double> kmeans_cost;
    double accuracy = 0.0;
    std::size_t misclassified = 0;
    std::size_t n = 0;
    std::vector<int> permutation;  // predicted label -> truth label (padded to max(k_pred, k_true))
};

// Label counts: rows are predicted labels, columns truth labels, both padded
// to the larger label count.
inline std::vector<std::vector<std::size_t>> contingency(std::span<const int> pred, std::span<const int> truth) {
    require(pred.size() == truth.size(), "prediction and truth cover different row sets");
    int kp = 0;
    int kt = 0;
    for (int l : pred) kp = std::max(kp, l + 1);
    for (int l : truth) kt = std::max(kt, l + 1);
    const auto size = static_cast<std::size_t>(std::max({kp, kt, 1}));
    std::vector<std::vector<std::size_t>> table(size, std::vector<std::size_t>(size, 0));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || truth[i] < 0) continue;
        ++table[static_cast<std::size_t>(pred[i])][static_cast<std::size_t>(truth[i])];
    }
    return table;
}

// Agreement under the best bijection of labels. Rows the prediction leaves
// unassigned count as misclassified.
inline EvalResult matched_accuracy(std::span<const int> pred, std::span<const int> truth) {
    const auto table = contingency(pred, truth);
    const std::size_t size = table.size();
    std::vector<std::vector<double>> cost(size, std::vector<double>(size));
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) cost[r][c] = -static_cast<double>(table[r][c]);
    const auto match = hungarian_min(cost);

    EvalResult out;
    out.n = pred.size();
    std::size_t agree = 0;
    out.permutation.resize(size);
    for (std::size_t r = 0; r < size; ++r) {
        out.permutation[r] = static_cast<int>(match[r]);
        agree += table[r][match[r]];
    }
    out.misclassified = out.n - agree;
    out.accuracy = out.n == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(out.n);
    return out;
}

inline EvalResult evaluate(const Matrix& a, std::span<const int> pred, std::span<const int> truth) {
    auto res = matched_accuracy(pred, truth);
    res.kmeans_cost = kmeans_cost(a, pred);
    return res;
}

struct CostRatio {
    std::optional<double> ratio;  // (phi(k') - phi*) / (phi(k) - phi*)
    std::string status;           // "ok" or the degeneracy reason
};

inline CostRatio cost_ratio_report(double oracle_cost, double structured_cost, double random_cost) {
    if (random_cost <= oracle_cost + 1e-12) return {std::nullopt, "degenerate: random matches oracle"};
    return {(structured_cost - oracle_cost) / (random_cost - oracle_cost), "ok"};
}

} // namespace kfed

#endif // KFED_EVALUATION_HPP
