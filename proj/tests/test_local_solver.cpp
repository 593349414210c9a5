#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "kfed/datagen.hpp"
#include "kfed/evaluation.hpp"
#include "kfed/local_solver.hpp"
#include "kfed/separation.hpp"
#include "oracles.hpp"

using namespace kfed;

namespace {

std::set<std::vector<double>> row_set(const Matrix& m) {
    std::set<std::vector<double>> out;
    for (std::size_t i = 0; i < m.rows(); ++i) out.emplace(m.row(i).begin(), m.row(i).end());
    return out;
}

Matrix column(std::initializer_list<double> xs) {
    Matrix m(0, 1);
    for (double x : xs) m.append_row(std::vector<double>{x});
    return m;
}

} // namespace

TEST(ApproxSeed, FindsZeroCostOptimum) {
    Matrix pts{{0, 0}, {100, 0}, {0, 100}};
    Matrix a(0, 2);
    for (int copy = 0; copy < 3; ++copy)
        for (std::size_t r = 0; r < 3; ++r) a.append_row(pts.row(r));
    const Matrix centers = approx_seed(a, 3, 42);
    EXPECT_EQ(row_set(centers), row_set(pts));
}

TEST(ApproxSeed, SinglePointRepeated) {
    Matrix a(0, 3);
    for (int i = 0; i < 6; ++i) a.append_row(std::vector<double>{1.5, -2, 7});
    const Matrix centers = approx_seed(a, 1, 3);
    EXPECT_EQ(centers, (Matrix{{1.5, -2, 7}}));
}

TEST(ApproxSeed, InsufficientDistinctPoints) {
    Matrix a{{1, 1}, {1, 1}, {2, 2}};
    try {
        approx_seed(a, 3, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "insufficient distinct points");
    }
}

TEST(ApproxSeed, WithinTenTimesBruteForceOnPlantedEight) {
    Matrix a(0, 2);
    CounterRng rng(17);
    for (int i = 0; i < 8; ++i) {
        const double cx = i < 4 ? 0.0 : 6.0;
        a.append_row(std::vector<double>{cx + rng.normal(), rng.normal()});
    }
    const double optimum = oracle::brute_force_kmeans(a, 2);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Matrix centers = approx_seed(a, 2, seed);
        std::vector<int> labels(a.rows());
        for (std::size_t i = 0; i < a.rows(); ++i) labels[i] = static_cast<int>(nearest_center(a.row(i), centers));
        EXPECT_LE(assignment_cost(a, labels, centers), 10.0 * optimum + 1e-12);
    }
}

TEST(ThresholdAssign, PointAtCenterJoins) {
    Matrix nu{{0, 0}, {10, 0}, {0, 10}};
    Matrix a{{0, 0}};
    const auto res = threshold_assign(a, nu);
    EXPECT_EQ(res.membership[0], 0);
}

TEST(ThresholdAssign, EquidistantPointJoinsNothing) {
    Matrix nu{{0, 0}, {10, 0}};
    Matrix a{{5, 3}};
    const auto res = threshold_assign(a, nu);
    EXPECT_EQ(res.membership[0], kUnassigned);
    EXPECT_EQ(res.unassigned, 1u);
    // empty S_r falls back to nu_r
    EXPECT_EQ(res.centers, nu);
}

TEST(ThresholdAssign, MatchesPerPointInequality) {
    const Matrix a = oracle::random_matrix(20, 2, 88, 3.0);
    Matrix nu{{-2, 0}, {2, 0.5}};
    const auto res = threshold_assign(a, nu);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double x = a(i, 0), y = a(i, 1);
        const double d0 = std::hypot(x + 2, y);
        const double d1 = std::hypot(x - 2, y - 0.5);
        int expected = kUnassigned;
        if (d0 <= d1 / 3) expected = 0;
        else if (d1 <= d0 / 3) expected = 1;
        EXPECT_EQ(res.membership[i], expected) << "row " << i;
    }
    // means over members
    for (int r = 0; r < 2; ++r) {
        double sx = 0, sy = 0;
        int cnt = 0;
        for (std::size_t i = 0; i < a.rows(); ++i)
            if (res.membership[i] == r) {
                sx += a(i, 0);
                sy += a(i, 1);
                ++cnt;
            }
        if (cnt == 0) continue;
        EXPECT_NEAR(res.centers(static_cast<std::size_t>(r), 0), sx / cnt, 1e-12);
        EXPECT_NEAR(res.centers(static_cast<std::size_t>(r), 1), sy / cnt, 1e-12);
    }
}

TEST(ThresholdAssign, MeansUseOriginalRows) {
    Matrix projected{{0, 0}, {10, 0}};
    Matrix original{{0, 1}, {10, -1}};
    Matrix nu{{0, 0}, {10, 0}};
    const auto res = threshold_assign(projected, nu, &original);
    EXPECT_EQ(res.centers, original);
}

TEST(ThresholdAssign, SetsAreDisjoint) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Matrix a = oracle::random_matrix(30, 3, seed);
        const Matrix nu = oracle::random_matrix(4, 3, seed + 1000);
        const auto res = threshold_assign(a, nu);
        for (std::size_t i = 0; i < a.rows(); ++i) {
            int hits = 0;
            for (std::size_t r = 0; r < 4; ++r) {
                bool inside = true;
                for (std::size_t s = 0; s < 4; ++s)
                    if (s != r && 3 * distance(a.row(i), nu.row(r)) > distance(a.row(i), nu.row(s))) inside = false;
                hits += inside;
            }
            EXPECT_LE(hits, 1);
        }
    }
}

TEST(LloydIterate, FixedPointImmediately) {
    const auto res = lloyd_iterate(column({0, 2}), column({0, 2}));
    EXPECT_EQ(res.iterations, 1);
    EXPECT_TRUE(res.converged);
    EXPECT_EQ(res.cost_history.back(), 0.0);
}

TEST(LloydIterate, ObviousHalves) {
    const Matrix a = column({0, 1, 10, 11});
    const auto res = lloyd_iterate(a, column({0.4, 10.6}));
    EXPECT_NEAR(res.clustering.centers(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(res.clustering.centers(1, 0), 10.5, 1e-15);
    EXPECT_NEAR(res.cost_history.back(), 1.0, 1e-12);
    EXPECT_NEAR(kmeans_cost(a, res.clustering.assignment), 1.0, 1e-12);
}

TEST(LloydIterate, MatchesStepSimulationAndBruteForce) {
    CounterRng rng(2024);
    std::vector<double> xs;
    for (int i = 0; i < 10; ++i) xs.push_back(i < 5 ? rng.normal() : 3.0 + rng.normal());
    Matrix a(0, 1);
    for (double x : xs) a.append_row(std::vector<double>{x});
    const double c0 = xs[0], c1 = xs[1];

    // independent scalar simulation
    double m0 = c0, m1 = c1;
    std::vector<int> lab(10);
    for (int it = 0; it < 500; ++it) {
        for (int i = 0; i < 10; ++i) lab[i] = std::abs(xs[i] - m1) < std::abs(xs[i] - m0) ? 1 : 0;
        double s0 = 0, s1 = 0;
        int n0 = 0, n1 = 0;
        for (int i = 0; i < 10; ++i) (lab[i] ? (s1 += xs[i], ++n1) : (s0 += xs[i], ++n0));
        const double nm0 = n0 ? s0 / n0 : m0, nm1 = n1 ? s1 / n1 : m1;
        const double move = std::max(std::abs(nm0 - m0), std::abs(nm1 - m1));
        m0 = nm0;
        m1 = nm1;
        if (move < 1e-7) break;
    }
    double sim_cost = 0;
    for (int i = 0; i < 10; ++i) sim_cost += std::pow(xs[i] - (lab[i] ? m1 : m0), 2);

    const auto res = lloyd_iterate(a, column({c0, c1}));
    EXPECT_NEAR(res.clustering.centers(0, 0), m0, 1e-12);
    EXPECT_NEAR(res.clustering.centers(1, 0), m1, 1e-12);
    EXPECT_NEAR(res.cost_history.back(), sim_cost, 1e-10);
    EXPECT_GE(res.cost_history.back(), oracle::brute_force_kmeans(a, 2) - 1e-10);
}

TEST(LloydIterate, EmptyClusterKeepsCenter) {
    const auto res = lloyd_iterate(column({0, 1, 2}), column({1, 100}));
    EXPECT_EQ(res.clustering.centers(1, 0), 100.0);
}

TEST(LloydIterate, TiesGoToLowestIndex) {
    const auto res = lloyd_iterate(column({5}), column({4, 6}), {1e-7, 1});
    EXPECT_EQ(res.clustering.assignment[0], 0);
}

TEST(LloydIterate, CostIsMonotone) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Matrix a = oracle::random_matrix(60, 4, seed);
        const Matrix init = oracle::random_matrix(5, 4, seed + 77);
        const auto res = lloyd_iterate(a, init);
        for (std::size_t t = 1; t < res.cost_history.size(); ++t)
            EXPECT_LE(res.cost_history[t], res.cost_history[t - 1] + 1e-9);
    }
}

TEST(LocalCluster, RecoversTwoSeparatedClusters) {
    MixtureSpec spec;
    spec.k = 2;
    spec.d = 20;
    spec.n = 200;
    spec.placement = MeanPlacement::sigma_units;
    spec.c = 50;
    spec.seed = 5;
    const auto inst = generate_mixture(spec);
    const auto res = local_cluster(inst.data, 2, 1);
    EXPECT_EQ(matched_accuracy(res.clusters.assignment, inst.labels).accuracy, 1.0);
}

TEST(LocalCluster, SingleClusterIsGlobalMean) {
    const Matrix a = oracle::random_matrix(25, 3, 4);
    const auto res = local_cluster(a, 1, 0);
    const Matrix mean = cluster_means(a, std::vector<int>(25, 0), 1);
    EXPECT_LT(max_abs_diff(res.centers(), mean), 1e-12);
    for (int l : res.clusters.assignment) EXPECT_EQ(l, 0);
}

TEST(LocalCluster, CentersAreMeansOfFinalClusters) {
    const Matrix a = oracle::random_matrix(80, 5, 12);
    const auto res = local_cluster(a, 3, 9);
    ASSERT_EQ(res.centers().rows(), 3u);
    std::vector<std::size_t> sizes;
    const Matrix means = cluster_means(a, res.clusters.assignment, 3, &res.centers(), &sizes);
    EXPECT_LT(max_abs_diff(means, res.centers()), 1e-8);
}

TEST(LocalCluster, Deterministic) {
    const Matrix a = oracle::random_matrix(70, 6, 3);
    const auto x = local_cluster(a, 3, 11);
    const auto y = local_cluster(a, 3, 11);
    EXPECT_EQ(x.clusters.assignment, y.clusters.assignment);
    EXPECT_EQ(x.centers(), y.centers());
    EXPECT_EQ(x.cost_history, y.cost_history);
}

TEST(LocalCluster, TableOneStyleDeviceSubproblem) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        MixtureSpec spec;
        spec.k = 4;
        spec.d = 100;
        spec.n = 4 * 40;
        spec.c = 100;
        spec.m0 = 5;
        spec.seed = seed;
        const auto inst = generate_mixture(spec);
        const auto res = local_cluster(inst.data, 4, seed);
        total += matched_accuracy(res.clusters.assignment, inst.labels).accuracy;
    }
    EXPECT_GE(total / 10, 0.99);
}

TEST(LocalCluster, CenterAccuracyBound) {
    constexpr double c = 100.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        MixtureSpec spec;
        spec.k = 3;
        spec.d = 30;
        spec.n = 90;
        spec.c = c;
        spec.m0 = 2;
        spec.seed = seed + 300;
        const auto inst = generate_mixture(spec);
        const auto res = local_cluster(inst.data, 3, seed);
        const auto match = matched_accuracy(res.clusters.assignment, inst.labels);
        const double norm = centered_operator_norm(inst.data, inst.labels, 3);
        const Matrix truth_means = cluster_means(inst.data, inst.labels, 3);
        const auto sizes = cluster_sizes(inst.labels, 3);
        for (std::size_t r = 0; r < 3; ++r) {
            const auto t = static_cast<std::size_t>(match.permutation[r]);
            const double err = distance(res.centers().row(r), truth_means.row(t));
            EXPECT_LE(err, 25.0 / c * norm / std::sqrt(static_cast<double>(sizes[t])) + 1e-9);
        }
    }
}

TEST(LocalCluster, RejectsBadK) {
    const Matrix a = oracle::random_matrix(5, 2, 1);
    EXPECT_THROW(local_cluster(a, 0, 0), Error);
    EXPECT_THROW(local_cluster(a, 6, 0), Error);
}
