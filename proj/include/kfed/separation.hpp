#ifndef KFED_SEPARATION_HPP
#define KFED_SEPARATION_HPP

// Separation diagnostics for a labelled clustering on a device partition:
// the per-cluster scales built from ||A - C||_op, active / inactive pair
// requirements, the proximity condition, and an audit of the two
// unconditional per-device inequalities (mean shift, norm change).

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
#include "federation.hpp"
#include "linalg.hpp"
#include "matrix.hpp"

namespace kfed {

// Row i of the result is the mean of row i's cluster.
inline Matrix build_center_matrix(const Matrix& a, std::span<const int> labels, std::size_t k) {
    std::vector<std::size_t> sizes;
    const Matrix means = cluster_means(a, labels, k, nullptr, &sizes);
    for (std::size_t r = 0; r < k; ++r)
        if (sizes[r] == 0) fail(ErrorKind::parameter, "empty cluster in target");
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        require(labels[i] != kUnassigned, "target clustering does not cover row " + std::to_string(i));
        auto src = means.row(static_cast<std::size_t>(labels[i]));
        std::copy(src.begin(), src.end(), c.row(i).begin());
    }
    return c;
}

inline double centered_operator_norm(const Matrix& a, std::span<const int> labels, std::size_t k) {
    return operator_norm(a - build_center_matrix(a, labels, k));
}

enum class PairStatus { active, inactive };

inline const char* to_string(PairStatus s) noexcept { return s == PairStatus::active ? "active" : "inactive"; }

struct PairSeparation {
    std::size_t r = 0;
    std::size_t s = 0;
    PairStatus status = PairStatus::inactive;
    double mean_distance = 0.0;
    double ratio = 0.0;  // c_rs = |mu_r - mu_s| / (2 sqrt(m0) (Delta_r + Delta_s))
    bool active_ok = false;
    bool inactive_ok = false;
};

struct ProximityResult {
    std::size_t bad_count = 0;
    std::vector<std::size_t> bad_indices;
    std::vector<std::string> warnings;  // skipped pairs with coincident means
};

struct SeparationReport {
    std::size_t k = 0;
    std::size_t k_prime = 0;
    double m0 = 0.0;
    bool m0_estimated = false;
    double c = 100.0;
    double centered_norm = 0.0;  // ||A - C||_op
    std::vector<std::size_t> cluster_sizes;
    std::vector<double> tilde_delta;  // sqrt(k)  ||A-C|| / sqrt(n_r)
    std::vector<double> delta;        // k'       ||A-C|| / sqrt(n_r)
    double lambda = 0.0;              // sqrt(k') ||A-C|| / sqrt(min device size)
    double lambda_cluster_min = 0.0;  // same with the smallest cluster size
    std::size_t n_min_device = 0;
    std::size_t n_min_cluster = 0;
    std::size_t n_max_cluster = 0;
    std::vector<PairSeparation> pairs;  // r < s
    ProximityResult proximity;

    const PairSeparation& pair(std::size_t r, std::size_t s) const {
        if (r > s) std::swap(r, s);
        require(r != s && s < k, "pair index out of range");
        // row-major upper triangle
        const std::size_t idx = r * k - r * (r + 1) / 2 + (s - r - 1);
        return pairs[idx];
    }

    std::size_t count(PairStatus status) const {
        return static_cast<std::size_t>(
            std::count_if(pairs.begin(), pairs.end(), [&](const auto& p) { return p.status == status; }));
    }
};

// n^(z)_r: rows of cluster r on device z.
inline std::vector<std::vector<std::size_t>> device_cluster_counts(std::span<const int> labels, std::size_t k,
                                                                   const DevicePartition& partition) {
    std::vector<std::vector<std::size_t>> counts(partition.devices(), std::vector<std::size_t>(k, 0));
    for (std::size_t z = 0; z < partition.devices(); ++z)
        for (auto i : partition.device_rows[z]) {
            require(i < labels.size(), "partition row beyond label count");
            const int l = labels[i];
            require(l >= 0 && static_cast<std::size_t>(l) < k, "row " + std::to_string(i) + " has no target cluster");
            ++counts[z][static_cast<std::size_t>(l)];
        }
    return counts;
}

// Smallest m0 with n^(z)_r >= n_r / m0 for every nonempty subset.
inline double estimate_m0(std::span<const int> labels, std::size_t k, const DevicePartition& partition) {
    const auto counts = device_cluster_counts(labels, k, partition);
    const auto sizes = cluster_sizes(labels, k);
    double m0 = 1.0;
    for (const auto& dev : counts)
        for (std::size_t r = 0; r < k; ++r)
            if (dev[r] > 0) m0 = std::max(m0, static_cast<double>(sizes[r]) / static_cast<double>(dev[r]));
    return m0;
}

// Largest number of nonempty target subsets on one device.
inline std::size_t observed_k_prime(std::span<const int> labels, std::size_t k, const DevicePartition& partition) {
    std::size_t kp = 0;
    for (const auto& dev : device_cluster_counts(labels, k, partition))
        kp = std::max<std::size_t>(kp, static_cast<std::size_t>(std::count_if(dev.begin(), dev.end(),
                                                                              [](auto v) { return v > 0; })));
    return kp;
}

// Rows of T_s failing the margin along the mu_r -- mu_s line for some r.
inline ProximityResult proximity_check(const Matrix& a, std::span<const int> labels, std::size_t k,
                                       std::optional<double> centered_norm = std::nullopt) {
    require(k >= 2, "proximity condition needs k >= 2");
    std::vector<std::size_t> sizes;
    const Matrix means = cluster_means(a, labels, k, nullptr, &sizes);
    for (auto sz : sizes)
        if (sz == 0) fail(ErrorKind::parameter, "empty cluster in target");
    const double norm = centered_norm ? *centered_norm : centered_operator_norm(a, labels, k);

    ProximityResult out;
    std::vector<std::vector<char>> skip(k, std::vector<char>(k, 0));
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t s = r + 1; s < k; ++s)
            if (squared_distance(means.row(r), means.row(s)) == 0.0) {
                skip[r][s] = skip[s][r] = 1;
                out.warnings.push_back("clusters " + std::to_string(r) + " and " + std::to_string(s) +
                                       " have coincident means; pair skipped");
            }

    const std::size_t d = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto s = static_cast<std::size_t>(labels[i]);
        auto x = a.row(i);
        auto mu_s = means.row(s);
        bool bad = false;
        for (std::size_t r = 0; r < k && !bad; ++r) {
            if (r == s || skip[r][s]) continue;
            auto mu_r = means.row(r);
            // projection onto the line: mu_s + t (mu_r - mu_s)
            double uu = 0.0;
            double xu = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double u = mu_r[j] - mu_s[j];
                uu += u * u;
                xu += (x[j] - mu_s[j]) * u;
            }
            const double t = xu / uu;
            const double len = std::sqrt(uu);
            const double margin = (std::abs(t - 1.0) - std::abs(t)) * len;
            const double required = (1.0 / std::sqrt(static_cast<double>(sizes[r])) +
                                     1.0 / std::sqrt(static_cast<double>(sizes[s]))) * norm;
            if (margin < required) bad = true;
        }
        if (bad) {
            ++out.bad_count;
            out.bad_indices.push_back(i);
        }
    }
    return out;
}

// Proximity condition evaluated on every device's own local problem (the
// device's nonempty target subsets as its clusters). Devices holding a single
// cluster have no pairs and contribute nothing.
struct LocalProximity {
    std::size_t bad_count = 0;
    std::vector<std::size_t> bad_per_device;
};

inline LocalProximity local_proximity_check(const Matrix& a, std::span<const int> labels, std::size_t k,
                                            const DevicePartition& partition) {
    LocalProximity out;
    out.bad_per_device.assign(partition.devices(), 0);
    for (std::size_t z = 0; z < partition.devices(); ++z) {
        const auto& rows = partition.device_rows[z];
        if (rows.empty()) continue;
        std::vector<int> remap(k, kUnassigned);
        std::vector<int> local(rows.size());
        int next = 0;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const auto g = static_cast<std::size_t>(labels[rows[j]]);
            if (remap[g] == kUnassigned) remap[g] = next++;
            local[j] = remap[g];
        }
        if (next < 2) continue;
        const auto res = proximity_check(a.select_rows(rows), local, static_cast<std::size_t>(next));
        out.bad_per_device[z] = res.bad_count;
        out.bad_count += res.bad_count;
    }
    return out;
}

struct SeparationOptions {
    double c = 100.0;
    std::optional<double> m0;  // estimated from the partition when absent
    bool with_proximity = true;
};

inline SeparationReport separation_quantities(const Matrix& a, std::span<const int> labels, std::size_t k,
                                              const DevicePartition& partition, const SeparationOptions& opt = {}) {
    require(labels.size() == a.rows(), "label count does not match row count");
    require(k >= 1, "k must be positive");
    SeparationReport rep;
    rep.k = k;
    rep.c = opt.c;
    const Matrix c_matrix = build_center_matrix(a, labels, k);
    rep.centered_norm = operator_norm(a - c_matrix);
    std::vector<std::size_t> sizes;
    const Matrix means = cluster_means(a, labels, k, nullptr, &sizes);
    rep.cluster_sizes = sizes;

    const auto counts = device_cluster_counts(labels, k, partition);
    rep.k_prime = observed_k_prime(labels, k, partition);
    if (opt.m0) {
        require(*opt.m0 > 0.0, "m0 must be positive");
        rep.m0 = *opt.m0;
    } else {
        rep.m0 = estimate_m0(labels, k, partition);
        rep.m0_estimated = true;
    }

    rep.n_min_device = std::numeric_limits<std::size_t>::max();
    for (const auto& rows : partition.device_rows)
        if (!rows.empty()) rep.n_min_device = std::min(rep.n_min_device, rows.size());
    rep.n_min_cluster = *std::min_element(sizes.begin(), sizes.end());
    rep.n_max_cluster = *std::max_element(sizes.begin(), sizes.end());

    const double norm = rep.centered_norm;
    const double kp = static_cast<double>(rep.k_prime);
    for (std::size_t r = 0; r < k; ++r) {
        const double root_n = std::sqrt(static_cast<double>(sizes[r]));
        rep.tilde_delta.push_back(std::sqrt(static_cast<double>(k)) * norm / root_n);
        rep.delta.push_back(kp * norm / root_n);
    }
    rep.lambda = std::sqrt(kp) * norm / std::sqrt(static_cast<double>(rep.n_min_device));
    rep.lambda_cluster_min = std::sqrt(kp) * norm / std::sqrt(static_cast<double>(rep.n_min_cluster));

    const double root_m0 = std::sqrt(rep.m0);
    for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t s = r + 1; s < k; ++s) {
            PairSeparation p;
            p.r = r;
            p.s = s;
            for (const auto& dev : counts)
                if (dev[r] > 0 && dev[s] > 0) p.status = PairStatus::active;
            p.mean_distance = distance(means.row(r), means.row(s));
            const double scale = 2.0 * root_m0 * (rep.delta[r] + rep.delta[s]);
            p.ratio = scale > 0.0 ? p.mean_distance / scale : std::numeric_limits<double>::infinity();
            p.active_ok = p.mean_distance >= opt.c * scale;
            p.inactive_ok = p.mean_distance >= 10.0 * root_m0 * rep.lambda;
            rep.pairs.push_back(p);
        }
    }
    if (opt.with_proximity && k >= 2) rep.proximity = proximity_check(a, labels, k, norm);
    return rep;
}

// Fraction of cluster pairs with c_rs > c0.
inline double separated_fraction(const SeparationReport& rep, double c0) {
    if (rep.pairs.empty()) return 0.0;
    const auto hits = std::count_if(rep.pairs.begin(), rep.pairs.end(), [&](const auto& p) { return p.ratio > c0; });
    return static_cast<double>(hits) / static_cast<double>(rep.pairs.size());
}

// Oracle-clustering choice: among candidate reports (one per k), the index
// with the largest fraction of pairs above c0; ties keep the first.
inline std::size_t pick_k_by_separation(std::span<const SeparationReport> candidates, double c0) {
    require(!candidates.empty(), "no candidate clusterings");
    std::size_t best = 0;
    double best_frac = separated_fraction(candidates[0], c0);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double f = separated_fraction(candidates[i], c0);
        if (f > best_frac) {
            best_frac = f;
            best = i;
        }
    }
    return best;
}

struct MeanShiftCheck {
    std::size_t device = 0;
    std::size_t cluster = 0;
    double shift = 0.0;  // |mu(T^z_r) - mu(T_r)|
    double bound = 0.0;  // ||A - C|| / sqrt(n^z_r)
    bool ok = true;
};

struct NormChangeCheck {
    std::size_t device = 0;
    double local_norm = 0.0;  // ||A^(z) - C^(z)||
    double bound = 0.0;       // 2 sqrt(k') ||A - C||
    bool ok = true;
};

struct AuditReport {
    double centered_norm = 0.0;
    std::size_t k_prime = 0;
    double slack = 1e-9;
    std::vector<MeanShiftCheck> mean_shift;
    std::vector<NormChangeCheck> norm_change;

    std::size_t violations() const {
        std::size_t v = 0;
        for (const auto& m : mean_shift) v += m.ok ? 0 : 1;
        for (const auto& n : norm_change) v += n.ok ? 0 : 1;
        return v;
    }
};

inline AuditReport lemma_audit(const Matrix& a, std::span<const int> labels, std::size_t k,
                               const DevicePartition& partition, double slack = 1e-9) {
    AuditReport rep;
    rep.slack = slack;
    const Matrix c_matrix = build_center_matrix(a, labels, k);
    rep.centered_norm = operator_norm(a - c_matrix);
    rep.k_prime = observed_k_prime(labels, k, partition);
    const Matrix means = cluster_means(a, labels, k);
    const double norm_bound = 2.0 * std::sqrt(static_cast<double>(rep.k_prime)) * rep.centered_norm;

    for (std::size_t z = 0; z < partition.devices(); ++z) {
        const auto& rows = partition.device_rows[z];
        if (rows.empty()) continue;
        const Matrix local = a.select_rows(rows);
        std::vector<int> local_labels(rows.size());
        for (std::size_t j = 0; j < rows.size(); ++j) local_labels[j] = labels[rows[j]];
        std::vector<std::size_t> local_sizes;
        const Matrix local_means = cluster_means(local, local_labels, k, nullptr, &local_sizes);
        for (std::size_t r = 0; r < k; ++r) {
            if (local_sizes[r] == 0) continue;
            MeanShiftCheck m;
            m.device = z;
            m.cluster = r;
            m.shift = distance(local_means.row(r), means.row(r));
            m.bound = rep.centered_norm / std::sqrt(static_cast<double>(local_sizes[r]));
            m.ok = m.shift <= m.bound + slack;
            rep.mean_shift.push_back(m);
        }
        Matrix local_c(rows.size(), a.cols());
        for (std::size_t j = 0; j < rows.size(); ++j) {
            auto src = local_means.row(static_cast<std::size_t>(local_labels[j]));
            std::copy(src.begin(), src.end(), local_c.row(j).begin());
        }
        NormChangeCheck n;
        n.device = z;
        n.local_norm = operator_norm(local - local_c);
        n.bound = norm_bound;
        n.ok = n.local_norm <= n.bound + slack;
        rep.norm_change.push_back(n);
    }
    return rep;
}

} // namespace kfed

#endif // KFED_SEPARATION_HPP
