#ifndef KFED_DATAGEN_HPP
#define KFED_DATAGEN_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "federation.hpp"
#include "linalg.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace kfed {

enum class MeanPlacement {
    explicit_means,  // MixtureSpec::means supplied by the caller
    theorem_bound,   // pairwise distance c sqrt(k m0) sigma / sqrt(w_min)
    sigma_units,     // pairwise distance c sigma
};

struct MixtureSpec {
    std::size_t k = 16;
    std::size_t d = 100;
    double sigma = 1.0;           // isotropic per-direction standard deviation
    std::vector<double> weights;  // empty: uniform
    MeanPlacement placement = MeanPlacement::theorem_bound;
    double c = 100.0;
    double m0 = 5.0;
    Matrix means;  // explicit_means only
    std::size_t n = 3200;
    bool exact_counts = true;  // n_r = round(w_r n) instead of sampling labels
    std::size_t k_prime = 0;   // max clusters per device the theorem_bound placement must cover; 0: k
    std::uint64_t seed = 0;

    std::vector<double> resolved_weights() const {
        if (weights.empty()) return std::vector<double>(k, 1.0 / static_cast<double>(k));
        return weights;
    }

    double min_weight() const {
        const auto w = resolved_weights();
        return *std::min_element(w.begin(), w.end());
    }

    // Pairwise distance between auto-placed means.
    double required_separation() const {
        switch (placement) {
        case MeanPlacement::theorem_bound:
            return c * std::sqrt(static_cast<double>(k) * m0) * sigma / std::sqrt(min_weight());
        case MeanPlacement::sigma_units:
            return c * sigma;
        case MeanPlacement::explicit_means:
            break;
        }
        return 0.0;
    }

    void validate() const {
        if (k < 1) fail(ErrorKind::validation, "mixture k must be positive");
        if (d < 1) fail(ErrorKind::validation, "mixture dimension must be positive");
        if (!(sigma >= 0.0) || !std::isfinite(sigma)) fail(ErrorKind::validation, "sigma must be finite and >= 0");
        if (!weights.empty()) {
            if (weights.size() != k) fail(ErrorKind::validation, "weights length must equal k");
            double sum = 0.0;
            for (double w : weights) {
                if (!(w > 0.0)) fail(ErrorKind::validation, "weights must be positive");
                sum += w;
            }
            if (std::abs(sum - 1.0) > 1e-12)
                fail(ErrorKind::validation, "weights must sum to 1 (got " + std::to_string(sum) + ")");
        }
        if (placement == MeanPlacement::explicit_means) {
            if (means.rows() != k || means.cols() != d)
                fail(ErrorKind::validation, "explicit means must be k x d");
            if (!means.all_finite()) fail(ErrorKind::validation, "explicit means must be finite");
        } else {
            if (k > d) fail(ErrorKind::validation, "automatic mean placement needs k <= d");
            if (!(c >= 0.0) || !std::isfinite(c)) fail(ErrorKind::validation, "c must be finite and >= 0");
            if (placement == MeanPlacement::theorem_bound && !(m0 > 0.0))
                fail(ErrorKind::validation, "m0 must be positive");
        }
        if (k_prime > k) fail(ErrorKind::validation, "k_prime must not exceed k");
        if (n < k) fail(ErrorKind::validation, "too few samples");
    }
};

// Scaled orthogonal frame: mu_r = (D / sqrt 2) e_r, so every pair sits at
// distance exactly D.
inline Matrix orthogonal_frame(std::size_t k, std::size_t d, double distance) {
    Matrix means(k, d);
    for (std::size_t r = 0; r < k; ++r) means(r, r) = distance / std::sqrt(2.0);
    return means;
}

inline Matrix place_means(const MixtureSpec& spec) {
    if (spec.placement == MeanPlacement::explicit_means) return spec.means;
    return orthogonal_frame(spec.k, spec.d, spec.required_separation());
}

// Largest-remainder rounding of w_r * n; ties go to the lower index.
inline std::vector<std::size_t> exact_counts(std::span<const double> weights, std::size_t n) {
    const std::size_t k = weights.size();
    std::vector<std::size_t> counts(k);
    std::vector<double> frac(k);
    std::size_t assigned = 0;
    for (std::size_t r = 0; r < k; ++r) {
        const double target = weights[r] * static_cast<double>(n);
        counts[r] = static_cast<std::size_t>(std::floor(target + 1e-9));
        frac[r] = target - static_cast<double>(counts[r]);
        assigned += counts[r];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; assigned < n; i = (i + 1) % k, ++assigned) ++counts[order[i]];
    return counts;
}

struct Instance {
    Matrix data;
    std::vector<int> labels;
    std::size_t k = 0;
    Matrix means;
    double separation = 0.0;  // pairwise distance of auto-placed means; 0 for explicit means
};

namespace detail {

// Distance that makes the planted clustering meet both pair requirements at
// constant c on any partition with at most k' clusters per device and m0
// devices per cluster, given the realized noise E:
//   active    2 c sqrt(m0) (Delta_r + Delta_s),  Delta_r = k' ||E - C_E|| / sqrt(n_r)
//   inactive  10 sqrt(m0) lambda,                lambda  = sqrt(k') ||E - C_E|| / sqrt(n_min / m0)
// plus twice the largest noise-mean norm, which bounds how far the sample
// means can drift towards each other.
inline double empirical_requirement(const Matrix& noise, std::span<const int> labels, const MixtureSpec& spec) {
    std::vector<std::size_t> sizes;
    const Matrix noise_means = cluster_means(noise, labels, spec.k, nullptr, &sizes);
    Matrix centered = noise;
    for (std::size_t i = 0; i < centered.rows(); ++i) {
        auto row = centered.row(i);
        auto mu = noise_means.row(static_cast<std::size_t>(labels[i]));
        for (std::size_t j = 0; j < row.size(); ++j) row[j] -= mu[j];
    }
    const double norm = operator_norm(centered);
    std::size_t n_min = spec.n;
    double drift = 0.0;
    for (std::size_t r = 0; r < spec.k; ++r) {
        if (sizes[r] == 0) continue;
        n_min = std::min(n_min, sizes[r]);
        drift = std::max(drift, norm2(noise_means.row(r)));
    }
    const double kp = static_cast<double>(spec.k_prime == 0 ? spec.k : spec.k_prime);
    const double root_m0 = std::sqrt(spec.m0);
    const double active = 2.0 * spec.c * root_m0 * 2.0 * kp * norm / std::sqrt(static_cast<double>(n_min));
    const double device_rows = std::max(1.0, std::floor(static_cast<double>(n_min) / spec.m0));
    const double inactive = 10.0 * root_m0 * std::sqrt(kp) * norm / std::sqrt(device_rows);
    return std::max(active, inactive) + 2.0 * drift;
}

} // namespace detail

// Isotropic Gaussian mixture with planted labels. Each component draws its
// noise from its own counter stream, so components are independent of each
// other's sample counts.
//
// theorem_bound placement uses the larger of c sqrt(k m0) sigma / sqrt(w_min)
// and the distance at which the realized sample meets the pair requirements
// (see detail::empirical_requirement); the noise does not depend on the means,
// so it is drawn first.
inline Instance generate_mixture(const MixtureSpec& spec) {
    spec.validate();
    Instance inst;
    inst.k = spec.k;
    const auto weights = spec.resolved_weights();

    std::vector<int> labels;
    labels.reserve(spec.n);
    if (spec.exact_counts) {
        const auto counts = exact_counts(weights, spec.n);
        for (std::size_t r = 0; r < spec.k; ++r) labels.insert(labels.end(), counts[r], static_cast<int>(r));
    } else {
        CounterRng pick(spec.seed, 0);
        std::vector<double> cdf(weights.size());
        std::partial_sum(weights.begin(), weights.end(), cdf.begin());
        for (std::size_t i = 0; i < spec.n; ++i) {
            const double u = pick.uniform() * cdf.back();
            const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
            labels.push_back(static_cast<int>(std::min<std::size_t>(
                static_cast<std::size_t>(it - cdf.begin()), spec.k - 1)));
        }
    }

    std::vector<CounterRng> streams;
    streams.reserve(spec.k);
    for (std::size_t r = 0; r < spec.k; ++r) streams.emplace_back(spec.seed, 1 + r);
    inst.data = Matrix(spec.n, spec.d);
    for (std::size_t i = 0; i < spec.n; ++i) {
        auto& rng = streams[static_cast<std::size_t>(labels[i])];
        for (double& v : inst.data.row(i)) v = spec.sigma * rng.normal();
    }

    switch (spec.placement) {
    case MeanPlacement::explicit_means:
        inst.means = spec.means;
        break;
    case MeanPlacement::sigma_units:
        inst.separation = spec.required_separation();
        inst.means = orthogonal_frame(spec.k, spec.d, inst.separation);
        break;
    case MeanPlacement::theorem_bound:
        inst.separation = spec.required_separation();
        if (spec.k > 1 && spec.sigma > 0.0)
            inst.separation = std::max(inst.separation, detail::empirical_requirement(inst.data, labels, spec));
        inst.means = orthogonal_frame(spec.k, spec.d, inst.separation);
        break;
    }
    for (std::size_t i = 0; i < spec.n; ++i) {
        auto row = inst.data.row(i);
        auto mu = inst.means.row(static_cast<std::size_t>(labels[i]));
        for (std::size_t j = 0; j < spec.d; ++j) row[j] += mu[j];
    }
    inst.labels = std::move(labels);
    return inst;
}

struct PartitionSpec {
    enum class Mode { structured, iid };
    Mode mode = Mode::structured;
    std::size_t group_size = 4;         // clusters per device group (structured)
    std::size_t devices_per_group = 5;  // m0 (structured)
    std::size_t devices = 20;           // Z (iid)
};

// Groups clusters into blocks of `group_size` (the last block may be short)
// and splits every cluster of a block evenly over that block's devices.
// Within-block pairs end up active, cross-block pairs inactive.
inline DevicePartition structured_partition(std::span<const int> labels, std::size_t k, const PartitionSpec& spec) {
    require(spec.group_size >= 1 && spec.group_size <= k, "group size must be in [1, k]");
    require(spec.devices_per_group >= 1, "devices per group must be positive");
    const std::size_t m0 = spec.devices_per_group;
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k, "label out of range");
        members[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    const std::size_t groups = (k + spec.group_size - 1) / spec.group_size;
    DevicePartition part;
    part.k = k;
    part.m0 = static_cast<double>(m0);
    part.device_rows.resize(groups * m0);
    part.k_per_device.resize(groups * m0);
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t lo = g * spec.group_size;
        const std::size_t hi = std::min(k, lo + spec.group_size);
        for (std::size_t r = lo; r < hi; ++r) {
            const auto& rows = members[r];
            if (rows.size() < m0)
                fail(ErrorKind::parameter, "cluster " + std::to_string(r) + " has " + std::to_string(rows.size()) +
                                               " rows, fewer than the " + std::to_string(m0) +
                                               " devices it must be split across");
            for (std::size_t j = 0; j < m0; ++j) {
                const std::size_t from = j * rows.size() / m0;
                const std::size_t to = (j + 1) * rows.size() / m0;
                auto& dst = part.device_rows[g * m0 + j];
                dst.insert(dst.end(), rows.begin() + static_cast<long>(from), rows.begin() + static_cast<long>(to));
            }
        }
        for (std::size_t j = 0; j < m0; ++j) part.k_per_device[g * m0 + j] = hi - lo;
    }
    for (auto& rows : part.device_rows) std::sort(rows.begin(), rows.end());
    return part;
}

// Uniform random device for every row; redrawn until no device is empty.
// k metadata is left unset (see assign_true_k).
inline DevicePartition iid_partition(std::size_t n, std::size_t devices, std::uint64_t seed) {
    require(devices >= 1, "need at least one device");
    require(n >= devices, "fewer rows than devices");
    DevicePartition part;
    for (std::uint64_t attempt = 0;; ++attempt) {
        CounterRng rng(seed, 0x11d0000u + attempt);
        part.device_rows.assign(devices, {});
        for (std::size_t i = 0; i < n; ++i) part.device_rows[rng.below(devices)].push_back(i);
        if (std::none_of(part.device_rows.begin(), part.device_rows.end(), [](const auto& r) { return r.empty(); }))
            break;
    }
    part.k_per_device.assign(devices, 0);
    return part;
}

// Sets k^(z) to the number of target clusters present on each device.
inline void assign_true_k(DevicePartition& part, std::span<const int> labels, std::size_t k) {
    part.k = k;
    part.k_per_device.assign(part.devices(), 0);
    for (std::size_t z = 0; z < part.devices(); ++z) {
        std::vector<char> seen(k, 0);
        for (auto i : part.device_rows[z]) {
            const auto l = static_cast<std::size_t>(labels[i]);
            if (!seen[l]) {
                seen[l] = 1;
                ++part.k_per_device[z];
            }
        }
    }
}

} // namespace kfed

#endif // KFED_DATAGEN_HPP
