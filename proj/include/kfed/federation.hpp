#ifndef KFED_FEDERATION_HPP
#define KFED_FEDERATION_HPP

// One-shot aggregation. Every device clusters its own rows and uploads its
// centers once; the server seeds k representatives by farthest-point
// traversal over all uploaded centers, runs a single nearest-representative
// assignment, and sends each device the global label of every local center.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "clustering.hpp"
#include "error.hpp"
#include "local_solver.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace kfed {

struct DevicePartition {
    std::vector<std::vector<std::size_t>> device_rows;  // global row indices per device
    std::vector<std::size_t> k_per_device;
    double m0 = 0.0;  // 0 when not known
    std::size_t k = 0;

    std::size_t devices() const noexcept { return device_rows.size(); }

    std::size_t k_prime() const noexcept {
        std::size_t kp = 0;
        for (auto kz : k_per_device) kp = std::max(kp, kz);
        return kp;
    }

    // Disjoint cover of [0, n), consistent k metadata.
    void validate(std::size_t n) const {
        require(k >= 1, "partition k must be positive");
        require(k_per_device.size() == device_rows.size(), "k_per_device length differs from device count");
        std::vector<char> seen(n, 0);
        std::size_t covered = 0;
        for (std::size_t z = 0; z < devices(); ++z) {
            for (auto i : device_rows[z]) {
                require(i < n, "device " + std::to_string(z) + " references row " + std::to_string(i) +
                                   " beyond the data");
                require(!seen[i], "row " + std::to_string(i) + " is assigned to more than one device");
                seen[i] = 1;
                ++covered;
            }
            require(k_per_device[z] >= 1, "device " + std::to_string(z) + " has k^(z) = 0");
        }
        require(covered == n, "device rows do not cover every data row");
        require(k_prime() <= k, "max device k exceeds global k");
    }
};

struct CenterRef {
    std::size_t device = 0;
    std::size_t index = 0;

    friend bool operator==(const CenterRef&, const CenterRef&) = default;
    friend auto operator<=>(const CenterRef&, const CenterRef&) = default;
};

// Upstream message: a device's centers and its local row -> center map.
struct DeviceCenters {
    std::size_t device_id = 0;
    Matrix centers;
    std::vector<int> local_assignment;

    std::size_t k() const noexcept { return centers.rows(); }
};

struct OpsAccounting {
    std::uint64_t pairwise_distance_count = 0;
    std::uint64_t messages_sent = 0;
    std::vector<std::uint64_t> bytes_per_message;

    void add_distances(std::uint64_t n) noexcept { pairwise_distance_count += n; }
    void add_message(std::uint64_t bytes) {
        ++messages_sent;
        bytes_per_message.push_back(bytes);
    }
};

enum class MessageKind { centers_upload, labels_download };

struct MessageRecord {
    MessageKind kind;
    std::size_t device;  // the non-server endpoint
    std::uint64_t bytes;
};

inline std::uint64_t upload_bytes(const DeviceCenters& c) {
    return static_cast<std::uint64_t>(c.centers.rows() * c.centers.cols() * sizeof(double));
}

struct SeedSet {
    Matrix points;
    std::vector<CenterRef> provenance;
};

struct InducedClustering {
    std::vector<std::vector<CenterRef>> tau;
    std::vector<std::vector<int>> device_labels;  // per upload (same order), label per local center
    Clustering global;                            // rows of absent devices are kUnassigned
    Matrix tau_means;
};

// Server-side state kept after a run; enough to label late devices.
struct AggregationState {
    Matrix tau_means;

    bool valid() const noexcept { return tau_means.rows() > 0; }
    std::size_t k() const noexcept { return tau_means.rows(); }
};

namespace detail {

inline std::vector<const DeviceCenters*> sorted_uploads(std::span<const DeviceCenters> uploads) {
    std::vector<const DeviceCenters*> out;
    out.reserve(uploads.size());
    for (const auto& u : uploads) out.push_back(&u);
    std::stable_sort(out.begin(), out.end(),
                     [](auto* a, auto* b) { return a->device_id < b->device_id; });
    for (std::size_t i = 1; i < out.size(); ++i)
        require(out[i - 1]->device_id != out[i]->device_id, "duplicate device id in uploads");
    return out;
}

} // namespace detail

// Greedy max-min selection. M starts as the start device's centers and grows
// by the center farthest from M until |M| = k. Ties in the argmax go to the
// lowest (device, index).
inline SeedSet farthest_point_init(std::span<const DeviceCenters> uploads, std::size_t k,
                                   std::optional<std::size_t> start_device, OpsAccounting& ops) {
    require(k >= 1, "k must be positive");
    const auto sorted = detail::sorted_uploads(uploads);
    std::vector<CenterRef> refs;
    std::vector<std::span<const double>> points;
    std::size_t dim = 0;
    for (const auto* u : sorted) {
        for (std::size_t i = 0; i < u->k(); ++i) {
            refs.push_back({u->device_id, i});
            points.push_back(u->centers.row(i));
        }
        if (u->k() > 0) dim = u->centers.cols();
    }
    if (refs.size() < k) fail(ErrorKind::runtime, "network has fewer than k device centers");
    for (const auto* u : sorted)
        require(u->k() == 0 || u->centers.cols() == dim, "device centers have inconsistent dimension");

    const DeviceCenters* start = nullptr;
    if (start_device) {
        for (const auto* u : sorted)
            if (u->device_id == *start_device) start = u;
        require(start != nullptr, "start device " + std::to_string(*start_device) + " did not upload");
    } else {
        for (const auto* u : sorted)
            if (u->k() > 0) { start = u; break; }
    }
    require(start != nullptr && start->k() >= 1, "start device has no centers");
    require(start->k() <= k, "start device holds more than k centers");

    const std::size_t total = refs.size();
    SeedSet m;
    m.points = Matrix(0, dim);
    std::vector<char> chosen(total, 0);
    std::vector<double> dmin(total, std::numeric_limits<double>::infinity());

    auto admit = [&](std::size_t idx) {
        chosen[idx] = 1;
        m.points.append_row(points[idx]);
        m.provenance.push_back(refs[idx]);
        for (std::size_t j = 0; j < total; ++j)
            dmin[j] = std::min(dmin[j], squared_distance(points[j], points[idx]));
        ops.add_distances(total);
    };

    for (std::size_t j = 0; j < total; ++j)
        if (refs[j].device == start->device_id) admit(j);

    while (m.points.rows() < k) {
        std::size_t best = total;
        double best_d = -1.0;
        for (std::size_t j = 0; j < total; ++j) {
            if (chosen[j]) continue;
            if (dmin[j] > best_d) {
                best_d = dmin[j];
                best = j;
            }
        }
        admit(best);
    }
    return m;
}

// Maps every device's local cluster to the global cluster of its center.
inline Clustering induce_global(std::span<const DeviceCenters> uploads,
                                const std::vector<std::vector<int>>& device_labels,
                                const DevicePartition& partition, std::size_t n_rows,
                                const Matrix& tau_means) {
    Clustering global;
    global.assignment.assign(n_rows, kUnassigned);
    global.centers = tau_means;
    for (std::size_t u = 0; u < uploads.size(); ++u) {
        const auto& up = uploads[u];
        require(up.device_id < partition.devices(), "upload from unknown device " + std::to_string(up.device_id));
        const auto& rows = partition.device_rows[up.device_id];
        require(up.local_assignment.size() == rows.size(),
                "device " + std::to_string(up.device_id) + " assignment does not cover its rows");
        for (std::size_t local = 0; local < rows.size(); ++local) {
            const int c = up.local_assignment[local];
            require(c >= 0 && static_cast<std::size_t>(c) < up.k(), "local assignment out of range");
            global.assignment[rows[local]] = device_labels[u][static_cast<std::size_t>(c)];
        }
    }
    return global;
}

// A single assignment round: each uploaded center goes to its nearest
// representative in M (ties to the lowest index). No re-centering loop.
// Needs only the centers, so a server can replay it from recorded uploads;
// the global row labelling is left empty.
inline InducedClustering assign_centers(std::span<const DeviceCenters> uploads, const SeedSet& m,
                                        OpsAccounting& ops) {
    const std::size_t k = m.points.rows();
    require(k >= 1, "empty representative set");
    InducedClustering out;
    out.tau.resize(k);
    out.device_labels.resize(uploads.size());
    Matrix sums(k, m.points.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t u = 0; u < uploads.size(); ++u) {
        const auto& up = uploads[u];
        out.device_labels[u].resize(up.k());
        for (std::size_t i = 0; i < up.k(); ++i) {
            const std::size_t r = nearest_center(up.centers.row(i), m.points);
            ops.add_distances(k);
            out.device_labels[u][i] = static_cast<int>(r);
            out.tau[r].push_back({up.device_id, i});
            auto s = sums.row(r);
            auto c = up.centers.row(i);
            for (std::size_t j = 0; j < s.size(); ++j) s[j] += c[j];
            ++counts[r];
        }
    }
    for (auto& t : out.tau) std::sort(t.begin(), t.end());
    for (std::size_t r = 0; r < k; ++r) {
        auto s = sums.row(r);
        if (counts[r] == 0) {
            auto p = m.points.row(r);
            std::copy(p.begin(), p.end(), s.begin());
        } else {
            for (double& v : s) v /= static_cast<double>(counts[r]);
        }
    }
    out.tau_means = std::move(sums);
    return out;
}

inline InducedClustering one_round_lloyd(std::span<const DeviceCenters> uploads, const SeedSet& m,
                                         const DevicePartition& partition, std::size_t n_rows,
                                         OpsAccounting& ops) {
    auto out = assign_centers(uploads, m, ops);
    out.global = induce_global(uploads, out.device_labels, partition, n_rows, out.tau_means);
    return out;
}

// Labels a late device's centers against the retained tau means; touches no
// other device. Costs exactly k^(z) * k distance computations.
inline std::vector<int> assign_new_device(const AggregationState& state, const DeviceCenters& incoming,
                                          OpsAccounting& ops) {
    if (!state.valid()) fail(ErrorKind::runtime, "no aggregation state");
    require(incoming.k() == 0 || incoming.centers.cols() == state.tau_means.cols(),
            "new device center dimension does not match aggregation state");
    std::vector<int> labels(incoming.k());
    for (std::size_t i = 0; i < incoming.k(); ++i) {
        labels[i] = static_cast<int>(nearest_center(incoming.centers.row(i), state.tau_means));
        ops.add_distances(state.k());
    }
    return labels;
}

struct AggregateResult {
    SeedSet seeds;
    InducedClustering induced;
    AggregationState state;
    OpsAccounting ops;
    std::vector<MessageRecord> log;
};

// Steps after the uploads have arrived: seeding, one assignment round, and
// one label message back to each participating device.
inline AggregateResult aggregate(std::span<const DeviceCenters> uploads, const DevicePartition& partition,
                                 std::size_t n_rows, std::optional<std::size_t> start_device = std::nullopt) {
    AggregateResult out;
    for (const auto& u : uploads) {
        out.log.push_back({MessageKind::centers_upload, u.device_id, upload_bytes(u)});
        out.ops.add_message(upload_bytes(u));
    }
    out.seeds = farthest_point_init(uploads, partition.k, start_device, out.ops);
    out.induced = one_round_lloyd(uploads, out.seeds, partition, n_rows, out.ops);
    out.state.tau_means = out.induced.tau_means;
    for (std::size_t u = 0; u < uploads.size(); ++u) {
        const auto bytes = static_cast<std::uint64_t>(out.induced.device_labels[u].size() * sizeof(std::int32_t));
        out.log.push_back({MessageKind::labels_download, uploads[u].device_id, bytes});
        out.ops.add_message(bytes);
    }
    return out;
}

struct KfedOptions {
    std::uint64_t seed = 0;
    LocalOptions local{};
    std::set<std::size_t> excluded_devices;
    std::optional<std::size_t> start_device;
    std::size_t threads = 0;  // 0: KFED_THREADS or hardware concurrency
};

struct KfedRun {
    std::vector<DeviceCenters> uploads;  // participating devices, ascending id
    std::vector<LocalResult> local;      // same order as uploads
    AggregateResult aggregate;

    const InducedClustering& induced() const noexcept { return aggregate.induced; }
    const OpsAccounting& ops() const noexcept { return aggregate.ops; }
};

inline std::size_t worker_count(std::size_t requested, std::size_t jobs) {
    std::size_t n = requested;
    if (n == 0) {
        if (const char* env = std::getenv("KFED_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v > 0) n = static_cast<std::size_t>(v);
        }
    }
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    return std::max<std::size_t>(1, std::min(n, jobs));
}

inline std::uint64_t device_seed(std::uint64_t run_seed, std::size_t device) {
    return derive_seed(run_seed, 0x10000u + device);
}

// Runs every device's local solve (fork-join, results gathered by device id)
// and then the single-threaded aggregation.
inline KfedRun run_kfed(const DevicePartition& partition, const Matrix& data, const KfedOptions& opt = {}) {
    partition.validate(data.rows());
    std::vector<std::size_t> active;
    for (std::size_t z = 0; z < partition.devices(); ++z)
        if (!opt.excluded_devices.contains(z) && !partition.device_rows[z].empty()) active.push_back(z);

    KfedRun run;
    run.uploads.resize(active.size());
    run.local.resize(active.size());
    std::vector<std::exception_ptr> errors(active.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < active.size(); j = next++) {
            const std::size_t z = active[j];
            try {
                const Matrix local = data.select_rows(partition.device_rows[z]);
                auto res = local_cluster(local, partition.k_per_device[z], device_seed(opt.seed, z), opt.local);
                run.uploads[j].device_id = z;
                run.uploads[j].centers = res.clusters.centers;
                run.uploads[j].local_assignment = res.clusters.assignment;
                run.local[j] = std::move(res);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        }
    };
    const std::size_t nthreads = worker_count(opt.threads, active.size());
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    run.aggregate = aggregate(run.uploads, partition, data.rows(), opt.start_device);
    return run;
}

} // namespace kfed

#endif // KFED_FEDERATION_HPP
