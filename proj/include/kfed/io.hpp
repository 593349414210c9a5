#ifndef KFED_IO_HPP
#define KFED_IO_HPP

// File formats. Data and labels are plain CSV; partitions, reports, upload
// messages and server state are JSON. Every write goes to a temporary file
// that is renamed into place, so readers never see a partial file.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "federation.hpp"
#include "matrix.hpp"
#include "separation.hpp"

namespace kfed {

namespace fs = std::filesystem;

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) fail(ErrorKind::io, "read failed: " + path.string());
    return ss.str();
}

inline void write_text_atomic(const fs::path& path, std::string_view content) {
    std::error_code ec;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
        if (ec) fail(ErrorKind::io, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::io, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            fs::remove(tmp, ec);
            fail(ErrorKind::io, "write failed: " + tmp.string());
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        fail(ErrorKind::io, "cannot move " + tmp.string() + " to " + path.string());
    }
}

inline void append_text(const fs::path& path, std::string_view content) {
    std::string existing;
    if (fs::exists(path)) existing = read_text(path);
    existing.append(content);
    write_text_atomic(path, existing);
}

// ---- CSV ----------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size() && !s.empty();
}

// Non-empty lines with their 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string_view>> lines(std::string_view text) {
    std::vector<std::pair<std::size_t, std::string_view>> out;
    std::size_t start = 0;
    std::size_t number = 0;
    while (start <= text.size()) {
        const auto end = text.find('\n', start);
        ++number;
        auto line = trim(text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
        if (!line.empty()) out.emplace_back(number, line);
        if (end == std::string_view::npos) break;
        start = end + 1;
    }
    return out;
}

} // namespace detail

inline Matrix parse_matrix_csv(std::string_view text, const std::string& name) {
    Matrix m;
    std::size_t cols = 0;
    for (const auto& [number, line] : detail::lines(text)) {
        const auto cells = detail::split_commas(line);
        if (m.rows() == 0 && cols == 0) {
            cols = cells.size();
            m = Matrix(0, cols);
        }
        if (cells.size() != cols)
            fail(ErrorKind::io, name + " row " + std::to_string(number) + ": " + std::to_string(cells.size()) +
                                    " columns, expected " + std::to_string(cols));
        std::vector<double> vals(cols);
        for (std::size_t j = 0; j < cols; ++j)
            if (!detail::parse_number(cells[j], vals[j]) || !std::isfinite(vals[j]))
                fail(ErrorKind::io, name + " row " + std::to_string(number) + ", column " + std::to_string(j + 1) +
                                        ": not a finite number");
        m.append_row(vals);
    }
    if (m.rows() == 0) fail(ErrorKind::io, name + ": no data rows");
    return m;
}

inline std::string matrix_csv(const Matrix& m) {
    std::string out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += format_double(m(i, j));
        }
        out += '\n';
    }
    return out;
}

inline Matrix read_matrix_csv(const fs::path& path) { return parse_matrix_csv(read_text(path), path.string()); }

inline void write_matrix_csv(const fs::path& path, const Matrix& m) { write_text_atomic(path, matrix_csv(m)); }

// One integer label per line; -1 marks an unassigned row. With k given,
// any other id outside [0, k) is rejected.
inline std::vector<int> parse_labels_csv(std::string_view text, const std::string& name,
                                         std::optional<std::size_t> k = std::nullopt) {
    std::vector<int> labels;
    for (const auto& [number, line] : detail::lines(text)) {
        int v = 0;
        if (!detail::parse_number(line, v))
            fail(ErrorKind::io, name + " row " + std::to_string(number) + ": not an integer label");
        if (v < kUnassigned || (k && v >= 0 && static_cast<std::size_t>(v) >= *k))
            fail(ErrorKind::io, name + " row " + std::to_string(number) + ": unseen cluster id " + std::to_string(v) +
                                    (k ? " (k = " + std::to_string(*k) + ")" : std::string()));
        labels.push_back(v);
    }
    return labels;
}

inline std::string labels_csv(std::span<const int> labels) {
    std::string out;
    for (int l : labels) {
        out += std::to_string(l);
        out += '\n';
    }
    return out;
}

inline std::vector<int> read_labels_csv(const fs::path& path, std::optional<std::size_t> k = std::nullopt) {
    return parse_labels_csv(read_text(path), path.string(), k);
}

inline void write_labels_csv(const fs::path& path, std::span<const int> labels) {
    write_text_atomic(path, labels_csv(labels));
}

// ---- partition ----------------------------------------------------------

// {"<device id>": [row indices]}; ids must be 0..Z-1. k metadata is not
// stored; it comes from the labels (see assign_true_k).
inline Json partition_to_json(const DevicePartition& p) {
    Json j = Json::object();
    for (std::size_t z = 0; z < p.devices(); ++z) j[std::to_string(z)] = p.device_rows[z];
    return j;
}

inline DevicePartition partition_from_json(const Json& j, const std::string& name) {
    if (!j.is_object()) fail(ErrorKind::io, name + ": partition must be an object of device id -> rows");
    DevicePartition p;
    p.device_rows.resize(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::size_t z = 0;
        if (!detail::parse_number(it.key(), z) || z >= j.size())
            fail(ErrorKind::io, name + ": device id '" + it.key() + "' is not in 0.." + std::to_string(j.size() - 1));
        if (!it.value().is_array()) fail(ErrorKind::io, name + ": device " + it.key() + " rows must be an array");
        for (const auto& v : it.value()) {
            if (!v.is_number_unsigned()) fail(ErrorKind::io, name + ": device " + it.key() + " has a bad row index");
            p.device_rows[z].push_back(v.get<std::size_t>());
        }
    }
    p.k_per_device.assign(p.devices(), 0);
    return p;
}

inline DevicePartition read_partition_json(const fs::path& path) {
    Json j;
    try {
        j = Json::parse(read_text(path));
    } catch (const Json::parse_error& e) {
        fail(ErrorKind::io, path.string() + ": " + e.what());
    }
    return partition_from_json(j, path.string());
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// ---- upload messages ----------------------------------------------------

inline std::string assignment_digest(std::span<const int> assignment) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int v : assignment) {
        const auto u = static_cast<std::uint32_t>(v);
        const char bytes[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                               static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
        h = fnv1a64(std::string_view(bytes, 4), h);
    }
    return hex64(h);
}

inline Json upload_to_json(const DeviceCenters& u) {
    Json j;
    j["device_id"] = u.device_id;
    j["k_z"] = u.k();
    j["centers"] = matrix_to_json(u.centers);
    j["assignment_digest"] = assignment_digest(u.local_assignment);
    return j;
}

// The message carries no row assignment, only its digest.
inline DeviceCenters upload_from_json(const Json& j, const std::string& name) {
    detail::ObjectReader r(j, name);
    DeviceCenters u;
    u.device_id = r.get<std::size_t>("device_id");
    const auto kz = r.get<std::size_t>("k_z");
    u.centers = matrix_from_json(r.at("centers"), name + ".centers");
    r.get<std::string>("assignment_digest");
    r.finish();
    if (u.centers.rows() != kz) fail(ErrorKind::validation, name + ": k_z does not match the number of centers");
    return u;
}

// Server's reply to a set of uploads: per-device center labels, tau means
// and the distance count. Written both when recording and when replaying,
// so the two files can be compared byte for byte.
inline Json server_round_json(std::span<const DeviceCenters> uploads, const InducedClustering& induced,
                              const OpsAccounting& ops) {
    Json j;
    Json labels = Json::object();
    for (std::size_t u = 0; u < uploads.size(); ++u) labels[std::to_string(uploads[u].device_id)] = induced.device_labels[u];
    j["device_labels"] = labels;
    j["tau_means"] = matrix_to_json(induced.tau_means);
    j["pairwise_distance_count"] = ops.pairwise_distance_count;
    return j;
}

// ---- reports ------------------------------------------------------------

inline Json to_json(const SeparationReport& rep) {
    Json j;
    j["k"] = rep.k;
    j["k_prime"] = rep.k_prime;
    j["m0"] = rep.m0;
    j["m0_estimated"] = rep.m0_estimated;
    j["c"] = rep.c;
    j["centered_norm"] = rep.centered_norm;
    j["cluster_sizes"] = rep.cluster_sizes;
    j["tilde_delta"] = rep.tilde_delta;
    j["delta"] = rep.delta;
    j["lambda"] = rep.lambda;
    j["lambda_cluster_min"] = rep.lambda_cluster_min;
    j["n_min_device"] = rep.n_min_device;
    j["n_min_cluster"] = rep.n_min_cluster;
    j["n_max_cluster"] = rep.n_max_cluster;
    j["active_pairs"] = rep.count(PairStatus::active);
    j["inactive_pairs"] = rep.count(PairStatus::inactive);
    std::size_t active_ok = 0, inactive_ok = 0;
    for (const auto& p : rep.pairs) {
        if (p.status == PairStatus::active && p.active_ok) ++active_ok;
        if (p.status == PairStatus::inactive && p.inactive_ok) ++inactive_ok;
    }
    j["active_ok"] = active_ok;
    j["inactive_ok"] = inactive_ok;
    j["proximity"] = {{"bad_count", rep.proximity.bad_count},
                      {"bad_indices", rep.proximity.bad_indices},
                      {"warnings", rep.proximity.warnings}};
    return j;
}

inline std::string pairs_csv(const SeparationReport& rep, const std::string& hash, std::uint64_t seed) {
    std::string out = "r,s,status,ratio,active_ok,inactive_ok,config_hash,seed\n";
    for (const auto& p : rep.pairs) {
        out += std::to_string(p.r) + ',' + std::to_string(p.s) + ',' + to_string(p.status) + ',' +
               format_double(p.ratio) + ',' + (p.active_ok ? "1" : "0") + ',' + (p.inactive_ok ? "1" : "0") + ',' +
               hash + ',' + std::to_string(seed) + '\n';
    }
    return out;
}

inline Json to_json(const AuditReport& rep) {
    Json j;
    j["centered_norm"] = rep.centered_norm;
    j["k_prime"] = rep.k_prime;
    j["slack"] = rep.slack;
    j["violations"] = rep.violations();
    Json shifts = Json::array();
    for (const auto& m : rep.mean_shift)
        shifts.push_back({{"device", m.device}, {"cluster", m.cluster}, {"shift", m.shift}, {"bound", m.bound}, {"ok", m.ok}});
    j["mean_shift"] = shifts;
    Json norms = Json::array();
    for (const auto& n : rep.norm_change)
        norms.push_back({{"device", n.device}, {"local_norm", n.local_norm}, {"bound", n.bound}, {"ok", n.ok}});
    j["norm_change"] = norms;
    return j;
}

inline Json to_json(const EvalResult& r) {
    Json j;
    j["accuracy"] = r.accuracy;
    j["misclassified"] = r.misclassified;
    j["n"] = r.n;
    j["kmeans_cost"] = r.kmeans_cost ? Json(*r.kmeans_cost) : Json(nullptr);
    j["permutation"] = r.permutation;
    return j;
}

struct ResultRow {
    std::string run_id;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::optional<double> accuracy;
    std::optional<double> cost;
    std::uint64_t distance_count = 0;
};

inline constexpr std::string_view kResultsHeader = "run_id,config_hash,seed,accuracy,cost,distance_count\n";

inline std::string to_csv(const ResultRow& r) {
    return r.run_id + ',' + r.config_hash + ',' + std::to_string(r.seed) + ',' +
           (r.accuracy ? format_double(*r.accuracy) : std::string()) + ',' +
           (r.cost ? format_double(*r.cost) : std::string()) + ',' + std::to_string(r.distance_count) + '\n';
}

// ---- server state -------------------------------------------------------

struct StoredState {
    AggregationState state;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::size_t devices = 0;  // devices in the original partition
    double tol = 1e-7;        // local Lloyd tolerance of the run
};

inline std::string state_text(const StoredState& s) {
    Json payload;
    payload["format"] = "kfed-state";
    payload["version"] = 1;
    payload["config_hash"] = s.config_hash;
    payload["seed"] = s.seed;
    payload["devices"] = s.devices;
    payload["tol"] = s.tol;
    payload["tau_means"] = matrix_to_json(s.state.tau_means);
    Json j;
    j["payload"] = payload;
    j["checksum"] = hex64(fnv1a64(payload.dump()));
    return dump(j);
}

inline void write_state(const fs::path& path, const StoredState& s) { write_text_atomic(path, state_text(s)); }

inline StoredState parse_state(std::string_view text, const std::string& name) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error&) {
        fail(ErrorKind::io, name + ": state checksum mismatch (file is not valid JSON)");
    }
    if (!j.is_object() || !j.contains("payload") || !j.contains("checksum") || !j["checksum"].is_string())
        fail(ErrorKind::io, name + ": state checksum mismatch (missing payload or checksum)");
    const Json& payload = j["payload"];
    if (hex64(fnv1a64(payload.dump())) != j["checksum"].get<std::string>())
        fail(ErrorKind::io, name + ": state checksum mismatch");
    try {
        detail::ObjectReader r(payload, name);
        if (r.get<std::string>("format") != "kfed-state" || r.get<int>("version") != 1)
            fail(ErrorKind::io, name + ": not a kfed state file");
        StoredState s;
        s.config_hash = r.get<std::string>("config_hash");
        s.seed = r.get<std::uint64_t>("seed");
        s.devices = r.get<std::size_t>("devices");
        s.tol = r.get<double>("tol");
        s.state.tau_means = matrix_from_json(r.at("tau_means"), name + ".tau_means");
        r.finish();
        return s;
    } catch (const Error& e) {
        fail(ErrorKind::io, e.what());
    }
}

inline StoredState read_state(const fs::path& path) {
    if (!fs::exists(path)) fail(ErrorKind::runtime, "no aggregation state at " + path.string());
    return parse_state(read_text(path), path.string());
}

} // namespace kfed

#endif // KFED_IO_HPP
