#ifndef KFED_CONFIG_HPP
#define KFED_CONFIG_HPP

// Experiment configuration: a versioned JSON document with a strict schema
// (unknown keys and wrong types are rejected) and a content hash that every
// output file records.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "datagen.hpp"
#include "error.hpp"

namespace kfed {

using Json = nlohmann::json;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

enum class Experiment { table1, c_sweep, cost_ratio, separation_profile, single_run };

inline const char* to_string(Experiment e) noexcept {
    switch (e) {
    case Experiment::table1: return "table1";
    case Experiment::c_sweep: return "c_sweep";
    case Experiment::cost_ratio: return "cost_ratio";
    case Experiment::separation_profile: return "separation_profile";
    case Experiment::single_run: return "single_run";
    }
    return "?";
}

inline Experiment parse_experiment(std::string_view s) {
    for (auto e : {Experiment::table1, Experiment::c_sweep, Experiment::cost_ratio, Experiment::separation_profile,
                   Experiment::single_run})
        if (s == to_string(e)) return e;
    fail(ErrorKind::validation, "unknown experiment '" + std::string(s) + "'");
}

inline const char* to_string(MeanPlacement p) noexcept {
    switch (p) {
    case MeanPlacement::explicit_means: return "explicit";
    case MeanPlacement::theorem_bound: return "theorem_bound";
    case MeanPlacement::sigma_units: return "sigma_units";
    }
    return "?";
}

inline MeanPlacement parse_placement(std::string_view s) {
    for (auto p : {MeanPlacement::explicit_means, MeanPlacement::theorem_bound, MeanPlacement::sigma_units})
        if (s == to_string(p)) return p;
    fail(ErrorKind::validation, "unknown mean placement '" + std::string(s) + "'");
}

struct RunConfig {
    static constexpr int kVersion = 1;

    int version = kVersion;
    Experiment experiment = Experiment::single_run;
    MixtureSpec mixture;  // c, m0 and seed are taken from the fields below
    PartitionSpec partition;
    double c = 100.0;                          // mean placement and separation requirements
    std::optional<double> m0;                  // absent: devices_per_group / estimated
    std::vector<double> c_values{2, 5, 10, 20, 50, 100};  // c_sweep only
    std::vector<std::uint64_t> seeds{0};
    double tol = 1e-7;
    std::string out = "out";
    std::vector<std::size_t> exclude_devices;

    // Mixture spec for one (seed, c) pair.
    MixtureSpec mixture_for(std::uint64_t seed, std::optional<double> c_override = std::nullopt) const {
        MixtureSpec m = mixture;
        m.c = c_override.value_or(c);
        m.m0 = m0.value_or(static_cast<double>(partition.devices_per_group));
        m.seed = seed;
        m.k_prime = partition.mode == PartitionSpec::Mode::structured ? std::min(partition.group_size, m.k) : 0;
        return m;
    }

    void validate() const {
        if (version != kVersion) fail(ErrorKind::validation, "unsupported config version " + std::to_string(version));
        if (seeds.empty()) fail(ErrorKind::validation, "seeds must not be empty");
        if (!(tol > 0.0)) fail(ErrorKind::validation, "tol must be positive");
        if (m0 && !(*m0 > 0.0)) fail(ErrorKind::validation, "m0 must be positive");
        if (experiment == Experiment::c_sweep && c_values.empty())
            fail(ErrorKind::validation, "c_sweep needs at least one c value");
        if (partition.mode == PartitionSpec::Mode::structured) {
            if (partition.group_size < 1 || partition.group_size > mixture.k)
                fail(ErrorKind::validation, "partition group_size must be in [1, k]");
            if (partition.devices_per_group < 1) fail(ErrorKind::validation, "devices_per_group must be positive");
        } else if (partition.devices < 1) {
            fail(ErrorKind::validation, "iid partition needs at least one device");
        }
        mixture_for(seeds.front()).validate();
        for (double cv : c_values) {
            if (!(cv >= 0.0)) fail(ErrorKind::validation, "c values must be >= 0");
        }
    }

    // Device count of the partition this config produces.
    std::size_t device_count() const {
        if (partition.mode == PartitionSpec::Mode::iid) return partition.devices;
        const std::size_t groups = (mixture.k + partition.group_size - 1) / partition.group_size;
        return groups * partition.devices_per_group;
    }
};

namespace detail {

class ObjectReader {
public:
    ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) fail(ErrorKind::validation, where_ + " must be an object");
    }

    bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const Json& at(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) fail(ErrorKind::validation, where_ + ": missing key '" + key + "'");
        return j_.at(key);
    }

    template <class T>
    T get(const char* key) {
        return convert<T>(at(key), key);
    }

    template <class T>
    void maybe(const char* key, T& dst) {
        if (has(key)) dst = convert<T>(j_.at(key), key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.contains(it.key())) fail(ErrorKind::validation, where_ + ": unknown key '" + it.key() + "'");
    }

    const std::string& where() const noexcept { return where_; }

private:
    template <class T>
    T convert(const Json& v, const char* key) const {
        const std::string path = where_ + "." + key;
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) fail(ErrorKind::validation, path + " must be a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned()))
                fail(ErrorKind::validation, path + " must be a non-negative integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) fail(ErrorKind::validation, path + " must be a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) fail(ErrorKind::validation, path + " must be a string");
        } else {
            if (!v.is_array()) fail(ErrorKind::validation, path + " must be an array");
            using E = typename T::value_type;
            for (const auto& e : v) {
                if constexpr (std::is_floating_point_v<E>) {
                    if (!e.is_number()) fail(ErrorKind::validation, path + " must hold numbers");
                } else {
                    if (!e.is_number_unsigned()) fail(ErrorKind::validation, path + " must hold non-negative integers");
                }
            }
        }
        return v.get<T>();
    }

    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

} // namespace detail

inline Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return rows;
}

inline Matrix matrix_from_json(const Json& j, const std::string& where) {
    if (!j.is_array()) fail(ErrorKind::validation, where + " must be an array of rows");
    Matrix m;
    std::size_t cols = 0;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& row = j[i];
        if (!row.is_array()) fail(ErrorKind::validation, where + " row " + std::to_string(i) + " is not an array");
        if (i == 0) {
            cols = row.size();
            m = Matrix(0, cols);
        }
        if (row.size() != cols)
            fail(ErrorKind::validation, where + " row " + std::to_string(i) + " has " + std::to_string(row.size()) +
                                            " values, expected " + std::to_string(cols));
        std::vector<double> vals;
        for (const auto& v : row) {
            if (!v.is_number()) fail(ErrorKind::validation, where + " row " + std::to_string(i) + " holds a non-number");
            vals.push_back(v.get<double>());
        }
        m.append_row(vals);
    }
    return m;
}

inline Json to_json(const MixtureSpec& m) {
    Json j;
    j["k"] = m.k;
    j["d"] = m.d;
    j["sigma"] = m.sigma;
    j["weights"] = m.weights;
    j["placement"] = to_string(m.placement);
    if (m.placement == MeanPlacement::explicit_means) j["means"] = matrix_to_json(m.means);
    j["n"] = m.n;
    j["exact_counts"] = m.exact_counts;
    return j;
}

inline MixtureSpec mixture_from_json(const Json& j) {
    detail::ObjectReader r(j, "mixture");
    MixtureSpec m;
    r.maybe("k", m.k);
    r.maybe("d", m.d);
    r.maybe("sigma", m.sigma);
    r.maybe("weights", m.weights);
    if (r.has("placement")) m.placement = parse_placement(r.get<std::string>("placement"));
    if (r.has("means")) m.means = matrix_from_json(r.at("means"), "mixture.means");
    r.maybe("n", m.n);
    r.maybe("exact_counts", m.exact_counts);
    r.finish();
    return m;
}

inline Json to_json(const PartitionSpec& p) {
    Json j;
    j["mode"] = p.mode == PartitionSpec::Mode::structured ? "structured" : "iid";
    j["group_size"] = p.group_size;
    j["devices_per_group"] = p.devices_per_group;
    j["devices"] = p.devices;
    return j;
}

inline PartitionSpec partition_spec_from_json(const Json& j) {
    detail::ObjectReader r(j, "partition");
    PartitionSpec p;
    if (r.has("mode")) {
        const auto mode = r.get<std::string>("mode");
        if (mode == "structured") p.mode = PartitionSpec::Mode::structured;
        else if (mode == "iid") p.mode = PartitionSpec::Mode::iid;
        else fail(ErrorKind::validation, "partition.mode must be 'structured' or 'iid'");
    }
    r.maybe("group_size", p.group_size);
    r.maybe("devices_per_group", p.devices_per_group);
    r.maybe("devices", p.devices);
    r.finish();
    return p;
}

inline Json to_json(const RunConfig& c) {
    Json j;
    j["version"] = c.version;
    j["experiment"] = to_string(c.experiment);
    j["mixture"] = to_json(c.mixture);
    j["partition"] = to_json(c.partition);
    j["c"] = c.c;
    j["m0"] = c.m0 ? Json(*c.m0) : Json(nullptr);
    j["c_values"] = c.c_values;
    j["seeds"] = c.seeds;
    j["tol"] = c.tol;
    j["out"] = c.out;
    j["exclude_devices"] = c.exclude_devices;
    return j;
}

inline RunConfig config_from_json(const Json& j) {
    detail::ObjectReader r(j, "config");
    RunConfig c;
    c.version = r.get<int>("version");
    if (c.version != RunConfig::kVersion)
        fail(ErrorKind::validation, "unsupported config version " + std::to_string(c.version));
    c.experiment = parse_experiment(r.get<std::string>("experiment"));
    if (r.has("mixture")) c.mixture = mixture_from_json(r.at("mixture"));
    if (r.has("partition")) c.partition = partition_spec_from_json(r.at("partition"));
    r.maybe("c", c.c);
    if (r.has("m0") && !r.at("m0").is_null()) c.m0 = r.get<double>("m0");
    r.maybe("c_values", c.c_values);
    r.maybe("seeds", c.seeds);
    r.maybe("tol", c.tol);
    r.maybe("out", c.out);
    r.maybe("exclude_devices", c.exclude_devices);
    r.finish();
    return c;
}

inline RunConfig parse_config(std::string_view text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        fail(ErrorKind::validation, std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

// The config as recorded in outputs: everything except the output location,
// so the same experiment written to two directories hashes the same.
inline Json canonical_json(const RunConfig& c) {
    Json j = to_json(c);
    j.erase("out");
    return j;
}

// Stable across runs and platforms: the hash of the canonical dump (keys
// sorted, shortest round-trip doubles).
inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(canonical_json(c).dump())); }

// Built-in presets for each experiment, matching the shipped configs/.
inline RunConfig preset(Experiment e) {
    RunConfig c;
    c.experiment = e;
    c.seeds.clear();
    for (std::uint64_t s = 0; s < 10; ++s) c.seeds.push_back(s);
    switch (e) {
    case Experiment::table1:
    case Experiment::single_run:
    case Experiment::separation_profile:
        c.mixture.k = 16;
        c.mixture.d = 100;
        c.mixture.n = 16 * 200;
        break;
    case Experiment::c_sweep:
        // pairwise mean distance c sigma, so accuracy actually varies with c
        c.mixture.k = 16;
        c.mixture.d = 100;
        c.mixture.n = 16 * 200;
        c.mixture.placement = MeanPlacement::sigma_units;
        break;
    case Experiment::cost_ratio:
        c.mixture.k = 16;
        c.mixture.d = 50;
        c.mixture.n = 16 * 200;
        c.mixture.placement = MeanPlacement::sigma_units;
        c.c = 6;
        break;
    }
    if (e == Experiment::single_run) c.seeds = {0};
    return c;
}

} // namespace kfed

#endif // KFED_CONFIG_HPP
