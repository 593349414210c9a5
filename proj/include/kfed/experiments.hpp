#ifndef KFED_EXPERIMENTS_HPP
#define KFED_EXPERIMENTS_HPP

// Experiment orchestration behind the CLI. Everything here builds its
// outputs in memory (rows, summaries, named files); the caller is the single
// writer that puts them on disk.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "datagen.hpp"
#include "evaluation.hpp"
#include "federation.hpp"
#include "io.hpp"
#include "separation.hpp"

namespace kfed {

inline DevicePartition make_partition(const RunConfig& cfg, const Instance& inst, std::uint64_t seed) {
    if (cfg.partition.mode == PartitionSpec::Mode::structured)
        return structured_partition(inst.labels, inst.k, cfg.partition);
    auto part = iid_partition(inst.labels.size(), cfg.partition.devices, seed);
    assign_true_k(part, inst.labels, inst.k);
    return part;
}

inline KfedOptions kfed_options(const RunConfig& cfg, std::uint64_t seed) {
    KfedOptions opt;
    opt.seed = seed;
    opt.local.lloyd.tol = cfg.tol;
    opt.local.seeding.lloyd.tol = cfg.tol;
    opt.excluded_devices.insert(cfg.exclude_devices.begin(), cfg.exclude_devices.end());
    return opt;
}

// Truth clusters none of whose rows sit on a participating device.
inline std::vector<std::size_t> vanished_clusters(std::span<const int> truth, std::size_t k,
                                                  const DevicePartition& part,
                                                  const std::set<std::size_t>& excluded) {
    std::vector<char> present(k, 0);
    for (std::size_t z = 0; z < part.devices(); ++z) {
        if (excluded.contains(z)) continue;
        for (auto i : part.device_rows[z])
            if (truth[i] >= 0) present[static_cast<std::size_t>(truth[i])] = 1;
    }
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < k; ++r)
        if (!present[r]) out.push_back(r);
    return out;
}

struct Trial {
    std::uint64_t seed = 0;
    Instance instance;
    DevicePartition partition;
    KfedRun run;
    EvalResult eval;
    std::vector<std::size_t> vanished;
};

inline Trial run_on_instance(const RunConfig& cfg, std::uint64_t seed, Instance inst, DevicePartition part) {
    Trial t;
    t.seed = seed;
    t.instance = std::move(inst);
    t.partition = std::move(part);
    const auto opt = kfed_options(cfg, seed);
    t.vanished = vanished_clusters(t.instance.labels, t.instance.k, t.partition, opt.excluded_devices);
    t.run = run_kfed(t.partition, t.instance.data, opt);
    t.eval = evaluate(t.instance.data, t.run.induced().global.assignment, t.instance.labels);
    return t;
}

inline Trial run_trial(const RunConfig& cfg, std::uint64_t seed, std::optional<double> c = std::nullopt) {
    auto inst = generate_mixture(cfg.mixture_for(seed, c));
    auto part = make_partition(cfg, inst, seed);
    return run_on_instance(cfg, seed, std::move(inst), std::move(part));
}

// ---- summaries ----------------------------------------------------------

struct Summary {
    std::string label;
    std::size_t ok = 0;
    std::size_t failed = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation; 0 for a single value
};

inline Summary summarize(std::string label, std::span<const double> values, std::size_t failed) {
    Summary s;
    s.label = std::move(label);
    s.ok = values.size();
    s.failed = failed;
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

// Accuracy as a percentage, e.g. "100.00 ± 0.00".
inline std::string format_percent(double mean, double stddev) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * mean, 100.0 * stddev);
    return buf;
}

inline std::string format_c(double c) { return format_double(c); }

// Minimal SVG line chart with a log-scaled x axis.
inline std::string svg_line_chart(std::span<const double> xs, std::span<const double> ys, const std::string& title,
                                  const std::string& xlabel, const std::string& ylabel) {
    constexpr double w = 480, h = 320, left = 60, right = 20, top = 40, bottom = 50;
    const auto [xmin_it, xmax_it] = std::minmax_element(xs.begin(), xs.end());
    const double lx0 = std::log10(std::max(*xmin_it, 1e-12));
    const double lx1 = std::max(std::log10(std::max(*xmax_it, 1e-12)), lx0 + 1e-9);
    auto px = [&](double x) { return left + (std::log10(std::max(x, 1e-12)) - lx0) / (lx1 - lx0) * (w - left - right); };
    auto py = [&](double y) { return top + (1.0 - y) * (h - top - bottom); };
    auto num = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.2f", v);
        return std::string(b);
    };
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"240\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
    s += "<line x1=\"" + num(left) + "\" y1=\"" + num(h - bottom) + "\" x2=\"" + num(w - right) + "\" y2=\"" +
         num(h - bottom) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" + num(h - bottom) +
         "\" stroke=\"black\"/>\n";
    for (double t : {0.0, 0.5, 1.0})
        s += "<text x=\"" + num(left - 6) + "\" y=\"" + num(py(t) + 4) + "\" text-anchor=\"end\" font-size=\"10\">" +
             num(t) + "</text>\n";
    std::string pts;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) pts += ' ';
        pts += num(px(xs[i])) + "," + num(py(ys[i]));
        s += "<circle cx=\"" + num(px(xs[i])) + "\" cy=\"" + num(py(ys[i])) + "\" r=\"3\"/>\n";
        s += "<text x=\"" + num(px(xs[i])) + "\" y=\"" + num(h - bottom + 16) +
             "\" text-anchor=\"middle\" font-size=\"10\">" + format_c(xs[i]) + "</text>\n";
    }
    s += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    s += "<text x=\"240\" y=\"" + num(h - 10) + "\" text-anchor=\"middle\" font-size=\"12\">" + xlabel + "</text>\n";
    s += "<text x=\"14\" y=\"" + num(h / 2) + "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 " +
         num(h / 2) + ")\">" + ylabel + "</text>\n";
    s += "</svg>\n";
    return s;
}

// ---- experiments --------------------------------------------------------

struct ExperimentOutput {
    std::vector<ResultRow> rows;
    std::vector<Summary> summaries;
    std::map<std::string, std::string> files;  // relative path -> content
    Json report;
    std::vector<std::string> errors;  // one line per failed seed

    bool any_failed() const noexcept { return !errors.empty(); }
};

struct ExperimentOptions {
    bool record = false;  // also write every upload message and the server reply
    bool write_state = true;
};

namespace detail {

inline std::string seed_tag(std::uint64_t seed) { return "s" + std::to_string(seed); }

inline void record_trial(ExperimentOutput& out, const std::string& run_id, const Trial& t,
                         const RunConfig& cfg, const std::string& hash, const ExperimentOptions& opt) {
    if (opt.write_state) {
        StoredState st;
        st.state = t.run.aggregate.state;
        st.config_hash = hash;
        st.seed = t.seed;
        st.devices = t.partition.devices();
        st.tol = cfg.tol;
        out.files["state/" + run_id + ".json"] = state_text(st);
    }
    if (opt.record) {
        for (const auto& u : t.run.uploads)
            out.files["uploads/" + run_id + "/device-" + std::to_string(u.device_id) + ".json"] =
                dump(upload_to_json(u));
        out.files["uploads/" + run_id + "/server.json"] =
            dump(server_round_json(t.run.uploads, t.run.induced(), t.run.ops()));
    }
}

inline Json trial_json(const std::string& run_id, const Trial& t) {
    Json j;
    j["run_id"] = run_id;
    j["seed"] = t.seed;
    j["eval"] = to_json(t.eval);
    j["pairwise_distance_count"] = t.run.ops().pairwise_distance_count;
    j["messages_sent"] = t.run.ops().messages_sent;
    j["devices"] = t.run.uploads.size();
    j["vanished_clusters"] = t.vanished;
    return j;
}

inline Json summary_json(const Summary& s) {
    return Json{{"label", s.label},       {"mean_accuracy", s.mean}, {"std_accuracy", s.stddev},
                {"formatted", format_percent(s.mean, s.stddev)}, {"seeds_ok", s.ok}, {"seeds_failed", s.failed}};
}

} // namespace detail

inline ExperimentOutput run_experiment(const RunConfig& cfg, const ExperimentOptions& opt = {}) {
    cfg.validate();
    const std::string hash = config_hash(cfg);
    const std::string exp = to_string(cfg.experiment);
    ExperimentOutput out;
    out.report["config_hash"] = hash;
    out.report["experiment"] = exp;
    out.report["config"] = canonical_json(cfg);
    Json runs = Json::array();

    auto accuracy_runs = [&](const std::string& label, std::optional<double> c) {
        std::vector<double> accs;
        std::size_t failed = 0;
        for (auto seed : cfg.seeds) {
            const std::string run_id = exp + (c ? "-c" + format_c(*c) : std::string()) + "-" + detail::seed_tag(seed);
            try {
                const Trial t = run_trial(cfg, seed, c);
                accs.push_back(t.eval.accuracy);
                out.rows.push_back({run_id, hash, seed, t.eval.accuracy, t.eval.kmeans_cost,
                                    t.run.ops().pairwise_distance_count});
                detail::record_trial(out, run_id, t, cfg, hash, opt);
                auto j = detail::trial_json(run_id, t);
                if (c) j["c"] = *c;
                if (cfg.experiment == Experiment::single_run)
                    out.files["labels/" + run_id + ".csv"] = labels_csv(t.run.induced().global.assignment);
                runs.push_back(j);
            } catch (const Error& e) {
                ++failed;
                out.errors.push_back(run_id + ": " + e.what());
                out.rows.push_back({run_id, hash, seed, std::nullopt, std::nullopt, 0});
                runs.push_back(Json{{"run_id", run_id}, {"seed", seed}, {"error", e.what()}});
            }
        }
        out.summaries.push_back(summarize(label, accs, failed));
    };

    switch (cfg.experiment) {
    case Experiment::table1:
    case Experiment::single_run:
        accuracy_runs(exp, std::nullopt);
        break;
    case Experiment::c_sweep: {
        std::vector<double> xs, ys;
        for (double c : cfg.c_values) {
            accuracy_runs("c=" + format_c(c), c);
            xs.push_back(c);
            ys.push_back(out.summaries.back().mean);
        }
        out.files["c_sweep.svg"] = svg_line_chart(xs, ys, "accuracy vs separation constant", "c", "accuracy");
        break;
    }
    case Experiment::cost_ratio: {
        std::string csv = "run_id,config_hash,seed,oracle_cost,structured_cost,iid_cost,ratio,status\n";
        std::vector<double> ratios;
        std::size_t below_one = 0, failed = 0;
        for (auto seed : cfg.seeds) {
            const std::string run_id = exp + "-" + detail::seed_tag(seed);
            try {
                Trial structured = run_trial(cfg, seed);
                RunConfig iid_cfg = cfg;
                iid_cfg.partition.mode = PartitionSpec::Mode::iid;
                iid_cfg.partition.devices = structured.partition.devices();
                auto iid_part = make_partition(iid_cfg, structured.instance, seed);
                const Trial iid = run_on_instance(iid_cfg, seed, structured.instance, std::move(iid_part));
                const double oracle = kmeans_cost(structured.instance.data, structured.instance.labels);
                const auto ratio = cost_ratio_report(oracle, *structured.eval.kmeans_cost, *iid.eval.kmeans_cost);
                csv += run_id + ',' + hash + ',' + std::to_string(seed) + ',' + format_double(oracle) + ',' +
                       format_double(*structured.eval.kmeans_cost) + ',' + format_double(*iid.eval.kmeans_cost) + ',' +
                       (ratio.ratio ? format_double(*ratio.ratio) : std::string()) + ',' + ratio.status + '\n';
                if (ratio.ratio) {
                    ratios.push_back(*ratio.ratio);
                    if (*ratio.ratio < 1.0) ++below_one;
                }
                out.rows.push_back({run_id + "-structured", hash, seed, structured.eval.accuracy,
                                    structured.eval.kmeans_cost, structured.run.ops().pairwise_distance_count});
                out.rows.push_back({run_id + "-iid", hash, seed, iid.eval.accuracy, iid.eval.kmeans_cost,
                                    iid.run.ops().pairwise_distance_count});
                runs.push_back(Json{{"run_id", run_id},
                                    {"seed", seed},
                                    {"oracle_cost", oracle},
                                    {"structured", to_json(structured.eval)},
                                    {"iid", to_json(iid.eval)},
                                    {"ratio", ratio.ratio ? Json(*ratio.ratio) : Json(nullptr)},
                                    {"status", ratio.status}});
            } catch (const Error& e) {
                ++failed;
                out.errors.push_back(run_id + ": " + e.what());
                runs.push_back(Json{{"run_id", run_id}, {"seed", seed}, {"error", e.what()}});
            }
        }
        out.files["cost_ratio.csv"] = csv;
        out.report["ratio_below_one"] = below_one;
        out.report["ratio_seeds"] = ratios.size();
        out.summaries.push_back(summarize("ratio", ratios, failed));
        break;
    }
    case Experiment::separation_profile: {
        std::size_t failed = 0;
        std::vector<double> fractions;
        for (auto seed : cfg.seeds) {
            const std::string run_id = exp + "-" + detail::seed_tag(seed);
            try {
                const auto inst = generate_mixture(cfg.mixture_for(seed));
                const auto part = make_partition(cfg, inst, seed);
                SeparationOptions sopt;
                sopt.c = cfg.c;
                sopt.m0 = cfg.m0;
                const auto rep = separation_quantities(inst.data, inst.labels, inst.k, part, sopt);
                const auto audit = lemma_audit(inst.data, inst.labels, inst.k, part);
                Json j{{"config_hash", hash}, {"seed", seed}, {"separation", to_json(rep)}, {"audit", to_json(audit)}};
                out.files["separation/" + run_id + ".json"] = dump(j);
                out.files["separation/" + run_id + "-pairs.csv"] = pairs_csv(rep, hash, seed);
                std::size_t satisfied = 0;
                for (const auto& p : rep.pairs)
                    if (p.status == PairStatus::active ? p.active_ok : p.inactive_ok) ++satisfied;
                fractions.push_back(static_cast<double>(satisfied) / static_cast<double>(std::max<std::size_t>(1, rep.pairs.size())));
                runs.push_back(Json{{"run_id", run_id}, {"seed", seed}, {"audit_violations", audit.violations()},
                                    {"proximity_bad", rep.proximity.bad_count}});
            } catch (const Error& e) {
                ++failed;
                out.errors.push_back(run_id + ": " + e.what());
                runs.push_back(Json{{"run_id", run_id}, {"seed", seed}, {"error", e.what()}});
            }
        }
        out.summaries.push_back(summarize("requirements_met", fractions, failed));
        break;
    }
    }

    out.report["runs"] = runs;
    Json sums = Json::array();
    for (const auto& s : out.summaries) sums.push_back(detail::summary_json(s));
    out.report["summaries"] = sums;
    out.report["errors"] = out.errors;
    return out;
}

inline std::string summary_text(const ExperimentOutput& out, const std::string& hash) {
    std::string s = "# config_hash " + hash + "\n";
    for (const auto& sum : out.summaries) {
        s += sum.label + "  " + format_percent(sum.mean, sum.stddev) + "  (" + std::to_string(sum.ok) + " ok";
        if (sum.failed) s += ", " + std::to_string(sum.failed) + " failed";
        s += ")\n";
    }
    return s;
}

// ---- instance files -----------------------------------------------------

struct InstanceFiles {
    std::string data;
    std::string labels;
    std::string partition;
    std::string spec;
};

// The four files that reconstruct one (config, seed) instance.
inline InstanceFiles instance_files(const RunConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto mix = cfg.mixture_for(seed);
    const auto inst = generate_mixture(mix);
    const auto part = make_partition(cfg, inst, seed);
    InstanceFiles f;
    f.data = matrix_csv(inst.data);
    f.labels = labels_csv(inst.labels);
    f.partition = dump(partition_to_json(part));
    Json spec{{"config_hash", config_hash(cfg)},
              {"seed", seed},
              {"k", inst.k},
              {"n", inst.data.rows()},
              {"d", inst.data.cols()},
              {"c", mix.c},
              {"m0", mix.m0},
              {"mixture", to_json(mix)},
              {"config", canonical_json(cfg)}};
    f.spec = dump(spec);
    return f;
}

struct LoadedInstance {
    RunConfig config;
    std::uint64_t seed = 0;
    Instance instance;
    DevicePartition partition;
};

inline LoadedInstance load_instance(const fs::path& dir) {
    LoadedInstance out;
    Json spec;
    try {
        spec = Json::parse(read_text(dir / "spec.json"));
    } catch (const Json::parse_error& e) {
        fail(ErrorKind::io, (dir / "spec.json").string() + ": " + e.what());
    }
    if (!spec.contains("config") || !spec.contains("seed") || !spec.contains("k"))
        fail(ErrorKind::io, (dir / "spec.json").string() + ": missing config, seed or k");
    out.config = config_from_json(spec["config"]);
    out.seed = spec["seed"].get<std::uint64_t>();
    const auto k = spec["k"].get<std::size_t>();
    out.instance.k = k;
    out.instance.data = read_matrix_csv(dir / "data.csv");
    out.instance.labels = read_labels_csv(dir / "labels.csv", k);
    if (out.instance.labels.size() != out.instance.data.rows())
        fail(ErrorKind::validation, "labels.csv has " + std::to_string(out.instance.labels.size()) +
                                        " rows but data.csv has " + std::to_string(out.instance.data.rows()));
    out.partition = read_partition_json(dir / "partition.json");
    assign_true_k(out.partition, out.instance.labels, k);
    return out;
}

// ---- late join ----------------------------------------------------------

struct JoinResult {
    std::vector<int> row_labels;     // global label per row of the new device
    std::vector<int> center_labels;  // global label per local center
    DeviceCenters upload;
    std::uint64_t distance_count = 0;  // assignment step only
};

inline JoinResult join_device(const StoredState& stored, const Matrix& data, std::size_t k_z, std::size_t device_id) {
    if (!stored.state.valid()) fail(ErrorKind::runtime, "no aggregation state");
    LocalOptions lopt;
    lopt.lloyd.tol = stored.tol;
    lopt.seeding.lloyd.tol = stored.tol;
    const auto local = local_cluster(data, k_z, device_seed(stored.seed, device_id), lopt);
    JoinResult res;
    res.upload.device_id = device_id;
    res.upload.centers = local.clusters.centers;
    res.upload.local_assignment = local.clusters.assignment;
    OpsAccounting ops;
    res.center_labels = assign_new_device(stored.state, res.upload, ops);
    res.distance_count = ops.pairwise_distance_count;
    res.row_labels.resize(data.rows());
    for (std::size_t i = 0; i < data.rows(); ++i)
        res.row_labels[i] = res.center_labels[static_cast<std::size_t>(local.clusters.assignment[i])];
    return res;
}

// Server-side replay of recorded uploads: seeding plus one assignment round.
inline Json replay_uploads(std::span<const DeviceCenters> uploads, std::size_t k,
                           std::optional<std::size_t> start_device = std::nullopt) {
    OpsAccounting ops;
    const auto seeds = farthest_point_init(uploads, k, start_device, ops);
    const auto induced = assign_centers(uploads, seeds, ops);
    return server_round_json(uploads, induced, ops);
}

} // namespace kfed

#endif // KFED_EXPERIMENTS_HPP
