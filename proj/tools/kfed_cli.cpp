// kfed: command-line driver for one-shot federated k-means experiments.
//
// Exit codes: 0 success, 2 validation error, 3 runtime/pipeline error, 4 IO.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kfed/config.hpp"
#include "kfed/experiments.hpp"
#include "kfed/io.hpp"
#include "kfed/kfed.hpp"

namespace {

std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

using namespace kfed;

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitIo = 4;

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::parameter:
    case ErrorKind::validation: return kExitValidation;
    case ErrorKind::runtime: return kExitRuntime;
    case ErrorKind::io: return kExitIo;
    }
    return kExitRuntime;
}

struct CommonFlags {
    std::string config;
    std::string experiment;
    std::optional<std::uint64_t> seed;
    std::string seeds;
    std::string out;
    std::string exclude;
    std::optional<double> c;
    std::optional<double> m0;
    std::optional<double> tol;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--config", config, "experiment config (JSON)");
        cmd->add_option("--experiment", experiment,
                        "built-in preset when no --config: table1, c_sweep, cost_ratio, separation_profile, single_run");
        cmd->add_option("--seed", seed, "run a single seed");
        cmd->add_option("--seeds", seeds, "inclusive seed range N..M");
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--exclude-devices", exclude, "comma-separated device ids to drop");
        cmd->add_option("--c", c, "separation constant");
        cmd->add_option("--m0", m0, "m0 (devices per cluster)");
        cmd->add_option("--tol", tol, "Lloyd convergence tolerance");
    }
};

std::vector<std::uint64_t> parse_seed_range(const std::string& s) {
    const auto dots = s.find("..");
    std::uint64_t lo = 0, hi = 0;
    if (dots == std::string::npos || !detail::parse_number(std::string_view(s).substr(0, dots), lo) ||
        !detail::parse_number(std::string_view(s).substr(dots + 2), hi) || hi < lo)
        fail(ErrorKind::validation, "--seeds expects N..M with N <= M, got '" + s + "'");
    std::vector<std::uint64_t> out;
    for (std::uint64_t v = lo; v <= hi; ++v) out.push_back(v);
    return out;
}

std::vector<std::size_t> parse_id_list(const std::string& s) {
    std::vector<std::size_t> out;
    if (s.empty()) return out;
    for (auto cell : detail::split_commas(s)) {
        std::size_t v = 0;
        if (!detail::parse_number(cell, v)) fail(ErrorKind::validation, "--exclude-devices: bad device id in '" + s + "'");
        out.push_back(v);
    }
    return out;
}

RunConfig load_config(const CommonFlags& f) {
    RunConfig cfg;
    if (!f.config.empty()) {
        cfg = parse_config(read_text(f.config));
    } else {
        cfg = preset(f.experiment.empty() ? Experiment::single_run : parse_experiment(f.experiment));
    }
    if (f.seed) cfg.seeds = {*f.seed};
    if (!f.seeds.empty()) cfg.seeds = parse_seed_range(f.seeds);
    if (!f.out.empty()) cfg.out = f.out;
    if (!f.exclude.empty()) cfg.exclude_devices = parse_id_list(f.exclude);
    if (f.c) cfg.c = *f.c;
    if (f.m0) cfg.m0 = *f.m0;
    if (f.tol) cfg.tol = *f.tol;
    cfg.validate();
    return cfg;
}

void write_files(const fs::path& root, const std::map<std::string, std::string>& files) {
    for (const auto& [rel, content] : files) write_text_atomic(root / rel, content);
}

std::string results_csv(const std::vector<ResultRow>& rows) {
    std::string s(kResultsHeader);
    for (const auto& r : rows) s += to_csv(r);
    return s;
}

int cmd_generate(const CommonFlags& f) {
    const RunConfig cfg = load_config(f);
    // everything is built before the first write, so a bad spec leaves no files behind
    std::map<std::string, std::string> files;
    for (auto seed : cfg.seeds) {
        const auto inst = instance_files(cfg, seed);
        const std::string dir = "seed-" + std::to_string(seed) + "/";
        files[dir + "data.csv"] = inst.data;
        files[dir + "labels.csv"] = inst.labels;
        files[dir + "partition.json"] = inst.partition;
        files[dir + "spec.json"] = inst.spec;
    }
    write_files(cfg.out, files);
    std::cout << "wrote " << cfg.seeds.size() << " instance(s) to " << cfg.out << " (config " << config_hash(cfg)
              << ")\n";
    return 0;
}

std::vector<DeviceCenters> read_uploads(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(ErrorKind::io, "no upload directory " + dir.string());
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.rfind("device-", 0) == 0 && e.path().extension() == ".json") paths.push_back(e.path());
    }
    if (paths.empty()) fail(ErrorKind::io, "no device-*.json uploads in " + dir.string());
    std::vector<DeviceCenters> uploads;
    for (const auto& p : paths) {
        Json j;
        try {
            j = Json::parse(read_text(p));
        } catch (const Json::parse_error& e) {
            fail(ErrorKind::io, p.string() + ": " + e.what());
        }
        uploads.push_back(upload_from_json(j, p.filename().string()));
    }
    std::sort(uploads.begin(), uploads.end(), [](const auto& a, const auto& b) { return a.device_id < b.device_id; });
    return uploads;
}

int cmd_run(const CommonFlags& f, const std::string& instance_dir, const std::string& replay_dir,
            std::optional<std::size_t> replay_k, bool record) {
    if (!replay_dir.empty()) {
        const RunConfig cfg = load_config(f);
        const auto uploads = read_uploads(replay_dir);
        const auto reply = replay_uploads(uploads, replay_k.value_or(cfg.mixture.k));
        const fs::path out = fs::path(cfg.out) / "server.json";
        write_text_atomic(out, dump(reply));
        std::cout << "replayed " << uploads.size() << " uploads -> " << out.string() << "\n";
        return 0;
    }

    if (!instance_dir.empty()) {
        auto loaded = load_instance(instance_dir);
        RunConfig cfg = loaded.config;
        if (!f.out.empty()) cfg.out = f.out;
        if (!f.exclude.empty()) cfg.exclude_devices = parse_id_list(f.exclude);
        if (f.tol) cfg.tol = *f.tol;
        cfg.validate();
        const std::string hash = config_hash(cfg);
        const std::string run_id = "instance-s" + std::to_string(loaded.seed);
        const Trial t = run_on_instance(cfg, loaded.seed, std::move(loaded.instance), std::move(loaded.partition));
        ExperimentOutput out;
        out.rows.push_back({run_id, hash, loaded.seed, t.eval.accuracy, t.eval.kmeans_cost,
                            t.run.ops().pairwise_distance_count});
        detail::record_trial(out, run_id, t, cfg, hash, {record, true});
        out.files["labels/" + run_id + ".csv"] = labels_csv(t.run.induced().global.assignment);
        Json report = detail::trial_json(run_id, t);
        report["config_hash"] = hash;
        out.files["report.json"] = dump(report);
        out.files["results.csv"] = results_csv(out.rows);
        write_files(cfg.out, out.files);
        std::cout << run_id << "  accuracy " << fmt_pct(t.eval.accuracy) << "\n";
        if (!t.vanished.empty()) std::cout << "warning: " << t.vanished.size() << " cluster(s) vanished with the excluded devices\n";
        return 0;
    }

    const RunConfig cfg = load_config(f);
    const std::string hash = config_hash(cfg);
    auto out = run_experiment(cfg, {record, true});
    out.files["results.csv"] = results_csv(out.rows);
    out.files["report.json"] = dump(out.report);
    out.files["summary.txt"] = summary_text(out, hash);
    write_files(cfg.out, out.files);
    std::cout << out.files["summary.txt"];
    if (cfg.experiment == Experiment::single_run || cfg.experiment == Experiment::table1) {
        for (const auto& r : out.report["runs"])
            if (r.contains("vanished_clusters") && !r["vanished_clusters"].empty())
                std::cout << "warning: " << r["run_id"].get<std::string>() << ": " << r["vanished_clusters"].size()
                          << " cluster(s) vanished with the excluded devices\n";
    }
    for (const auto& e : out.errors) std::cerr << "error: " << e << "\n";
    return out.any_failed() ? kExitRuntime : 0;
}

struct ProfileFlags {
    std::string instance;
    std::string data;
    std::string labels;
    std::string partition;
    std::optional<std::size_t> k;
};

int cmd_profile(const CommonFlags& f, const ProfileFlags& p) {
    Matrix data;
    std::vector<int> labels;
    DevicePartition part;
    std::size_t k = 0;
    std::string hash = "-";
    std::uint64_t seed = f.seed.value_or(0);
    if (!p.instance.empty()) {
        auto loaded = load_instance(p.instance);
        data = std::move(loaded.instance.data);
        labels = std::move(loaded.instance.labels);
        part = std::move(loaded.partition);
        k = loaded.instance.k;
        hash = config_hash(loaded.config);
        seed = loaded.seed;
    } else {
        if (p.data.empty() || p.labels.empty() || p.partition.empty())
            fail(ErrorKind::validation, "profile needs --instance DIR or all of --data, --labels, --partition");
        data = read_matrix_csv(p.data);
        labels = read_labels_csv(p.labels, p.k);
        if (labels.size() != data.rows())
            fail(ErrorKind::validation, "labels have " + std::to_string(labels.size()) + " rows but data has " +
                                            std::to_string(data.rows()));
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0)
                fail(ErrorKind::validation, "labels row " + std::to_string(i + 1) + " is unassigned; profile needs a full clustering");
        k = p.k.value_or(static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1));
        part = read_partition_json(p.partition);
        std::size_t covered = 0;
        for (const auto& rows : part.device_rows) covered += rows.size();
        if (covered != data.rows())
            fail(ErrorKind::validation, "partition covers " + std::to_string(covered) + " rows but data has " +
                                            std::to_string(data.rows()));
        assign_true_k(part, labels, k);
    }
    SeparationOptions opt;
    opt.c = f.c.value_or(100.0);
    opt.m0 = f.m0;
    const auto rep = separation_quantities(data, labels, k, part, opt);
    const auto audit = lemma_audit(data, labels, k, part);
    const fs::path out = f.out.empty() ? fs::path("out") : fs::path(f.out);
    Json j{{"config_hash", hash}, {"seed", seed}, {"separation", to_json(rep)}, {"audit", to_json(audit)}};
    write_text_atomic(out / "separation.json", dump(j));
    write_text_atomic(out / "pairs.csv", pairs_csv(rep, hash, seed));
    std::size_t active_ok = 0, inactive_ok = 0;
    for (const auto& pr : rep.pairs) {
        if (pr.status == PairStatus::active && pr.active_ok) ++active_ok;
        if (pr.status == PairStatus::inactive && pr.inactive_ok) ++inactive_ok;
    }
    std::cout << "active pairs " << active_ok << "/" << rep.count(PairStatus::active) << " ok, inactive pairs "
              << inactive_ok << "/" << rep.count(PairStatus::inactive) << " ok, proximity bad points "
              << rep.proximity.bad_count << ", audit violations " << audit.violations() << "\n";
    return 0;
}

int cmd_join(const CommonFlags& f, const std::string& state_path, const std::string& data_path,
             std::optional<std::size_t> kz, std::optional<std::size_t> device_id, const std::string& truth_path) {
    const auto stored = read_state(state_path);
    if (!kz) fail(ErrorKind::validation, "join needs --kz");
    const Matrix data = read_matrix_csv(data_path);
    const std::size_t id = device_id.value_or(stored.devices);
    const auto res = join_device(stored, data, *kz, id);
    const fs::path out = f.out.empty() ? fs::path(state_path).parent_path().parent_path() : fs::path(f.out);
    ResultRow row{"join-d" + std::to_string(id), stored.config_hash, stored.seed, std::nullopt,
                  kmeans_cost(data, res.row_labels), res.distance_count};
    if (!truth_path.empty()) {
        const auto truth = read_labels_csv(truth_path);
        if (truth.size() != data.rows())
            fail(ErrorKind::validation, "truth labels have " + std::to_string(truth.size()) + " rows but data has " +
                                            std::to_string(data.rows()));
        row.accuracy = matched_accuracy(res.row_labels, truth).accuracy;
    }
    write_labels_csv(out / ("join-d" + std::to_string(id) + "-labels.csv"), res.row_labels);
    const fs::path results = out / "results.csv";
    append_text(results, (fs::exists(results) ? std::string() : std::string(kResultsHeader)) + to_csv(row));
    std::cout << "device " << id << ": " << data.rows() << " rows, " << res.center_labels.size()
              << " centers labelled with " << res.distance_count << " distance computations\n";
    return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& data_path, const std::string& pred_path,
             const std::string& truth_path) {
    const auto pred = read_labels_csv(pred_path);
    const auto truth = read_labels_csv(truth_path);
    if (pred.size() != truth.size())
        fail(ErrorKind::validation, "prediction has " + std::to_string(pred.size()) + " rows but truth has " +
                                        std::to_string(truth.size()));
    EvalResult res;
    if (!data_path.empty()) {
        const Matrix data = read_matrix_csv(data_path);
        if (data.rows() != pred.size())
            fail(ErrorKind::validation, "data has " + std::to_string(data.rows()) + " rows but labels have " +
                                            std::to_string(pred.size()));
        res = evaluate(data, pred, truth);
    } else {
        res = matched_accuracy(pred, truth);
    }
    const fs::path out = f.out.empty() ? fs::path("out") : fs::path(f.out);
    write_text_atomic(out / "eval.json", dump(to_json(res)));
    std::cout << "accuracy " << fmt_pct(res.accuracy) << " (" << res.misclassified << " of " << res.n
              << " misclassified)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kfed: one-shot federated k-means simulator"};
    app.require_subcommand(1);

    CommonFlags gen_flags, run_flags, prof_flags, join_flags, eval_flags;

    auto* gen = app.add_subcommand("generate", "write data/labels/partition/spec files per seed");
    gen_flags.add_to(gen);

    auto* run = app.add_subcommand("run", "run an experiment, a saved instance, or a server replay");
    run_flags.add_to(run);
    std::string instance_dir, replay_dir;
    std::optional<std::size_t> replay_k;
    bool record = false;
    run->add_option("--instance", instance_dir, "run on files written by 'generate'");
    run->add_flag("--record", record, "write every upload message and the server reply");
    run->add_option("--replay", replay_dir, "recompute the server reply from recorded uploads");
    run->add_option("--k", replay_k, "k for --replay (default: config mixture k)");

    auto* prof = app.add_subcommand("profile", "separation report and inequality audit for labelled data");
    prof_flags.add_to(prof);
    ProfileFlags pf;
    prof->add_option("--instance", pf.instance, "instance directory from 'generate'");
    prof->add_option("--data", pf.data, "data CSV");
    prof->add_option("--labels", pf.labels, "labels CSV");
    prof->add_option("--partition", pf.partition, "partition JSON");
    prof->add_option("--k", pf.k, "number of clusters (labels must lie in [0, k))");

    auto* join = app.add_subcommand("join", "label a late device against a saved server state");
    join_flags.add_to(join);
    std::string state_path, join_data, join_truth;
    std::optional<std::size_t> kz, device_id;
    join->add_option("--state", state_path, "state file written by 'run'")->required();
    join->add_option("--data", join_data, "the new device's data CSV")->required();
    join->add_option("--kz", kz, "number of local clusters on the new device");
    join->add_option("--device-id", device_id, "device id (selects the local seed; default: next unused id)");
    join->add_option("--truth", join_truth, "optional true labels for the new rows");

    auto* ev = app.add_subcommand("eval", "matched accuracy (and cost) of a labelling");
    eval_flags.add_to(ev);
    std::string eval_data, eval_pred, eval_truth;
    ev->add_option("--data", eval_data, "data CSV (adds the k-means cost)");
    ev->add_option("--pred", eval_pred, "predicted labels CSV")->required();
    ev->add_option("--truth", eval_truth, "true labels CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*gen) return cmd_generate(gen_flags);
        if (*run) return cmd_run(run_flags, instance_dir, replay_dir, replay_k, record);
        if (*prof) return cmd_profile(prof_flags, pf);
        if (*join) return cmd_join(join_flags, state_path, join_data, kz, device_id, join_truth);
        if (*ev) return cmd_eval(eval_flags, eval_data, eval_pred, eval_truth);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
