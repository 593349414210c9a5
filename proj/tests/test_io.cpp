#include <gtest/gtest.h>

#include <filesystem>

#include "kfed/config.hpp"
#include "kfed/experiments.hpp"
#include "kfed/io.hpp"
#include "oracles.hpp"

using namespace kfed;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("kfed_test_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

RunConfig small_config(Experiment e = Experiment::single_run) {
    RunConfig cfg = preset(e);
    cfg.mixture.k = 4;
    cfg.mixture.d = 8;
    cfg.mixture.n = 4 * 40;
    cfg.partition.group_size = 2;
    cfg.partition.devices_per_group = 2;
    cfg.seeds = {1, 2};
    return cfg;
}

} // namespace

TEST(Config, RoundTripIsLossless) {
    RunConfig cfg = small_config(Experiment::c_sweep);
    cfg.c = 0.1 + 0.2;  // not exactly representable in short decimal
    cfg.m0 = 2.5;
    cfg.tol = 1e-9;
    cfg.mixture.weights = {0.1, 0.2, 0.3, 0.4};
    cfg.exclude_devices = {3, 1};
    cfg.c_values = {1.0 / 3.0, 7};
    const Json j = to_json(cfg);
    const RunConfig back = config_from_json(Json::parse(j.dump()));
    EXPECT_EQ(to_json(back), j);
    EXPECT_EQ(back.c, cfg.c);
    EXPECT_EQ(back.c_values, cfg.c_values);
    EXPECT_EQ(back.mixture.weights, cfg.mixture.weights);
    EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(Config, ExplicitMeansRoundTrip) {
    RunConfig cfg = small_config();
    cfg.mixture.placement = MeanPlacement::explicit_means;
    cfg.mixture.means = oracle::random_matrix(4, 8, 3);
    const RunConfig back = config_from_json(Json::parse(to_json(cfg).dump()));
    EXPECT_EQ(back.mixture.means, cfg.mixture.means);
}

TEST(Config, HashChangesWithContent) {
    RunConfig a = small_config();
    RunConfig b = a;
    b.c = 99;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, StrictSchema) {
    const std::string base = R"({"version": 1, "experiment": "table1")";
    EXPECT_NO_THROW(parse_config(base + "}"));
    EXPECT_THROW(parse_config(base + R"(, "colour": 3})"), Error);
    EXPECT_THROW(parse_config(base + R"(, "c": "big"})"), Error);
    EXPECT_THROW(parse_config(base + R"(, "seeds": [-1]})"), Error);
    EXPECT_THROW(parse_config(base + R"(, "mixture": {"kk": 3}})"), Error);
    EXPECT_THROW(parse_config(R"({"version": 2, "experiment": "table1"})"), Error);
    EXPECT_THROW(parse_config(R"({"experiment": "table1"})"), Error);
    EXPECT_THROW(parse_config(R"({"version": 1, "experiment": "table2"})"), Error);
    EXPECT_THROW(parse_config("{not json"), Error);
}

TEST(Config, WeightsSummingToPointNineFailValidation) {
    RunConfig cfg = small_config();
    cfg.mixture.weights = {0.3, 0.3, 0.2, 0.1};
    try {
        cfg.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::validation);
    }
}

TEST(Csv, MatrixRoundTripIsExact) {
    Matrix m = oracle::random_matrix(7, 5, 12, 1e3);
    m(0, 0) = 1.0 / 3.0;
    m(1, 1) = -0.0;
    m(2, 2) = 1e-300;
    const Matrix back = parse_matrix_csv(matrix_csv(m), "m");
    EXPECT_EQ(back, m);
}

TEST(Csv, RaggedRowNamesTheRow) {
    try {
        parse_matrix_csv("1,2\n3,4\n5\n", "data.csv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
        EXPECT_NE(std::string(e.what()).find("data.csv row 3"), std::string::npos);
    }
}

TEST(Csv, NonNumberNamesRowAndColumn) {
    try {
        parse_matrix_csv("1,2\n3,x\n", "data.csv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("row 2, column 2"), std::string::npos);
    }
}

TEST(Csv, LabelsWithUnseenClusterId) {
    EXPECT_EQ(parse_labels_csv("0\n1\n-1\n", "l", 2), (std::vector<int>{0, 1, -1}));
    try {
        parse_labels_csv("0\n1\n2\n1\n", "labels.csv", 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("labels.csv row 3"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("unseen cluster id 2"), std::string::npos);
    }
    EXPECT_THROW(parse_labels_csv("0\n1.5\n", "l"), Error);
}

TEST(Partition, JsonRoundTrip) {
    DevicePartition p;
    p.device_rows = {{0, 3}, {1}, {2, 4, 5}};
    const auto back = partition_from_json(Json::parse(partition_to_json(p).dump()), "p");
    EXPECT_EQ(back.device_rows, p.device_rows);
    EXPECT_THROW(partition_from_json(Json::parse(R"({"0": [0], "5": [1]})"), "p"), Error);
    EXPECT_THROW(partition_from_json(Json::parse(R"({"0": [-1]})"), "p"), Error);
}

TEST(Upload, MessageRoundTrip) {
    DeviceCenters u;
    u.device_id = 7;
    u.centers = oracle::random_matrix(3, 4, 5);
    u.local_assignment = {0, 1, 2, 2, 1};
    const Json j = upload_to_json(u);
    EXPECT_EQ(j["k_z"], 3);
    EXPECT_EQ(j["assignment_digest"], assignment_digest(u.local_assignment));
    const auto back = upload_from_json(Json::parse(j.dump()), "u");
    EXPECT_EQ(back.device_id, 7u);
    EXPECT_EQ(back.centers, u.centers);
}

TEST(Upload, DigestDependsOnOrder) {
    EXPECT_NE(assignment_digest(std::vector<int>{0, 1}), assignment_digest(std::vector<int>{1, 0}));
    EXPECT_EQ(assignment_digest(std::vector<int>{}), hex64(0xcbf29ce484222325ULL));
}

TEST(State, RoundTrip) {
    const fs::path dir = scratch("state");
    StoredState s;
    s.state.tau_means = oracle::random_matrix(3, 2, 8);
    s.config_hash = "0123456789abcdef";
    s.seed = 4;
    s.devices = 6;
    s.tol = 1e-8;
    write_state(dir / "state.json", s);
    const auto back = read_state(dir / "state.json");
    EXPECT_EQ(back.state.tau_means, s.state.tau_means);
    EXPECT_EQ(back.seed, 4u);
    EXPECT_EQ(back.devices, 6u);
    EXPECT_EQ(back.tol, 1e-8);
    EXPECT_FALSE(fs::exists(dir / "state.json.tmp"));
}

TEST(State, CorruptionIsAChecksumError) {
    StoredState s;
    s.state.tau_means = Matrix{{1.5, 2.0}};
    std::string text = state_text(s);
    const auto pos = text.find("1.5");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 3, "1.6");
    try {
        parse_state(text, "state.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
        EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
    }
    EXPECT_THROW(parse_state(text.substr(0, text.size() / 2), "state.json"), Error);
}

TEST(State, MissingFile) {
    try {
        read_state(scratch("missing") / "nope.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::runtime);
    }
}

TEST(Results, RowFormat) {
    ResultRow r{"table1-s0", "abc", 0, 1.0, 2.5, 40};
    EXPECT_EQ(to_csv(r), "table1-s0,abc,0,1,2.5,40\n");
    ResultRow failed{"x", "abc", 3, std::nullopt, std::nullopt, 0};
    EXPECT_EQ(to_csv(failed), "x,abc,3,,,0\n");
}

TEST(AtomicWrite, CreatesParentsAndReplaces) {
    const fs::path dir = scratch("atomic");
    write_text_atomic(dir / "a" / "b.txt", "one");
    write_text_atomic(dir / "a" / "b.txt", "two");
    EXPECT_EQ(read_text(dir / "a" / "b.txt"), "two");
    append_text(dir / "a" / "b.txt", "three");
    EXPECT_EQ(read_text(dir / "a" / "b.txt"), "twothree");
}

// ---- experiments --------------------------------------------------------

TEST(Experiments, SummaryFormatting) {
    EXPECT_EQ(format_percent(1.0, 0.0), "100.00 ± 0.00");
    EXPECT_EQ(format_percent(0.9927, 0.0073), "99.27 ± 0.73");
    const std::vector<double> v{0.5, 1.0};
    const auto s = summarize("x", v, 0);
    EXPECT_DOUBLE_EQ(s.mean, 0.75);
    EXPECT_NEAR(s.stddev, std::sqrt(0.125), 1e-15);
}

TEST(Experiments, OutputsAreDeterministic) {
    const RunConfig cfg = small_config(Experiment::table1);
    const auto a = run_experiment(cfg);
    const auto b = run_experiment(cfg);
    ASSERT_EQ(a.rows.size(), 2u);
    for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(to_csv(a.rows[i]), to_csv(b.rows[i]));
    EXPECT_EQ(a.files, b.files);
    EXPECT_EQ(a.report.dump(), b.report.dump());
    for (const auto& r : a.rows) EXPECT_EQ(r.config_hash, config_hash(cfg));
}

TEST(Experiments, SingleDeviceRunEqualsLocalSolve) {
    RunConfig cfg = small_config();
    cfg.partition.mode = PartitionSpec::Mode::iid;
    cfg.partition.devices = 1;
    const Trial t = run_trial(cfg, 5);
    const Matrix& data = t.instance.data;
    const auto local = local_cluster(data, 4, device_seed(5, 0), kfed_options(cfg, 5).local);
    const auto direct = matched_accuracy(local.clusters.assignment, t.run.induced().global.assignment);
    EXPECT_EQ(direct.accuracy, 1.0);
}

TEST(Experiments, ExcludedDevicesFlagVanishedCluster) {
    RunConfig cfg = small_config();
    cfg.exclude_devices = {0, 1};  // both devices of the first group: clusters 0 and 1
    const Trial t = run_trial(cfg, 1);
    EXPECT_EQ(t.vanished, (std::vector<std::size_t>{0, 1}));
    const auto out = run_experiment(cfg);
    EXPECT_EQ(out.report["runs"][0]["vanished_clusters"], Json::array({0, 1}));
}

TEST(Experiments, JoinCopyOfDeviceMatchesItsLabels) {
    RunConfig cfg = small_config();
    const Trial t = run_trial(cfg, 2);
    StoredState st;
    st.state = t.run.aggregate.state;
    st.seed = 2;
    st.tol = cfg.tol;
    const auto& rows = t.partition.device_rows[0];
    const auto res = join_device(st, t.instance.data.select_rows(rows), t.partition.k_per_device[0], 0);
    EXPECT_EQ(res.distance_count, t.partition.k_per_device[0] * 4);
    for (std::size_t i = 0; i < rows.size(); ++i)
        EXPECT_EQ(res.row_labels[i], t.run.induced().global.assignment[rows[i]]);
}

TEST(Experiments, ReplayReproducesServerReply) {
    const Trial t = run_trial(small_config(), 3);
    std::vector<DeviceCenters> uploads;
    for (const auto& u : t.run.uploads) uploads.push_back(upload_from_json(Json::parse(upload_to_json(u).dump()), "u"));
    EXPECT_EQ(dump(replay_uploads(uploads, 4)), dump(server_round_json(t.run.uploads, t.run.induced(), t.run.ops())));
}

TEST(Experiments, InstanceFilesRoundTrip) {
    const RunConfig cfg = small_config();
    const fs::path dir = scratch("instance");
    const auto f = instance_files(cfg, 9);
    write_text_atomic(dir / "data.csv", f.data);
    write_text_atomic(dir / "labels.csv", f.labels);
    write_text_atomic(dir / "partition.json", f.partition);
    write_text_atomic(dir / "spec.json", f.spec);
    const auto loaded = load_instance(dir);
    const Trial direct = run_trial(cfg, 9);
    EXPECT_EQ(loaded.seed, 9u);
    EXPECT_EQ(loaded.instance.data, direct.instance.data);
    EXPECT_EQ(loaded.instance.labels, direct.instance.labels);
    EXPECT_EQ(loaded.partition.device_rows, direct.partition.device_rows);
    EXPECT_EQ(loaded.partition.k_per_device, direct.partition.k_per_device);
    EXPECT_EQ(config_hash(loaded.config), config_hash(cfg));
}

TEST(Experiments, CSweepProducesOneSummaryPerC) {
    RunConfig cfg = small_config(Experiment::c_sweep);
    cfg.c_values = {2, 20};
    const auto out = run_experiment(cfg);
    ASSERT_EQ(out.summaries.size(), 2u);
    EXPECT_EQ(out.summaries[0].label, "c=2");
    EXPECT_TRUE(out.files.contains("c_sweep.svg"));
}

TEST(Experiments, ProfileShuffledLabelsStillPassAudit) {
    RunConfig cfg = small_config(Experiment::separation_profile);
    const auto inst = generate_mixture(cfg.mixture_for(4));
    const auto part = make_partition(cfg, inst, 4);
    std::vector<int> shuffled(inst.labels);
    CounterRng rng(4, 8);
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    EXPECT_EQ(lemma_audit(inst.data, shuffled, 4, part).violations(), 0u);
}

TEST(Config, ShippedConfigsMatchPresets) {
    for (auto e : {Experiment::table1, Experiment::c_sweep, Experiment::cost_ratio, Experiment::separation_profile,
                   Experiment::single_run}) {
        const fs::path p = fs::path(KFED_SOURCE_DIR) / "configs" / (std::string(to_string(e)) + ".json");
        EXPECT_EQ(config_hash(parse_config(read_text(p))), config_hash(preset(e))) << p;
    }
}
