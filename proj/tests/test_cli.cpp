#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "kfed/config.hpp"
#include "kfed/io.hpp"

using namespace kfed;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("kfed_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Runs the CLI with stdout/stderr captured into `log`; returns the exit code.
int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(KFED_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const RunConfig& cfg) {
    const fs::path p = dir / "config.json";
    write_text_atomic(p, dump(to_json(cfg)));
    return p;
}

RunConfig small_config(Experiment e) {
    RunConfig cfg = preset(e);
    cfg.mixture.k = 4;
    cfg.mixture.d = 8;
    cfg.mixture.n = 4 * 40;
    cfg.partition.group_size = 2;
    cfg.partition.devices_per_group = 2;
    cfg.seeds = {0, 1};
    return cfg;
}

} // namespace

TEST(Cli, GenerateWritesFourFilesAndIsIdempotent) {
    const fs::path dir = scratch("generate");
    const auto cfg = write_config(dir, small_config(Experiment::table1));
    ASSERT_EQ(run_cli("generate --config " + cfg.string() + " --seed 3 --out " + (dir / "a").string(), dir / "log"), 0);
    ASSERT_EQ(run_cli("generate --config " + cfg.string() + " --seed 3 --out " + (dir / "b").string(), dir / "log"), 0);
    for (const char* f : {"data.csv", "labels.csv", "partition.json", "spec.json"}) {
        const auto a = read_text(dir / "a" / "seed-3" / f);
        EXPECT_FALSE(a.empty()) << f;
        EXPECT_EQ(a, read_text(dir / "b" / "seed-3" / f)) << f;
    }
    const Matrix data = read_matrix_csv(dir / "a" / "seed-3" / "data.csv");
    EXPECT_EQ(data.rows(), 160u);
    EXPECT_EQ(data.cols(), 8u);
    EXPECT_EQ(read_labels_csv(dir / "a" / "seed-3" / "labels.csv").size(), 160u);
}

TEST(Cli, BadWeightsFailBeforeAnyFileIsWritten) {
    const fs::path dir = scratch("weights");
    RunConfig cfg = small_config(Experiment::table1);
    cfg.mixture.weights = {0.3, 0.3, 0.2, 0.1};
    const auto path = write_config(dir, cfg);
    EXPECT_EQ(run_cli("generate --config " + path.string() + " --out " + (dir / "out").string(), dir / "log"), 2);
    EXPECT_FALSE(fs::exists(dir / "out"));
    EXPECT_NE(read_text(dir / "log").find("weights must sum to 1"), std::string::npos);
}

TEST(Cli, RunRowsAreByteIdenticalAcrossReruns) {
    const fs::path dir = scratch("run");
    const auto cfg = write_config(dir, small_config(Experiment::table1));
    ASSERT_EQ(run_cli("run --config " + cfg.string() + " --out " + (dir / "a").string(), dir / "log"), 0);
    ASSERT_EQ(run_cli("run --config " + cfg.string() + " --out " + (dir / "b").string(), dir / "log"), 0);
    for (const char* f : {"results.csv", "summary.txt", "report.json"})
        EXPECT_EQ(read_text(dir / "a" / f), read_text(dir / "b" / f)) << f;
    const auto results = read_text(dir / "a" / "results.csv");
    EXPECT_EQ(results.rfind("run_id,config_hash,seed,accuracy,cost,distance_count\n", 0), 0u);
    EXPECT_NE(results.find(config_hash(small_config(Experiment::table1))), std::string::npos);
}

TEST(Cli, JoinAppendsResultAndCountsDistances) {
    const fs::path dir = scratch("join");
    const auto cfg = write_config(dir, small_config(Experiment::single_run));
    ASSERT_EQ(run_cli("run --config " + cfg.string() + " --seed 0 --out " + (dir / "out").string(), dir / "log"), 0);
    write_text_atomic(dir / "new.csv", "0,0,0,0,0,0,0,0\n1,1,1,1,1,1,1,1\n");
    ASSERT_EQ(run_cli("join --state " + (dir / "out" / "state" / "single_run-s0.json").string() + " --data " +
                       (dir / "new.csv").string() + " --kz 1",
                   dir / "log"),
              0);
    EXPECT_NE(read_text(dir / "log").find("with 4 distance computations"), std::string::npos);
    const auto results = read_text(dir / "out" / "results.csv");
    EXPECT_NE(results.find("join-d4,"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "out" / "join-d4-labels.csv"));
}

TEST(Cli, JoinWithCorruptStateIsAChecksumError) {
    const fs::path dir = scratch("corrupt");
    StoredState s;
    s.state.tau_means = Matrix{{1.5, 2.0}};
    std::string text = state_text(s);
    text.replace(text.find("1.5"), 3, "9.5");
    write_text_atomic(dir / "state.json", text);
    write_text_atomic(dir / "new.csv", "0,0\n");
    EXPECT_EQ(run_cli("join --state " + (dir / "state.json").string() + " --data " + (dir / "new.csv").string() +
                       " --kz 1 --out " + (dir / "out").string(),
                   dir / "log"),
              4);
    EXPECT_NE(read_text(dir / "log").find("checksum"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Cli, JoinWithoutStateFails) {
    const fs::path dir = scratch("nostate");
    write_text_atomic(dir / "new.csv", "0,0\n");
    EXPECT_EQ(run_cli("join --state " + (dir / "missing.json").string() + " --data " + (dir / "new.csv").string() +
                       " --kz 1",
                   dir / "log"),
              3);
}

TEST(Cli, ProfileRejectsUnseenClusterId) {
    const fs::path dir = scratch("profile");
    write_text_atomic(dir / "data.csv", "0,0\n1,0\n10,0\n11,0\n");
    write_text_atomic(dir / "labels.csv", "0\n0\n1\n5\n");
    write_text_atomic(dir / "partition.json", R"({"0": [0, 1, 2, 3]})");
    EXPECT_EQ(run_cli("profile --data " + (dir / "data.csv").string() + " --labels " + (dir / "labels.csv").string() +
                       " --partition " + (dir / "partition.json").string() + " --k 2",
                   dir / "log"),
              4);
    EXPECT_NE(read_text(dir / "log").find("row 4"), std::string::npos);
}

TEST(Cli, ProfileWritesReportAndPairs) {
    const fs::path dir = scratch("profile_ok");
    const auto cfg = write_config(dir, small_config(Experiment::table1));
    ASSERT_EQ(run_cli("generate --config " + cfg.string() + " --seed 0 --out " + (dir / "g").string(), dir / "log"), 0);
    ASSERT_EQ(run_cli("profile --instance " + (dir / "g" / "seed-0").string() + " --out " + (dir / "p").string(),
                   dir / "log"),
              0);
    const auto pairs = read_text(dir / "p" / "pairs.csv");
    EXPECT_EQ(pairs.rfind("r,s,status,ratio,active_ok,inactive_ok", 0), 0u);
    const Json rep = Json::parse(read_text(dir / "p" / "separation.json"));
    EXPECT_EQ(rep["audit"]["violations"], 0);
    EXPECT_EQ(rep["separation"]["active_ok"], rep["separation"]["active_pairs"]);
}

TEST(Cli, ProfileReportsShapeMismatch) {
    const fs::path dir = scratch("shape");
    write_text_atomic(dir / "data.csv", "0,0\n1,0\n10,0\n");
    write_text_atomic(dir / "labels.csv", "0\n0\n1\n1\n");
    write_text_atomic(dir / "partition.json", R"({"0": [0, 1, 2]})");
    EXPECT_EQ(run_cli("profile --data " + (dir / "data.csv").string() + " --labels " + (dir / "labels.csv").string() +
                       " --partition " + (dir / "partition.json").string(),
                   dir / "log"),
              2);
    EXPECT_NE(read_text(dir / "log").find("4 rows but data has 3"), std::string::npos);
}

TEST(Cli, EvalReportsAccuracy) {
    const fs::path dir = scratch("eval");
    write_text_atomic(dir / "pred.csv", "1\n1\n0\n0\n");
    write_text_atomic(dir / "truth.csv", "0\n0\n1\n0\n");
    ASSERT_EQ(run_cli("eval --pred " + (dir / "pred.csv").string() + " --truth " + (dir / "truth.csv").string() +
                       " --out " + (dir / "out").string(),
                   dir / "log"),
              0);
    const Json j = Json::parse(read_text(dir / "out" / "eval.json"));
    EXPECT_DOUBLE_EQ(j["accuracy"].get<double>(), 0.75);
}

TEST(Cli, RecordThenReplayIsByteIdentical) {
    const fs::path dir = scratch("replay");
    const auto cfg = write_config(dir, small_config(Experiment::single_run));
    ASSERT_EQ(run_cli("run --record --config " + cfg.string() + " --seed 0 --out " + (dir / "rec").string(), dir / "log"),
              0);
    const fs::path uploads = dir / "rec" / "uploads" / "single_run-s0";
    ASSERT_EQ(run_cli("run --config " + cfg.string() + " --replay " + uploads.string() + " --out " +
                       (dir / "rep").string(),
                   dir / "log"),
              0);
    EXPECT_EQ(read_text(uploads / "server.json"), read_text(dir / "rep" / "server.json"));
}

TEST(Cli, UsageErrorsExitWithValidationCode) {
    const fs::path dir = scratch("usage");
    EXPECT_EQ(run_cli("run --no-such-flag", dir / "log"), 2);
    EXPECT_EQ(run_cli("run --experiment table1 --seeds 5..2", dir / "log"), 2);
    EXPECT_EQ(run_cli("", dir / "log"), 2);
}
