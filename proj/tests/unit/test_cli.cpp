/*
 * SPDX-FileCopyrightText: Copyright 2026 The qkdsca Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "cli_app.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <sstream>

using namespace qkdsca;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "qkdsca");
    std::vector<const char *> argv;
    for (const auto &a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = qkdsca::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string cfg(const char *name) { return (fs::path(QKDSCA_CONFIG_DIR) / name).string(); }

class CliFlow : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / "qkdsca_cli_test";
        fs::remove_all(dir_);
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }
    static std::string at(const std::string &p) { return (dir_ / p).string(); }
    static fs::path dir_;
};
fs::path CliFlow::dir_;

} // namespace

TEST(Cli, NoArgumentsPrintsUsage) {
    const auto r = run({});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownFlagIsUsageError) {
    EXPECT_EQ(run({"synth", "trace", "--bogus"}).code, 2);
    EXPECT_EQ(run({"nonexistent"}).code, 2);
    EXPECT_EQ(run({"synth", "trace", "--config", cfg("null.cfg"), "--out", "/tmp/x"}).code, 2);
}

TEST(Cli, HelpAndVersion) {
    const auto h = run({"--help"});
    EXPECT_EQ(h.code, 0);
    EXPECT_NE(h.out.find("lowfreq"), std::string::npos);
    const auto v = run({"--version"});
    EXPECT_EQ(v.code, 0);
    EXPECT_NE(v.out.find(kVersion), std::string::npos);
}

TEST(Cli, DomainErrorsExitOne) {
    const fs::path d = fs::temp_directory_path() / "qkdsca_cli_err";
    fs::remove_all(d);
    fs::create_directories(d);
    write_file_atomic(d / "bad.cfg", "seed = 1\n[model]\nnoise = 1\n");
    const auto r = run({"synth", "trace", "--config", (d / "bad.cfg").string(), "--seed", "1",
                        "--out", (d / "o").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("line 3"), std::string::npos);
    write_file_atomic(d / "junk.ptrc", "PTRC\x01");
    const auto f = run({"fit-rise", "--trace", (d / "junk.ptrc").string(), "--out",
                        (d / "o").string()});
    EXPECT_EQ(f.code, 1);
    EXPECT_NE(f.err.find("error:"), std::string::npos);
    fs::remove_all(d);
}

TEST_F(CliFlow, DatasetLibraryAttack) {
    ASSERT_EQ(run({"synth", "dataset", "--config", cfg("reference.cfg"), "--seed", "300",
                   "--keys", "2", "--symbols", "20000", "--out", at("ds")})
                  .code,
              0);
    EXPECT_TRUE(fs::exists(at("ds/key_0000.ptrc")));
    EXPECT_TRUE(fs::exists(at("ds/key_0001.ptrc")));
    const auto m = nlohmann::json::parse(read_file(at("ds/synth-dataset.manifest.json")));
    EXPECT_EQ(m["seed"], 300);
    EXPECT_EQ(m["command"], "synth dataset");
    EXPECT_EQ(m["outputs"].size(), 2u);
    EXPECT_EQ(m["config_hash"], fnv1a_hex(read_file(cfg("reference.cfg"))));
    EXPECT_EQ(m["outputs"][0]["fnv1a64"], fnv1a_hex(read_file(at("ds/key_0000.ptrc"))));

    ASSERT_EQ(run({"fingerprint", "build", "--traces", at("ds"), "--L", "4", "--config",
                   cfg("reference.cfg"), "--out", at("lib")})
                  .code,
              0);
    const auto lib = read_library(at("lib/library.fplb"));
    EXPECT_EQ(lib.length_l, 4u);

    ASSERT_EQ(run({"fingerprint", "corr", "--library", at("lib/library.fplb"), "--out",
                   at("corr")})
                  .code,
              0);
    const auto mat = parse_matrix_csv(read_file(at("corr/matrix.csv")));
    EXPECT_EQ(mat.order, 16u);
    ASSERT_EQ(run({"report", "heatmap", "--matrix", at("corr/matrix.csv"), "--out", at("corr")})
                  .code,
              0);
    EXPECT_EQ(parse_csv_table(read_file(at("corr/heatmap.csv")), "heatmap").rows.size(), 256u);

    ASSERT_EQ(run({"synth", "trace", "--config", cfg("reference.cfg"), "--seed", "77",
                   "--symbols", "3000", "--name", "victim", "--out", at("v")})
                  .code,
              0);
    EXPECT_EQ(*read_trace(at("v/victim.ptrc")).label(), random_key(3000, 77));

    const auto r = run({"attack", "run", "--trace", at("v/victim.ptrc"), "--library",
                        at("lib/library.fplb"), "--dN", "2", "--steps-csv", "--out", at("a")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = parse_attack_table_csv(read_file(at("a/attack.csv")));
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].trace_id, "victim");
    EXPECT_EQ(rows[0].predicted, ((3000 - 4) / 2 + 1) * 2u);
    EXPECT_NEAR(rows[0].threshold_percent, success_threshold(rows[0].predicted), 1e-6);
    EXPECT_NE(r.out.find("threshold"), std::string::npos);
    EXPECT_TRUE(fs::exists(at("a/steps.csv")));
    EXPECT_EQ(read_key(at("a/predicted.key")).size(), rows[0].predicted);

    ASSERT_EQ(run({"report", "attack-summary", "--tables", at("a/attack.csv"), "--out",
                   at("a")})
                  .code,
              0);
    EXPECT_TRUE(fs::exists(at("a/attack_summary.csv")));

    const auto mismatch = run({"attack", "run", "--trace", at("v/victim.ptrc"), "--library",
                               at("lib/library.fplb"), "--L", "5", "--out", at("a2")});
    EXPECT_EQ(mismatch.code, 1);
}

TEST_F(CliFlow, LowFrequencySweep) {
    ASSERT_EQ(run({"lowfreq", "--config", cfg("lowfreq.cfg"), "--seed", "5", "--from", "4000",
                   "--to", "6000", "--traces", "2", "--out", at("lf")})
                  .code,
              0);
    const auto rows = parse_pa_table_csv(read_file(at("lf/pa_table.csv")));
    ASSERT_EQ(rows.size(), 6u);
    for (const auto &row : rows)
        EXPECT_EQ(row.pa_percent, 100.0);
    ASSERT_EQ(run({"report", "pa-summary", "--table", at("lf/pa_table.csv"), "--out", at("lf2")})
                  .code,
              0);
    EXPECT_EQ(read_file(at("lf2/pa_summary.csv")), read_file(at("lf/pa_summary.csv")));
}

TEST_F(CliFlow, AveragePowerPipeline) {
    ASSERT_EQ(run({"synth", "points", "--config", cfg("reference.cfg"), "--seed", "9",
                   "--hours", "2", "--per-pattern", "6", "--capture-symbols", "400", "--out",
                   at("pts")})
                  .code,
              0);
    ASSERT_EQ(run({"avg-analysis", "--points", at("pts/points.csv"), "--out", at("avg")}).code,
              0);
    const auto box = parse_csv_table(read_file(at("avg/box_stats.csv")), "box");
    EXPECT_EQ(box.rows.size(), 5u);
    EXPECT_TRUE(fs::exists(at("avg/drift.csv")));
    EXPECT_TRUE(fs::exists(at("avg/avg-analysis.manifest.json")));
}

TEST_F(CliFlow, RiseFitOnAnEdge) {
    ASSERT_EQ(run({"synth", "trace", "--config", cfg("lowfreq.cfg"), "--seed", "3",
                   "--alternating-hz", "5000", "--symbols", "20000", "--out", at("e")})
                  .code,
              0);
    const auto r = run({"fit-rise", "--trace", at("e/trace.ptrc"), "--from-s", "0",
                        "--to-s", "100e-6", "--out", at("e")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("sigma"), std::string::npos);
    EXPECT_TRUE(fs::exists(at("e/rise.csv")));
}

TEST_F(CliFlow, FullLowFrequencyRange) {
    ASSERT_EQ(run({"lowfreq", "--config", cfg("lowfreq.cfg"), "--seed", "6", "--from", "2000",
                   "--to", "46000", "--step", "1000", "--traces", "1", "--out", at("lfr")})
                  .code,
              0);
    const auto rows = parse_pa_table_csv(read_file(at("lfr/pa_table.csv")));
    ASSERT_EQ(rows.size(), 45u);
    EXPECT_EQ(rows.front().f_delay_hz, 2000.0);
    EXPECT_EQ(rows.back().f_delay_hz, 46000.0);
}

TEST_F(CliFlow, EightSymbolAttackReportsThreshold) {
    ASSERT_EQ(run({"synth", "dataset", "--config", cfg("reference.cfg"), "--seed", "11",
                   "--keys", "2", "--symbols", "100000", "--out", at("ds8")})
                  .code,
              0);
    ASSERT_EQ(run({"fingerprint", "build", "--traces", at("ds8"), "--L", "8", "--config",
                   cfg("reference.cfg"), "--out", at("lib8")})
                  .code,
              0);
    ASSERT_EQ(run({"synth", "trace", "--config", cfg("reference.cfg"), "--seed", "12",
                   "--symbols", "200000", "--name", "victim", "--out", at("v8")})
                  .code,
              0);
    const auto r = run({"attack", "run", "--trace", at("v8/victim.ptrc"), "--library",
                        at("lib8/library.fplb"), "--L", "8", "--dN", "1", "--out", at("a8")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("threshold 50.335%"), std::string::npos) << r.out;
    const auto rows = parse_attack_table_csv(read_file(at("a8/attack.csv")));
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].predicted, 199993u);
    fs::remove_all(at("ds8"));
    fs::remove_all(at("v8"));
}
