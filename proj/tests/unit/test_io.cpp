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

#include "qkdsca/config.hpp"
#include "qkdsca/io.hpp"
#include "qkdsca/synth.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <functional>

using namespace qkdsca;
namespace fs = std::filesystem;

namespace {

PowerTrace labeled_trace(std::size_t symbols, std::uint64_t seed) {
    SynthSpec s{random_key(symbols, seed), {}, {}, seed, 0};
    s.model.symbol_level_delta_v = 0.01;
    s.model.noise_std_v = 0.002;
    s.config.trigger_offset_samples = 3;
    return generate_trace(s);
}

FingerprintLibrary small_library() {
    SynthSpec s{random_key(3000, 8), {}, {}, 8, 0};
    s.model.symbol_level_delta_v = 0.01;
    s.model.noise_std_v = 0.002;
    s.model.harmonics.push_back({2, 0.002, 0.3, 1, 2, 0, 0, 0.4});
    const std::vector<PowerTrace> d{generate_trace(s)};
    return build_library(d, 3, {}, 30);
}

template <class E> std::string message_of(const std::function<void()> &f) {
    try {
        f();
    } catch (const E &e) {
        return e.what();
    }
    return "";
}

const char *kMinimalConfig = "seed = 7\n[acquisition]\nsample_rate_hz = 2.5e9\n";

} // namespace

TEST(TraceFormat, RoundTripIsExact) {
    const auto t = labeled_trace(301, 1);
    const std::string bytes = encode_trace(t);
    // 51-byte header, 8 bytes per sample, one bit per symbol
    EXPECT_EQ(bytes.size(), 51 + t.size() * 8 + (301 + 7) / 8);
    EXPECT_EQ(bytes.substr(0, 4), "PTRC");
    EXPECT_EQ(decode_trace(bytes), t);
    const PowerTrace bare(std::vector<double>{1.5, -2, 3e-300}, {});
    EXPECT_EQ(decode_trace(encode_trace(bare)), bare);
}

TEST(TraceFormat, TruncationNamesBothSizes) {
    const std::string bytes = encode_trace(labeled_trace(40, 2));
    const std::string cut = bytes.substr(0, bytes.size() - 9);
    try {
        decode_trace(cut, "x.ptrc");
        FAIL() << "expected TruncationError";
    } catch (const TruncationError &e) {
        EXPECT_EQ(e.expected, bytes.size());
        EXPECT_EQ(e.found, cut.size());
        const std::string w = e.what();
        EXPECT_NE(w.find(std::to_string(bytes.size())), std::string::npos);
        EXPECT_NE(w.find(std::to_string(cut.size())), std::string::npos);
    }
    EXPECT_THROW(decode_trace(bytes.substr(0, 20)), TruncationError);
    EXPECT_THROW(decode_trace(bytes + "z"), ParseError);
}

TEST(TraceFormat, MagicAndVersionChecked) {
    std::string bytes = encode_trace(labeled_trace(10, 3));
    std::string bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_trace(bad), BadMagicError);
    bad = bytes;
    bad[4] = 2;
    const std::string msg = message_of<VersionError>([&] { decode_trace(bad); });
    EXPECT_NE(msg.find("version 2"), std::string::npos);
    bad = bytes;
    bad[42] = 5; // has_label
    EXPECT_THROW(decode_trace(bad), ParseError);
}

TEST(TraceFormat, FileRoundTrip) {
    const fs::path dir = fs::temp_directory_path() / "qkdsca_io_test";
    fs::remove_all(dir);
    const auto t = labeled_trace(64, 4);
    write_trace(t, dir / "sub" / "t.ptrc");
    EXPECT_EQ(read_trace(dir / "sub" / "t.ptrc"), t);
    for (const auto &e : fs::directory_iterator(dir / "sub"))
        EXPECT_EQ(e.path().filename(), "t.ptrc");
    EXPECT_THROW(read_trace(dir / "missing.ptrc"), Error);
    fs::remove_all(dir);
}

TEST(TraceCsv, SampleRateInferredAndSnapped) {
    const auto t = labeled_trace(20, 5);
    const auto round = import_trace_csv(export_trace_csv(t), AcquisitionConfig{});
    EXPECT_EQ(round.config().sample_rate_hz, 2.5e9);
    ASSERT_EQ(round.size(), t.size());
    for (std::size_t i = 0; i < t.size(); i++)
        EXPECT_EQ(round[i], t[i]);

    std::string text = "time_s,volts\n";
    for (int i = 0; i < 100; i++)
        text += detail::format_double(i * 4.0000001e-10) + ",0.1\n";
    AcquisitionConfig base;
    // 2.4999999e9 is within 1 ppm of 25 x 100 MHz
    EXPECT_EQ(import_trace_csv(text, base).config().sample_rate_hz, 2.5e9);

    EXPECT_THROW(import_trace_csv("time_s,volts\n0,1\n", base), ParseError);
    EXPECT_THROW(import_trace_csv("time_s,volts\n0,1\n1e-9\n", base), ParseError);
    EXPECT_THROW(import_trace_csv("time_s,volts\n0,1\n1e-9,abc\n", base), ParseError);
}

TEST(TraceCsv, InferSampleRateUsesMedianSpacing) {
    std::vector<double> t{0, 1, 2, 3, 10, 11};
    EXPECT_DOUBLE_EQ(infer_sample_rate(t, 0), 1.0);
    EXPECT_THROW(infer_sample_rate(std::vector<double>{1, 1, 1}, 0), ParseError);
}

TEST(LibraryFormat, RoundTripAndCorruption) {
    const auto lib = small_library();
    const std::string bytes = encode_library(lib);
    EXPECT_EQ(bytes.substr(0, 4), "FPLB");
    const auto back = decode_library(bytes);
    EXPECT_EQ(back.length_l, lib.length_l);
    EXPECT_EQ(back.band, lib.band);
    EXPECT_EQ(back.acquisition, lib.acquisition);
    EXPECT_EQ(back.min_occurrences, lib.min_occurrences);
    ASSERT_EQ(back.entries.size(), 8u);
    for (std::size_t i = 0; i < 8; i++) {
        EXPECT_EQ(back.entries[i].occurrence_count, lib.entries[i].occurrence_count);
        EXPECT_EQ(back.entries[i].mean_phase, lib.entries[i].mean_phase);
        EXPECT_EQ(back.entries[i].mean_magnitude, lib.entries[i].mean_magnitude);
        EXPECT_EQ(back.entries[i].unreliable_bins, lib.entries[i].unreliable_bins);
    }
    EXPECT_EQ(encode_library(back), bytes);
    EXPECT_THROW(decode_library(bytes.substr(0, bytes.size() - 1)), ParseError);
    EXPECT_THROW(decode_library(bytes + "x"), ParseError);
    std::string bad = bytes;
    bad[1] = 'Q';
    EXPECT_THROW(decode_library(bad), BadMagicError);
}

TEST(Csv, PaTableRoundTrip) {
    const std::vector<PaRow> rows{{2000, 0, 100, 0}, {46000, 9, 4.166667, 2}};
    const std::string text = pa_table_csv(rows);
    EXPECT_EQ(text, "f_delay_hz,trace_id,pa_percent,skipped_periods\n"
                    "2000,0,100.000000,0\n46000,9,4.166667,2\n");
    const auto back = parse_pa_table_csv(text);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].trace_id, 9u);
    EXPECT_DOUBLE_EQ(back[1].pa_percent, 4.166667);
    EXPECT_THROW(parse_pa_table_csv("f_delay_hz,trace_id\n1,2\n"), ParseError);
    EXPECT_THROW(parse_pa_table_csv("f_delay_hz,trace_id,pa_percent,skipped_periods\n1,2,3\n"),
                 ParseError);
}

TEST(Csv, AttackTableRoundTrip) {
    const std::vector<AttackRow> rows{{"key_0003", 8, 1, 199993, 68.5, 50.335, true}};
    const std::string text = attack_table_csv(rows);
    const auto back = parse_attack_table_csv(text);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].trace_id, "key_0003");
    EXPECT_EQ(back[0].predicted, 199993u);
    EXPECT_TRUE(back[0].success);
    std::string bad = text;
    bad.back() = ' ';
    bad += "\nkey,8,1,10,50,60,2\n";
    EXPECT_THROW(parse_attack_table_csv(bad), ParseError);
}

TEST(Csv, MatrixRoundTripKeepsNan) {
    CorrelationMatrix m;
    m.order = 2;
    m.labels = {"H", "V"};
    m.values = {1, std::nan(""), std::nan(""), 1};
    const auto back = parse_matrix_csv(matrix_csv(m));
    EXPECT_EQ(back.labels, m.labels);
    EXPECT_EQ(back.undefined_count(), 2u);
    EXPECT_EQ(back(0, 0), 1.0);
    EXPECT_THROW(parse_matrix_csv("label,H,V\nV,1,0\nH,0,1\n"), ParseError);
}

TEST(Csv, ProfileAndDrift) {
    const std::vector<DiagonalStat> p{{0, 0.25, 4}, {1, 0, 0}};
    EXPECT_EQ(profile_csv(p), "shared_prefix,mean_corr,count\n0,0.25,4\n1,nan,0\n");
    DriftModel d{{{"H", 1, -0.5}}, -0.5};
    EXPECT_EQ(drift_csv(d), "label,beta0_v,beta1_v_per_h\nH,1,-0.5\nmean,,-0.5\n");
}

TEST(Manifest, FieldsArePresent) {
    Manifest m;
    m.command = "synth trace";
    m.arguments = {"--seed", "3"};
    m.inputs = {{"a.cfg", fnv1a_hex("x")}};
    m.config_hash = fnv1a_hex("x");
    m.seed = 3;
    m.rng_algorithm = kRngAlgorithm;
    m.outputs = {{"t.ptrc", "0000"}};
    const auto j = nlohmann::json::parse(manifest_json(m));
    EXPECT_EQ(j["command"], "synth trace");
    EXPECT_EQ(j["seed"], 3);
    EXPECT_EQ(j["version"], kVersion);
    EXPECT_EQ(j["inputs"][0]["path"], "a.cfg");
    EXPECT_EQ(j["outputs"][0]["fnv1a64"], "0000");
    EXPECT_EQ(j["rng_algorithm"], kRngAlgorithm);
    m.seed.reset();
    EXPECT_TRUE(nlohmann::json::parse(manifest_json(m))["seed"].is_null());
}

TEST(Hash, Fnv1aKnownVectors) {
    EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
    EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
    EXPECT_EQ(fnv1a_hex("foobar"), "85944171f73967e8");
}

TEST(Config, ReferenceFilesParse) {
    for (const char *name : {"reference.cfg", "lowfreq.cfg", "null.cfg"}) {
        const auto c = parse_experiment_config(read_file(fs::path(QKDSCA_CONFIG_DIR) / name));
        EXPECT_GT(c.seed, 0u) << name;
    }
    const auto r = parse_experiment_config(read_file(fs::path(QKDSCA_CONFIG_DIR) / "reference.cfg"));
    EXPECT_EQ(r.model.harmonics.size(), 9u);
    EXPECT_EQ(r.run.length_l, 8u);
    EXPECT_EQ(r.run.mode, FeatureMode::Phase);
    EXPECT_EQ(r.acquisition.sample_rate_hz, 2.5e9);
}

TEST(Config, ErrorsCarryLineNumbers) {
    auto msg = [](const std::string &text) {
        return message_of<ConfigError>([&] { parse_experiment_config(text); });
    };
    EXPECT_NE(msg(std::string(kMinimalConfig) + "sample_rate_hz = 1e9\n").find("line 4"),
              std::string::npos);
    EXPECT_NE(msg(std::string(kMinimalConfig) + "colour = red\n").find("line 4: unknown key 'colour'"),
              std::string::npos);
    EXPECT_NE(msg("seed = 1\n\n[bogus]\n").find("line 3: unknown section"), std::string::npos);
    EXPECT_NE(msg("seed = 1\n[model]\nnoise_std_v = loud\n").find("line 3"), std::string::npos);
    EXPECT_NE(msg("seed = 1\n[run]\nmode = both\n").find("line 3"), std::string::npos);
    EXPECT_NE(msg("[model]\nbaseline_v = 1\n").find("seed"), std::string::npos);
    EXPECT_NE(msg("seed = 1\n[harmonic]\namplitude_v = 1\n").find("line 2"), std::string::npos);
    EXPECT_FALSE(msg("seed = 1\n[run]\nL = 4\ndelta_n = 5\n").empty());
    EXPECT_FALSE(msg("seed = 1\n[acquisition]\nsample_rate_hz = 2.45e9\n").empty());
    EXPECT_NO_THROW(parse_experiment_config(kMinimalConfig));
}

TEST(Config, CommentsAndSpec) {
    const auto c = parse_experiment_config("seed = 9 # trailing\n; full line\n[model]\n"
                                           "symbol_level_delta_v = 0.01\n[harmonic]\norder = 2\n"
                                           "amplitude_v = 0.001\n[harmonic]\norder = 3\n");
    EXPECT_EQ(c.seed, 9u);
    ASSERT_EQ(c.model.harmonics.size(), 2u);
    EXPECT_EQ(c.model.harmonics[1].order, 3u);
    const SynthSpec s = c.spec(SymbolSequence::from_string("HV"));
    EXPECT_EQ(s.seed, 9u);
    EXPECT_EQ(s.model.harmonics.size(), 2u);
}
