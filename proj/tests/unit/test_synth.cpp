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

#include "qkdsca/synth.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace qkdsca;

namespace {

SynthSpec bare(const std::string &key) {
    SynthSpec s{SymbolSequence::from_string(key), {}, {}, 1, 0};
    s.model.symbol_level_delta_v = 0.01;
    return s;
}

double mean_of(std::span<const double> x) {
    double s = 0;
    for (double v : x)
        s += v;
    return s / static_cast<double>(x.size());
}

// Direct sum over every level change, evaluated at every sample.
std::vector<double> level_oracle(const SynthSpec &s) {
    const auto &m = s.model;
    const double half = m.symbol_level_delta_v / 2;
    auto target = [&](Symbol x) { return x == Symbol::H ? half : -half; };
    const double idle = m.idle_level_v.value_or(target(s.key[0]));
    const std::size_t spp = samples_per_symbol(s.config);
    const std::size_t off = s.config.trigger_offset_samples;
    const std::size_t n = off + s.key.size() * spp;
    std::vector<double> centers, deltas;
    double level = idle;
    for (std::size_t i = 0; i < s.key.size(); i++)
        if (target(s.key[i]) != level) {
            centers.push_back(static_cast<double>(i) / s.config.repetition_rate_hz +
                              m.transient_delay_s);
            deltas.push_back(target(s.key[i]) - level);
            level = target(s.key[i]);
        }
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; k++) {
        const double t = (static_cast<double>(k) - static_cast<double>(off)) /
                         s.config.sample_rate_hz;
        double v = m.baseline_v + idle;
        for (std::size_t i = 0; i < centers.size(); i++)
            v += deltas[i] * 0.5 * (1 + std::erf(m.transient_sigma * (t - centers[i]) / 2));
        out[k] = v;
    }
    return out;
}

} // namespace

TEST(Keys, RandomKeyIsBalancedAndSeeded) {
    const auto k = random_key(200000, 42);
    const auto h = std::count(k.begin(), k.end(), Symbol::H);
    EXPECT_NEAR(100.0 * static_cast<double>(h) / 200000.0, 50.0, 0.5);
    EXPECT_EQ(random_key(1000, 42), random_key(1000, 42));
    EXPECT_NE(random_key(1000, 42), random_key(1000, 43));
    EXPECT_EQ(random_key(1000, 42), k.subsequence(0, 1000));
    EXPECT_THROW(random_key(0, 1), DomainError);
}

TEST(Keys, RepeatedAndAlternating) {
    EXPECT_EQ(repeated_key(SymbolSequence::from_string("HHV"), 7).to_string(), "HHVHHVH");
    const auto a = alternating_key(100e6, 25e6, 12);
    EXPECT_EQ(a.to_string(), "HHHHVVVVHHHH");
    // 100 MHz / 3 MHz rounds to runs of 33
    const auto b = alternating_key(100e6, 3e6, 70);
    EXPECT_EQ(b[32], Symbol::H);
    EXPECT_EQ(b[33], Symbol::V);
    EXPECT_EQ(b[66], Symbol::H);
    EXPECT_THROW(alternating_key(100e6, 200e6, 10), DomainError);
}

TEST(Synth, DeterministicInSpec) {
    SynthSpec s = bare("HVVHVHHV");
    s.model.noise_std_v = 0.002;
    s.model.harmonics.push_back({1, 0.002, 0.2, 1, 3, 0, 0.4, 1.1});
    const auto a = generate_trace(s);
    EXPECT_EQ(a, generate_trace(s));
    s.seed = 2;
    EXPECT_NE(a, generate_trace(s));
    EXPECT_EQ(a.size(), 8 * 25u);
    EXPECT_EQ(*a.label(), SymbolSequence::from_string("HVVHVHHV"));
}

TEST(Synth, LevelMatchesDirectErfSum) {
    for (double delay : {0.0, 3e-6}) {
        SynthSpec s = bare("HHHVVVVVVVVVVVVHVHHHHHHHHHHVV");
        s.key = repeated_key(s.key, 600);
        s.model.transient_delay_s = delay;
        s.model.idle_level_v = -0.004;
        s.model.baseline_v = 0.05;
        s.config.trigger_offset_samples = 7;
        const auto t = generate_trace(s);
        const auto ref = level_oracle(s);
        ASSERT_EQ(t.size(), ref.size());
        double worst = 0;
        for (std::size_t k = 0; k < ref.size(); k++)
            worst = std::max(worst, std::abs(t[k] - ref[k]));
        EXPECT_LT(worst, 1e-6) << delay;
    }
}

TEST(Synth, LevelWithEdgesSharperThanASymbol) {
    SynthSpec s = bare("HHVHVVVH");
    s.key = repeated_key(s.key, 400);
    s.model.transient_sigma = 2e7;
    s.model.transient_delay_s = 1.3e-9;
    const auto t = generate_trace(s);
    const auto ref = level_oracle(s);
    double worst = 0;
    for (std::size_t k = 0; k < ref.size(); k++)
        worst = std::max(worst, std::abs(t[k] - ref[k]));
    EXPECT_LT(worst, 1e-6);
}

TEST(Synth, LevelAtOneSamplePerSymbol) {
    SynthSpec s = bare("HV");
    s.config.sample_rate_hz = 500e6;
    s.config.repetition_rate_hz = 500e6;
    s.config.analog_bandwidth_hz = 250e6;
    s.model.transient_delay_s = 25e-6;
    s.model.idle_level_v = -0.005;
    s.key = alternating_key(500e6, 20e3, 60000);
    const auto t = generate_trace(s);
    const auto ref = level_oracle(s);
    double worst = 0;
    for (std::size_t k = 0; k < ref.size(); k++)
        worst = std::max(worst, std::abs(t[k] - ref[k]));
    EXPECT_LT(worst, 1e-6);
}

TEST(Synth, HarmonicsMatchPerSampleFormula) {
    SynthSpec s = bare("HVVHHHVHVVHV");
    s.model.symbol_level_delta_v = 0;
    s.model.harmonics = {{1, 0.003, 0.25, 0.8, 3, 0.1, 0.3, 1.2},
                         {4, 0.001, -0.4, 1, 2, 0, 0, 2.0}};
    const auto t = generate_trace(s);
    const double fs = s.config.sample_rate_hz, fr = s.config.repetition_rate_hz;
    for (std::size_t k = 0; k < t.size(); k++) {
        const std::size_t m = k / 25;
        double v = 0;
        for (const auto &h : s.model.harmonics) {
            double phi = h.phase_offset_rad;
            for (std::size_t j = 0; j < h.window && j <= m; j++)
                phi += h.phase_coupling * std::pow(h.decay, static_cast<double>(j)) *
                       std::cos(h.ringing_rad * static_cast<double>(j)) * signum(s.key[m - j]);
            const double amp = h.amplitude_v * (1 + h.amplitude_coupling * signum(s.key[m]));
            v += amp * std::cos(2 * std::numbers::pi * h.order * fr * static_cast<double>(k) / fs + phi);
        }
        EXPECT_NEAR(t[k], v, 1e-12) << k;
    }
}

TEST(Synth, MeanLevelDifferenceEqualsDelta) {
    SynthSpec h = bare("H"), v = bare("V");
    h.key = repeated_key(h.key, 20000);
    v.key = repeated_key(v.key, 20000);
    h.model.noise_std_v = v.model.noise_std_v = 0.002;
    v.seed = 99;
    const auto th = generate_trace(h), tv = generate_trace(v);
    const double n = static_cast<double>(th.size());
    EXPECT_NEAR(mean_of(th.samples()) - mean_of(tv.samples()), 0.01,
                3 * 0.002 * std::sqrt(2 / n));
}

TEST(Synth, NoiseHasConfiguredSpread) {
    SynthSpec s = bare("H");
    s.key = repeated_key(s.key, 8000);
    s.model.noise_std_v = 0.003;
    const auto t = generate_trace(s);
    const double mu = mean_of(t.samples());
    double ss = 0;
    for (double x : t.samples())
        ss += (x - mu) * (x - mu);
    const double sd = std::sqrt(ss / static_cast<double>(t.size() - 1));
    // relative sd of the estimate is about 1/sqrt(2n) = 0.09%
    EXPECT_NEAR(sd, 0.003, 0.003 * 0.005);
    EXPECT_NEAR(mu, 0.005, 5 * 0.003 / std::sqrt(static_cast<double>(t.size())));
}

TEST(Synth, DriftAndCpuWrites) {
    SynthSpec s = bare("H");
    s.key = repeated_key(s.key, 4000); // 40 us
    s.model.drift_v_per_hour = 3600;   // 1 V/s
    s.start_time_s = 2;
    auto t = generate_trace(s);
    EXPECT_NEAR(t[0], 0.005 + 2, 1e-12);
    EXPECT_NEAR(t[t.size() - 1] - t[0], static_cast<double>(t.size() - 1) / 2.5e9, 1e-9);

    s.model.drift_v_per_hour = 0;
    s.start_time_s = 0;
    s.model.cpu_period_s = 10e-6;
    s.model.cpu_duration_s = 1e-6;
    s.model.cpu_phase_s = 2e-6;
    s.model.cpu_depth_v = 0.001;
    t = generate_trace(s);
    EXPECT_NEAR(t[2500 * 2 + 10], 0.004, 1e-12); // 2.004 us, inside the write
    EXPECT_NEAR(t[2500 * 3 + 10], 0.005, 1e-12);
    EXPECT_NEAR(t[2500 * 12 + 10], 0.004, 1e-12);
}

TEST(Synth, ValidationRejectsBadModels) {
    SynthSpec s = bare("HV");
    s.model.transient_sigma = 0;
    EXPECT_THROW(generate_trace(s), ConfigError);
    s = bare("HV");
    s.model.noise_std_v = -1;
    EXPECT_THROW(generate_trace(s), ConfigError);
    s = bare("HV");
    s.model.harmonics = {{13, 0.001, 0, 1, 1, 0, 0, 0}};
    EXPECT_THROW(generate_trace(s), ConfigError);
    s.model.harmonics = {{1, 0.001, 0, 1.5, 1, 0, 0, 0}};
    EXPECT_THROW(generate_trace(s), ConfigError);
    s.model.harmonics = {{1, 0.001, 0, 1, 0, 0, 0, 0}};
    EXPECT_THROW(generate_trace(s), ConfigError);
    s = bare("HV");
    s.model.cpu_depth_v = 0.001;
    EXPECT_THROW(generate_trace(s), ConfigError);
    s = bare("HV");
    s.config.sample_rate_hz = 2.45e9;
    EXPECT_THROW(generate_trace(s), ConfigError);
}

TEST(Dataset, KeysFollowBaseSeed) {
    SynthSpec tmpl = bare("H");
    tmpl.model.noise_std_v = 0.001;
    const auto d = generate_dataset(3, 500, tmpl, 40);
    ASSERT_EQ(d.size(), 3u);
    for (std::size_t i = 0; i < 3; i++) {
        EXPECT_EQ(*d[i].label(), random_key(500, 40 + i));
        EXPECT_EQ(d[i].size(), 500 * 25u);
        SynthSpec s = tmpl;
        s.seed = 40 + i;
        s.key = random_key(500, 40 + i);
        EXPECT_EQ(d[i], generate_trace(s));
    }
    EXPECT_THROW(generate_dataset(0, 10, tmpl, 1), DomainError);
}

TEST(Dataset, ProfilingSetShape) {
    SynthSpec tmpl = bare("H");
    tmpl.config.sample_rate_hz = 100e6;
    tmpl.config.analog_bandwidth_hz = 50e6;
    tmpl.model.noise_std_v = 0.001;
    const auto d = generate_dataset(5, 200000, tmpl, 1);
    ASSERT_EQ(d.size(), 5u);
    std::size_t labeled = 0;
    for (const auto &t : d) {
        EXPECT_EQ(t.size(), 200000u);
        labeled += t.label()->size();
    }
    EXPECT_EQ(labeled, 1000000u);

    const auto e = generate_dataset(5, 200000, tmpl, 2);
    for (std::size_t i = 0; i < 4; i++) {
        EXPECT_EQ(*e[i].label(), *d[i + 1].label());
        EXPECT_NE(*e[i].label(), *d[i].label());
    }
    for (const auto &t : e) {
        const auto h = std::count(t.label()->begin(), t.label()->end(), Symbol::H);
        // 5 binomial sd is 0.56%
        EXPECT_NEAR(static_cast<double>(h) / 200000, 0.5, 0.005);
    }
}
