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
#include "qkdsca/transient.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace qkdsca;

namespace {

// Plain bisection, run until the bracket stops shrinking. In the tails it
// solves erfc(x) = 1 - |p|, which keeps full relative precision there.
double erfinv_bisect(double p) {
    if (p < 0)
        return -erfinv_bisect(-p);
    const bool tail = p > 0.5;
    const double q = 1 - p;
    double lo = 0, hi = 6;
    for (int i = 0; i < 200; i++) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi)
            break;
        const bool below = tail ? std::erfc(mid) > q : std::erf(mid) < p;
        (below ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

PowerTrace edge(double sigma, double t0, double dv, double base, double noise, unsigned seed,
                std::size_t n = 20000, double fs = 100e6) {
    AcquisitionConfig c;
    c.sample_rate_hz = fs;
    c.repetition_rate_hz = fs;
    c.analog_bandwidth_hz = fs / 2;
    std::mt19937_64 g(seed);
    std::normal_distribution<double> nd(0.0, noise);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; i++)
        v[i] = rise_model(static_cast<double>(i) / fs, dv, sigma, t0, base) +
               (noise > 0 ? nd(g) : 0.0);
    return PowerTrace(std::move(v), c);
}

} // namespace

TEST(Erfinv, AgreesWithBisection) {
    for (double p = -0.999; p < 0.9995; p += 0.0123)
        EXPECT_NEAR(erfinv(p), erfinv_bisect(p), 1e-12) << p;
    for (double p : {1e-10, 0.5, 0.8, 0.99, 0.999999, -0.999999})
        EXPECT_NEAR(erfinv(p), erfinv_bisect(p), 1e-12) << p;
    EXPECT_EQ(erfinv(0.0), 0.0);
}

TEST(Erfinv, ReferenceValueAndDomain) {
    EXPECT_NEAR(erfinv(0.8), 0.9061938024368232, 1e-15);
    EXPECT_THROW(erfinv(1.0), DomainError);
    EXPECT_THROW(erfinv(-1.0), DomainError);
    EXPECT_THROW(erfinv(std::nan("")), DomainError);
}

TEST(RiseTime, MatchesTenToNinetyCrossings) {
    // locate the 10% and 90% crossings of the model directly
    const double sigma = 2e5;
    auto cross = [&](double level) {
        double lo = -1e-3, hi = 1e-3;
        for (int i = 0; i < 200; i++) {
            const double mid = 0.5 * (lo + hi);
            (rise_model(mid, 1, sigma, 0, 0) < level ? lo : hi) = mid;
        }
        return lo;
    };
    EXPECT_NEAR(rise_time(sigma), cross(0.9) - cross(0.1), 1e-15);
}

TEST(RiseTime, ReferenceBoardNumbers) {
    // t_r = 28.64 us <-> BW = 12.22 kHz <-> sigma = 126563 1/s
    const double t_r = 28.64e-6;
    const double sigma = 4 * erfinv(0.8) / t_r;
    EXPECT_NEAR(sigma, 126563, 0.5);
    EXPECT_NEAR(rise_time(126563) / t_r, 1.0, 1e-3);
    EXPECT_NEAR(system_bandwidth(t_r) / 12.22e3, 1.0, 1e-3);
    EXPECT_THROW(rise_time(0), DomainError);
    EXPECT_THROW(system_bandwidth(-1), DomainError);
}

TEST(FitRise, NoiselessEdgeRecoversSigma) {
    const double sigma = 126563;
    const auto w = edge(sigma, 100e-6, 0.01, 0.3, 0, 0);
    const RiseFit f = fit_rise(w);
    EXPECT_NEAR(f.sigma / sigma, 1.0, 1e-3);
    EXPECT_NEAR(f.t0, 100e-6, 1e-9);
    EXPECT_NEAR(f.delta_v, 0.01, 1e-8);
    EXPECT_NEAR(f.v_baseline, 0.3, 1e-8);
    EXPECT_NEAR(f.t_r, rise_time(sigma), 1e-3 * rise_time(sigma));
}

TEST(FitRise, TwentyDecibelSnr) {
    const double sigma = 126563, dv = 0.01;
    const auto w = edge(sigma, 90e-6, dv, 0, dv / 10, 1);
    const RiseFit f = fit_rise(w);
    EXPECT_NEAR(f.sigma / sigma, 1.0, 0.02);
    EXPECT_GT(f.sigma_stderr, 0.0);
    EXPECT_NEAR(f.residual_rms, dv / 10, dv / 50);
}

TEST(FitRise, SynthesizedEdgeMatchesModelSigma) {
    SynthSpec s{SymbolSequence::from_string("V"), {}, {}, 0, 0};
    s.config.sample_rate_hz = 100e6;
    s.config.analog_bandwidth_hz = 50e6;
    s.model.symbol_level_delta_v = 0.02;
    s.model.transient_sigma = 126563;
    std::vector<Symbol> k(20000, Symbol::V);
    std::fill(k.begin() + 8000, k.end(), Symbol::H);
    s.key = SymbolSequence(k);
    const auto t = generate_trace(s);
    const RiseFit f = fit_rise(t);
    EXPECT_NEAR(f.sigma / 126563, 1.0, 0.01);
    EXPECT_NEAR(f.t0, 80e-6, 1e-8);
}

TEST(FitRise, RejectsFlatAndTinyWindows) {
    EXPECT_THROW(fit_rise(edge(1e5, 0, 0.0, 1, 1e-3, 2)), ShapeError);
    EXPECT_THROW(fit_rise(edge(1e5, 0, 1, 0, 0, 0, 5)), ShapeError);
}

TEST(Erfinv, OddSymmetry) {
    EXPECT_NEAR(erfinv(-0.8), -0.9061938024368232, 1e-15);
    for (double p : {0.1, 0.37, 0.95})
        EXPECT_EQ(erfinv(-p), -erfinv(p));
}

TEST(RiseTime, ScalingAndUnitPoints) {
    EXPECT_NEAR(rise_time(2 * 126563) / rise_time(126563), 0.5, 1e-15);
    EXPECT_NEAR(rise_time(3.6247752), 1.0, 1e-6);
    EXPECT_NEAR(system_bandwidth(0.35), 1.0, 1e-15);
    EXPECT_NEAR(system_bandwidth(1e-6), 350e3, 1e-9);
}
