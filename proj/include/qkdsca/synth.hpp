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

#pragma once

#include "qkdsca/core.hpp"
#include "qkdsca/error.hpp"
#include "qkdsca/parallel.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

namespace qkdsca {

/// A harmonic of the repetition clock whose phase, and optionally
/// amplitude, follows the symbol stream.
///
/// During symbol m the phase is
///   phase_offset_rad + phase_coupling *
///       sum_{j=0}^{window-1} decay^j * cos(ringing_rad * j) * s(m - j),
/// with s = +1 for H and -1 for V and terms before the start of the key
/// dropped. The supply still rings from the last window - 1 symbols. The
/// amplitude is amplitude_v * (1 + amplitude_coupling * s(m)).
struct Harmonic {
    unsigned order = 1;
    double amplitude_v = 0;
    double phase_coupling = 0;
    double decay = 1;
    unsigned window = 1;
    double amplitude_coupling = 0;
    /// Carrier phase at symbol boundaries when the coupling is zero.
    double phase_offset_rad = 0;
    /// Oscillation of the coupling kernel, radians per symbol period.
    double ringing_rad = 0;
};

/// Phenomenological leakage model of the driver's supply current.
struct LeakageModel {
    double baseline_v = 0;
    /// Mean level of H minus mean level of V.
    double symbol_level_delta_v = 0;
    /// Erf step-response parameter of level changes (1/s).
    double transient_sigma = 126563;
    /// Lag between a symbol change and the center of its erf response.
    double transient_delay_s = 0;
    /// Level (relative to baseline) before the first symbol. Unset means the
    /// first symbol's own level, i.e. no initial edge.
    std::optional<double> idle_level_v;
    std::vector<Harmonic> harmonics;
    double drift_v_per_hour = 0;
    double cpu_period_s = 0;
    double cpu_duration_s = 0;
    double cpu_depth_v = 0;
    double cpu_phase_s = 0;
    double noise_std_v = 0;
};

struct SynthSpec {
    SymbolSequence key;
    AcquisitionConfig config;
    LeakageModel model;
    std::uint64_t seed = 0;
    /// Absolute time of the first sample; drives drift and the CPU-write
    /// schedule.
    double start_time_s = 0;
};

/// Identifier of the noise generator, stored with every generated dataset.
inline constexpr const char *kRngAlgorithm = "mt19937_64/box-muller/v1";

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Standard normal variates from mt19937_64 via Box-Muller, drawn strictly in
/// call order.
class GaussianStream {
  public:
    explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1], u2 in [0, 1), both with 53 random bits
        const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0;
    bool has_spare_ = false;
};

inline void validate(const LeakageModel &m, const AcquisitionConfig &cfg) {
    validate(cfg);
    if (!(m.transient_sigma > 0))
        throw ConfigError("transient_sigma must be positive");
    if (m.transient_delay_s < 0)
        throw ConfigError("transient_delay_s must be non-negative");
    if (m.noise_std_v < 0)
        throw ConfigError("noise_std_v must be non-negative");
    for (const auto &h : m.harmonics) {
        if (h.order < 1)
            throw ConfigError("harmonic order must be at least 1");
        if (h.amplitude_v < 0)
            throw ConfigError("harmonic amplitude must be non-negative");
        if (!(h.decay > 0) || h.decay > 1)
            throw ConfigError("harmonic decay must lie in (0, 1]");
        if (h.window < 1)
            throw ConfigError("harmonic window must be at least 1");
        if (h.order * cfg.repetition_rate_hz >= cfg.sample_rate_hz / 2)
            throw ConfigError("harmonic " + std::to_string(h.order) +
                              " lies at or above Nyquist");
    }
    if (m.cpu_depth_v != 0 && (!(m.cpu_duration_s > 0) || !(m.cpu_period_s > m.cpu_duration_s)))
        throw ConfigError("CPU-write disturbance needs period > duration > 0");
}

/// Uniform random key; symbol i is bit i of the generator output stream.
inline SymbolSequence random_key(std::size_t length, std::uint64_t seed) {
    if (length == 0)
        throw DomainError("key length must be at least 1");
    std::mt19937_64 engine(splitmix64(seed ^ 0x6b65795f73747265ULL));
    std::vector<Symbol> out(length);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < length; i++) {
        if (i % 64 == 0)
            bits = engine();
        out[i] = (bits >> (i % 64)) & 1 ? Symbol::V : Symbol::H;
    }
    return SymbolSequence(std::move(out));
}

/// Repeats a pattern (e.g. "HHV") up to `length` symbols.
inline SymbolSequence repeated_key(const SymbolSequence &pattern, std::size_t length) {
    if (length == 0)
        throw DomainError("key length must be at least 1");
    std::vector<Symbol> out(length);
    for (std::size_t i = 0; i < length; i++)
        out[i] = pattern[i % pattern.size()];
    return SymbolSequence(std::move(out));
}

/// Emulates a slower emission rate f_delay on the f_rep clock: runs of
/// round(f_rep / f_delay) equal symbols, alternating H, V, H, ...
inline SymbolSequence alternating_key(double f_rep, double f_delay, std::size_t length) {
    if (!(f_delay > 0) || !(f_rep >= f_delay))
        throw DomainError("alternating key needs f_rep >= f_delay > 0");
    const auto run = static_cast<std::size_t>(std::max(1.0, std::round(f_rep / f_delay)));
    std::vector<Symbol> out(length);
    for (std::size_t i = 0; i < length; i++)
        out[i] = (i / run) % 2 == 0 ? Symbol::H : Symbol::V;
    return SymbolSequence(std::move(out));
}

namespace detail {

/// Level term: superposed erf step responses of every level change,
/// evaluated exactly on a grid finer than the response width and linearly
/// interpolated between grid points.
inline void add_level(std::vector<double> &out, const SynthSpec &spec, std::size_t spp) {
    const LeakageModel &m = spec.model;
    const auto &key = spec.key;
    const double half = m.symbol_level_delta_v / 2;
    auto target = [&](Symbol s) { return s == Symbol::H ? half : -half; };
    const double idle = m.idle_level_v.value_or(target(key[0]));

    struct Step {
        double center; // seconds from symbol 0
        double delta;
        std::size_t symbol;
    };
    std::vector<Step> steps;
    double level = idle;
    const double period = 1.0 / spec.config.repetition_rate_hz;
    for (std::size_t i = 0; i < key.size(); i++) {
        const double t = target(key[i]);
        if (t != level) {
            steps.push_back({static_cast<double>(i) * period + m.transient_delay_s, t - level, i});
            level = t;
        }
    }
    const std::size_t off = spec.config.trigger_offset_samples;
    const double fs = spec.config.sample_rate_hz;
    if (steps.empty()) {
        for (double &v : out)
            v += idle;
        return;
    }
    const double sigma = m.transient_sigma;
    const double d = m.transient_delay_s;
    const double cut = 10.5 / sigma; // erf(5.25) = 1 - 1e-13
    const double per_width = std::sqrt(2.0) / sigma * fs / 64;
    auto kernel = [&](double x) { return 0.5 * (1 + std::erf(sigma * x / 2)); };

    // Nodes on symbol boundaries see every edge at a whole number of symbol
    // periods plus the fixed delay, so the kernel comes from a table.
    const bool aligned = per_width >= static_cast<double>(spp);
    const std::size_t grid =
        aligned ? spp * static_cast<std::size_t>(std::floor(per_width / static_cast<double>(spp)))
                : static_cast<std::size_t>(std::max(1.0, std::floor(per_width)));
    const auto jlo = static_cast<long long>(std::floor((d - cut) / period)) - 1;
    const auto jhi = static_cast<long long>(std::ceil((d + cut) / period)) + 1;
    std::vector<double> table;
    if (aligned)
        for (long long j = jlo; j <= jhi; j++)
            table.push_back(kernel(static_cast<double>(j) * period - d));

    std::size_t lo = 0, hi = 0;
    double settled = 0;
    // q >= 0 marks a node q symbols after the trigger offset
    auto eval_at = [&](double tau, long long q) {
        while (lo < steps.size() && steps[lo].center < tau - cut) {
            settled += steps[lo].delta;
            lo++;
        }
        if (hi < lo)
            hi = lo;
        while (hi < steps.size() && steps[hi].center <= tau + cut)
            hi++;
        double v = idle + settled;
        for (std::size_t i = lo; i < hi; i++) {
            const long long j = q - static_cast<long long>(steps[i].symbol);
            v += steps[i].delta * (q >= 0 && j >= jlo && j <= jhi
                                       ? table[static_cast<std::size_t>(j - jlo)]
                                       : kernel(tau - steps[i].center));
        }
        return v;
    };

    const std::size_t n = out.size();
    auto node = [&](std::size_t k) {
        const double tau = (static_cast<double>(k) - static_cast<double>(off)) / fs;
        const bool on_symbol = aligned && k >= off && (k - off) % spp == 0;
        return eval_at(tau, on_symbol ? static_cast<long long>((k - off) / spp) : -1);
    };
    // first node, then the aligned lattice off + q grid, then the last sample
    std::size_t k0 = 0;
    double v0 = node(0);
    while (k0 < n - 1) {
        std::size_t k1;
        if (k0 < off)
            k1 = std::min(off, k0 + grid);
        else
            k1 = off + ((k0 - off) / grid + 1) * grid;
        k1 = std::min(n - 1, k1);
        const double v1 = node(k1);
        const double span = static_cast<double>(k1 - k0);
        for (std::size_t k = k0; k < k1; k++)
            out[k] += v0 + (v1 - v0) * (static_cast<double>(k - k0) / span);
        k0 = k1;
        v0 = v1;
    }
    out[n - 1] += v0;
}

inline void add_harmonics(std::vector<double> &out, const SynthSpec &spec, std::size_t spp) {
    const auto &hs = spec.model.harmonics;
    if (hs.empty())
        return;
    const auto &key = spec.key;
    const std::size_t off = spec.config.trigger_offset_samples;
    std::vector<std::vector<double>> ctab(hs.size(), std::vector<double>(spp));
    std::vector<std::vector<double>> stab(hs.size(), std::vector<double>(spp));
    for (std::size_t h = 0; h < hs.size(); h++)
        for (std::size_t j = 0; j < spp; j++) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(hs[h].order * j % spp) /
                             static_cast<double>(spp);
            ctab[h][j] = std::cos(a);
            stab[h][j] = std::sin(a);
        }
    std::vector<double> ca(hs.size()), sa(hs.size());
    for (std::size_t m = 0; m < key.size(); m++) {
        for (std::size_t h = 0; h < hs.size(); h++) {
            const Harmonic &hm = hs[h];
            double phi = 0, w = 1;
            for (std::size_t j = 0; j < hm.window && j <= m; j++) {
                phi += w * std::cos(hm.ringing_rad * static_cast<double>(j)) *
                       signum(key[m - j]);
                w *= hm.decay;
            }
            phi = hm.phase_offset_rad + hm.phase_coupling * phi;
            const double amp = hm.amplitude_v * (1 + hm.amplitude_coupling * signum(key[m]));
            ca[h] = amp * std::cos(phi);
            sa[h] = amp * std::sin(phi);
        }
        double *dst = out.data() + off + m * spp;
        for (std::size_t j = 0; j < spp; j++) {
            double v = 0;
            for (std::size_t h = 0; h < hs.size(); h++)
                v += ca[h] * ctab[h][j] - sa[h] * stab[h][j];
            dst[j] += v;
        }
    }
}

} // namespace detail

/// Sample k, at t = k / f_samp, is
///   baseline + level(t) + sum_h A_h(m) cos(2 pi h f_rep t + phi_h(m))
///   + drift t - cpu(t) + noise_k,
/// with m the symbol emitted at t. Deterministic in the spec.
inline PowerTrace generate_trace(const SynthSpec &spec) {
    validate(spec.model, spec.config);
    const std::size_t spp = samples_per_symbol(spec.config);
    const std::size_t n = spec.config.trigger_offset_samples + spec.key.size() * spp;
    const LeakageModel &m = spec.model;
    const double fs = spec.config.sample_rate_hz;
    std::vector<double> out(n, m.baseline_v);

    detail::add_level(out, spec, spp);
    detail::add_harmonics(out, spec, spp);

    if (m.drift_v_per_hour != 0)
        for (std::size_t k = 0; k < n; k++)
            out[k] += m.drift_v_per_hour * (spec.start_time_s + static_cast<double>(k) / fs) / 3600.0;

    if (m.cpu_depth_v != 0)
        for (std::size_t k = 0; k < n; k++) {
            const double u = spec.start_time_s + static_cast<double>(k) / fs - m.cpu_phase_s;
            const double r = u - std::floor(u / m.cpu_period_s) * m.cpu_period_s;
            if (r < m.cpu_duration_s)
                out[k] -= m.cpu_depth_v;
        }

    if (m.noise_std_v > 0) {
        GaussianStream noise(splitmix64(spec.seed));
        for (double &v : out)
            v += m.noise_std_v * noise.next();
    }
    return PowerTrace(std::move(out), spec.config, spec.key);
}

/// n_keys uniform random keys, key i seeded with base_seed + i, each turned
/// into a trace with the template's acquisition and leakage model.
inline std::vector<PowerTrace> generate_dataset(std::size_t n_keys, std::size_t key_len,
                                                const SynthSpec &spec_template,
                                                std::uint64_t base_seed) {
    if (n_keys < 1 || key_len < 1)
        throw DomainError("dataset needs n_keys >= 1 and key_len >= 1");
    std::vector<std::optional<PowerTrace>> slots(n_keys);
    parallel_for(n_keys, 1, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; i++) {
            SynthSpec s = spec_template;
            s.seed = base_seed + i;
            s.key = random_key(key_len, s.seed);
            slots[i] = generate_trace(s);
        }
    });
    std::vector<PowerTrace> out;
    out.reserve(n_keys);
    for (auto &s : slots)
        out.push_back(std::move(*s));
    return out;
}

} // namespace qkdsca
