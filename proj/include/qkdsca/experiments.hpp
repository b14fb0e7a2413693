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

#include "qkdsca/attack.hpp"
#include "qkdsca/average_power.hpp"
#include "qkdsca/config.hpp"
#include "qkdsca/fingerprint.hpp"
#include "qkdsca/io.hpp"
#include "qkdsca/parallel.hpp"
#include "qkdsca/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qkdsca {

/// Independent seed for item `index` of sub-stream `stream` of a run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t index) {
    return splitmix64(splitmix64(seed ^ splitmix64(stream)) + index);
}

// ---- low-frequency sweep --------------------------------------------------

struct SweepSettings {
    double from_hz = 2000;
    double to_hz = 46000;
    double step_hz = 1000;
    unsigned traces = 10;
    double duration_s = 0.5e-3;
    std::uint64_t seed = 0;
};

inline std::vector<double> sweep_frequencies(const SweepSettings &s) {
    if (!(s.from_hz > 0) || !(s.to_hz >= s.from_hz) || !(s.step_hz > 0))
        throw DomainError("sweep needs 0 < from <= to and step > 0");
    if (s.traces < 1)
        throw DomainError("sweep needs at least one trace per frequency");
    const auto n = static_cast<std::size_t>(std::floor((s.to_hz - s.from_hz) / s.step_hz + 1e-9)) + 1;
    std::vector<double> f(n);
    for (std::size_t k = 0; k < n; k++)
        f[k] = s.from_hz + static_cast<double>(k) * s.step_hz;
    return f;
}

/// Alternating H/V emission at each f_delay, low-passed, averaged and read
/// back period by period. One row per (frequency, trace), frequency-major.
inline std::vector<PaRow> lowfreq_sweep(const ExperimentConfig &cfg, const SweepSettings &s) {
    const auto freqs = sweep_frequencies(s);
    const double f_rep = cfg.acquisition.repetition_rate_hz;
    const auto symbols = static_cast<std::size_t>(std::llround(s.duration_s * f_rep));
    if (symbols < 1)
        throw DomainError("sweep duration holds no symbols");
    for (double f : freqs)
        if (!(f < cfg.acquisition.sample_rate_hz / 2) || f > f_rep)
            throw DomainError("f_delay " + detail::format_double(f) +
                              " Hz lies outside (0, min(f_rep, Nyquist)]");
    std::vector<PaRow> rows(freqs.size() * s.traces);
    parallel_for(rows.size(), 1, [&](std::size_t b, std::size_t e) {
        for (std::size_t job = b; job < e; job++) {
            const std::size_t fi = job / s.traces, id = job % s.traces;
            const double f = freqs[fi];
            SynthSpec spec = cfg.spec(alternating_key(f_rep, f, symbols));
            spec.seed = derive_seed(s.seed, static_cast<std::uint64_t>(std::llround(f)), id);
            const PowerTrace trace = generate_trace(spec);
            const PowerTrace pre = lowfreq_preprocess(trace, f);
            ExclusionWindows ex;
            if (cfg.run.exclusion_period_s > 0)
                ex = exclusion_windows(trace, cfg.run.exclusion_period_s,
                                       cfg.run.exclusion_duration_s, cfg.run.exclusion_phase_s);
            const LowFreqPrediction pr = lowfreq_predict(pre, f, ex);
            const SymbolSequence truth = period_truth(trace, f, pr.periods);
            rows[job] = {f, id, prediction_accuracy(pr.predicted, truth), pr.skipped.size()};
        }
    });
    return rows;
}

struct FrequencySummary {
    double f_delay_hz = 0;
    std::size_t traces = 0;
    double min_pa = 0;
    double median_pa = 0;
    double max_pa = 0;
};

/// Per-frequency spread of a PA table, in order of first appearance.
inline std::vector<FrequencySummary> summarize_sweep(std::span<const PaRow> rows) {
    std::vector<double> order;
    for (const auto &r : rows)
        if (std::find(order.begin(), order.end(), r.f_delay_hz) == order.end())
            order.push_back(r.f_delay_hz);
    std::vector<FrequencySummary> out;
    for (double f : order) {
        std::vector<double> pa;
        for (const auto &r : rows)
            if (r.f_delay_hz == f)
                pa.push_back(r.pa_percent);
        std::sort(pa.begin(), pa.end());
        out.push_back({f, pa.size(), pa.front(), quantile_sorted(pa, 0.5), pa.back()});
    }
    return out;
}

inline std::string sweep_summary_csv(std::span<const FrequencySummary> s) {
    std::string out = "f_delay_hz,traces,min_pa_percent,median_pa_percent,max_pa_percent\n";
    for (const auto &r : s)
        out += detail::format_double(r.f_delay_hz) + "," + std::to_string(r.traces) + "," +
               detail::format_fixed(r.min_pa, 6) + "," + detail::format_fixed(r.median_pa, 6) +
               "," + detail::format_fixed(r.max_pa, 6) + "\n";
    return out;
}

// ---- template attack ------------------------------------------------------

/// Profiling stage on synthetic data: keys seeded base_seed + i.
inline FingerprintLibrary profile_library(const ExperimentConfig &cfg, std::size_t keys,
                                          std::size_t symbols, std::uint64_t base_seed,
                                          unsigned L) {
    const auto dataset =
        generate_dataset(keys, symbols, cfg.spec(SymbolSequence::from_string("H")), base_seed);
    return build_library(dataset, L, cfg.run.band, cfg.run.min_occurrences);
}

inline std::string key_id(std::size_t i) {
    std::string s = std::to_string(i);
    return "key_" + std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

/// Attacks fresh keys (seeded base_seed + i) once per delta_n; the result
/// holds one table per delta_n, in the given order.
inline std::vector<std::vector<AttackRow>>
attack_keys(const ExperimentConfig &cfg, const FingerprintLibrary &lib, std::size_t keys,
            std::size_t symbols, std::uint64_t base_seed, std::span<const unsigned> delta_ns) {
    if (keys < 1 || symbols < 1)
        throw DomainError("attack evaluation needs keys >= 1 and symbols >= 1");
    std::vector<std::vector<AttackRow>> tables(delta_ns.size());
    for (std::size_t i = 0; i < keys; i++) {
        SynthSpec spec = cfg.spec(SymbolSequence::from_string("H"));
        spec.seed = base_seed + i;
        spec.key = random_key(symbols, spec.seed);
        const PowerTrace trace = generate_trace(spec);
        for (std::size_t d = 0; d < delta_ns.size(); d++) {
            const AttackStrategy st{lib.length_l, delta_ns[d], cfg.run.mode, lib.band};
            const PredictionReport r = evaluate(run_attack(trace, lib, st), spec.key);
            tables[d].push_back({key_id(i), lib.length_l, delta_ns[d], r.predicted.size(),
                                 *r.pa_percent, r.threshold_percent, *r.success});
        }
    }
    return tables;
}

struct AttackSummary {
    std::size_t keys = 0;
    std::size_t successes = 0;
    double mean_pa = 0;
    double min_pa = 0;
    double max_pa = 0;
    double pooled_pa = 0; // over all predicted symbols
};

inline AttackSummary summarize_attacks(std::span<const AttackRow> rows) {
    if (rows.empty())
        throw DomainError("no attack rows to summarize");
    AttackSummary s;
    s.keys = rows.size();
    s.min_pa = rows.front().pa_percent;
    s.max_pa = rows.front().pa_percent;
    double correct = 0, total = 0;
    for (const auto &r : rows) {
        s.successes += r.success;
        s.mean_pa += r.pa_percent;
        s.min_pa = std::min(s.min_pa, r.pa_percent);
        s.max_pa = std::max(s.max_pa, r.pa_percent);
        correct += std::round(r.pa_percent * static_cast<double>(r.predicted) / 100);
        total += static_cast<double>(r.predicted);
    }
    s.mean_pa /= static_cast<double>(rows.size());
    s.pooled_pa = total > 0 ? 100 * correct / total : 0;
    return s;
}

inline std::string attack_summary_csv(std::span<const AttackSummary> s,
                                      std::span<const std::string> labels) {
    std::string out = "table,keys,successes,success_rate_percent,mean_pa_percent,"
                      "min_pa_percent,max_pa_percent,pooled_pa_percent\n";
    for (std::size_t i = 0; i < s.size(); i++) {
        const auto &r = s[i];
        out += labels[i] + "," + std::to_string(r.keys) + "," + std::to_string(r.successes) +
               "," +
               detail::format_fixed(100.0 * static_cast<double>(r.successes) /
                                        static_cast<double>(r.keys),
                                    6) +
               "," + detail::format_fixed(r.mean_pa, 6) + "," + detail::format_fixed(r.min_pa, 6) +
               "," + detail::format_fixed(r.max_pa, 6) + "," + detail::format_fixed(r.pooled_pa, 6) +
               "\n";
    }
    return out;
}

// ---- average-power points -------------------------------------------------

struct PointSeries {
    std::string label;
    double h_percentage = 0;
    std::vector<TimedValue> points;
};

/// Mean level of short captures of each repeating pattern, taken at evenly
/// spaced times over `hours`, patterns interleaved as a bench session would.
inline std::vector<PointSeries> average_power_points(const ExperimentConfig &cfg,
                                                     std::span<const SymbolSequence> patterns,
                                                     double hours, std::size_t per_pattern,
                                                     std::size_t capture_symbols,
                                                     std::uint64_t seed) {
    if (patterns.empty() || per_pattern < 2 || capture_symbols < 1 || !(hours > 0))
        throw DomainError("average-power points need patterns, >= 2 points each, "
                          "capture length >= 1 and hours > 0");
    const std::size_t np = patterns.size();
    const double step = hours * 3600 / static_cast<double>(np * per_pattern);
    std::vector<PointSeries> out(np);
    for (std::size_t p = 0; p < np; p++) {
        out[p].label = patterns[p].to_string();
        out[p].h_percentage = h_percentage(patterns[p]);
        out[p].points.resize(per_pattern);
    }
    parallel_for(np * per_pattern, 4, [&](std::size_t b, std::size_t e) {
        for (std::size_t job = b; job < e; job++) {
            const std::size_t k = job / np, p = job % np;
            SynthSpec spec = cfg.spec(repeated_key(patterns[p], capture_symbols));
            spec.seed = derive_seed(seed, p, k);
            spec.start_time_s = cfg.start_time_s + static_cast<double>(job) * step;
            const PowerTrace t = generate_trace(spec);
            double sum = 0;
            for (double v : t.samples())
                sum += v;
            out[p].points[k] = {spec.start_time_s, sum / static_cast<double>(t.size())};
        }
    });
    return out;
}

inline std::string points_csv(std::span<const PointSeries> s) {
    std::string out = "label,h_percentage,time_s,volts\n";
    for (const auto &ps : s)
        for (const auto &p : ps.points)
            out += ps.label + "," + detail::format_double(ps.h_percentage) + "," +
                   detail::format_double(p.time_s) + "," + detail::format_double(p.volts) + "\n";
    return out;
}

inline std::vector<PointSeries> parse_points_csv(std::string_view text) {
    const CsvTable t = parse_csv_table(text, "points");
    const std::size_t cl = t.column("label", "points"), ch = t.column("h_percentage", "points"),
                      ct = t.column("time_s", "points"), cv = t.column("volts", "points");
    std::vector<PointSeries> out;
    for (std::size_t r = 0; r < t.rows.size(); r++) {
        const auto &f = t.rows[r];
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const PointSeries &p) { return p.label == f[cl]; });
        if (it == out.end()) {
            out.push_back({f[cl], detail::parse_csv_double(f[ch], t.lines[r]), {}});
            it = out.end() - 1;
        }
        it->points.push_back({detail::parse_csv_double(f[ct], t.lines[r]),
                              detail::parse_csv_double(f[cv], t.lines[r])});
    }
    return out;
}

struct AveragePowerAnalysis {
    DriftModel drift;
    HSummary summary;
    std::size_t gated_points = 0;
};

/// Gate, fit one drift line per pattern, remove the mean slope and
/// summarize the detrended levels by H percentage.
inline AveragePowerAnalysis analyze_average_power(std::span<const PointSeries> series,
                                                  std::optional<double> gate_v) {
    AveragePowerAnalysis a;
    std::vector<LabeledSeries> kept;
    for (const auto &s : series) {
        auto pts = gate_v ? apply_level_gate(s.points, *gate_v) : s.points;
        a.gated_points += s.points.size() - pts.size();
        kept.push_back({s.label, std::move(pts)});
    }
    a.drift = fit_drift(kept);
    std::vector<HGroup> groups;
    for (std::size_t i = 0; i < kept.size(); i++) {
        HGroup g{kept[i].label, series[i].h_percentage, {}};
        for (const auto &p : detrend(kept[i].points, a.drift.mean_beta1))
            g.values.push_back(p.volts);
        groups.push_back(std::move(g));
    }
    a.summary = summarize_by_h_percentage(groups);
    return a;
}

} // namespace qkdsca
