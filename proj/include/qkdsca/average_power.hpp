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
#include "qkdsca/dsp.hpp"
#include "qkdsca/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace qkdsca {

// Voltages are across the 1 ohm sense resistor, so V and A are numerically
// interchangeable; slopes are carried in volts per hour.

struct TimedValue {
    double time_s = 0;
    double volts = 0;
};

struct LabeledSeries {
    std::string label;
    std::vector<TimedValue> points;
};

struct DriftLine {
    std::string label;
    double beta0 = 0; // V
    double beta1 = 0; // V/h
};

struct DriftModel {
    std::vector<DriftLine> per_sequence;
    double mean_beta1 = 0;
};

/// Ordinary least-squares line V = beta0 + beta1 t per sequence.
inline DriftModel fit_drift(std::span<const LabeledSeries> series) {
    if (series.empty())
        throw DomainError("drift fit needs at least one series");
    DriftModel m;
    for (const auto &s : series) {
        if (s.points.size() < 2)
            throw DomainError("series '" + s.label + "' has fewer than 2 points");
        const double n = static_cast<double>(s.points.size());
        double mt = 0, mv = 0;
        for (const auto &p : s.points) {
            mt += p.time_s / 3600.0;
            mv += p.volts;
        }
        mt /= n;
        mv /= n;
        double stt = 0, stv = 0;
        for (const auto &p : s.points) {
            const double dt = p.time_s / 3600.0 - mt;
            stt += dt * dt;
            stv += dt * (p.volts - mv);
        }
        if (!(stt > 0))
            throw DomainError("series '" + s.label + "' has no time spread");
        const double b1 = stv / stt;
        m.per_sequence.push_back({s.label, mv - b1 * mt, b1});
        m.mean_beta1 += b1;
    }
    m.mean_beta1 /= static_cast<double>(series.size());
    return m;
}

/// (t, V) -> (t, V - mean_beta1 * t).
inline std::vector<TimedValue> detrend(std::span<const TimedValue> points,
                                       double mean_beta1) {
    std::vector<TimedValue> out(points.begin(), points.end());
    for (auto &p : out)
        p.volts -= mean_beta1 * (p.time_s / 3600.0);
    return out;
}

/// Drops points below an absolute level (loose supply connector readings).
inline std::vector<TimedValue> apply_level_gate(std::span<const TimedValue> points,
                                                double gate_v) {
    std::vector<TimedValue> out;
    for (const auto &p : points)
        if (p.volts >= gate_v)
            out.push_back(p);
    return out;
}

/// Percentage of H symbols in a repeating pattern.
inline double h_percentage(const SymbolSequence &pattern) {
    const auto h = std::count(pattern.begin(), pattern.end(), Symbol::H);
    return 100.0 * static_cast<double>(h) / static_cast<double>(pattern.size());
}

struct SequenceStats {
    std::string label;
    double h_percentage = 0;
    std::size_t count = 0;
    double median = 0;
    double q1 = 0;
    double q3 = 0;
    double whisker_lo = 0;
    double whisker_hi = 0;
    std::vector<double> outliers;
};

struct HGroup {
    std::string label;
    double h_percentage = 0;
    std::vector<double> values;
};

struct HSummary {
    std::vector<SequenceStats> stats; // ascending h_percentage
    double rank_correlation = 0;      // Spearman, h_percentage vs median
};

/// Linear-interpolation quantile of sorted data (numpy's default rule).
inline double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty())
        throw DomainError("quantile of empty data");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Box statistics with Tukey whiskers (1.5 IQR).
inline SequenceStats box_stats(std::span<const double> values) {
    if (values.empty())
        throw DomainError("box statistics of an empty group");
    std::vector<double> s(values.begin(), values.end());
    std::sort(s.begin(), s.end());
    SequenceStats st;
    st.count = s.size();
    st.median = quantile_sorted(s, 0.5);
    st.q1 = quantile_sorted(s, 0.25);
    st.q3 = quantile_sorted(s, 0.75);
    const double iqr = st.q3 - st.q1;
    const double lo_fence = st.q1 - 1.5 * iqr, hi_fence = st.q3 + 1.5 * iqr;
    st.whisker_lo = st.q1;
    st.whisker_hi = st.q3;
    bool have_lo = false, have_hi = false;
    for (double v : s) {
        if (v < lo_fence || v > hi_fence) {
            st.outliers.push_back(v);
            continue;
        }
        if (!have_lo || v < st.whisker_lo) {
            st.whisker_lo = v;
            have_lo = true;
        }
        if (!have_hi || v > st.whisker_hi) {
            st.whisker_hi = v;
            have_hi = true;
        }
    }
    return st;
}

namespace detail {
inline std::vector<double> average_ranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]])
            j++;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2 + 1;
        for (std::size_t k = i; k <= j; k++)
            ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}
} // namespace detail

inline double spearman(std::span<const double> x, std::span<const double> y) {
    const auto rx = detail::average_ranks(x);
    const auto ry = detail::average_ranks(y);
    return zero_delay_correlation(rx, ry);
}

inline HSummary summarize_by_h_percentage(std::span<const HGroup> groups) {
    HSummary out;
    for (const auto &g : groups) {
        if (g.values.empty())
            throw DomainError("group '" + g.label + "' is empty");
        SequenceStats st = box_stats(g.values);
        st.label = g.label;
        st.h_percentage = g.h_percentage;
        out.stats.push_back(std::move(st));
    }
    std::stable_sort(out.stats.begin(), out.stats.end(),
                     [](const auto &a, const auto &b) {
                         return a.h_percentage < b.h_percentage;
                     });
    if (out.stats.size() >= 2) {
        std::vector<double> h, med;
        for (const auto &s : out.stats) {
            h.push_back(s.h_percentage);
            med.push_back(s.median);
        }
        out.rank_correlation = spearman(h, med);
    }
    return out;
}

struct Interval {
    double start_s = 0;
    double end_s = 0;
};

/// Sorted, disjoint time intervals (seconds from the first trace sample)
/// to leave out of scoring.
struct ExclusionWindows {
    std::vector<Interval> intervals;

    bool intersects(double start_s, double end_s) const {
        for (const auto &w : intervals)
            if (w.start_s < end_s && start_s < w.end_s)
                return true;
        return false;
    }
};

/// Periodic windows [phase + k period, phase + k period + duration], clipped
/// to the trace extent.
inline ExclusionWindows exclusion_windows(const PowerTrace &trace, double period_s,
                                          double duration_s, double phase_s) {
    if (!(duration_s > 0) || !(period_s > duration_s))
        throw DomainError("exclusion windows need period > duration > 0");
    const double extent = trace.duration_s();
    ExclusionWindows w;
    auto k = static_cast<long long>(std::ceil((-phase_s - duration_s) / period_s));
    for (;; k++) {
        const double b = phase_s + static_cast<double>(k) * period_s;
        if (b >= extent)
            break;
        const double cb = std::max(0.0, b), ce = std::min(extent, b + duration_s);
        if (ce > cb)
            w.intervals.push_back({cb, ce});
    }
    return w;
}

/// Low-pass at f_delay followed by the n_samp_for running average; the
/// conditioning expected by lowfreq_predict.
inline PowerTrace lowfreq_preprocess(const PowerTrace &trace, double f_delay_hz) {
    const double fs = trace.config().sample_rate_hz;
    PowerTrace filtered = low_pass(trace, f_delay_hz);
    const std::size_t w = std::min(n_samp_for(fs, f_delay_hz), filtered.size());
    return running_average(filtered, w);
}

struct LowFreqPrediction {
    SymbolSequence predicted;            // one symbol per scored period
    std::vector<std::size_t> periods;    // index of each scored period
    std::vector<std::size_t> skipped;    // periods intersecting exclusions
    std::size_t total_periods = 0;
};

namespace detail {
inline std::size_t period_boundary(std::size_t offset, double period_samples,
                                   std::size_t j) {
    return offset +
           static_cast<std::size_t>(std::llround(static_cast<double>(j) * period_samples));
}
} // namespace detail

/// Compares the level at the start and end of each emission period: a
/// decrease reads as V, anything else (ties included) as H. Start and end
/// levels are means over the first and last 5% of the period.
inline LowFreqPrediction lowfreq_predict(const PowerTrace &trace, double f_delay_hz,
                                         const ExclusionWindows &exclusions) {
    const double fs = trace.config().sample_rate_hz;
    if (!(f_delay_hz > 0) || !(f_delay_hz < fs / 2))
        throw DomainError("f_delay must lie in (0, Nyquist)");
    const double period = fs / f_delay_hz;
    const std::size_t off = trace.config().trigger_offset_samples;
    const auto x = trace.samples();
    std::vector<Symbol> syms;
    std::vector<std::size_t> scored, skipped;
    std::size_t j = 0;
    for (;; j++) {
        const std::size_t b = detail::period_boundary(off, period, j);
        const std::size_t e = detail::period_boundary(off, period, j + 1);
        if (e > x.size() || e <= b)
            break;
        if (exclusions.intersects(static_cast<double>(b) / fs, static_cast<double>(e) / fs)) {
            skipped.push_back(j);
            continue;
        }
        const std::size_t w = std::max<std::size_t>(1, (e - b) / 20);
        double start = 0, end = 0;
        for (std::size_t i = 0; i < w; i++) {
            start += x[b + i];
            end += x[e - w + i];
        }
        syms.push_back(end < start ? Symbol::V : Symbol::H);
        scored.push_back(j);
    }
    if (j == 0)
        throw DomainError("trace shorter than one emission period");
    if (syms.empty())
        throw DomainError("every emission period intersects an exclusion window");
    LowFreqPrediction r{SymbolSequence(std::move(syms)), std::move(scored),
                        std::move(skipped), j};
    return r;
}

/// Ground-truth symbol per period, read at the period's center sample.
inline SymbolSequence period_truth(const PowerTrace &trace, double f_delay_hz,
                                   std::span<const std::size_t> periods) {
    if (!trace.label())
        throw DomainError("trace carries no label");
    const double fs = trace.config().sample_rate_hz;
    const double period = fs / f_delay_hz;
    const std::size_t off = trace.config().trigger_offset_samples;
    const std::size_t spp = samples_per_symbol(trace.config());
    const auto &label = *trace.label();
    std::vector<Symbol> out;
    for (std::size_t j : periods) {
        const std::size_t b = detail::period_boundary(off, period, j);
        const std::size_t e = detail::period_boundary(off, period, j + 1);
        const std::size_t mid = (b + e) / 2;
        const std::size_t sym = (mid - off) / spp;
        if (sym >= label.size())
            throw BoundsError("period extends past the trace label");
        out.push_back(label[sym]);
    }
    return SymbolSequence(std::move(out));
}

/// Percentage of positions where predicted equals truth.
inline double prediction_accuracy(const SymbolSequence &predicted,
                                  const SymbolSequence &truth) {
    if (predicted.size() != truth.size())
        throw DomainError("predicted and true sequences differ in length");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); i++)
        hits += predicted[i] == truth[i];
    return 100.0 * static_cast<double>(hits) / static_cast<double>(predicted.size());
}

/// Chance level plus three binomial standard deviations, in percent:
/// 50 + 300 sqrt(0.25 / n). Success requires strictly exceeding it.
inline double success_threshold(std::size_t n_symbols) {
    if (n_symbols < 1)
        throw DomainError("success threshold needs at least one symbol");
    return 50.0 + 300.0 * std::sqrt(0.25 / static_cast<double>(n_symbols));
}

} // namespace qkdsca
