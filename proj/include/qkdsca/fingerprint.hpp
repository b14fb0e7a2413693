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
#include "qkdsca/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace qkdsca {

/// Which per-bin quantity templates and snippets are compared on.
enum class FeatureMode { Phase, Magnitude };

inline std::string to_string(FeatureMode m) {
    return m == FeatureMode::Phase ? "phase" : "magnitude";
}

inline FeatureMode parse_feature_mode(const std::string &s) {
    if (s == "phase")
        return FeatureMode::Phase;
    if (s == "magnitude")
        return FeatureMode::Magnitude;
    throw ConfigError("unknown feature mode '" + s + "' (expected phase|magnitude)");
}

/// Analysis band in Hz. The default covers the region where the driver's
/// symbol-dependent harmonics sit.
struct Band {
    double lo_hz = 50e6;
    double hi_hz = 900e6;
    friend bool operator==(const Band &, const Band &) = default;
};

/// Band features of a complex spectrum.
inline std::vector<double> features_of(std::span<const Complex> bins, FeatureMode mode) {
    std::vector<double> f(bins.size());
    for (std::size_t i = 0; i < bins.size(); i++)
        f[i] = mode == FeatureMode::Phase ? wrap_phase(std::arg(bins[i]))
                                          : std::abs(bins[i]);
    return f;
}

/// Averaged spectral template of one L-symbol sequence.
struct Fingerprint {
    std::uint32_t sequence_index = 0;
    unsigned length_l = 0;
    PhaseVector mean_phase;
    std::vector<double> mean_magnitude;
    std::uint32_t occurrence_count = 0;
    std::vector<std::uint32_t> unreliable_bins;

    const std::vector<double> &features(FeatureMode m) const {
        return m == FeatureMode::Phase ? mean_phase : mean_magnitude;
    }
};

struct FingerprintLibrary {
    unsigned length_l = 0;
    Band band;
    std::vector<Fingerprint> entries; // entries[i].sequence_index == i
    AcquisitionConfig acquisition;
    std::uint32_t min_occurrences = 30;

    std::size_t snippet_samples() const {
        return length_l * samples_per_symbol(acquisition);
    }
    BinRange bins() const {
        return band_bins(snippet_samples(), acquisition.sample_rate_hz, band.lo_hz,
                         band.hi_hz);
    }
};

inline void validate(const FingerprintLibrary &lib) {
    if (lib.length_l < 1 || lib.length_l > 16)
        throw DomainError("library sequence length must lie in [1, 16]");
    const std::size_t classes = std::size_t{1} << lib.length_l;
    if (lib.entries.size() != classes)
        throw DomainError("library holds " + std::to_string(lib.entries.size()) +
                          " entries, expected " + std::to_string(classes));
    const std::size_t nb = lib.bins().count;
    for (std::size_t i = 0; i < classes; i++) {
        const auto &e = lib.entries[i];
        if (e.sequence_index != i || e.length_l != lib.length_l)
            throw DomainError("library entry " + std::to_string(i) + " is out of order");
        if (e.occurrence_count < lib.min_occurrences || e.occurrence_count < 1)
            throw CoverageError("library entry " + std::to_string(i) +
                                    " is under-covered",
                                static_cast<unsigned>(i));
        if (e.mean_phase.size() != nb || e.mean_magnitude.size() != nb)
            throw DomainError("library entry " + std::to_string(i) +
                              " is not aligned to the band");
    }
}

/// Partitions every labeled trace into consecutive disjoint L-symbol
/// snippets, groups them by sequence index and averages each group: circular
/// mean of the band phases, arithmetic mean of the band magnitudes.
inline FingerprintLibrary build_library(std::span<const PowerTrace> dataset, unsigned L,
                                        Band band = {},
                                        std::uint32_t min_occurrences = 30) {
    if (L < 1 || L > 16)
        throw DomainError("sequence length L must lie in [1, 16]");
    if (dataset.empty())
        throw DomainError("cannot build a library from an empty dataset");
    const AcquisitionConfig acq = dataset.front().config();
    const std::size_t spp = samples_per_symbol(acq);
    for (const auto &t : dataset) {
        if (!t.label())
            throw DomainError("library traces must be labeled");
        if (t.config().sample_rate_hz != acq.sample_rate_hz ||
            t.config().repetition_rate_hz != acq.repetition_rate_hz)
            throw ConfigError("library traces differ in sample or repetition rate");
    }
    const std::size_t n = L * spp;
    const BinRange range = band_bins(n, acq.sample_rate_hz, band.lo_hz, band.hi_hz);
    if (range.count == 0)
        throw DomainError("analysis band contains no bins at this resolution");
    const BandDft plan(n, range);
    const std::size_t classes = std::size_t{1} << L;
    const std::size_t nb = range.count;

    std::vector<CircularAccumulator> phase(classes, CircularAccumulator(nb));
    std::vector<std::vector<double>> mag_sum(classes, std::vector<double>(nb, 0.0));

    constexpr std::size_t kBatch = 4096;
    std::vector<Complex> spectra(kBatch * nb);
    for (const auto &trace : dataset) {
        const auto &label = *trace.label();
        const std::size_t snippets = label.size() / L;
        const std::size_t off = trace.config().trigger_offset_samples;
        const auto x = trace.samples();
        for (std::size_t b0 = 0; b0 < snippets; b0 += kBatch) {
            const std::size_t cnt = std::min(kBatch, snippets - b0);
            parallel_for(cnt, 256, [&](std::size_t b, std::size_t e) {
                for (std::size_t s = b; s < e; s++) {
                    const std::size_t start = off + (b0 + s) * n;
                    plan.transform(x.subspan(start, n),
                                   std::span<Complex>(spectra).subspan(s * nb, nb));
                }
            });
            for (std::size_t s = 0; s < cnt; s++) {
                const auto idx = static_cast<std::size_t>(
                    sequence_index(label.symbols().subspan((b0 + s) * L, L)));
                const std::span<const Complex> bins(spectra.data() + s * nb, nb);
                phase[idx].add_bins(bins);
                auto &m = mag_sum[idx];
                for (std::size_t k = 0; k < nb; k++)
                    m[k] += std::abs(bins[k]);
            }
        }
    }

    FingerprintLibrary lib;
    lib.length_l = L;
    lib.band = band;
    lib.acquisition = acq;
    lib.acquisition.trigger_offset_samples = 0;
    lib.min_occurrences = min_occurrences;
    lib.entries.resize(classes);
    for (std::size_t i = 0; i < classes; i++) {
        const std::size_t count = phase[i].count();
        if (count < std::max<std::size_t>(1, min_occurrences))
            throw CoverageError("sequence " + index_to_sequence(i, L).to_string() +
                                    " (index " + std::to_string(i) + ") occurs " +
                                    std::to_string(count) + " times, need " +
                                    std::to_string(std::max<std::uint32_t>(1, min_occurrences)),
                                static_cast<unsigned>(i));
        const CircularMean cm = phase[i].result();
        Fingerprint &f = lib.entries[i];
        f.sequence_index = static_cast<std::uint32_t>(i);
        f.length_l = L;
        f.mean_phase = cm.mean;
        f.occurrence_count = static_cast<std::uint32_t>(count);
        for (std::size_t u : cm.unreliable)
            f.unreliable_bins.push_back(static_cast<std::uint32_t>(u));
        f.mean_magnitude.resize(nb);
        for (std::size_t k = 0; k < nb; k++)
            f.mean_magnitude[k] = mag_sum[i][k] / static_cast<double>(count);
    }
    return lib;
}

/// Square correlation matrix, row-major. Undefined entries are NaN.
struct CorrelationMatrix {
    std::size_t order = 0;
    std::vector<double> values;
    std::vector<std::string> labels;

    double operator()(std::size_t i, std::size_t j) const { return values[i * order + j]; }
    double &at(std::size_t i, std::size_t j) { return values[i * order + j]; }
    std::size_t undefined_count() const {
        return static_cast<std::size_t>(
            std::count_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }));
    }
};

/// Correlation of every fingerprint pair over the selected per-bin vectors.
/// In phase mode bins unreliable in either fingerprint are excluded; a pair
/// with fewer than two usable bins is undefined.
inline CorrelationMatrix library_correlation_matrix(const FingerprintLibrary &lib,
                                                    FeatureMode mode) {
    validate(lib);
    const std::size_t order = lib.entries.size();
    const std::size_t nb = lib.bins().count;
    CorrelationMatrix m;
    m.order = order;
    m.values.assign(order * order, 0.0);
    for (std::size_t i = 0; i < order; i++)
        m.labels.push_back(index_to_sequence(i, lib.length_l).to_string());

    std::vector<std::vector<char>> usable(order, std::vector<char>(nb, 1));
    if (mode == FeatureMode::Phase)
        for (std::size_t i = 0; i < order; i++)
            for (auto u : lib.entries[i].unreliable_bins)
                usable[i][u] = 0;

    parallel_for(order, 16, [&](std::size_t b, std::size_t e) {
        std::vector<double> x, y;
        for (std::size_t i = b; i < e; i++) {
            m.at(i, i) = 1.0;
            const auto &fi = lib.entries[i].features(mode);
            for (std::size_t j = i + 1; j < order; j++) {
                const auto &fj = lib.entries[j].features(mode);
                x.clear();
                y.clear();
                for (std::size_t k = 0; k < nb; k++)
                    if (usable[i][k] && usable[j][k]) {
                        x.push_back(fi[k]);
                        y.push_back(fj[k]);
                    }
                m.at(i, j) = x.size() >= 2 ? zero_delay_correlation(x, y)
                                           : std::numeric_limits<double>::quiet_NaN();
            }
        }
    });
    for (std::size_t i = 0; i < order; i++)
        for (std::size_t j = 0; j < i; j++)
            m.at(i, j) = m(j, i);
    return m;
}

/// Correlation matrix over band magnitudes of two equally sized groups of
/// spectra, ordered [a-block; b-block].
inline CorrelationMatrix fixed_pair_matrix(std::span<const Spectrum> a,
                                           std::span<const Spectrum> b, Band band,
                                           const std::string &a_prefix = "h",
                                           const std::string &b_prefix = "v") {
    if (a.size() != b.size())
        throw DomainError("fixed-pair groups differ in size");
    if (a.empty())
        throw DomainError("fixed-pair groups are empty");
    std::vector<std::vector<double>> feats;
    std::vector<std::string> labels;
    auto add = [&](std::span<const Spectrum> group, const std::string &prefix) {
        for (std::size_t i = 0; i < group.size(); i++) {
            feats.push_back(band_select(group[i], band.lo_hz, band.hi_hz).magnitudes());
            labels.push_back(prefix + std::to_string(i + 1));
        }
    };
    add(a, a_prefix);
    add(b, b_prefix);
    const std::size_t width = feats.front().size();
    for (const auto &f : feats)
        if (f.size() != width)
            throw DomainError("fixed-pair spectra differ in resolution");
    CorrelationMatrix m;
    m.order = feats.size();
    m.labels = std::move(labels);
    m.values.assign(m.order * m.order, 0.0);
    for (std::size_t i = 0; i < m.order; i++) {
        m.at(i, i) = 1.0;
        for (std::size_t j = i + 1; j < m.order; j++)
            m.at(i, j) = m.at(j, i) = zero_delay_correlation(feats[i], feats[j]);
    }
    return m;
}

struct BlockMeans {
    double within_a = 0;
    double within_b = 0;
    double cross = 0;
};

/// Mean off-diagonal value of the two diagonal blocks and of the cross
/// block of a [a; b] matrix whose first half is group a.
inline BlockMeans block_means(const CorrelationMatrix &m) {
    const std::size_t h = m.order / 2;
    BlockMeans r;
    double na = 0, nbb = 0, nc = 0;
    for (std::size_t i = 0; i < m.order; i++)
        for (std::size_t j = 0; j < m.order; j++) {
            if (i == j)
                continue;
            const double v = m(i, j);
            if (std::isnan(v))
                continue;
            if (i < h && j < h) {
                r.within_a += v;
                na++;
            } else if (i >= h && j >= h) {
                r.within_b += v;
                nbb++;
            } else {
                r.cross += v;
                nc++;
            }
        }
    r.within_a /= std::max(1.0, na);
    r.within_b /= std::max(1.0, nbb);
    r.cross /= std::max(1.0, nc);
    return r;
}

struct DiagonalStat {
    unsigned shared_prefix = 0;
    double mean_corr = 0;
    std::size_t count = 0;
};

/// For n in [0, L): mean of entries (i, j), i != j, with i = j mod 2^n and
/// i != j mod 2^(n+1), i.e. sequences sharing exactly their first n
/// symbols. Undefined entries are skipped.
inline std::vector<DiagonalStat> diagonal_profile(const CorrelationMatrix &m, unsigned L) {
    if (L < 1 || L > 16 || m.order != (std::size_t{1} << L))
        throw DomainError("matrix order must equal 2^L");
    std::vector<DiagonalStat> out(L);
    std::vector<double> sum(L, 0.0);
    for (std::size_t i = 0; i < m.order; i++)
        for (std::size_t j = 0; j < m.order; j++) {
            if (i == j)
                continue;
            const auto diff = static_cast<unsigned>(std::countr_zero(i ^ j));
            const double v = m(i, j);
            if (std::isnan(v))
                continue;
            sum[diff] += v;
            out[diff].count++;
        }
    for (unsigned n = 0; n < L; n++) {
        out[n].shared_prefix = n;
        out[n].mean_corr = out[n].count ? sum[n] / static_cast<double>(out[n].count)
                                        : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

} // namespace qkdsca
