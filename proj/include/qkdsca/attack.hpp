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

#include "qkdsca/average_power.hpp"
#include "qkdsca/core.hpp"
#include "qkdsca/dsp.hpp"
#include "qkdsca/error.hpp"
#include "qkdsca/fingerprint.hpp"
#include "qkdsca/parallel.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

namespace qkdsca {

/// The two attacker choices: template length L and the number of leading
/// symbols committed per match.
struct AttackStrategy {
    unsigned length_l = 8;
    unsigned delta_n = 1;
    FeatureMode mode = FeatureMode::Phase;
    Band band;
};

inline void validate(const AttackStrategy &s, const FingerprintLibrary &lib) {
    if (s.length_l < 1)
        throw DomainError("L must be at least 1");
    if (s.delta_n < 1 || s.delta_n > s.length_l)
        throw DomainError("delta_n must satisfy 0 < delta_n <= L");
    if (s.length_l != lib.length_l)
        throw DomainError("strategy L does not match the library");
    if (!(s.band == lib.band))
        throw DomainError("strategy band does not match the library");
    const double nyquist = lib.acquisition.sample_rate_hz / 2;
    if (s.band.hi_hz > nyquist * (1 + 1e-12))
        throw DomainError("strategy band exceeds Nyquist");
}

struct Match {
    std::uint32_t best_index = 0;
    double correlation = 0;
};

/// Reference matcher: transforms the snippet, selects the library band and
/// correlates against every fingerprint. In phase mode bins the template
/// marks unreliable are left out. Ties go to the lowest index.
inline Match match_snippet(const PowerTrace &snippet, const FingerprintLibrary &lib,
                           FeatureMode mode) {
    if (snippet.size() != lib.snippet_samples())
        throw DomainError("snippet holds " + std::to_string(snippet.size()) +
                          " samples, library expects " +
                          std::to_string(lib.snippet_samples()));
    const Spectrum band = band_select(dft(snippet), lib.band.lo_hz, lib.band.hi_hz);
    const auto x = features_of(band.bins, mode);
    Match best{0, -2.0};
    std::vector<double> a, b;
    for (const auto &f : lib.entries) {
        const auto &t = f.features(mode);
        if (t.size() != x.size())
            throw DomainError("snippet band does not align with the library");
        std::vector<char> use(x.size(), 1);
        if (mode == FeatureMode::Phase)
            for (auto u : f.unreliable_bins)
                use[u] = 0;
        a.clear();
        b.clear();
        for (std::size_t k = 0; k < x.size(); k++)
            if (use[k]) {
                a.push_back(x[k]);
                b.push_back(t[k]);
            }
        const double c = a.size() >= 2 ? zero_delay_correlation(a, b) : 0.0;
        if (c > best.correlation)
            best = {f.sequence_index, c};
    }
    return best;
}

/// Library templates pre-centered and pre-scaled on their usable bins. A
/// batch of snippets is scored against every template with three matrix
/// products: features x templates, features x masks and squared features x
/// masks, the last two giving each snippet's moments over each template's
/// mask. Equivalent to match_snippet up to rounding.
class TemplateMatcher {
  public:
    TemplateMatcher(const FingerprintLibrary &lib, FeatureMode mode) : mode_(mode) {
        validate(lib);
        bins_ = lib.bins().count;
        classes_ = lib.entries.size();
        scaled_.assign(classes_ * bins_, 0.0);
        mask_.assign(classes_ * bins_, 0.0);
        inv_count_.assign(classes_, 0.0);
        for (std::size_t i = 0; i < classes_; i++) {
            const auto &f = lib.entries[i];
            std::vector<char> use(bins_, 1);
            if (mode == FeatureMode::Phase)
                for (auto u : f.unreliable_bins)
                    use[u] = 0;
            const auto &t = f.features(mode);
            double mean = 0;
            std::size_t n = 0;
            for (std::size_t k = 0; k < bins_; k++)
                if (use[k]) {
                    mean += t[k];
                    n++;
                }
            if (n < 2)
                continue; // never matches (correlation 0)
            mean /= static_cast<double>(n);
            double ss = 0;
            for (std::size_t k = 0; k < bins_; k++)
                if (use[k])
                    ss += (t[k] - mean) * (t[k] - mean);
            if (!(ss > 0))
                continue;
            const double inv = 1.0 / std::sqrt(ss);
            for (std::size_t k = 0; k < bins_; k++)
                if (use[k]) {
                    scaled_[i * bins_ + k] = (t[k] - mean) * inv;
                    mask_[i * bins_ + k] = 1.0;
                }
            inv_count_[i] = 1.0 / static_cast<double>(n);
        }
    }

    FeatureMode mode() const { return mode_; }
    std::size_t bins() const { return bins_; }
    std::size_t classes() const { return classes_; }

    /// Best template for each of `rows` feature vectors stored row-major in
    /// `x` (rows x bins). Ties go to the lowest sequence index.
    void best_batch(std::span<const double> x, std::size_t rows, std::span<Match> out) const {
        if (x.size() != rows * bins_ || out.size() < rows)
            throw DomainError("feature batch does not match the library band");
        if (rows == 0)
            return;
        static std::once_flag single;
        std::call_once(single, [] { openblas_set_num_threads(1); });
        std::vector<double> x2(x.size());
        for (std::size_t k = 0; k < x.size(); k++)
            x2[k] = x[k] * x[k];
        std::vector<double> num(rows * classes_), sum(rows * classes_), sq(rows * classes_);
        const auto m = static_cast<blasint>(rows);
        const auto n = static_cast<blasint>(classes_);
        const auto k = static_cast<blasint>(bins_);
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, 1.0, x.data(), k,
                    scaled_.data(), k, 0.0, num.data(), n);
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, 1.0, x.data(), k,
                    mask_.data(), k, 0.0, sum.data(), n);
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, 1.0, x2.data(), k,
                    mask_.data(), k, 0.0, sq.data(), n);
        for (std::size_t r = 0; r < rows; r++) {
            Match best{0, -2.0};
            for (std::size_t i = 0; i < classes_; i++) {
                const std::size_t at = r * classes_ + i;
                double c = 0;
                if (inv_count_[i] > 0) {
                    const double dev = sq[at] - sum[at] * sum[at] * inv_count_[i];
                    if (dev > 1e-12 * sq[at] && dev > 0)
                        c = std::clamp(num[at] / std::sqrt(dev), -1.0, 1.0);
                }
                if (c > best.correlation)
                    best = {static_cast<std::uint32_t>(i), c};
            }
            out[r] = best;
        }
    }

    Match best(std::span<const double> x) const {
        Match m;
        best_batch(x, 1, std::span<Match>(&m, 1));
        return m;
    }

  private:
    FeatureMode mode_;
    std::size_t bins_ = 0;
    std::size_t classes_ = 0;
    std::vector<double> scaled_;
    std::vector<double> mask_;
    std::vector<double> inv_count_;
};

struct PredictionReport {
    SymbolSequence predicted;
    std::optional<SymbolSequence> truth;
    std::optional<double> pa_percent;
    double threshold_percent = 0;
    std::optional<bool> success;
    unsigned length_l = 0;
    unsigned delta_n = 0;
    std::vector<std::uint32_t> per_step_best_index;
    std::vector<double> per_step_correlation;
};

/// Slides a pointer over the trace: match the L-symbol window at the
/// pointer, commit the first delta_n symbols of the best template, advance
/// by delta_n. Stops when fewer than L symbols remain; those tail symbols
/// stay unpredicted.
inline PredictionReport run_attack(const PowerTrace &trace, const FingerprintLibrary &lib,
                                   const AttackStrategy &strategy) {
    validate(strategy, lib);
    const AcquisitionConfig &cfg = trace.config();
    if (cfg.sample_rate_hz != lib.acquisition.sample_rate_hz ||
        cfg.repetition_rate_hz != lib.acquisition.repetition_rate_hz)
        throw DomainError("trace acquisition does not match the library");
    const std::size_t spp = samples_per_symbol(cfg);
    const unsigned L = strategy.length_l;
    const unsigned dn = strategy.delta_n;
    const std::size_t n_sym = symbol_count(trace);
    if (n_sym < L)
        throw DomainError("trace holds " + std::to_string(n_sym) +
                          " symbols, fewer than L = " + std::to_string(L));
    const std::size_t steps = (n_sym - L) / dn + 1;

    const TemplateMatcher matcher(lib, strategy.mode);
    const BinRange range = lib.bins();
    const BlockBandDft transform(spp, L, range);
    const std::size_t nb = range.count;
    const auto x = trace.samples().subspan(cfg.trigger_offset_samples);

    std::vector<std::uint32_t> best(steps);
    std::vector<double> corr(steps);
    constexpr std::size_t kChunk = 8192;
    std::vector<Complex> blocks;
    for (std::size_t s0 = 0; s0 < steps; s0 += kChunk) {
        const std::size_t cnt = std::min(kChunk, steps - s0);
        const std::size_t first_sym = s0 * dn;
        const std::size_t n_blocks = (cnt - 1) * dn + L;
        blocks.resize(n_blocks * nb);
        parallel_for(n_blocks, 512, [&](std::size_t b, std::size_t e) {
            transform.block_spectra(x.subspan((first_sym + b) * spp, (e - b) * spp), e - b,
                                    std::span<Complex>(blocks).subspan(b * nb, (e - b) * nb));
        });
        parallel_for(cnt, 512, [&](std::size_t b, std::size_t e) {
            std::vector<Complex> win(nb);
            std::vector<double> feats((e - b) * nb);
            std::vector<Match> found(e - b);
            for (std::size_t s = b; s < e; s++) {
                transform.window(std::span<const Complex>(blocks).subspan(s * dn * nb, L * nb),
                                 win);
                for (std::size_t k = 0; k < nb; k++)
                    feats[(s - b) * nb + k] = strategy.mode == FeatureMode::Phase
                                                  ? wrap_phase(std::arg(win[k]))
                                                  : std::abs(win[k]);
            }
            matcher.best_batch(feats, e - b, found);
            for (std::size_t s = b; s < e; s++) {
                best[s0 + s] = found[s - b].best_index;
                corr[s0 + s] = found[s - b].correlation;
            }
        });
    }

    std::vector<Symbol> predicted;
    predicted.reserve(steps * dn);
    for (std::size_t s = 0; s < steps; s++)
        for (unsigned k = 0; k < dn; k++)
            predicted.push_back(((best[s] >> k) & 1) ? Symbol::V : Symbol::H);

    const double threshold = success_threshold(predicted.size());
    return PredictionReport{SymbolSequence(std::move(predicted)), std::nullopt, std::nullopt,
                            threshold, std::nullopt, L, dn, std::move(best), std::move(corr)};
}

/// Scores the predicted positions against the truth.
inline PredictionReport evaluate(PredictionReport report, const SymbolSequence &truth) {
    const std::size_t n = report.predicted.size();
    if (truth.size() < n)
        throw DomainError("truth covers " + std::to_string(truth.size()) +
                          " symbols, prediction has " + std::to_string(n));
    const SymbolSequence covered = truth.size() == n ? truth : truth.subsequence(0, n);
    report.pa_percent = prediction_accuracy(report.predicted, covered);
    report.threshold_percent = success_threshold(n);
    report.success = *report.pa_percent > report.threshold_percent;
    report.truth = truth;
    return report;
}

} // namespace qkdsca
