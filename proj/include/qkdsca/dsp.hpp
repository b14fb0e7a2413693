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

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

namespace qkdsca {

using Complex = std::complex<double>;

/// Phase angles in (-pi, pi], one per spectral bin.
using PhaseVector = std::vector<double>;

/// Map an angle to (-pi, pi].
inline double wrap_phase(double a) {
    constexpr double pi = std::numbers::pi;
    if (a > -pi && a <= pi)
        return a;
    double r = std::remainder(a, 2 * pi);
    if (r <= -pi)
        r += 2 * pi;
    return r;
}

/// One-sided spectrum: bins[i] sits at origin_hz + i * bin_spacing_hz.
struct Spectrum {
    std::vector<Complex> bins;
    double bin_spacing_hz = 0;
    double origin_hz = 0;
    double sample_rate_hz = 0;

    std::size_t size() const { return bins.size(); }
    bool empty() const { return bins.empty(); }
    double frequency(std::size_t i) const {
        return origin_hz + static_cast<double>(i) * bin_spacing_hz;
    }
    double magnitude(std::size_t i) const { return std::abs(bins[i]); }
    double phase(std::size_t i) const { return wrap_phase(std::arg(bins[i])); }

    std::vector<double> magnitudes() const {
        std::vector<double> m(bins.size());
        for (std::size_t i = 0; i < bins.size(); i++)
            m[i] = magnitude(i);
        return m;
    }
    PhaseVector phases() const {
        PhaseVector p(bins.size());
        for (std::size_t i = 0; i < bins.size(); i++)
            p[i] = phase(i);
        return p;
    }
};

namespace detail {

/// exp(-2 pi i j / n) for j in [0, n).
inline std::vector<Complex> twiddle_table(std::size_t n) {
    std::vector<Complex> w(n);
    for (std::size_t j = 0; j < n; j++) {
        const double a = -2.0 * std::numbers::pi * static_cast<double>(j) /
                         static_cast<double>(n);
        w[j] = Complex(std::cos(a), std::sin(a));
    }
    return w;
}

} // namespace detail

/// Real-input forward transform of fixed length backed by FFTW. Planning is
/// serialized; execution is safe from any number of threads.
class FftPlan {
  public:
    explicit FftPlan(std::size_t n) : n_(n) {
        if (n == 0)
            throw DomainError("transform length must be at least 1");
        Buffers b(n);
        std::lock_guard<std::mutex> lock(planner_mutex());
        plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), b.in, b.out, FFTW_ESTIMATE);
        if (!plan_)
            throw DomainError("FFTW could not plan a transform of this length");
    }
    FftPlan(const FftPlan &) = delete;
    FftPlan &operator=(const FftPlan &) = delete;
    ~FftPlan() {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(plan_);
    }

    std::size_t size() const { return n_; }

    /// Bins 0..n/2 of the transform of `in`.
    std::vector<Complex> forward(std::span<const double> in) const {
        if (in.size() != n_)
            throw DomainError("input length does not match the plan");
        Buffers b(n_);
        std::copy(in.begin(), in.end(), b.in);
        fftw_execute_dft_r2c(plan_, b.in, b.out);
        std::vector<Complex> out(n_ / 2 + 1);
        for (std::size_t k = 0; k < out.size(); k++)
            out[k] = Complex(b.out[k][0], b.out[k][1]);
        return out;
    }

  private:
    struct Buffers {
        explicit Buffers(std::size_t n)
            : in(fftw_alloc_real(n)), out(fftw_alloc_complex(n / 2 + 1)) {
            if (!in || !out) {
                fftw_free(in);
                fftw_free(out);
                throw std::bad_alloc();
            }
        }
        ~Buffers() {
            fftw_free(in);
            fftw_free(out);
        }
        Buffers(const Buffers &) = delete;
        Buffers &operator=(const Buffers &) = delete;
        double *in;
        fftw_complex *out;
    };

    static std::mutex &planner_mutex() {
        static std::mutex m;
        return m;
    }

    std::size_t n_;
    fftw_plan plan_ = nullptr;
};

/// Forward DFT of a real sequence, returned one-sided (bins 0..N/2) with
/// bin spacing sample_rate / N.
inline Spectrum dft(std::span<const double> samples, double sample_rate_hz) {
    if (samples.empty())
        throw DomainError("cannot transform an empty segment");
    const FftPlan plan(samples.size());
    Spectrum s;
    s.bins = plan.forward(samples);
    s.bin_spacing_hz = sample_rate_hz / static_cast<double>(samples.size());
    s.origin_hz = 0;
    s.sample_rate_hz = sample_rate_hz;
    return s;
}

inline Spectrum dft(const PowerTrace &segment) {
    return dft(segment.samples(), segment.config().sample_rate_hz);
}

/// Contiguous range of one-sided bin indices.
struct BinRange {
    std::size_t first = 0;
    std::size_t count = 0;
};

/// Bins k of a length-n transform at sample_rate with k * fs / n in
/// [f_lo, f_hi]. Bounds are validated against Nyquist.
inline BinRange band_bins(std::size_t n, double sample_rate_hz, double f_lo,
                          double f_hi) {
    const double nyquist = sample_rate_hz / 2;
    if (!(f_lo >= 0) || !(f_lo < f_hi))
        throw DomainError("band bounds must satisfy 0 <= f_lo < f_hi");
    if (f_hi > nyquist * (1 + 1e-12))
        throw DomainError("band upper edge exceeds Nyquist");
    const double spacing = sample_rate_hz / static_cast<double>(n);
    const std::size_t last_bin = n / 2;
    const double lo = std::ceil(f_lo / spacing - 1e-9);
    const double hi = std::floor(f_hi / spacing + 1e-9);
    BinRange r;
    if (hi < lo || lo > static_cast<double>(last_bin))
        return r;
    r.first = static_cast<std::size_t>(lo);
    const std::size_t end =
        std::min(last_bin, static_cast<std::size_t>(hi)) + 1;
    r.count = end > r.first ? end - r.first : 0;
    return r;
}

/// Bins whose center frequency lies in [f_lo, f_hi]. An empty result is
/// permitted; check Spectrum::empty().
inline Spectrum band_select(const Spectrum &spec, double f_lo, double f_hi) {
    const double nyquist = spec.sample_rate_hz / 2;
    if (!(f_lo >= 0) || !(f_lo < f_hi))
        throw DomainError("band bounds must satisfy 0 <= f_lo < f_hi");
    if (f_hi > nyquist * (1 + 1e-12))
        throw DomainError("band upper edge exceeds Nyquist");
    Spectrum out;
    out.bin_spacing_hz = spec.bin_spacing_hz;
    out.sample_rate_hz = spec.sample_rate_hz;
    out.origin_hz = f_lo;
    for (std::size_t i = 0; i < spec.size(); i++) {
        const double f = spec.frequency(i);
        const double tol = 1e-9 * spec.bin_spacing_hz;
        if (f >= f_lo - tol && f <= f_hi + tol) {
            if (out.bins.empty())
                out.origin_hz = f;
            out.bins.push_back(spec.bins[i]);
        }
    }
    return out;
}

/// Pearson product-moment correlation at zero lag. Returns 0 when either
/// input is constant.
inline double zero_delay_correlation(std::span<const double> x,
                                     std::span<const double> y) {
    if (x.size() != y.size())
        throw DomainError("correlation inputs differ in length");
    if (x.size() < 2)
        throw DomainError("correlation needs at least two points");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); i++) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); i++) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0)
        return 0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace detail {

/// Second-order section, transposed direct form II.
struct Biquad {
    double b0, b1, b2, a1, a2;

    void run(std::vector<double> &x) const {
        double s1 = 0, s2 = 0;
        for (double &v : x) {
            const double in = v;
            const double out = b0 * in + s1;
            s1 = b1 * in - a1 * out + s2;
            s2 = b2 * in - a2 * out;
            v = out;
        }
    }
};

/// 4th-order Butterworth low-pass as two bilinear-transformed sections.
inline std::vector<Biquad> butterworth4(double cutoff_hz, double sample_rate_hz) {
    const double k = std::tan(std::numbers::pi * cutoff_hz / sample_rate_hz);
    std::vector<Biquad> sections;
    for (double theta : {std::numbers::pi / 8, 3 * std::numbers::pi / 8}) {
        const double inv_q = 2 * std::cos(theta);
        const double d = 1 + k * inv_q + k * k;
        Biquad s;
        s.a1 = 2 * (k * k - 1) / d;
        s.a2 = (1 - k * inv_q + k * k) / d;
        s.b0 = k * k / d;
        s.b1 = 2 * s.b0;
        s.b2 = s.b0;
        sections.push_back(s);
    }
    return sections;
}

// Run the cascade on data whose first value is subtracted beforehand, so
// a zero initial state is already the steady state for the leading level.
inline void cascade_from_rest(const std::vector<Biquad> &sections,
                              std::vector<double> &x) {
    const double lead = x.front();
    for (double &v : x)
        v -= lead;
    for (const auto &s : sections)
        s.run(x);
    for (double &v : x)
        v += lead;
}

} // namespace detail

/// Zero-phase low-pass: a 4th-order Butterworth applied forward then
/// backward over an odd-reflected extension of the record.
inline PowerTrace low_pass(const PowerTrace &trace, double cutoff_hz) {
    const double fs = trace.config().sample_rate_hz;
    if (!(cutoff_hz > 0) || !(cutoff_hz < fs / 2))
        throw DomainError("low-pass cutoff must lie in (0, Nyquist)");
    const auto x = trace.samples();
    const std::size_t n = x.size();
    if (n < 2)
        return trace;
    const double span = std::ceil(4.0 * fs / cutoff_hz);
    const std::size_t pad = static_cast<std::size_t>(
        std::min(static_cast<double>(n - 1), span));
    // Reflect about short edge means rather than the end samples, so noise
    // on the very first and last sample does not pin the output.
    const auto m = static_cast<std::size_t>(std::clamp(
        std::round(0.1 * fs / cutoff_hz), 1.0, static_cast<double>(n)));
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < m; i++) {
        head += x[i];
        tail += x[n - 1 - i];
    }
    head /= static_cast<double>(m);
    tail /= static_cast<double>(m);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; i--)
        ext.push_back(2 * head - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; i++)
        ext.push_back(2 * tail - x[n - 1 - i]);

    const auto sections = detail::butterworth4(cutoff_hz, fs);
    detail::cascade_from_rest(sections, ext);
    std::reverse(ext.begin(), ext.end());
    detail::cascade_from_rest(sections, ext);
    std::reverse(ext.begin(), ext.end());
    return trace.with_samples(std::vector<double>(
        ext.begin() + static_cast<std::ptrdiff_t>(pad),
        ext.begin() + static_cast<std::ptrdiff_t>(pad + n)));
}

/// Centered moving mean over n_samp samples; windows are truncated at the
/// record edges.
inline PowerTrace running_average(const PowerTrace &trace, std::size_t n_samp) {
    const auto x = trace.samples();
    const std::size_t n = x.size();
    if (n_samp < 1 || n_samp > n)
        throw DomainError("running-average window must lie in [1, length]");
    if (n_samp == 1)
        return trace;
    std::vector<long double> prefix(n + 1, 0.0L);
    for (std::size_t i = 0; i < n; i++)
        prefix[i + 1] = prefix[i] + x[i];
    const std::size_t before = (n_samp - 1) / 2;
    const std::size_t after = n_samp - 1 - before;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; i++) {
        const std::size_t lo = i >= before ? i - before : 0;
        const std::size_t hi = std::min(n, i + after + 1);
        out[i] = static_cast<double>((prefix[hi] - prefix[lo]) /
                                     static_cast<long double>(hi - lo));
    }
    return trace.with_samples(std::move(out));
}

/// Running-average width tied to the emulated emission rate:
/// round(0.1 * f_samp / f_delay), at least 1.
inline std::size_t n_samp_for(double f_samp, double f_delay) {
    if (!(f_delay > 0) || !(f_samp > f_delay))
        throw DomainError("n_samp_for requires f_samp > f_delay > 0");
    const double n = std::round(0.1 * f_samp / f_delay);
    return n < 1 ? 1 : static_cast<std::size_t>(n);
}

/// Zero mean, unit (population) standard deviation.
inline PowerTrace normalize(const PowerTrace &trace) {
    const auto x = trace.samples();
    const double n = static_cast<double>(x.size());
    double mean = 0;
    for (double v : x)
        mean += v;
    mean /= n;
    double var = 0;
    for (double v : x)
        var += (v - mean) * (v - mean);
    var /= n;
    if (!(var > 0))
        throw DegenerateInputError("cannot normalize a constant trace");
    const double inv = 1.0 / std::sqrt(var);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); i++)
        out[i] = (x[i] - mean) * inv;
    return trace.with_samples(std::move(out));
}

/// Mean phasor magnitude below which a bin's averaged phase is treated as
/// noise.
inline constexpr double kUnreliableResultant = 0.05;

struct CircularMean {
    PhaseVector mean;
    std::vector<double> resultant;
    std::vector<std::size_t> unreliable;
};

/// Running per-bin phasor sums. Shared by circular_mean and the fingerprint
/// builder so both reduce phases the same way.
class CircularAccumulator {
  public:
    explicit CircularAccumulator(std::size_t bins) : cos_(bins, 0), sin_(bins, 0) {}

    std::size_t size() const { return cos_.size(); }
    std::size_t count() const { return count_; }

    void add(std::span<const double> phases) {
        if (phases.size() != cos_.size())
            throw DomainError("phase vector length mismatch");
        for (std::size_t i = 0; i < phases.size(); i++) {
            cos_[i] += std::cos(phases[i]);
            sin_[i] += std::sin(phases[i]);
        }
        count_++;
    }

    /// Adds unit phasors given directly as complex bins (angle only).
    void add_bins(std::span<const Complex> bins) {
        if (bins.size() != cos_.size())
            throw DomainError("bin vector length mismatch");
        for (std::size_t i = 0; i < bins.size(); i++) {
            const double a = wrap_phase(std::arg(bins[i]));
            cos_[i] += std::cos(a);
            sin_[i] += std::sin(a);
        }
        count_++;
    }

    CircularMean result(double threshold = kUnreliableResultant) const {
        if (count_ == 0)
            throw DomainError("circular mean of zero vectors");
        CircularMean r;
        r.mean.resize(cos_.size());
        r.resultant.resize(cos_.size());
        const double n = static_cast<double>(count_);
        for (std::size_t i = 0; i < cos_.size(); i++) {
            const double c = cos_[i] / n, s = sin_[i] / n;
            r.resultant[i] = std::hypot(c, s);
            r.mean[i] = wrap_phase(std::atan2(s, c));
            if (r.resultant[i] < threshold)
                r.unreliable.push_back(i);
        }
        return r;
    }

  private:
    std::vector<double> cos_;
    std::vector<double> sin_;
    std::size_t count_ = 0;
};

/// Per-bin angle of the mean unit phasor across occurrences.
inline CircularMean circular_mean(std::span<const PhaseVector> phases) {
    if (phases.empty())
        throw DomainError("circular mean of zero vectors");
    CircularAccumulator acc(phases.front().size());
    for (const auto &p : phases)
        acc.add(p);
    return acc.result();
}

/// DFT restricted to a bin range, evaluated directly against a precomputed
/// twiddle matrix. Used for short snippets where only the analysis band is
/// needed.
class BandDft {
  public:
    BandDft(std::size_t n, BinRange range) : n_(n), range_(range) {
        if (n == 0)
            throw DomainError("transform length must be at least 1");
        const auto w = detail::twiddle_table(n);
        matrix_.resize(range.count * n);
        for (std::size_t k = 0; k < range.count; k++)
            for (std::size_t j = 0; j < n; j++)
                matrix_[k * n + j] = w[((range.first + k) * j) % n];
    }

    std::size_t length() const { return n_; }
    const BinRange &range() const { return range_; }

    void transform(std::span<const double> x, std::span<Complex> out) const {
        if (x.size() != n_ || out.size() != range_.count)
            throw DomainError("band transform size mismatch");
        for (std::size_t k = 0; k < range_.count; k++) {
            const Complex *row = &matrix_[k * n_];
            double re = 0, im = 0;
            for (std::size_t j = 0; j < n_; j++) {
                re += x[j] * row[j].real();
                im += x[j] * row[j].imag();
            }
            out[k] = Complex(re, im);
        }
    }

  private:
    std::size_t n_;
    BinRange range_;
    std::vector<Complex> matrix_;
};

/// Band spectra of windows made of `blocks` consecutive symbol blocks of
/// `block_len` samples. Each block is transformed once; a window is the
/// twiddled sum of its blocks, which is exactly its length
/// blocks * block_len DFT restricted to the band.
class BlockBandDft {
  public:
    BlockBandDft(std::size_t block_len, std::size_t blocks, BinRange range)
        : block_len_(block_len), blocks_(blocks), range_(range) {
        const std::size_t n = block_len * blocks;
        const auto w = detail::twiddle_table(n);
        block_matrix_.resize(range.count * block_len);
        shift_.resize(range.count * blocks);
        for (std::size_t k = 0; k < range.count; k++) {
            const std::size_t bin = range.first + k;
            for (std::size_t j = 0; j < block_len; j++)
                block_matrix_[k * block_len + j] = w[(bin * j) % n];
            for (std::size_t q = 0; q < blocks; q++)
                shift_[k * blocks + q] = w[(bin * q * block_len) % n];
        }
    }

    std::size_t bins() const { return range_.count; }
    std::size_t blocks() const { return blocks_; }

    /// Transforms of consecutive blocks starting at x[0]; out receives
    /// n_blocks * bins() values, block-major.
    void block_spectra(std::span<const double> x, std::size_t n_blocks,
                       std::span<Complex> out) const {
        for (std::size_t b = 0; b < n_blocks; b++) {
            const double *src = x.data() + b * block_len_;
            for (std::size_t k = 0; k < range_.count; k++) {
                const Complex *row = &block_matrix_[k * block_len_];
                double re = 0, im = 0;
                for (std::size_t j = 0; j < block_len_; j++) {
                    re += src[j] * row[j].real();
                    im += src[j] * row[j].imag();
                }
                out[b * range_.count + k] = Complex(re, im);
            }
        }
    }

    /// Window spectrum from `blocks()` consecutive block spectra.
    void window(std::span<const Complex> block_spectra, std::span<Complex> out) const {
        for (std::size_t k = 0; k < range_.count; k++) {
            Complex acc(0, 0);
            for (std::size_t q = 0; q < blocks_; q++)
                acc += block_spectra[q * range_.count + k] * shift_[k * blocks_ + q];
            out[k] = acc;
        }
    }

  private:
    std::size_t block_len_;
    std::size_t blocks_;
    BinRange range_;
    std::vector<Complex> block_matrix_;
    std::vector<Complex> shift_;
};

} // namespace qkdsca
