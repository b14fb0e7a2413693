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

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace qkdsca {

/// Inverse error function. Rational seed followed by Newton refinement
/// against std::erf.
inline double erfinv(double p) {
    if (!(p > -1.0 && p < 1.0))
        throw DomainError("erfinv requires -1 < p < 1");
    if (p == 0.0)
        return 0.0;
    // Giles (2010) single-precision approximation as the starting point.
    double w = -std::log((1.0 - p) * (1.0 + p));
    double x;
    if (w < 5.0) {
        w -= 2.5;
        double q = 2.81022636e-08;
        q = 3.43273939e-07 + q * w;
        q = -3.5233877e-06 + q * w;
        q = -4.39150654e-06 + q * w;
        q = 0.00021858087 + q * w;
        q = -0.00125372503 + q * w;
        q = -0.00417768164 + q * w;
        q = 0.246640727 + q * w;
        q = 1.50140941 + q * w;
        x = q * p;
    } else {
        w = std::sqrt(w) - 3.0;
        double q = -0.000200214257;
        q = 0.000100950558 + q * w;
        q = 0.00134934322 + q * w;
        q = -0.00367342844 + q * w;
        q = 0.00573950773 + q * w;
        q = -0.0076224613 + q * w;
        q = 0.00943887047 + q * w;
        q = 1.00167406 + q * w;
        q = 2.83297682 + q * w;
        x = q * p;
    }
    const double k = 2.0 / std::sqrt(std::numbers::pi);
    for (int it = 0; it < 60; it++) {
        const double err = std::erf(x) - p;
        if (std::abs(err) < 1e-15)
            break;
        const double step = err / (k * std::exp(-x * x));
        x -= step;
        if (std::abs(step) <= 1e-17 * std::abs(x))
            break;
    }
    return x;
}

/// 10%-90% rise time of the erf transient: 4 erfinv(0.8) / sigma.
inline double rise_time(double sigma) {
    if (!(sigma > 0))
        throw DomainError("sigma must be positive");
    return 4.0 * erfinv(0.8) / sigma;
}

/// Bandwidth estimate 0.35 / t_r.
inline double system_bandwidth(double t_r) {
    if (!(t_r > 0))
        throw DomainError("rise time must be positive");
    return 0.35 / t_r;
}

/// Parameters of V(t) = dV/2 [1 + erf(sigma (t - t0) / 2)] + V_baseline.
/// Times are seconds from the first sample of the fitted window.
struct RiseFit {
    double delta_v = 0;
    double sigma = 0;
    double t0 = 0;
    double v_baseline = 0;
    double t_r = 0;
    double residual_rms = 0;
    double sigma_stderr = 0;
    double t_r_stderr = 0;
    int iterations = 0;
};

inline double rise_model(double t, double delta_v, double sigma, double t0,
                         double v_baseline) {
    return delta_v / 2 * (1 + std::erf(sigma * (t - t0) / 2)) + v_baseline;
}

inline double rise_model(double t, const RiseFit &f) {
    return rise_model(t, f.delta_v, f.sigma, f.t0, f.v_baseline);
}

/// Least-squares iteration failed to converge. Carries the last iterate.
class FitError : public Error {
  public:
    FitError(const std::string &what, RiseFit last)
        : Error(what), last_iterate(last) {}
    RiseFit last_iterate;
};

namespace detail {

inline bool solve4(std::array<std::array<double, 4>, 4> a, std::array<double, 4> b,
                   std::array<double, 4> &x) {
    for (int c = 0; c < 4; c++) {
        int piv = c;
        for (int r = c + 1; r < 4; r++)
            if (std::abs(a[r][c]) > std::abs(a[piv][c]))
                piv = r;
        if (a[piv][c] == 0)
            return false;
        std::swap(a[c], a[piv]);
        std::swap(b[c], b[piv]);
        for (int r = c + 1; r < 4; r++) {
            const double f = a[r][c] / a[c][c];
            for (int k = c; k < 4; k++)
                a[r][k] -= f * a[c][k];
            b[r] -= f * b[c];
        }
    }
    for (int r = 3; r >= 0; r--) {
        double s = b[r];
        for (int k = r + 1; k < 4; k++)
            s -= a[r][k] * x[k];
        x[r] = s / a[r][r];
    }
    return true;
}

inline bool invert4(const std::array<std::array<double, 4>, 4> &a,
                    std::array<std::array<double, 4>, 4> &inv) {
    for (int c = 0; c < 4; c++) {
        std::array<double, 4> e{}, col{};
        e[c] = 1;
        if (!solve4(a, e, col))
            return false;
        for (int r = 0; r < 4; r++)
            inv[r][c] = col[r];
    }
    return true;
}

} // namespace detail

/// Fits the erf transient to a window holding one rising edge. Damped
/// Gauss-Newton (Levenberg-Marquardt) with the analytic Jacobian, run in
/// coordinates scaled to the window span and the edge height.
inline RiseFit fit_rise(const PowerTrace &window,
                        std::optional<RiseFit> initial_guess = std::nullopt) {
    const auto v = window.samples();
    const std::size_t n = v.size();
    if (n < 8)
        throw ShapeError("rise window needs at least 8 samples");
    const double fs = window.config().sample_rate_hz;
    const double span = static_cast<double>(n) / fs;

    const std::size_t dec = std::max<std::size_t>(1, n / 10);
    auto mean_var = [&](std::size_t b, std::size_t e) {
        double m = 0;
        for (std::size_t i = b; i < e; i++)
            m += v[i];
        m /= static_cast<double>(e - b);
        double s = 0;
        for (std::size_t i = b; i < e; i++)
            s += (v[i] - m) * (v[i] - m);
        return std::pair{m, s / static_cast<double>(e - b)};
    };
    const auto [first_mean, first_var] = mean_var(0, dec);
    const auto [last_mean, last_var] = mean_var(n - dec, n);
    const double rise = last_mean - first_mean;
    const double noise = std::sqrt((first_var + last_var) / 2);
    if (!(rise > 0) || rise <= 5 * noise * std::sqrt(2.0 / static_cast<double>(dec)))
        throw ShapeError("no rising edge detected in the window");

    // Scaled coordinates: tau = t / span, y = (v - first_mean) / rise.
    std::vector<double> tau(n), y(n);
    for (std::size_t i = 0; i < n; i++) {
        tau[i] = static_cast<double>(i) / fs / span;
        y[i] = (v[i] - first_mean) / rise;
    }

    std::array<double, 4> q{}; // a, s, c, b
    if (initial_guess && initial_guess->sigma > 0) {
        q = {initial_guess->delta_v / rise, initial_guess->sigma * span,
             initial_guess->t0 / span, (initial_guess->v_baseline - first_mean) / rise};
    } else {
        // Crossings on a lightly smoothed copy so baseline noise does not
        // trigger them early.
        const std::size_t w = std::max<std::size_t>(1, n / 50);
        std::vector<double> sm(n);
        double acc = 0;
        for (std::size_t i = 0; i < n; i++) {
            acc += y[i];
            if (i >= w)
                acc -= y[i - w];
            sm[i] = acc / static_cast<double>(std::min(i + 1, w));
        }
        auto crossing = [&](double level) {
            for (std::size_t i = 0; i < n; i++)
                if (sm[i] >= level)
                    return tau[i] - 0.5 * static_cast<double>(w - 1) / fs / span;
            return tau[n - 1];
        };
        const double t25 = crossing(0.25), t50 = crossing(0.5), t75 = crossing(0.75);
        double s = t75 > t25 ? 4.0 * erfinv(0.5) / (t75 - t25) : 10.0;
        q = {1.0, s, t50, 0.0};
    }

    auto residuals = [&](const std::array<double, 4> &p, std::vector<double> *r) {
        double rss = 0;
        for (std::size_t i = 0; i < n; i++) {
            const double f = p[0] / 2 * (1 + std::erf(p[1] * (tau[i] - p[2]) / 2)) + p[3];
            const double d = y[i] - f;
            if (r)
                (*r)[i] = d;
            rss += d * d;
        }
        return rss;
    };

    auto normal_equations = [&](const std::array<double, 4> &p,
                                std::array<std::array<double, 4>, 4> &jtj,
                                std::array<double, 4> &jtr, const std::vector<double> &r) {
        jtj = {};
        jtr = {};
        const double k = 1.0 / std::sqrt(std::numbers::pi);
        for (std::size_t i = 0; i < n; i++) {
            const double u = p[1] * (tau[i] - p[2]) / 2;
            const double g = p[0] * k * std::exp(-u * u);
            const std::array<double, 4> j{(1 + std::erf(u)) / 2, g * (tau[i] - p[2]) / 2,
                                          -g * p[1] / 2, 1.0};
            for (int a = 0; a < 4; a++) {
                jtr[a] += j[a] * r[i];
                for (int b = 0; b < 4; b++)
                    jtj[a][b] += j[a] * j[b];
            }
        }
    };

    auto to_fit = [&](const std::array<double, 4> &p, double rss, int iters) {
        RiseFit f;
        f.delta_v = p[0] * rise;
        f.sigma = p[1] / span;
        f.t0 = p[2] * span;
        f.v_baseline = p[3] * rise + first_mean;
        f.t_r = f.sigma > 0 ? 4.0 * erfinv(0.8) / f.sigma : 0;
        f.residual_rms = std::sqrt(rss / static_cast<double>(n)) * rise;
        f.iterations = iters;
        return f;
    };

    std::vector<double> r(n);
    double rss = residuals(q, &r);
    double lambda = 1e-3;
    std::array<std::array<double, 4>, 4> jtj;
    std::array<double, 4> jtr;
    constexpr int kMaxIter = 200;
    bool converged = false;
    int iter = 0;
    for (; iter < kMaxIter && !converged; iter++) {
        normal_equations(q, jtj, jtr, r);
        for (;;) {
            auto damped = jtj;
            for (int a = 0; a < 4; a++)
                damped[a][a] += lambda * std::max(jtj[a][a], 1e-300);
            std::array<double, 4> step{};
            if (!detail::solve4(damped, jtr, step)) {
                lambda *= 10;
                if (lambda > 1e20)
                    break;
                continue;
            }
            std::array<double, 4> trial;
            for (int a = 0; a < 4; a++)
                trial[a] = q[a] + step[a];
            if (trial[1] <= 0) {
                lambda *= 10;
                if (lambda > 1e20)
                    break;
                continue;
            }
            const double trial_rss = residuals(trial, nullptr);
            if (trial_rss <= rss) {
                double rel = 0;
                for (int a = 0; a < 4; a++)
                    rel = std::max(rel, std::abs(step[a]) / (std::abs(q[a]) + 1.0));
                q = trial;
                rss = residuals(q, &r);
                lambda = std::max(lambda / 10, 1e-12);
                if (rel < 1e-9 || rss == 0)
                    converged = true;
                break;
            }
            lambda *= 10;
            if (lambda > 1e20) {
                // No descent direction left at working precision.
                converged = true;
                break;
            }
        }
        if (lambda > 1e20 && !converged)
            break;
    }
    RiseFit fit = to_fit(q, rss, iter);
    if (!converged)
        throw FitError("rise fit did not converge (residual rms " +
                           std::to_string(fit.residual_rms) + " V)",
                       fit);

    normal_equations(q, jtj, jtr, r);
    std::array<std::array<double, 4>, 4> cov;
    if (n > 4 && detail::invert4(jtj, cov)) {
        const double s2 = rss / static_cast<double>(n - 4);
        const double se_s = std::sqrt(std::max(0.0, cov[1][1] * s2));
        fit.sigma_stderr = se_s / span;
        fit.t_r_stderr = fit.t_r * fit.sigma_stderr / fit.sigma;
    }
    return fit;
}

} // namespace qkdsca
