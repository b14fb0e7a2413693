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
#include "qkdsca/core.hpp"
#include "qkdsca/error.hpp"
#include "qkdsca/fingerprint.hpp"
#include "qkdsca/synth.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qkdsca {

/// One `[name]` block of a key = value file. Keys before the first header
/// belong to the unnamed section.
struct ConfigSection {
    struct Entry {
        std::string value;
        int line = 0;
        mutable bool used = false;
    };
    std::string name;
    int line = 0;
    std::map<std::string, Entry> entries;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string at_line(int line, const std::string &msg) {
    return "line " + std::to_string(line) + ": " + msg;
}

} // namespace detail

/// Parsed key = value text. `#` and `;` start comments; a section may appear
/// more than once, a key at most once per section.
class ConfigDocument {
  public:
    static ConfigDocument parse(std::string_view text) {
        ConfigDocument doc;
        doc.sections_.push_back({"", 0, {}});
        int line_no = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto nl = text.find('\n', pos);
            std::string_view line =
                text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
            pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
            line_no++;
            const auto hash = line.find_first_of("#;");
            if (hash != std::string_view::npos)
                line = line.substr(0, hash);
            line = detail::trim(line);
            if (line.empty())
                continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(detail::at_line(line_no, "unterminated section header"));
                const auto name = detail::trim(line.substr(1, line.size() - 2));
                if (name.empty())
                    throw ConfigError(detail::at_line(line_no, "empty section name"));
                doc.sections_.push_back({std::string(name), line_no, {}});
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string_view::npos)
                throw ConfigError(detail::at_line(line_no, "expected key = value"));
            const std::string key(detail::trim(line.substr(0, eq)));
            const std::string value(detail::trim(line.substr(eq + 1)));
            if (key.empty())
                throw ConfigError(detail::at_line(line_no, "missing key"));
            auto &sec = doc.sections_.back();
            if (!sec.entries.emplace(key, ConfigSection::Entry{value, line_no}).second)
                throw ConfigError(detail::at_line(line_no, "duplicate key '" + key + "'"));
        }
        return doc;
    }

    const ConfigSection &root() const { return sections_.front(); }

    std::vector<const ConfigSection *> all(std::string_view name) const {
        std::vector<const ConfigSection *> out;
        for (const auto &s : sections_)
            if (s.name == name && !(name.empty() && &s != &sections_.front()))
                out.push_back(&s);
        return out;
    }

    /// The single section of that name, or null. Repeats are an error.
    const ConfigSection *unique(std::string_view name) const {
        const auto v = all(name);
        if (v.size() > 1)
            throw ConfigError(detail::at_line(v[1]->line,
                                              "section [" + std::string(name) + "] repeated"));
        return v.empty() ? nullptr : v.front();
    }

    /// Rejects sections outside `known` and keys never read by a getter.
    void check_all_used(std::initializer_list<std::string_view> known) const {
        for (const auto &s : sections_) {
            bool ok = s.name.empty();
            for (auto k : known)
                ok = ok || s.name == k;
            if (!ok)
                throw ConfigError(detail::at_line(s.line, "unknown section [" + s.name + "]"));
            for (const auto &[k, e] : s.entries)
                if (!e.used)
                    throw ConfigError(detail::at_line(
                        e.line, "unknown key '" + k + "'" +
                                    (s.name.empty() ? "" : " in [" + s.name + "]")));
        }
    }

  private:
    std::vector<ConfigSection> sections_;
};

namespace detail {

inline const ConfigSection::Entry *lookup(const ConfigSection *s, const std::string &key) {
    if (!s)
        return nullptr;
    const auto it = s->entries.find(key);
    if (it == s->entries.end())
        return nullptr;
    it->second.used = true;
    return &it->second;
}

inline double to_double(const ConfigSection::Entry &e, const std::string &key) {
    double v = 0;
    const char *b = e.value.data(), *end = b + e.value.size();
    auto [p, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || p != end || !std::isfinite(v))
        throw ConfigError(at_line(e.line, "'" + key + "' is not a finite number: " + e.value));
    return v;
}

inline std::uint64_t to_uint(const ConfigSection::Entry &e, const std::string &key) {
    std::uint64_t v = 0;
    const char *b = e.value.data(), *end = b + e.value.size();
    auto [p, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || p != end)
        throw ConfigError(
            at_line(e.line, "'" + key + "' is not a non-negative integer: " + e.value));
    return v;
}

inline double get_double(const ConfigSection *s, const std::string &key, double dflt) {
    const auto *e = lookup(s, key);
    return e ? to_double(*e, key) : dflt;
}

inline std::optional<double> get_opt_double(const ConfigSection *s, const std::string &key) {
    const auto *e = lookup(s, key);
    if (!e)
        return std::nullopt;
    return to_double(*e, key);
}

inline std::uint64_t get_uint(const ConfigSection *s, const std::string &key,
                              std::uint64_t dflt) {
    const auto *e = lookup(s, key);
    return e ? to_uint(*e, key) : dflt;
}

inline unsigned get_small(const ConfigSection *s, const std::string &key, unsigned dflt) {
    const auto *e = lookup(s, key);
    if (!e)
        return dflt;
    const auto v = to_uint(*e, key);
    if (v > 1u << 30)
        throw ConfigError(at_line(e->line, "'" + key + "' is out of range"));
    return static_cast<unsigned>(v);
}

inline int line_of(const ConfigSection *s, const std::string &key) {
    if (!s)
        return 0;
    const auto it = s->entries.find(key);
    return it == s->entries.end() ? s->line : it->second.line;
}

} // namespace detail

/// Analysis settings shared by the CLI subcommands.
struct RunConfig {
    Band band;
    unsigned length_l = 8;
    unsigned delta_n = 1;
    FeatureMode mode = FeatureMode::Phase;
    std::uint32_t min_occurrences = 30;
    // CPU-write exclusion schedule; period 0 disables it
    double exclusion_period_s = 0;
    double exclusion_duration_s = 0;
    double exclusion_phase_s = 0;
    std::optional<double> gate_level_v;
};

/// Frozen acceptance band for the mean template-attack PA, in percent.
struct ReferenceBand {
    double pa_lo = 60;
    double pa_hi = 80;
};

struct ExperimentConfig {
    AcquisitionConfig acquisition;
    LeakageModel model;
    std::uint64_t seed = 0;
    double start_time_s = 0;
    RunConfig run;
    std::optional<ReferenceBand> reference;

    SynthSpec spec(SymbolSequence key) const {
        return SynthSpec{std::move(key), acquisition, model, seed, start_time_s};
    }
};

inline void validate(const RunConfig &r, const AcquisitionConfig &acq) {
    if (r.length_l < 1 || r.length_l > 16)
        throw ConfigError("L must lie in [1, 16]");
    if (r.delta_n < 1 || r.delta_n > r.length_l)
        throw ConfigError("delta_n must lie in [1, L]");
    if (r.min_occurrences < 1)
        throw ConfigError("min_occurrences must be at least 1");
    const std::size_t n = r.length_l * samples_per_symbol(acq);
    try {
        if (band_bins(n, acq.sample_rate_hz, r.band.lo_hz, r.band.hi_hz).count < 2)
            throw ConfigError("band holds fewer than two bins at this L");
    } catch (const DomainError &e) {
        throw ConfigError(std::string("band: ") + e.what());
    }
    if (r.exclusion_period_s != 0 &&
        (!(r.exclusion_duration_s > 0) || !(r.exclusion_period_s > r.exclusion_duration_s)))
        throw ConfigError("exclusion windows need period > duration > 0");
}

/// Sections: unnamed (seed, start_time_s), [acquisition], [model], one
/// [harmonic] per harmonic, [run] and [reference]. Everything is validated
/// before returning.
inline ExperimentConfig parse_experiment_config(std::string_view text) {
    using namespace detail;
    const ConfigDocument doc = ConfigDocument::parse(text);
    ExperimentConfig c;

    const ConfigSection *root = &doc.root();
    const auto *seed = lookup(root, "seed");
    if (!seed)
        throw ConfigError("missing mandatory key 'seed'");
    c.seed = to_uint(*seed, "seed");
    c.start_time_s = get_double(root, "start_time_s", 0);

    const ConfigSection *acq = doc.unique("acquisition");
    c.acquisition.sample_rate_hz = get_double(acq, "sample_rate_hz", c.acquisition.sample_rate_hz);
    c.acquisition.repetition_rate_hz =
        get_double(acq, "repetition_rate_hz", c.acquisition.repetition_rate_hz);
    c.acquisition.trigger_offset_samples = get_small(acq, "trigger_offset_samples", 0);
    c.acquisition.analog_bandwidth_hz =
        get_double(acq, "analog_bandwidth_hz", c.acquisition.analog_bandwidth_hz);

    const ConfigSection *m = doc.unique("model");
    LeakageModel &lm = c.model;
    lm.baseline_v = get_double(m, "baseline_v", 0);
    lm.symbol_level_delta_v = get_double(m, "symbol_level_delta_v", 0);
    lm.transient_sigma = get_double(m, "transient_sigma", lm.transient_sigma);
    lm.transient_delay_s = get_double(m, "transient_delay_s", 0);
    lm.idle_level_v = get_opt_double(m, "idle_level_v");
    lm.drift_v_per_hour = get_double(m, "drift_v_per_hour", 0);
    lm.cpu_period_s = get_double(m, "cpu_period_s", 0);
    lm.cpu_duration_s = get_double(m, "cpu_duration_s", 0);
    lm.cpu_depth_v = get_double(m, "cpu_depth_v", 0);
    lm.cpu_phase_s = get_double(m, "cpu_phase_s", 0);
    lm.noise_std_v = get_double(m, "noise_std_v", 0);
    for (const ConfigSection *h : doc.all("harmonic")) {
        Harmonic hm;
        if (!lookup(h, "order"))
            throw ConfigError(at_line(h->line, "[harmonic] needs 'order'"));
        hm.order = get_small(h, "order", 1);
        hm.amplitude_v = get_double(h, "amplitude_v", 0);
        hm.phase_coupling = get_double(h, "phase_coupling", 0);
        hm.decay = get_double(h, "decay", 1);
        hm.window = get_small(h, "window", 1);
        hm.amplitude_coupling = get_double(h, "amplitude_coupling", 0);
        hm.phase_offset_rad = get_double(h, "phase_offset_rad", 0);
        hm.ringing_rad = get_double(h, "ringing_rad", 0);
        lm.harmonics.push_back(hm);
    }

    const ConfigSection *r = doc.unique("run");
    RunConfig &run = c.run;
    run.band.lo_hz = get_double(r, "band_lo_hz", run.band.lo_hz);
    run.band.hi_hz = get_double(r, "band_hi_hz", run.band.hi_hz);
    run.length_l = get_small(r, "L", run.length_l);
    run.delta_n = get_small(r, "delta_n", run.delta_n);
    if (const auto *e = lookup(r, "mode")) {
        try {
            run.mode = parse_feature_mode(e->value);
        } catch (const Error &err) {
            throw ConfigError(at_line(e->line, err.what()));
        }
    }
    run.min_occurrences = static_cast<std::uint32_t>(get_small(r, "min_occurrences", 30));
    run.exclusion_period_s = get_double(r, "exclusion_period_s", 0);
    run.exclusion_duration_s = get_double(r, "exclusion_duration_s", 0);
    run.exclusion_phase_s = get_double(r, "exclusion_phase_s", 0);
    run.gate_level_v = get_opt_double(r, "gate_level_v");

    if (const ConfigSection *ref = doc.unique("reference")) {
        ReferenceBand b;
        b.pa_lo = get_double(ref, "pa_band_lo", b.pa_lo);
        b.pa_hi = get_double(ref, "pa_band_hi", b.pa_hi);
        if (!(b.pa_lo < b.pa_hi))
            throw ConfigError(at_line(ref->line, "reference band must satisfy lo < hi"));
        c.reference = b;
    }

    doc.check_all_used({"acquisition", "model", "harmonic", "run", "reference"});
    validate(c.model, c.acquisition);
    validate(c.run, c.acquisition);
    return c;
}

} // namespace qkdsca
