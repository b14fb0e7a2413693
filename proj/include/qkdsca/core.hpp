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

#include "qkdsca/error.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qkdsca {

/// Key symbol emitted by the transmitter. Only the two key-carrying states
/// are modeled.
enum class Symbol : std::uint8_t { H = 0, V = 1 };

inline char to_char(Symbol s) { return s == Symbol::H ? 'H' : 'V'; }

inline Symbol symbol_from_char(char c) {
    if (c == 'H')
        return Symbol::H;
    if (c == 'V')
        return Symbol::V;
    throw ParseError(std::string("invalid key symbol '") + c + "'");
}

/// +1 for H, -1 for V.
inline int signum(Symbol s) { return s == Symbol::H ? 1 : -1; }

inline Symbol flip(Symbol s) { return s == Symbol::H ? Symbol::V : Symbol::H; }

/// Ordered, nonempty list of key symbols.
class SymbolSequence {
  public:
    explicit SymbolSequence(std::vector<Symbol> symbols)
        : symbols_(std::move(symbols)) {
        if (symbols_.empty())
            throw DomainError("symbol sequence must be nonempty");
    }

    static SymbolSequence from_string(std::string_view text) {
        std::vector<Symbol> out;
        out.reserve(text.size());
        for (char c : text)
            out.push_back(symbol_from_char(c));
        return SymbolSequence(std::move(out));
    }

    std::string to_string() const {
        std::string s;
        s.reserve(symbols_.size());
        for (Symbol sym : symbols_)
            s.push_back(to_char(sym));
        return s;
    }

    std::size_t size() const { return symbols_.size(); }
    Symbol operator[](std::size_t i) const { return symbols_[i]; }
    auto begin() const { return symbols_.begin(); }
    auto end() const { return symbols_.end(); }
    std::span<const Symbol> symbols() const { return symbols_; }

    SymbolSequence subsequence(std::size_t start, std::size_t count) const {
        if (count == 0 || start + count > symbols_.size())
            throw BoundsError("subsequence [" + std::to_string(start) + ", " +
                              std::to_string(start + count) +
                              ") outside sequence of length " +
                              std::to_string(symbols_.size()));
        return SymbolSequence(
            std::vector<Symbol>(symbols_.begin() + static_cast<std::ptrdiff_t>(start),
                                symbols_.begin() +
                                    static_cast<std::ptrdiff_t>(start + count)));
    }

    SymbolSequence complement() const {
        std::vector<Symbol> out(symbols_.size());
        for (std::size_t i = 0; i < symbols_.size(); i++)
            out[i] = flip(symbols_[i]);
        return SymbolSequence(std::move(out));
    }

    friend bool operator==(const SymbolSequence &, const SymbolSequence &) = default;

  private:
    std::vector<Symbol> symbols_;
};

/// Parse the contents of a key file: one line over {H, V} with an optional
/// trailing newline.
inline SymbolSequence parse_key(std::string_view text) {
    if (!text.empty() && text.back() == '\n')
        text.remove_suffix(1);
    if (!text.empty() && text.back() == '\r')
        text.remove_suffix(1);
    if (text.empty())
        throw ParseError("key file is empty");
    return SymbolSequence::from_string(text);
}

struct AcquisitionConfig {
    double sample_rate_hz = 2.5e9;
    double repetition_rate_hz = 100e6;
    std::uint32_t trigger_offset_samples = 0;
    double analog_bandwidth_hz = 350e6;

    friend bool operator==(const AcquisitionConfig &,
                           const AcquisitionConfig &) = default;
};

/// Number of samples per emitted symbol. The clock ratio must be an exact
/// positive integer; fractional ratios are rejected rather than resampled.
inline std::size_t samples_per_symbol(const AcquisitionConfig &config) {
    const double fs = config.sample_rate_hz;
    const double frep = config.repetition_rate_hz;
    if (!(fs > 0) || !(frep > 0) || !std::isfinite(fs) || !std::isfinite(frep))
        throw ConfigError("sample and repetition rates must be positive");
    const double ratio = fs / frep;
    const double rounded = std::round(ratio);
    if (rounded < 1 || std::abs(ratio - rounded) > 1e-9 * ratio)
        throw ConfigError("sample_rate / repetition_rate = " +
                          std::to_string(ratio) + " is not a positive integer");
    return static_cast<std::size_t>(rounded);
}

inline void validate(const AcquisitionConfig &config) {
    samples_per_symbol(config);
    if (!(config.analog_bandwidth_hz > 0) ||
        config.analog_bandwidth_hz > config.sample_rate_hz / 2)
        throw ConfigError("analog bandwidth must lie in (0, sample_rate/2]");
}

/// Uniformly sampled sense-resistor voltage record.
class PowerTrace {
  public:
    PowerTrace(std::vector<double> samples, AcquisitionConfig config,
               std::optional<SymbolSequence> label = std::nullopt)
        : samples_(std::move(samples)), config_(config), label_(std::move(label)) {
        validate(config_);
        if (samples_.empty())
            throw DomainError("power trace must contain at least one sample");
        for (double v : samples_)
            if (!std::isfinite(v))
                throw DomainError("power trace contains a non-finite sample");
        if (label_) {
            const std::size_t need =
                label_->size() * samples_per_symbol(config_) +
                config_.trigger_offset_samples;
            if (need > samples_.size())
                throw BoundsError("label of " + std::to_string(label_->size()) +
                                  " symbols needs " + std::to_string(need) +
                                  " samples, trace has " +
                                  std::to_string(samples_.size()));
        }
    }

    std::span<const double> samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    double operator[](std::size_t i) const { return samples_[i]; }
    const AcquisitionConfig &config() const { return config_; }
    const std::optional<SymbolSequence> &label() const { return label_; }
    double duration_s() const {
        return static_cast<double>(samples_.size()) / config_.sample_rate_hz;
    }

    /// Same acquisition metadata and label, new sample values.
    PowerTrace with_samples(std::vector<double> samples) const {
        return PowerTrace(std::move(samples), config_, label_);
    }

    friend bool operator==(const PowerTrace &, const PowerTrace &) = default;

  private:
    std::vector<double> samples_;
    AcquisitionConfig config_;
    std::optional<SymbolSequence> label_;
};

/// Number of whole symbols the trace covers after the trigger offset. For a
/// labeled trace this is the label length.
inline std::size_t symbol_count(const PowerTrace &trace) {
    if (trace.label())
        return trace.label()->size();
    const std::size_t off = trace.config().trigger_offset_samples;
    if (trace.size() <= off)
        return 0;
    return (trace.size() - off) / samples_per_symbol(trace.config());
}

/// H -> 0, V -> 1, first symbol in the least significant bit. Sequences that
/// share their first n symbols have indices congruent modulo 2^n.
inline std::uint64_t sequence_index(std::span<const Symbol> seq) {
    if (seq.empty() || seq.size() > 63)
        throw DomainError("sequence length must lie in [1, 63]");
    std::uint64_t idx = 0;
    for (std::size_t i = 0; i < seq.size(); i++)
        if (seq[i] == Symbol::V)
            idx |= std::uint64_t{1} << i;
    return idx;
}

inline std::uint64_t sequence_index(const SymbolSequence &seq) {
    return sequence_index(seq.symbols());
}

inline SymbolSequence index_to_sequence(std::uint64_t idx, unsigned length) {
    if (length == 0 || length > 63)
        throw DomainError("sequence length must lie in [1, 63]");
    if (idx >> length)
        throw DomainError("index " + std::to_string(idx) +
                          " out of range for length " + std::to_string(length));
    std::vector<Symbol> out(length);
    for (unsigned i = 0; i < length; i++)
        out[i] = ((idx >> i) & 1) ? Symbol::V : Symbol::H;
    return SymbolSequence(std::move(out));
}

/// Contiguous segment covering symbols [start_symbol, start_symbol +
/// n_symbols). The returned trace starts exactly on a symbol boundary, so its
/// trigger offset is zero.
inline PowerTrace slice_symbols(const PowerTrace &trace, std::size_t start_symbol,
                                std::size_t n_symbols) {
    if (n_symbols == 0)
        throw BoundsError("slice must cover at least one symbol");
    const std::size_t spp = samples_per_symbol(trace.config());
    const std::size_t begin =
        trace.config().trigger_offset_samples + start_symbol * spp;
    const std::size_t end = begin + n_symbols * spp;
    if (end > trace.size())
        throw BoundsError("slice of symbols [" + std::to_string(start_symbol) +
                          ", " + std::to_string(start_symbol + n_symbols) +
                          ") needs " + std::to_string(end) + " samples, trace has " +
                          std::to_string(trace.size()));
    std::optional<SymbolSequence> label;
    if (trace.label()) {
        if (start_symbol + n_symbols > trace.label()->size())
            throw BoundsError("slice extends past the trace label");
        label = trace.label()->subsequence(start_symbol, n_symbols);
    }
    AcquisitionConfig cfg = trace.config();
    cfg.trigger_offset_samples = 0;
    auto s = trace.samples();
    return PowerTrace(std::vector<double>(s.begin() + static_cast<std::ptrdiff_t>(begin),
                                          s.begin() + static_cast<std::ptrdiff_t>(end)),
                      cfg, std::move(label));
}

} // namespace qkdsca
