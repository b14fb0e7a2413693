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
#include "qkdsca/core.hpp"
#include "qkdsca/error.hpp"
#include "qkdsca/fingerprint.hpp"
#include "qkdsca/version.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace qkdsca {

namespace fs = std::filesystem;

inline constexpr std::uint16_t kTraceFormatVersion = 1;
inline constexpr std::uint16_t kLibraryFormatVersion = 1;
inline constexpr std::size_t kTraceHeaderBytes = 51;

namespace detail {

class ByteWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
    void raw(std::string_view s) { buf_.append(s); }
    std::string take() { return std::move(buf_); }
    void reserve(std::size_t n) { buf_.reserve(n); }

  private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; i++)
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string buf_;
};

class ByteReader {
  public:
    ByteReader(std::string_view data, std::string what) : d_(data), what_(std::move(what)) {}

    void need(std::size_t n, std::size_t total_expected) const {
        if (pos_ + n > d_.size())
            throw TruncationError(what_ + ": truncated, expected " +
                                      std::to_string(total_expected) + " bytes, found " +
                                      std::to_string(d_.size()),
                                  total_expected, d_.size());
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(le(8)); }
    std::string_view raw(std::size_t n) {
        need(n, pos_ + n);
        auto s = d_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t size() const { return d_.size(); }

  private:
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n), pos_ + static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; i++)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(d_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::string_view d_;
    std::string what_;
    std::size_t pos_ = 0;
};

/// f64 array payload; bulk copy on little-endian hosts.
inline void put_f64s(ByteWriter &w, std::span<const double> v) {
    if constexpr (std::endian::native == std::endian::little) {
        w.raw(std::string_view(reinterpret_cast<const char *>(v.data()), v.size() * 8));
    } else {
        for (double x : v)
            w.f64(x);
    }
}

inline std::vector<double> get_f64s(ByteReader &r, std::size_t n) {
    std::vector<double> v(n);
    if constexpr (std::endian::native == std::endian::little) {
        const auto s = r.raw(n * 8);
        std::memcpy(v.data(), s.data(), n * 8);
    } else {
        for (auto &x : v)
            x = r.f64();
    }
    return v;
}

inline std::string pack_symbols(const SymbolSequence &s) {
    std::string out((s.size() + 7) / 8, '\0');
    for (std::size_t i = 0; i < s.size(); i++)
        if (s[i] == Symbol::V)
            out[i / 8] = static_cast<char>(out[i / 8] | (1 << (i % 8)));
    return out;
}

inline SymbolSequence unpack_symbols(std::string_view bytes, std::size_t n) {
    std::vector<Symbol> out(n);
    for (std::size_t i = 0; i < n; i++)
        out[i] = (static_cast<unsigned char>(bytes[i / 8]) >> (i % 8)) & 1 ? Symbol::V : Symbol::H;
    return SymbolSequence(std::move(out));
}

inline void check_magic(ByteReader &r, std::string_view magic, const std::string &what) {
    r.need(magic.size(), magic.size());
    if (r.raw(magic.size()) != magic)
        throw BadMagicError(what + ": bad magic, expected \"" + std::string(magic) + "\"");
}

inline void check_version(std::uint16_t found, std::uint16_t want, const std::string &what) {
    if (found != want)
        throw VersionError(what + ": unsupported format version " + std::to_string(found) +
                           " (this build reads " + std::to_string(want) + ")");
}

} // namespace detail

/// Whole file as bytes.
inline std::string read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

/// Writes to a sibling temporary and renames it over `path`, so readers see
/// either the old file or the complete new one.
inline void write_file_atomic(const fs::path &path, std::string_view data) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    const auto tag = std::hash<std::thread::id>{}(std::this_thread::get_id());
    fs::path tmp = path;
    tmp += ".tmp-" + std::to_string(tag);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error("cannot write " + tmp.string());
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        out.flush();
        if (!out)
            throw Error("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error("cannot rename onto " + path.string() + ": " + ec.message());
    }
}

// ---- traces ---------------------------------------------------------------

inline std::string encode_trace(const PowerTrace &t) {
    const auto &c = t.config();
    detail::ByteWriter w;
    w.reserve(kTraceHeaderBytes + t.size() * 8 + (t.label() ? t.label()->size() / 8 + 1 : 0));
    w.raw("PTRC");
    w.u16(kTraceFormatVersion);
    w.f64(c.sample_rate_hz);
    w.f64(c.repetition_rate_hz);
    w.u32(c.trigger_offset_samples);
    w.f64(c.analog_bandwidth_hz);
    w.u64(t.size());
    w.u8(t.label() ? 1 : 0);
    w.u64(t.label() ? t.label()->size() : 0);
    detail::put_f64s(w, t.samples());
    if (t.label())
        w.raw(detail::pack_symbols(*t.label()));
    return w.take();
}

inline PowerTrace decode_trace(std::string_view data, const std::string &what = "trace") {
    detail::ByteReader r(data, what);
    detail::check_magic(r, "PTRC", what);
    r.need(kTraceHeaderBytes - 4, kTraceHeaderBytes);
    detail::check_version(r.u16(), kTraceFormatVersion, what);
    AcquisitionConfig c;
    c.sample_rate_hz = r.f64();
    c.repetition_rate_hz = r.f64();
    c.trigger_offset_samples = r.u32();
    c.analog_bandwidth_hz = r.f64();
    const std::uint64_t n = r.u64();
    const std::uint8_t has_label = r.u8();
    const std::uint64_t label_len = r.u64();
    if (has_label > 1)
        throw ParseError(what + ": has_label must be 0 or 1");
    if (!has_label && label_len != 0)
        throw ParseError(what + ": label length given without a label");
    if (n > (std::uint64_t{1} << 56) || label_len > (std::uint64_t{1} << 59))
        throw ParseError(what + ": declared lengths are implausible");
    const std::size_t expected = kTraceHeaderBytes + n * 8 + (label_len + 7) / 8;
    if (data.size() < expected)
        throw TruncationError(what + ": truncated, expected " + std::to_string(expected) +
                                  " bytes, found " + std::to_string(data.size()),
                              expected, data.size());
    if (data.size() > expected)
        throw ParseError(what + ": " + std::to_string(data.size() - expected) +
                         " trailing bytes after payload");
    std::vector<double> samples = detail::get_f64s(r, n);
    std::optional<SymbolSequence> label;
    if (has_label) {
        if (label_len == 0)
            throw ParseError(what + ": empty label");
        label = detail::unpack_symbols(r.raw((label_len + 7) / 8), label_len);
    }
    try {
        return PowerTrace(std::move(samples), c, std::move(label));
    } catch (const ParseError &) {
        throw;
    } catch (const Error &e) {
        throw ParseError(what + ": " + e.what());
    }
}

inline void write_trace(const PowerTrace &t, const fs::path &path) {
    write_file_atomic(path, encode_trace(t));
}

inline PowerTrace read_trace(const fs::path &path) {
    return decode_trace(read_file(path), path.string());
}

namespace detail {

inline double parse_csv_double(std::string_view s, std::size_t line) {
    s = trim(s);
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError("CSV line " + std::to_string(line) + ": bad number '" +
                         std::string(s) + "'");
    return v;
}

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

inline std::string format_fixed(double v, int digits) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
    return std::string(buf, p);
}

} // namespace detail

/// Sample rate implied by time stamps: reciprocal of the median spacing,
/// snapped to the nearest integer multiple of f_rep when within 1 ppm.
inline double infer_sample_rate(std::span<const double> times, double repetition_rate_hz) {
    if (times.size() < 2)
        throw ParseError("need at least two samples to infer a sample rate");
    std::vector<double> d(times.size() - 1);
    for (std::size_t i = 0; i + 1 < times.size(); i++)
        d[i] = times[i + 1] - times[i];
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    double med = d[d.size() / 2];
    if (d.size() % 2 == 0) {
        const double lo = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2));
        med = (med + lo) / 2;
    }
    if (!(med > 0))
        throw ParseError("time stamps are not increasing");
    const double fs = 1.0 / med;
    if (repetition_rate_hz > 0) {
        const double k = std::round(fs / repetition_rate_hz);
        if (k >= 1 && std::abs(k * repetition_rate_hz - fs) <= 1e-6 * fs)
            return k * repetition_rate_hz;
    }
    return fs;
}

/// Two-column CSV (time_s, volts) with a header row.
inline PowerTrace import_trace_csv(std::string_view text, AcquisitionConfig base,
                                   std::optional<SymbolSequence> label = std::nullopt) {
    std::vector<double> t, v;
    std::size_t line = 0, pos = 0;
    bool header = true;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        auto row = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        line++;
        row = detail::trim(row);
        if (row.empty())
            continue;
        if (header) {
            header = false;
            continue;
        }
        const auto comma = row.find(',');
        if (comma == std::string_view::npos)
            throw ParseError("CSV line " + std::to_string(line) + ": expected two columns");
        t.push_back(detail::parse_csv_double(row.substr(0, comma), line));
        v.push_back(detail::parse_csv_double(row.substr(comma + 1), line));
    }
    base.sample_rate_hz = infer_sample_rate(t, base.repetition_rate_hz);
    return PowerTrace(std::move(v), base, std::move(label));
}

inline std::string export_trace_csv(const PowerTrace &t) {
    std::string out = "time_s,volts\n";
    const double fs = t.config().sample_rate_hz;
    for (std::size_t i = 0; i < t.size(); i++) {
        out += detail::format_double(static_cast<double>(i) / fs);
        out += ',';
        out += detail::format_double(t[i]);
        out += '\n';
    }
    return out;
}

// ---- keys -----------------------------------------------------------------

inline SymbolSequence read_key(const fs::path &path) {
    try {
        return parse_key(read_file(path));
    } catch (const ParseError &e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void write_key(const SymbolSequence &key, const fs::path &path) {
    write_file_atomic(path, key.to_string() + "\n");
}

// ---- fingerprint libraries ------------------------------------------------

inline std::string encode_library(const FingerprintLibrary &lib) {
    validate(lib);
    detail::ByteWriter w;
    w.raw("FPLB");
    w.u16(kLibraryFormatVersion);
    w.u8(static_cast<std::uint8_t>(lib.length_l));
    w.f64(lib.band.lo_hz);
    w.f64(lib.band.hi_hz);
    w.f64(lib.acquisition.sample_rate_hz);
    w.f64(lib.acquisition.repetition_rate_hz);
    w.f64(lib.acquisition.analog_bandwidth_hz);
    w.u32(lib.min_occurrences);
    w.u32(static_cast<std::uint32_t>(lib.entries.size()));
    for (const auto &e : lib.entries) {
        w.u32(e.sequence_index);
        w.u32(e.occurrence_count);
        w.u32(static_cast<std::uint32_t>(e.mean_phase.size()));
        detail::put_f64s(w, e.mean_phase);
        detail::put_f64s(w, e.mean_magnitude);
        w.u32(static_cast<std::uint32_t>(e.unreliable_bins.size()));
        for (auto b : e.unreliable_bins)
            w.u32(b);
    }
    return w.take();
}

inline FingerprintLibrary decode_library(std::string_view data,
                                         const std::string &what = "library") {
    detail::ByteReader r(data, what);
    detail::check_magic(r, "FPLB", what);
    detail::check_version(r.u16(), kLibraryFormatVersion, what);
    FingerprintLibrary lib;
    lib.length_l = r.u8();
    lib.band.lo_hz = r.f64();
    lib.band.hi_hz = r.f64();
    lib.acquisition.sample_rate_hz = r.f64();
    lib.acquisition.repetition_rate_hz = r.f64();
    lib.acquisition.analog_bandwidth_hz = r.f64();
    lib.min_occurrences = r.u32();
    const std::uint32_t count = r.u32();
    if (lib.length_l < 1 || lib.length_l > 16 || count != (1u << lib.length_l))
        throw ParseError(what + ": entry count does not match L");
    lib.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; i++) {
        Fingerprint f;
        f.length_l = lib.length_l;
        f.sequence_index = r.u32();
        f.occurrence_count = r.u32();
        const std::uint32_t bins = r.u32();
        r.need(std::size_t{bins} * 16, r.pos() + std::size_t{bins} * 16);
        f.mean_phase = detail::get_f64s(r, bins);
        f.mean_magnitude = detail::get_f64s(r, bins);
        const std::uint32_t nu = r.u32();
        if (nu > bins)
            throw ParseError(what + ": more unreliable bins than bins");
        f.unreliable_bins.resize(nu);
        for (auto &b : f.unreliable_bins) {
            b = r.u32();
            if (b >= bins)
                throw ParseError(what + ": unreliable bin out of range");
        }
        lib.entries.push_back(std::move(f));
    }
    if (r.pos() != r.size())
        throw ParseError(what + ": trailing bytes after the last entry");
    try {
        validate(lib);
    } catch (const Error &e) {
        throw ParseError(what + ": " + e.what());
    }
    return lib;
}

inline void write_library(const FingerprintLibrary &lib, const fs::path &path) {
    write_file_atomic(path, encode_library(lib));
}

inline FingerprintLibrary read_library(const fs::path &path) {
    return decode_library(read_file(path), path.string());
}

// ---- CSV reports ----------------------------------------------------------

/// Square matrix with a label header row and column; undefined entries are
/// written as "nan".
inline std::string matrix_csv(const CorrelationMatrix &m) {
    std::string out = "label";
    for (const auto &l : m.labels)
        out += "," + l;
    out += '\n';
    for (std::size_t i = 0; i < m.order; i++) {
        out += m.labels[i];
        for (std::size_t j = 0; j < m.order; j++) {
            const double v = m(i, j);
            out += ',';
            out += std::isnan(v) ? std::string("nan") : detail::format_double(v);
        }
        out += '\n';
    }
    return out;
}

inline std::string profile_csv(std::span<const DiagonalStat> p) {
    std::string out = "shared_prefix,mean_corr,count\n";
    for (const auto &d : p)
        out += std::to_string(d.shared_prefix) + "," +
               (d.count ? detail::format_double(d.mean_corr) : std::string("nan")) + "," +
               std::to_string(d.count) + "\n";
    return out;
}

struct PaRow {
    double f_delay_hz = 0;
    std::size_t trace_id = 0;
    double pa_percent = 0;
    std::size_t skipped_periods = 0;
};

inline std::string pa_table_csv(std::span<const PaRow> rows) {
    std::string out = "f_delay_hz,trace_id,pa_percent,skipped_periods\n";
    for (const auto &r : rows)
        out += detail::format_double(r.f_delay_hz) + "," + std::to_string(r.trace_id) + "," +
               detail::format_fixed(r.pa_percent, 6) + "," + std::to_string(r.skipped_periods) +
               "\n";
    return out;
}

/// Per-trace attack summary rows.
struct AttackRow {
    std::string trace_id;
    unsigned length_l = 0;
    unsigned delta_n = 0;
    std::size_t predicted = 0;
    double pa_percent = 0;
    double threshold_percent = 0;
    bool success = false;
};

inline std::string attack_table_csv(std::span<const AttackRow> rows) {
    std::string out = "trace_id,L,delta_n,predicted,pa_percent,threshold_percent,success\n";
    for (const auto &r : rows)
        out += r.trace_id + "," + std::to_string(r.length_l) + "," + std::to_string(r.delta_n) +
               "," + std::to_string(r.predicted) + "," + detail::format_fixed(r.pa_percent, 6) +
               "," + detail::format_fixed(r.threshold_percent, 6) + "," +
               (r.success ? "1" : "0") + "\n";
    return out;
}

/// One row per attack step: pointer in symbols, winning template, its
/// correlation, the committed symbols and, with truth, how many were right.
inline std::string steps_csv(const PredictionReport &r,
                             const std::optional<SymbolSequence> &truth = std::nullopt) {
    std::string out = "step,pointer,best_index,correlation,guessed,correct\n";
    for (std::size_t s = 0; s < r.per_step_best_index.size(); s++) {
        const std::size_t ptr = s * r.delta_n;
        std::string guessed;
        std::size_t correct = 0;
        for (std::size_t j = 0; j < r.delta_n && ptr + j < r.predicted.size(); j++) {
            guessed += to_char(r.predicted[ptr + j]);
            if (truth && ptr + j < truth->size())
                correct += r.predicted[ptr + j] == (*truth)[ptr + j];
        }
        const double c = r.per_step_correlation[s];
        out += std::to_string(s) + "," + std::to_string(ptr) + "," +
               std::to_string(r.per_step_best_index[s]) + "," +
               (std::isnan(c) ? std::string("nan") : detail::format_double(c)) + "," + guessed +
               "," + (truth ? std::to_string(correct) : std::string()) + "\n";
    }
    return out;
}

inline std::string box_stats_csv(const HSummary &s) {
    std::string out =
        "label,h_percentage,count,median,q1,q3,whisker_lo,whisker_hi,outliers\n";
    for (const auto &st : s.stats) {
        std::string outl;
        for (std::size_t i = 0; i < st.outliers.size(); i++)
            outl += (i ? ";" : "") + detail::format_double(st.outliers[i]);
        out += st.label + "," + detail::format_double(st.h_percentage) + "," +
               std::to_string(st.count) + "," + detail::format_double(st.median) + "," +
               detail::format_double(st.q1) + "," + detail::format_double(st.q3) + "," +
               detail::format_double(st.whisker_lo) + "," + detail::format_double(st.whisker_hi) +
               "," + outl + "\n";
    }
    return out;
}

inline std::string drift_csv(const DriftModel &m) {
    std::string out = "label,beta0_v,beta1_v_per_h\n";
    for (const auto &l : m.per_sequence)
        out += l.label + "," + detail::format_double(l.beta0) + "," +
               detail::format_double(l.beta1) + "\n";
    out += "mean,," + detail::format_double(m.mean_beta1) + "\n";
    return out;
}

// ---- CSV tables -----------------------------------------------------------

/// Header plus rows of a comma-separated file. Blank lines are skipped.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines; // source line of each row

    std::size_t column(std::string_view name, const std::string &what) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw ParseError(what + ": missing column '" + std::string(name) + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline CsvTable parse_csv_table(std::string_view text, const std::string &what) {
    CsvTable t;
    std::size_t pos = 0, line = 0;
    auto split = [](std::string_view row) {
        std::vector<std::string> f;
        std::size_t b = 0;
        for (;;) {
            const auto c = row.find(',', b);
            f.emplace_back(detail::trim(row.substr(b, c == std::string_view::npos ? c : c - b)));
            if (c == std::string_view::npos)
                return f;
            b = c + 1;
        }
    };
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        auto row = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        line++;
        row = detail::trim(row);
        if (row.empty())
            continue;
        auto fields = split(row);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size())
            throw ParseError(what + " line " + std::to_string(line) + ": expected " +
                             std::to_string(t.header.size()) + " fields, found " +
                             std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.lines.push_back(line);
    }
    if (t.header.empty())
        throw ParseError(what + ": empty CSV");
    return t;
}

namespace detail {
inline std::size_t parse_csv_count(std::string_view s, std::size_t line) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError("CSV line " + std::to_string(line) + ": bad count '" +
                         std::string(s) + "'");
    return v;
}
} // namespace detail

inline std::vector<PaRow> parse_pa_table_csv(std::string_view text) {
    const CsvTable t = parse_csv_table(text, "PA table");
    const std::size_t cf = t.column("f_delay_hz", "PA table"),
                      ci = t.column("trace_id", "PA table"),
                      cp = t.column("pa_percent", "PA table"),
                      cs = t.column("skipped_periods", "PA table");
    std::vector<PaRow> out;
    for (std::size_t r = 0; r < t.rows.size(); r++) {
        const auto &f = t.rows[r];
        out.push_back({detail::parse_csv_double(f[cf], t.lines[r]),
                       detail::parse_csv_count(f[ci], t.lines[r]),
                       detail::parse_csv_double(f[cp], t.lines[r]),
                       detail::parse_csv_count(f[cs], t.lines[r])});
    }
    return out;
}

inline std::vector<AttackRow> parse_attack_table_csv(std::string_view text) {
    const CsvTable t = parse_csv_table(text, "attack table");
    const std::string w = "attack table";
    const std::size_t ci = t.column("trace_id", w), cl = t.column("L", w),
                      cd = t.column("delta_n", w), cn = t.column("predicted", w),
                      cp = t.column("pa_percent", w), ct = t.column("threshold_percent", w),
                      cs = t.column("success", w);
    std::vector<AttackRow> out;
    for (std::size_t r = 0; r < t.rows.size(); r++) {
        const auto &f = t.rows[r];
        const std::size_t ln = t.lines[r];
        if (f[cs] != "0" && f[cs] != "1")
            throw ParseError("CSV line " + std::to_string(ln) + ": success must be 0 or 1");
        out.push_back({f[ci], static_cast<unsigned>(detail::parse_csv_count(f[cl], ln)),
                       static_cast<unsigned>(detail::parse_csv_count(f[cd], ln)),
                       detail::parse_csv_count(f[cn], ln), detail::parse_csv_double(f[cp], ln),
                       detail::parse_csv_double(f[ct], ln), f[cs] == "1"});
    }
    return out;
}

/// Reads back matrix_csv output.
inline CorrelationMatrix parse_matrix_csv(std::string_view text) {
    const CsvTable t = parse_csv_table(text, "matrix");
    CorrelationMatrix m;
    m.order = t.header.size() - 1;
    if (m.order == 0 || t.rows.size() != m.order)
        throw ParseError("matrix: expected a square table with a label column");
    m.labels.assign(t.header.begin() + 1, t.header.end());
    m.values.reserve(m.order * m.order);
    for (std::size_t r = 0; r < m.order; r++) {
        if (t.rows[r][0] != m.labels[r])
            throw ParseError("matrix line " + std::to_string(t.lines[r]) +
                             ": row label does not match column label");
        for (std::size_t c = 1; c <= m.order; c++)
            m.values.push_back(t.rows[r][c] == "nan"
                                   ? std::numeric_limits<double>::quiet_NaN()
                                   : detail::parse_csv_double(t.rows[r][c], t.lines[r]));
    }
    return m;
}

// ---- manifests ------------------------------------------------------------

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    for (int i = 15; i >= 0; i--) {
        buf[i] = "0123456789abcdef"[h & 0xf];
        h >>= 4;
    }
    return std::string(buf, 16);
}

/// Everything needed to rerun a CLI invocation.
struct Manifest {
    std::string command;
    std::vector<std::string> arguments;
    std::vector<std::pair<std::string, std::string>> inputs; // path, content hash
    std::string config_hash;
    std::optional<std::uint64_t> seed;
    std::string rng_algorithm;
    std::vector<std::pair<std::string, std::string>> outputs;
    std::vector<std::pair<std::string, std::string>> parameters;
};

inline std::string manifest_json(const Manifest &m) {
    nlohmann::ordered_json j;
    j["artifact"] = "qkdsca";
    j["version"] = kVersion;
    j["command"] = m.command;
    j["arguments"] = m.arguments;
    j["inputs"] = nlohmann::ordered_json::array();
    for (const auto &[p, h] : m.inputs)
        j["inputs"].push_back({{"path", p}, {"fnv1a64", h}});
    j["config_hash"] = m.config_hash;
    if (m.seed)
        j["seed"] = *m.seed;
    else
        j["seed"] = nullptr;
    j["rng_algorithm"] = m.rng_algorithm;
    j["parameters"] = nlohmann::ordered_json::object();
    for (const auto &[k, v] : m.parameters)
        j["parameters"][k] = v;
    j["outputs"] = nlohmann::ordered_json::array();
    for (const auto &[p, h] : m.outputs)
        j["outputs"].push_back({{"path", p}, {"fnv1a64", h}});
    return j.dump(2) + "\n";
}

inline void write_manifest(const Manifest &m, const fs::path &path) {
    write_file_atomic(path, manifest_json(m));
}

} // namespace qkdsca
