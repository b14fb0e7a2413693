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

// Command-line front end. run_cli() is kept separate from main() so tests
// can drive it with captured streams.

#pragma once

#include "qkdsca/experiments.hpp"
#include "qkdsca/io.hpp"
#include "qkdsca/transient.hpp"
#include "qkdsca/version.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace qkdsca::cli {

namespace fs = std::filesystem;

// Collects inputs and outputs of one invocation and writes the manifest
// next to the outputs.
class Run {
  public:
    Run(std::string command, int argc, const char *const *argv, fs::path out_dir)
        : out_dir_(std::move(out_dir)) {
        m_.command = std::move(command);
        for (int i = 1; i < argc; i++)
            m_.arguments.emplace_back(argv[i]);
        m_.rng_algorithm = kRngAlgorithm;
        fs::create_directories(out_dir_);
    }

    std::string read(const fs::path &p) {
        std::string data = read_file(p);
        m_.inputs.emplace_back(p.string(), fnv1a_hex(data));
        return data;
    }

    ExperimentConfig config(const fs::path &p) {
        const std::string text = read(p);
        m_.config_hash = fnv1a_hex(text);
        return parse_experiment_config(text);
    }

    void seed(std::uint64_t s) { m_.seed = s; }
    void param(const std::string &k, const std::string &v) { m_.parameters.emplace_back(k, v); }
    template <typename T>
    void param(const std::string &k, T v) { m_.parameters.emplace_back(k, detail::format_double(static_cast<double>(v))); }

    fs::path write(const std::string &name, std::string_view data) {
        const fs::path p = out_dir_ / name;
        write_file_atomic(p, data);
        m_.outputs.emplace_back(p.string(), fnv1a_hex(data));
        return p;
    }

    void finish(std::ostream &out) {
        std::string stem = m_.command;
        std::replace(stem.begin(), stem.end(), ' ', '-');
        const fs::path p = out_dir_ / (stem + ".manifest.json");
        write_manifest(m_, p);
        for (const auto &[path, hash] : m_.outputs)
            out << "wrote " << path << "\n";
        out << "wrote " << p.string() << "\n";
    }

  private:
    Manifest m_;
    fs::path out_dir_;
};

inline std::vector<fs::path> expand_traces(const std::vector<std::string> &args) {
    std::vector<fs::path> out;
    for (const auto &a : args) {
        if (fs::is_directory(a)) {
            std::vector<fs::path> found;
            for (const auto &e : fs::directory_iterator(a))
                if (e.is_regular_file() && e.path().extension() == ".ptrc")
                    found.push_back(e.path());
            std::sort(found.begin(), found.end());
            if (found.empty())
                throw DomainError("no .ptrc files in " + a);
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.emplace_back(a);
        }
    }
    return out;
}

inline std::vector<SymbolSequence> parse_patterns(const std::string &list) {
    std::vector<SymbolSequence> out;
    std::size_t b = 0;
    for (;;) {
        const auto c = list.find(',', b);
        const std::string item = list.substr(b, c == std::string::npos ? c : c - b);
        if (item.empty())
            throw DomainError("empty pattern in '" + list + "'");
        if (item == "Only-H" || item == "only-h")
            out.push_back(SymbolSequence::from_string("H"));
        else
            out.push_back(SymbolSequence::from_string(item));
        if (c == std::string::npos)
            return out;
        b = c + 1;
    }
}

inline std::string rise_csv(const RiseFit &f) {
    using detail::format_double;
    return "delta_v,sigma_per_s,t0_s,v_baseline,t_r_s,bandwidth_hz,residual_rms,"
           "sigma_stderr,t_r_stderr,iterations\n" +
           format_double(f.delta_v) + "," + format_double(f.sigma) + "," +
           format_double(f.t0) + "," + format_double(f.v_baseline) + "," +
           format_double(f.t_r) + "," + format_double(system_bandwidth(f.t_r)) + "," +
           format_double(f.residual_rms) + "," + format_double(f.sigma_stderr) + "," +
           format_double(f.t_r_stderr) + "," + std::to_string(f.iterations) + "\n";
}

inline std::string heatmap_csv(const CorrelationMatrix &m) {
    std::string out = "row,col,row_label,col_label,value\n";
    for (std::size_t i = 0; i < m.order; i++)
        for (std::size_t j = 0; j < m.order; j++) {
            const double v = m(i, j);
            out += std::to_string(i) + "," + std::to_string(j) + "," + m.labels[i] + "," +
                   m.labels[j] + "," +
                   (std::isnan(v) ? std::string("nan") : detail::format_double(v)) + "\n";
        }
    return out;
}

inline int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Power side-channel analysis of a QKD transmitter's supply current.",
                 "qkdsca"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    unsigned threads = 0;
    app.add_option("--threads", threads, "Worker threads (0: all cores)");

    // Shared option storage. Each subcommand binds only what it uses.
    std::string config_path, out_dir, trace_path, library_path, truth_path, points_path;
    std::string table_path, matrix_path, pattern, key_path, name = "trace", mode_name = "phase";
    std::string patterns = "H,HHV,HV,HVV,V";
    std::vector<std::string> trace_args, table_args;
    std::uint64_t seed = 0;
    std::size_t symbols = 200000, keys = 5, per_pattern = 40, capture_symbols = 2000;
    double alternating_hz = 0, from_hz = 2000, to_hz = 46000, step_hz = 1000;
    double duration_s = 0.5e-3, hours = 10, from_s = 0, to_s = 0;
    unsigned traces = 10, L = 0, dn = 1;
    std::optional<double> gate_level, band_lo, band_hi;
    std::optional<std::uint32_t> min_occ;
    bool steps = false, csv = false;

    auto add_out = [&](CLI::App *c) {
        c->add_option("--out", out_dir, "Output directory")->required();
    };
    auto add_config = [&](CLI::App *c, bool required) {
        auto *o = c->add_option("--config", config_path, "Experiment config file")
                      ->check(CLI::ExistingFile);
        if (required)
            o->required();
    };
    auto add_seed = [&](CLI::App *c) {
        c->add_option("--seed", seed, "Seed of every random draw")->required();
    };

    auto *synth = app.add_subcommand("synth", "Generate synthetic traces");
    synth->require_subcommand(1);
    auto *synth_trace = synth->add_subcommand("trace", "One labeled trace");
    add_config(synth_trace, true);
    add_seed(synth_trace);
    add_out(synth_trace);
    synth_trace->add_option("--symbols", symbols, "Key length")->check(CLI::PositiveNumber);
    auto *key_opts = synth_trace->add_option_group("key");
    key_opts->add_option("--pattern", pattern, "Repeat this H/V pattern");
    key_opts->add_option("--key-file", key_path, "Emit this key")->check(CLI::ExistingFile);
    key_opts->add_option("--alternating-hz", alternating_hz, "Alternate H/V at this rate");
    key_opts->require_option(0, 1);
    synth_trace->add_option("--name", name, "Output file stem");
    synth_trace->add_flag("--csv", csv, "Also export time_s,volts CSV");
    auto *synth_dataset = synth->add_subcommand("dataset", "Random-key traces seeded seed + i");
    add_config(synth_dataset, true);
    add_seed(synth_dataset);
    add_out(synth_dataset);
    synth_dataset->add_option("--keys", keys, "Number of keys")->check(CLI::PositiveNumber);
    synth_dataset->add_option("--symbols", symbols, "Symbols per key")->check(CLI::PositiveNumber);
    auto *synth_points = synth->add_subcommand("points", "Average-power points per pattern");
    add_config(synth_points, true);
    add_seed(synth_points);
    add_out(synth_points);
    synth_points->add_option("--patterns", patterns, "Comma-separated repeating patterns");
    synth_points->add_option("--hours", hours, "Session length")->check(CLI::PositiveNumber);
    synth_points->add_option("--per-pattern", per_pattern, "Points per pattern");
    synth_points->add_option("--capture-symbols", capture_symbols, "Symbols per capture");

    auto *fit = app.add_subcommand("fit-rise", "Fit the erf transient to a rising edge");
    fit->add_option("--trace", trace_path, "Trace file")->required()->check(CLI::ExistingFile);
    fit->add_option("--from-s", from_s, "Window start, seconds from the first sample");
    fit->add_option("--to-s", to_s, "Window end (0: end of trace)");
    add_out(fit);

    auto *avg = app.add_subcommand("avg-analysis", "Drift fit and box statistics by H%");
    avg->add_option("--points", points_path, "Points CSV")->required()->check(CLI::ExistingFile);
    avg->add_option("--gate-level", gate_level, "Drop points below this level (V)");
    add_out(avg);

    auto *lowfreq = app.add_subcommand("lowfreq", "Per-frequency PA sweep of alternating H/V");
    add_config(lowfreq, true);
    add_seed(lowfreq);
    add_out(lowfreq);
    lowfreq->add_option("--from", from_hz, "First f_delay (Hz)");
    lowfreq->add_option("--to", to_hz, "Last f_delay (Hz)");
    lowfreq->add_option("--step", step_hz, "f_delay step (Hz)");
    lowfreq->add_option("--traces", traces, "Traces per frequency")->check(CLI::PositiveNumber);
    lowfreq->add_option("--duration-s", duration_s, "Trace length")->check(CLI::PositiveNumber);

    auto *fp = app.add_subcommand("fingerprint", "Template library tools");
    fp->require_subcommand(1);
    auto *fp_build = fp->add_subcommand("build", "Build a library from labeled traces");
    fp_build->add_option("--traces", trace_args, "Trace files or directories")->required();
    fp_build->add_option("--L", L, "Sequence length (default: config or 8)");
    add_config(fp_build, false);
    fp_build->add_option("--band-lo-hz", band_lo, "Band lower edge");
    fp_build->add_option("--band-hi-hz", band_hi, "Band upper edge");
    fp_build->add_option("--min-occurrences", min_occ, "Minimum snippets per class");
    add_out(fp_build);
    auto *fp_corr = fp->add_subcommand("corr", "Correlation matrix and prefix profile");
    fp_corr->add_option("--library", library_path, "Library file")
        ->required()
        ->check(CLI::ExistingFile);
    fp_corr->add_option("--mode", mode_name, "phase or magnitude");
    add_out(fp_corr);

    auto *attack = app.add_subcommand("attack", "Template attack");
    attack->require_subcommand(1);
    auto *attack_run = attack->add_subcommand("run", "Predict the key of one trace");
    attack_run->add_option("--trace", trace_path, "Trace file")->required()->check(CLI::ExistingFile);
    attack_run->add_option("--library", library_path, "Library file")
        ->required()
        ->check(CLI::ExistingFile);
    attack_run->add_option("--L", L, "Template length (must match the library)");
    attack_run->add_option("--dN", dn, "Symbols committed per step");
    attack_run->add_option("--mode", mode_name, "phase or magnitude");
    attack_run->add_option("--truth", truth_path, "Key file (default: trace label)")
        ->check(CLI::ExistingFile);
    attack_run->add_flag("--steps-csv", steps, "Write per-step matches");
    add_out(attack_run);

    auto *report = app.add_subcommand("report", "Render summaries from CSV outputs");
    report->require_subcommand(1);
    auto *rep_pa = report->add_subcommand("pa-summary", "Per-frequency PA spread");
    rep_pa->add_option("--table", table_path, "pa_table.csv")->required()->check(CLI::ExistingFile);
    add_out(rep_pa);
    auto *rep_heat = report->add_subcommand("heatmap", "Long-format matrix for plotting");
    rep_heat->add_option("--matrix", matrix_path, "matrix.csv")->required()->check(CLI::ExistingFile);
    add_out(rep_heat);
    auto *rep_att = report->add_subcommand("attack-summary", "Success counts and mean PA");
    rep_att->add_option("--tables", table_args, "attack.csv files")
        ->required()
        ->check(CLI::ExistingFile);
    add_out(rep_att);

    if (argc <= 1) {
        err << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion &e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError &e) {
        app.exit(e, err, err);
        return 2;
    }

    try {
        set_thread_count(threads);
        if (synth_trace->parsed()) {
            Run run("synth trace", argc, argv, out_dir);
            ExperimentConfig cfg = run.config(config_path);
            run.seed(seed);
            SymbolSequence key = SymbolSequence::from_string("H");
            if (!pattern.empty())
                key = repeated_key(SymbolSequence::from_string(pattern), symbols);
            else if (!key_path.empty())
                key = parse_key(run.read(key_path));
            else if (alternating_hz > 0)
                key = alternating_key(cfg.acquisition.repetition_rate_hz, alternating_hz, symbols);
            else
                key = random_key(symbols, seed);
            SynthSpec spec = cfg.spec(std::move(key));
            spec.seed = seed;
            const PowerTrace t = generate_trace(spec);
            run.write(name + ".ptrc", encode_trace(t));
            if (csv)
                run.write(name + ".csv", export_trace_csv(t));
            run.finish(out);
        } else if (synth_dataset->parsed()) {
            Run run("synth dataset", argc, argv, out_dir);
            ExperimentConfig cfg = run.config(config_path);
            run.seed(seed);
            run.param("keys", keys);
            run.param("symbols", symbols);
            for (std::size_t i = 0; i < keys; i++) {
                SynthSpec spec = cfg.spec(random_key(symbols, seed + i));
                spec.seed = seed + i;
                run.write(key_id(i) + ".ptrc", encode_trace(generate_trace(spec)));
            }
            run.finish(out);
        } else if (synth_points->parsed()) {
            Run run("synth points", argc, argv, out_dir);
            ExperimentConfig cfg = run.config(config_path);
            run.seed(seed);
            const auto pats = parse_patterns(patterns);
            const auto pts =
                average_power_points(cfg, pats, hours, per_pattern, capture_symbols, seed);
            run.write("points.csv", points_csv(pts));
            run.finish(out);
        } else if (fit->parsed()) {
            Run run("fit-rise", argc, argv, out_dir);
            const PowerTrace t = decode_trace(run.read(trace_path), trace_path);
            const double fs = t.config().sample_rate_hz;
            const auto b = static_cast<std::size_t>(std::max(0.0, std::round(from_s * fs)));
            const std::size_t e = to_s > 0 ? std::min(t.size(), static_cast<std::size_t>(std::round(to_s * fs)))
                                           : t.size();
            if (b >= e)
                throw DomainError("empty fit window");
            AcquisitionConfig acq = t.config();
            acq.trigger_offset_samples = 0;
            const auto s = t.samples().subspan(b, e - b);
            const PowerTrace w(std::vector<double>(s.begin(), s.end()), acq);
            const RiseFit f = fit_rise(w);
            run.write("rise.csv", rise_csv(f));
            out << "sigma " << f.sigma << " 1/s, t_r " << f.t_r << " s, BW "
                << system_bandwidth(f.t_r) << " Hz\n";
            run.finish(out);
        } else if (avg->parsed()) {
            Run run("avg-analysis", argc, argv, out_dir);
            const auto series = parse_points_csv(run.read(points_path));
            const auto a = analyze_average_power(series, gate_level);
            run.write("drift.csv", drift_csv(a.drift));
            run.write("box_stats.csv", box_stats_csv(a.summary));
            run.write("summary.csv", "rank_correlation,gated_points\n" +
                                         detail::format_double(a.summary.rank_correlation) +
                                         "," + std::to_string(a.gated_points) + "\n");
            run.finish(out);
        } else if (lowfreq->parsed()) {
            Run run("lowfreq", argc, argv, out_dir);
            ExperimentConfig cfg = run.config(config_path);
            run.seed(seed);
            const SweepSettings s{from_hz, to_hz, step_hz, traces, duration_s, seed};
            const auto rows = lowfreq_sweep(cfg, s);
            run.write("pa_table.csv", pa_table_csv(rows));
            run.write("pa_summary.csv", sweep_summary_csv(summarize_sweep(rows)));
            run.finish(out);
        } else if (fp_build->parsed()) {
            Run run("fingerprint build", argc, argv, out_dir);
            RunConfig rc;
            if (!config_path.empty())
                rc = run.config(config_path).run;
            if (L == 0)
                L = rc.length_l;
            if (band_lo)
                rc.band.lo_hz = *band_lo;
            if (band_hi)
                rc.band.hi_hz = *band_hi;
            if (min_occ)
                rc.min_occurrences = *min_occ;
            std::vector<PowerTrace> ds;
            for (const auto &p : expand_traces(trace_args))
                ds.push_back(decode_trace(run.read(p), p.string()));
            const auto lib = build_library(ds, L, rc.band, rc.min_occurrences);
            run.write("library.fplb", encode_library(lib));
            run.finish(out);
        } else if (fp_corr->parsed()) {
            Run run("fingerprint corr", argc, argv, out_dir);
            const auto lib = decode_library(run.read(library_path), library_path);
            const auto m = library_correlation_matrix(lib, parse_feature_mode(mode_name));
            run.write("matrix.csv", matrix_csv(m));
            run.write("profile.csv", profile_csv(diagonal_profile(m, lib.length_l)));
            run.finish(out);
        } else if (attack_run->parsed()) {
            Run run("attack run", argc, argv, out_dir);
            const auto lib = decode_library(run.read(library_path), library_path);
            const PowerTrace t = decode_trace(run.read(trace_path), trace_path);
            const AttackStrategy st{L == 0 ? lib.length_l : L, dn, parse_feature_mode(mode_name),
                                    lib.band};
            PredictionReport r = run_attack(t, lib, st);
            std::optional<SymbolSequence> truth;
            if (!truth_path.empty())
                truth = parse_key(run.read(truth_path));
            else if (t.label())
                truth = *t.label();
            run.write("predicted.key", r.predicted.to_string() + "\n");
            if (truth) {
                r = evaluate(std::move(r), *truth);
                const AttackRow row{fs::path(trace_path).stem().string(), r.length_l, r.delta_n,
                                    r.predicted.size(), *r.pa_percent, r.threshold_percent,
                                    *r.success};
                run.write("attack.csv", attack_table_csv(std::span(&row, 1)));
                out << "PA " << detail::format_fixed(*r.pa_percent, 3) << "% over "
                    << r.predicted.size() << " symbols, threshold "
                    << detail::format_fixed(r.threshold_percent, 3) << "%, "
                    << (*r.success ? "success" : "no success") << "\n";
            } else {
                out << "threshold " << detail::format_fixed(r.threshold_percent, 3)
                    << "% (no truth available)\n";
            }
            if (steps)
                run.write("steps.csv", steps_csv(r, truth));
            run.finish(out);
        } else if (rep_pa->parsed()) {
            Run run("report pa-summary", argc, argv, out_dir);
            const auto rows = parse_pa_table_csv(run.read(table_path));
            if (rows.empty())
                throw DomainError("PA table has no rows");
            run.write("pa_summary.csv", sweep_summary_csv(summarize_sweep(rows)));
            run.finish(out);
        } else if (rep_heat->parsed()) {
            Run run("report heatmap", argc, argv, out_dir);
            run.write("heatmap.csv", heatmap_csv(parse_matrix_csv(run.read(matrix_path))));
            run.finish(out);
        } else if (rep_att->parsed()) {
            Run run("report attack-summary", argc, argv, out_dir);
            std::vector<AttackSummary> sums;
            std::vector<std::string> labels;
            for (const auto &p : table_args) {
                sums.push_back(summarize_attacks(parse_attack_table_csv(run.read(p))));
                labels.push_back(fs::path(p).parent_path().filename().string() + "/" +
                                 fs::path(p).stem().string());
            }
            run.write("attack_summary.csv", attack_summary_csv(sums, labels));
            run.finish(out);
        }
    } catch (const Error &e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error &e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace qkdsca::cli
