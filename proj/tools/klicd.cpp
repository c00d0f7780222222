// SPDX-License-Identifier: Apache-2.0
//
// tomo-klic: multiple-scatterer detection for multibaseline SAR tomography
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------


// klicd: calibration, Monte-Carlo experiments and scene detection from one JSON configuration.

#include <tomo_klic.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

namespace fs = std::filesystem;
using namespace tomo_klic;

namespace
{
    struct Overrides
    {
        std::string config;
        std::optional<std::uint64_t> seed;
        std::optional<std::size_t> trials;
        std::optional<std::size_t> threads;
        std::optional<std::string> output;
        std::optional<std::string> calibration;
    };

    struct Setup
    {
        RunConfig cfg;
        AcquisitionGeometry geometry;
        ParameterGrid grid;
        Dictionary dictionary;
        std::unique_ptr<SupGlrt> sup;

        std::string hash() const
        {
            if (cfg.detector == "klic")
                return config_hash(dictionary, cfg.klic, "klic");
            DetectorConfig d;
            d.kmax = cfg.klic.kmax;
            return config_hash(dictionary, d, "supglrt");
        }
    };

    RunConfig load(const Overrides &o)
    {
        RunConfig c = load_run_config(o.config);
        if (o.threads)
            c.threads = *o.threads;
        if (o.output)
            c.output_dir = *o.output;
        if (o.calibration)
            c.calibration_file = *o.calibration;
        return c;
    }

    Setup prepare(RunConfig cfg)
    {
        auto geometry = load_geometry(cfg);
        auto grid = build_run_grid(cfg, geometry);
        auto dictionary = build_dictionary(geometry, grid);
        cfg.klic.validate(dictionary.rows(), dictionary.columns());
        Setup s{std::move(cfg), geometry, grid, std::move(dictionary), nullptr};
        if (s.cfg.detector == "supglrt")
            s.sup = std::make_unique<SupGlrt>(s.dictionary, s.cfg.klic.kmax, s.cfg.max_pairs);
        return s;
    }

    // Loads the calibration file and refuses it unless it was produced for this configuration
    PixelDetector calibrated_detector(Setup &s, nlohmann::json &provenance)
    {
        const auto cal = read_calibration(s.cfg.calibration_file);
        verify_provenance(cal, s.hash(), s.cfg.detector);
        provenance = {{"calibration_file", s.cfg.calibration_file.string()},
                      {"config_hash", cal.config_hash},
                      {"seed", cal.seed},
                      {"trials", cal.trials},
                      {"target_pfa", cal.target_pfa}};
        if (s.cfg.detector == "klic")
        {
            s.cfg.klic.threshold = cal.thresholds.at(0);
            return make_klic_detector(s.dictionary, s.cfg.klic);
        }
        return make_supglrt_detector(*s.sup, cal.thresholds);
    }

    fs::path output_file(const RunConfig &c, const std::string &name)
    {
        fs::create_directories(c.output_dir);
        return c.output_dir / name;
    }

    template <typename Fn>
    fs::path write_file(const RunConfig &c, const std::string &name, Fn &&fn)
    {
        const auto p = output_file(c, name);
        std::ofstream out(p);
        if (!out)
            throw data_error("cannot write " + p.string());
        fn(out);
        return p;
    }

    int cmd_calibrate(const Overrides &o)
    {
        RunConfig c = load(o);
        if (o.seed)
            c.calibration_seed = *o.seed;
        if (o.trials)
            c.calibration_trials = *o.trials;
        Setup s = prepare(c);
        const auto t0 = std::chrono::steady_clock::now();
        CalibrationResult r =
            s.cfg.detector == "klic"
                ? calibrate_klic_threshold(s.dictionary, s.cfg.klic, s.cfg.target_pfa, s.cfg.calibration_trials,
                                           s.cfg.calibration_seed, s.cfg.threads)
                : calibrate_supglrt_thresholds(*s.sup, s.cfg.target_pfa, s.cfg.calibration_trials,
                                               s.cfg.calibration_seed, s.cfg.threads, s.cfg.supglrt_mode);
        if (s.cfg.calibration_file.has_parent_path())
            fs::create_directories(s.cfg.calibration_file.parent_path());
        write_calibration(r, s.cfg.calibration_file);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "calibrated " << r.detector << " on " << r.trials << " noise trials in " << secs << " s\n";
        for (std::size_t k = 0; k < r.thresholds.size(); ++k)
            std::cout << "  eta_" << (k + 1) << " = " << r.thresholds[k] << '\n';
        std::cout << "  config hash " << r.config_hash << " -> " << s.cfg.calibration_file.string() << '\n';
        return 0;
    }

    int cmd_simulate(const Overrides &o)
    {
        RunConfig c = load(o);
        if (o.seed)
            c.scenario.seed = *o.seed;
        if (o.trials)
            c.scenario.n_mc = *o.trials;
        Setup s = prepare(c);
        nlohmann::json prov;
        const auto detector = calibrated_detector(s, prov);
        const auto table = run_scenario(s.geometry, s.grid, detector, s.cfg.klic.kmax, s.cfg.scenario, s.cfg.threads,
                                        s.cfg.detector);
        const auto csv = write_file(s.cfg, "metrics_h" + std::to_string(s.cfg.scenario.hypothesis) + ".csv",
                                    [&](std::ostream &os) { write_metrics_csv(table, os); });
        write_manifest(output_file(s.cfg, "manifest_simulate.json"), "simulate", s.cfg.source, prov, {csv});
        write_metrics_csv(table, std::cout);
        return 0;
    }

    int cmd_convergence(const Overrides &o)
    {
        RunConfig c = load(o);
        if (o.seed)
            c.convergence_seed = *o.seed;
        if (o.trials)
            c.convergence_trials = *o.trials;
        Setup s = prepare(c);
        ScenarioConfig base = s.cfg.scenario;
        const auto rows = run_convergence_study(s.dictionary, s.cfg.klic.cs, s.cfg.convergence_snr_db,
                                                s.cfg.convergence_hypotheses, s.cfg.convergence_trials,
                                                s.cfg.convergence_seed, base, s.cfg.threads);
        const auto csv = write_file(s.cfg, "convergence.csv", [&](std::ostream &os) { write_convergence_csv(rows, os); });
        write_manifest(output_file(s.cfg, "manifest_convergence.json"), "convergence", s.cfg.source,
                       {{"seed", s.cfg.convergence_seed}}, {csv});
        write_convergence_csv(rows, std::cout);
        return 0;
    }

    int cmd_cfar(const Overrides &o)
    {
        RunConfig c = load(o);
        if (o.seed)
            c.cfar_seed = *o.seed;
        if (o.trials)
            c.cfar_trials = *o.trials;
        Setup s = prepare(c);
        nlohmann::json prov;
        const auto detector = calibrated_detector(s, prov);
        const auto rows = run_cfar_sensitivity(s.geometry, detector, s.cfg.cfar_variances, s.cfg.cfar_trials,
                                               s.cfg.cfar_seed, s.cfg.cfar_common_random_numbers, s.cfg.threads);
        const auto csv = write_file(s.cfg, "cfar.csv", [&](std::ostream &os) { write_cfar_csv(rows, os); });
        write_manifest(output_file(s.cfg, "manifest_cfar.json"), "cfar", s.cfg.source, prov, {csv});
        write_cfar_csv(rows, std::cout);
        return 0;
    }

    int cmd_building(const Overrides &o, const std::optional<std::string> &stack_out)
    {
        RunConfig c = load(o);
        if (o.seed)
            c.building.seed = *o.seed;
        if (o.trials)
            c.building.n_mc = *o.trials;
        Setup s = prepare(c);
        nlohmann::json prov;
        const auto detector = calibrated_detector(s, prov);
        const auto r = run_building_scenario(s.geometry, s.grid, detector, s.cfg.klic.kmax, s.cfg.building, s.cfg.threads);
        const auto points = write_file(s.cfg, "building_points.csv", [&](std::ostream &os) { write_building_points_csv(r, os); });
        const auto counts =
            write_file(s.cfg, "building_counts.csv", [&](std::ostream &os) { write_building_counts_csv(r, s.geometry, os); });
        std::vector<fs::path> outputs{points, counts};
        if (stack_out)
        {
            // First realisation as a 1 x pixels scene
            const auto &b = s.cfg.building;
            StackWriter w(*stack_out, {stack_version, std::uint32_t(s.geometry.size()), 1, std::uint32_t(b.pixels()), false});
            for (std::size_t p = 0; p < r.pixels.size(); ++p)
                w.write_pixel(building_pixel(b, s.geometry, r.pixels[p], p, 0));
            w.close();
        }
        write_manifest(output_file(s.cfg, "manifest_building.json"), "building", s.cfg.source, prov, outputs);
        const auto grid_step_h = s.geometry.height_from_elevation(s.grid.elevation().spacing);
        const auto sum = summarize_triples(r, s.geometry, grid_step_h);
        std::cout << "triple-interference cases: " << sum.cases << ", k_hat = 3: " << sum.three_detected
                  << ", k_hat = 3 with all heights within " << grid_step_h << " m: " << sum.three_and_located << " ("
                  << 100.0 * sum.fraction() << " %)\n";
        return 0;
    }

    int cmd_detect(const Overrides &o, const std::optional<std::string> &stack, const std::optional<std::string> &format)
    {
        RunConfig c = load(o);
        if (stack)
            c.stack = *stack;
        if (format)
            c.map_format = *format;
        if (!c.stack)
            throw config_error("detect: no stack file given (--stack or detect.stack)");
        Setup s = prepare(c);
        nlohmann::json prov;
        const auto detector = calibrated_detector(s, prov);
        StackReader reader(*s.cfg.stack);
        const auto map = detect_scene(reader, s.geometry, detector, s.cfg.klic.kmax, s.cfg.threads,
                                      [](std::uint64_t done, std::uint64_t total)
                                      { std::clog << "\rdetect: " << done << " / " << total << " pixels" << std::flush; });
        std::clog << '\n';
        const auto out = write_file(s.cfg, "detection_map." + s.cfg.map_format, [&](std::ostream &os)
        {
            if (s.cfg.map_format == "csv")
                write_map_csv(map, os);
            else
                write_map_json(map, os);
        });
        write_manifest(output_file(s.cfg, "manifest_detect.json"), "detect", s.cfg.source, prov, {out});
        std::vector<std::size_t> counts(s.cfg.klic.kmax + 1, 0);
        for (const auto &r : map.records)
            counts[std::min(r.k_hat, s.cfg.klic.kmax)]++;
        for (std::size_t k = 0; k < counts.size(); ++k)
            std::cout << "H" << k << ": " << counts[k] << " pixels\n";
        return 0;
    }

    int cmd_tune_rho(const Overrides &o)
    {
        RunConfig c = load(o);
        if (o.seed)
            c.tune.seed = *o.seed;
        if (o.trials)
            c.tune.n_h1 = *o.trials;
        if (c.detector != "klic")
            throw config_error("tune-rho applies to the klic detector");
        Setup s = prepare(c);
        s.cfg.tune.scenario.hypothesis = 1;
        s.cfg.tune.scenario.power_multipliers = {1.0};
        const auto t = tune_rho(s.dictionary, s.cfg.klic, s.cfg.tune, s.cfg.threads);
        const auto csv = write_file(s.cfg, "rho_tuning.csv", [&](std::ostream &os)
        {
            os << "rho,threshold,p_accept_h2,p_accept_h2_se,p_accept_multi\n";
            for (const auto &p : t.curve)
                os << format_number(p.rho) << ',' << format_number(p.threshold) << ',' << format_number(p.p_accept_h2)
                   << ',' << format_number(p.p_accept_h2_se) << ',' << format_number(p.p_accept_multi) << '\n';
        });
        write_manifest(output_file(s.cfg, "manifest_tune_rho.json"), "tune-rho", s.cfg.source,
                       {{"rho", t.rho}, {"reached", t.reached}, {"diagnostic", t.diagnostic}}, {csv});
        std::cout << "rho = " << t.rho << (t.reached ? "" : " (target not reached)") << '\n';
        if (!t.diagnostic.empty())
            std::cout << t.diagnostic << '\n';
        return 0;
    }

    int cmd_convert(const std::string &raw, std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                    const std::string &out, bool big_endian)
    {
        const auto h = convert_cf32(raw, n, rows, cols, out, big_endian);
        std::cout << "wrote " << h.rows << " x " << h.cols << " pixels, N = " << h.images << " -> " << out << '\n';
        return 0;
    }
}

int main(int argc, char **argv)
{
    CLI::App app{"Multiple-scatterer detection for SAR tomography"};
    app.require_subcommand(1);

    Overrides o;
    auto universal = [&](CLI::App *sub, bool needs_config = true)
    {
        auto *opt = sub->add_option("-c,--config", o.config, "JSON configuration file");
        if (needs_config)
            opt->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Base seed override");
        sub->add_option("--trials", o.trials, "Monte-Carlo trial count override");
        sub->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
        sub->add_option("-o,--output", o.output, "Output directory override");
        sub->add_option("--calibration", o.calibration, "Calibration file override");
    };

    auto *calibrate = app.add_subcommand("calibrate", "Noise-only Monte Carlo threshold for the target Pfa");
    universal(calibrate);
    auto *simulate = app.add_subcommand("simulate", "Detection metrics for the configured scenario");
    universal(simulate);
    auto *convergence = app.add_subcommand("convergence", "Relative log-likelihood variation per iteration");
    universal(convergence);
    auto *cfar = app.add_subcommand("cfar", "False-alarm rate versus true noise variance");
    universal(cfar);
    auto *building = app.add_subcommand("building", "Simulated building: point cloud and per-pixel k_hat");
    universal(building);
    std::optional<std::string> stack_out;
    building->add_option("--stack-out", stack_out, "Write the first realisation as a stack file");
    auto *detect = app.add_subcommand("detect", "Per-pixel detection on a stack file");
    universal(detect);
    std::optional<std::string> stack, format;
    detect->add_option("--stack", stack, "Input stack file")->check(CLI::ExistingFile);
    detect->add_option("--format", format, "Map format")->check(CLI::IsMember({"csv", "json"}));
    auto *tune = app.add_subcommand("tune-rho", "Smallest penalty meeting the misclassification target");
    universal(tune);

    auto *convert = app.add_subcommand("convert", "Raw complex float32 pixels to a stack file");
    std::string raw, out;
    std::uint32_t n = 0, rows = 0, cols = 0;
    bool big_endian = false;
    convert->add_option("raw", raw, "Raw interleaved complex float32 file")->required()->check(CLI::ExistingFile);
    convert->add_option("out", out, "Output stack file")->required();
    convert->add_option("--images", n, "N")->required();
    convert->add_option("--rows", rows, "Rows")->required();
    convert->add_option("--cols", cols, "Columns")->required();
    convert->add_flag("--big-endian", big_endian, "Raw samples are big endian");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try
    {
        if (calibrate->parsed())
            return cmd_calibrate(o);
        if (simulate->parsed())
            return cmd_simulate(o);
        if (convergence->parsed())
            return cmd_convergence(o);
        if (cfar->parsed())
            return cmd_cfar(o);
        if (building->parsed())
            return cmd_building(o, stack_out);
        if (detect->parsed())
            return cmd_detect(o, stack, format);
        if (tune->parsed())
            return cmd_tune_rho(o);
        if (convert->parsed())
            return cmd_convert(raw, n, rows, cols, out, big_endian);
    }
    catch (const config_error &e)
    {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    }
    catch (const data_error &e)
    {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    }
    catch (const provenance_error &e)
    {
        std::cerr << "calibration provenance error: " << e.what() << '\n';
        return 4;
    }
    catch (const calibration_error &e)
    {
        std::cerr << "calibration error: " << e.what() << '\n';
        return 4;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
