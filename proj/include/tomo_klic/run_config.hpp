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


#ifndef TOMO_KLIC_RUN_CONFIG_HPP
#define TOMO_KLIC_RUN_CONFIG_HPP

#include "calibration.hpp"
#include "common.hpp"
#include "detection.hpp"
#include "dictionary.hpp"
#include "experiments.hpp"
#include "scenario.hpp"
#include "signal_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tomo_klic
{
    // JSON run configuration shared by every command-line subcommand. See README for the schema.
    struct RunConfig
    {
        // geometry
        std::optional<std::filesystem::path> geometry_csv; // empty: built-in reference geometry
        std::optional<std::filesystem::path> geometry_meta;

        // grid; velocities in cm/yr, thermal coefficients in mm/degC
        double s_min = -177.0, s_max = 177.0;
        double v_min_cm = -1.0, v_max_cm = 1.0;
        std::optional<double> s_step, v_step_cm; // empty: half the Rayleigh resolution
        std::optional<AxisSpec> thermal_mm;

        // detector
        std::string detector = "klic"; // "klic" or "supglrt"
        DetectorConfig klic{};
        std::size_t max_pairs = 5'000'000;

        // calibration
        double target_pfa = 1e-3;
        std::size_t calibration_trials = 100000;
        std::uint64_t calibration_seed = 1;
        std::filesystem::path calibration_file = "calibration.json";
        SupGlrtCalibrationMode supglrt_mode = SupGlrtCalibrationMode::per_stage;

        ScenarioConfig scenario{};

        std::vector<double> convergence_snr_db{3.0, 6.0};
        std::vector<std::size_t> convergence_hypotheses{0, 1, 2, 3};
        std::size_t convergence_trials = 1000;
        std::uint64_t convergence_seed = 3;

        std::vector<double> cfar_variances{1.0, 10.0, 100.0, 1000.0};
        std::size_t cfar_trials = 20000;
        std::uint64_t cfar_seed = 4;
        bool cfar_common_random_numbers = false;

        BuildingConfig building{};

        RhoTuningConfig tune{};

        std::optional<std::filesystem::path> stack;
        std::string map_format = "csv";

        std::filesystem::path output_dir = "out";
        std::size_t threads = 0;
        nlohmann::json source = nlohmann::json::object(); // parsed document, echoed in manifests
    };

    namespace detail
    {
        inline void reject_unknown(const nlohmann::json &j, const std::set<std::string> &known, const std::string &where)
        {
            if (!j.is_object())
                throw config_error(where + ": expected an object");
            for (auto it = j.begin(); it != j.end(); ++it)
                if (!known.count(it.key()))
                    throw config_error(where + ": unknown key '" + it.key() + "'");
        }

        inline std::pair<double, double> range(const nlohmann::json &j, const std::string &where)
        {
            if (!j.is_array() || j.size() != 2)
                throw config_error(where + ": expected [min, max]");
            return {j[0].get<double>(), j[1].get<double>()};
        }

        inline SupportMode support_mode(const std::string &s)
        {
            if (s == "top_k")
                return SupportMode::top_k;
            if (s == "local_peaks")
                return SupportMode::local_peaks;
            throw config_error("cs.support must be 'top_k' or 'local_peaks'");
        }
    }

    inline RunConfig parse_run_config(const nlohmann::json &doc, const std::filesystem::path &base_dir = {})
    {
        using detail::reject_unknown;
        RunConfig c;
        c.source = doc;
        auto path = [&](const std::string &p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base_dir / p; };
        try
        {
            reject_unknown(doc, {"geometry", "grid", "detector", "calibration", "scenario", "convergence", "cfar",
                                 "building", "tune_rho", "detect", "output_dir", "threads"},
                           "config");
            if (doc.contains("geometry"))
            {
                const auto &g = doc["geometry"];
                if (g.is_string())
                {
                    if (g.get<std::string>() != "reference")
                        c.geometry_csv = path(g.get<std::string>());
                }
                else
                {
                    reject_unknown(g, {"csv", "meta"}, "geometry");
                    c.geometry_csv = path(g.at("csv").get<std::string>());
                    if (g.contains("meta"))
                        c.geometry_meta = path(g["meta"].get<std::string>());
                }
            }
            if (doc.contains("grid"))
            {
                const auto &g = doc["grid"];
                reject_unknown(g, {"elevation_m", "velocity_cm_yr", "elevation_step_m", "velocity_step_cm_yr", "thermal_mm_c"},
                               "grid");
                if (g.contains("elevation_m"))
                    std::tie(c.s_min, c.s_max) = detail::range(g["elevation_m"], "grid.elevation_m");
                if (g.contains("velocity_cm_yr"))
                    std::tie(c.v_min_cm, c.v_max_cm) = detail::range(g["velocity_cm_yr"], "grid.velocity_cm_yr");
                if (g.contains("elevation_step_m"))
                    c.s_step = g["elevation_step_m"].get<double>();
                if (g.contains("velocity_step_cm_yr"))
                    c.v_step_cm = g["velocity_step_cm_yr"].get<double>();
                if (g.contains("thermal_mm_c"))
                {
                    const auto &t = g["thermal_mm_c"];
                    reject_unknown(t, {"min", "max", "spacing"}, "grid.thermal_mm_c");
                    c.thermal_mm = AxisSpec{t.at("min").get<double>(), t.at("max").get<double>(), t.at("spacing").get<double>()};
                }
            }
            if (doc.contains("detector"))
            {
                const auto &d = doc["detector"];
                reject_unknown(d, {"kind", "kmax", "rho", "zoom", "normalize", "max_pairs", "cs"}, "detector");
                c.detector = d.value("kind", c.detector);
                if (c.detector != "klic" && c.detector != "supglrt")
                    throw config_error("detector.kind must be 'klic' or 'supglrt'");
                c.klic.kmax = d.value("kmax", c.klic.kmax);
                c.klic.rho = d.value("rho", c.klic.rho);
                c.klic.zoom = d.value("zoom", c.klic.zoom);
                c.klic.normalize = d.value("normalize", c.klic.normalize);
                c.max_pairs = d.value("max_pairs", c.max_pairs);
                if (d.contains("cs"))
                {
                    const auto &s = d["cs"];
                    reject_unknown(s, {"max_iterations", "stop_epsilon", "magnitude_floor", "noise_variance", "support"},
                                   "detector.cs");
                    c.klic.cs.max_iterations = s.value("max_iterations", c.klic.cs.max_iterations);
                    c.klic.cs.stop_epsilon = s.value("stop_epsilon", c.klic.cs.stop_epsilon);
                    c.klic.cs.magnitude_floor = s.value("magnitude_floor", c.klic.cs.magnitude_floor);
                    c.klic.cs.noise_variance = s.value("noise_variance", c.klic.cs.noise_variance);
                    if (s.contains("support"))
                        c.klic.cs.support = detail::support_mode(s["support"].get<std::string>());
                }
            }
            if (doc.contains("calibration"))
            {
                const auto &k = doc["calibration"];
                reject_unknown(k, {"target_pfa", "trials", "seed", "file", "supglrt_mode"}, "calibration");
                c.target_pfa = k.value("target_pfa", c.target_pfa);
                c.calibration_trials = k.value("trials", c.calibration_trials);
                c.calibration_seed = k.value("seed", c.calibration_seed);
                if (k.contains("file"))
                    c.calibration_file = path(k["file"].get<std::string>());
                const auto mode = k.value("supglrt_mode", std::string("per_stage"));
                if (mode == "per_stage")
                    c.supglrt_mode = SupGlrtCalibrationMode::per_stage;
                else if (mode == "joint")
                    c.supglrt_mode = SupGlrtCalibrationMode::joint;
                else
                    throw config_error("calibration.supglrt_mode must be 'per_stage' or 'joint'");
            }
            else
                c.calibration_file = path(c.calibration_file.string());
            if (doc.contains("scenario"))
            {
                const auto &s = doc["scenario"];
                reject_unknown(s, {"hypothesis", "positions", "phases", "power_multipliers", "snr_db", "trials", "seed",
                                   "noise_variance", "separation_m"},
                               "scenario");
                c.scenario.hypothesis = s.value("hypothesis", c.scenario.hypothesis);
                c.scenario.power_multipliers =
                    s.value("power_multipliers", equal_power(c.scenario.hypothesis));
                const auto pos = s.value("positions", std::string("fixed"));
                if (pos != "fixed" && pos != "random")
                    throw config_error("scenario.positions must be 'fixed' or 'random'");
                c.scenario.positions = pos == "fixed" ? PositionMode::fixed : PositionMode::random;
                const auto ph = s.value("phases", std::string("zero"));
                if (ph != "zero" && ph != "random")
                    throw config_error("scenario.phases must be 'zero' or 'random'");
                c.scenario.phases = ph == "zero" ? PhaseMode::zero : PhaseMode::random;
                c.scenario.snr_db = s.value("snr_db", c.scenario.snr_db);
                c.scenario.n_mc = s.value("trials", c.scenario.n_mc);
                c.scenario.seed = s.value("seed", c.scenario.seed);
                c.scenario.noise_variance = s.value("noise_variance", c.scenario.noise_variance);
                c.scenario.separation_m = s.value("separation_m", c.scenario.separation_m);
            }
            if (doc.contains("convergence"))
            {
                const auto &s = doc["convergence"];
                reject_unknown(s, {"snr_db", "hypotheses", "trials", "seed"}, "convergence");
                c.convergence_snr_db = s.value("snr_db", c.convergence_snr_db);
                c.convergence_hypotheses = s.value("hypotheses", c.convergence_hypotheses);
                c.convergence_trials = s.value("trials", c.convergence_trials);
                c.convergence_seed = s.value("seed", c.convergence_seed);
            }
            if (doc.contains("cfar"))
            {
                const auto &s = doc["cfar"];
                reject_unknown(s, {"noise_variances", "trials", "seed", "common_random_numbers"}, "cfar");
                c.cfar_variances = s.value("noise_variances", c.cfar_variances);
                c.cfar_trials = s.value("trials", c.cfar_trials);
                c.cfar_seed = s.value("seed", c.cfar_seed);
                c.cfar_common_random_numbers = s.value("common_random_numbers", c.cfar_common_random_numbers);
            }
            if (doc.contains("building"))
            {
                const auto &s = doc["building"];
                reject_unknown(s, {"height_m", "near_pixels", "mid_pixels", "far_pixels", "snr_db", "g_floor", "g_roof",
                                   "g_facade", "velocity_cm_yr", "trials", "seed", "snap_to_grid"},
                               "building");
                auto &b = c.building;
                b.height_m = s.value("height_m", b.height_m);
                b.n_near = s.value("near_pixels", b.n_near);
                b.n_mid = s.value("mid_pixels", b.n_mid);
                b.n_far = s.value("far_pixels", b.n_far);
                b.snr_db = s.value("snr_db", b.snr_db);
                b.g_floor = s.value("g_floor", b.g_floor);
                b.g_roof = s.value("g_roof", b.g_roof);
                b.g_facade = s.value("g_facade", b.g_facade);
                b.velocity_m_yr = s.value("velocity_cm_yr", 100.0 * b.velocity_m_yr) / 100.0;
                b.n_mc = s.value("trials", b.n_mc);
                b.seed = s.value("seed", b.seed);
                b.snap_to_grid = s.value("snap_to_grid", b.snap_to_grid);
            }
            if (doc.contains("tune_rho"))
            {
                const auto &s = doc["tune_rho"];
                reject_unknown(s, {"target", "snr_db", "h1_trials", "noise_trials", "seed", "rho_min", "rho_max", "rho_step"},
                               "tune_rho");
                auto &t = c.tune;
                t.target_misclass = s.value("target", t.target_misclass);
                t.snr_db = s.value("snr_db", t.snr_db);
                t.n_h1 = s.value("h1_trials", t.n_h1);
                t.n_noise = s.value("noise_trials", t.n_noise);
                t.seed = s.value("seed", t.seed);
                const double lo = s.value("rho_min", 1.1), hi = s.value("rho_max", 10.0), step = s.value("rho_step", 0.1);
                if (!(step > 0.0) || hi < lo || !(lo > 1.0))
                    throw config_error("tune_rho: need 1 < rho_min <= rho_max and rho_step > 0");
                t.rho_grid.clear();
                for (std::size_t i = 0; lo + double(i) * step <= hi * (1.0 + 1e-12); ++i)
                    t.rho_grid.push_back(lo + double(i) * step);
            }
            if (doc.contains("detect"))
            {
                const auto &s = doc["detect"];
                reject_unknown(s, {"stack", "format"}, "detect");
                if (s.contains("stack"))
                    c.stack = path(s["stack"].get<std::string>());
                c.map_format = s.value("format", c.map_format);
                if (c.map_format != "csv" && c.map_format != "json")
                    throw config_error("detect.format must be 'csv' or 'json'");
            }
            c.output_dir = path(doc.value("output_dir", std::string("out")));
            c.threads = doc.value("threads", c.threads);
        }
        catch (const nlohmann::json::exception &e)
        {
            throw config_error(std::string("configuration: ") + e.what());
        }
        c.tune.pfa = c.target_pfa;
        c.scenario.validate();
        return c;
    }

    inline RunConfig load_run_config(const std::filesystem::path &file)
    {
        std::ifstream in(file);
        if (!in)
            throw config_error("cannot open configuration file " + file.string());
        nlohmann::json doc;
        try
        {
            doc = nlohmann::json::parse(in, nullptr, true, true); // comments allowed
        }
        catch (const nlohmann::json::exception &e)
        {
            throw config_error("configuration file " + file.string() + " is not valid JSON: " + e.what());
        }
        return parse_run_config(doc, file.parent_path());
    }

    inline AcquisitionGeometry load_geometry(const RunConfig &c)
    {
        if (!c.geometry_csv)
            return reference_geometry();
        return read_geometry(*c.geometry_csv, c.geometry_meta);
    }

    inline ParameterGrid build_run_grid(const RunConfig &c, const AcquisitionGeometry &geometry)
    {
        const auto res = rayleigh_resolutions(geometry);
        const double ds = c.s_step.value_or(0.5 * res.elevation_m);
        const double dv = c.v_step_cm ? *c.v_step_cm / 100.0 : 0.5 * res.velocity_m_yr;
        std::optional<AxisSpec> thermal;
        if (c.thermal_mm)
            thermal = AxisSpec{c.thermal_mm->min / 1000.0, c.thermal_mm->max / 1000.0, c.thermal_mm->spacing / 1000.0};
        return build_grid({c.s_min, c.s_max, ds}, {c.v_min_cm / 100.0, c.v_max_cm / 100.0, dv}, thermal);
    }
}

#endif
