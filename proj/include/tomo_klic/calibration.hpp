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


#ifndef TOMO_KLIC_CALIBRATION_HPP
#define TOMO_KLIC_CALIBRATION_HPP

#include "common.hpp"
#include "detection.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "scenario.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

namespace tomo_klic
{
    // ============================================================================================
    // Quantile rule and provenance
    // ============================================================================================

    struct ThresholdEstimate
    {
        double threshold = 0.0;
        std::size_t order_index = 0; // 1-based order statistic, 0 when Pfa = 1
        std::vector<double> tail;    // largest statistics, descending
    };

    // eta = the ceil((1 - Pfa) n)-th smallest statistic, so that at most floor(Pfa n) trials exceed it.
    // Pfa = 1 returns -inf (H0 is never accepted).
    inline ThresholdEstimate empirical_threshold(std::vector<double> stats, double pfa, std::size_t tail_size = 20)
    {
        if (!(pfa > 0.0 && pfa <= 1.0))
            throw config_error("empirical_threshold: target Pfa must lie in (0, 1]");
        if (stats.empty())
            throw calibration_error("empirical_threshold: no statistics");
        std::sort(stats.begin(), stats.end());
        if (stats.front() == stats.back())
            throw calibration_error("empirical_threshold: all " + std::to_string(stats.size()) +
                                    " statistics are equal; the noise model is degenerate");
        ThresholdEstimate out;
        for (std::size_t i = 0; i < std::min(tail_size, stats.size()); ++i)
            out.tail.push_back(stats[stats.size() - 1 - i]);
        if (pfa >= 1.0)
        {
            out.threshold = -infinity;
            return out;
        }
        const double pos = (1.0 - pfa) * double(stats.size());
        auto m = std::size_t(std::ceil(pos - 1e-9 * std::max(1.0, pos)));
        if (m == 0)
        {
            out.threshold = -infinity;
            return out;
        }
        m = std::min(m, stats.size());
        out.order_index = m;
        out.threshold = stats[m - 1];
        return out;
    }

    // JSON has no infinities; they are written as strings
    inline nlohmann::json number_to_json(double v)
    {
        if (std::isfinite(v))
            return v;
        if (std::isnan(v))
            return "nan";
        return v > 0 ? "inf" : "-inf";
    }

    inline double number_from_json(const nlohmann::json &j)
    {
        if (j.is_number())
            return j.get<double>();
        if (j.is_string())
        {
            const auto s = j.get<std::string>();
            if (s == "inf")
                return infinity;
            if (s == "-inf")
                return -infinity;
            if (s == "nan")
                return std::numeric_limits<double>::quiet_NaN();
        }
        throw data_error("expected a number, got " + j.dump());
    }

    inline nlohmann::json describe(const AcquisitionGeometry &g)
    {
        nlohmann::json j{{"baselines_m", g.baselines_m()},
                         {"epochs_yr", g.epochs_yr()},
                         {"wavelength_m", g.wavelength_m()},
                         {"range_m", g.range_m()},
                         {"incidence_rad", g.incidence_rad()}};
        if (g.temperatures_c())
            j["temperatures_c"] = *g.temperatures_c();
        return j;
    }

    inline nlohmann::json describe(const ParameterGrid &grid)
    {
        auto axis = [](const GridAxis &a) { return nlohmann::json{{"min", a.min}, {"spacing", a.spacing}, {"count", a.count}}; };
        nlohmann::json j{{"elevation", axis(grid.elevation())}, {"velocity", axis(grid.velocity())}};
        if (grid.thermal())
            j["thermal"] = axis(*grid.thermal());
        return j;
    }

    inline nlohmann::json describe(const CsConfig &cs)
    {
        return {{"max_iterations", cs.max_iterations},
                {"stop_epsilon", cs.stop_epsilon},
                {"magnitude_floor", cs.magnitude_floor},
                {"noise_variance", cs.noise_variance},
                {"support", cs.support == SupportMode::top_k ? "top_k" : "local_peaks"}};
    }

    // Everything that shapes the null distribution of the statistic; the threshold itself is excluded.
    inline std::string config_hash(const Dictionary &dictionary, const DetectorConfig &cfg, const std::string &detector)
    {
        nlohmann::json j{{"detector", detector},
                         {"geometry", describe(dictionary.geometry())},
                         {"grid", describe(dictionary.grid())},
                         {"kmax", cfg.kmax}};
        if (detector == "klic")
        {
            j["rho"] = cfg.rho;
            j["cs"] = describe(cfg.cs);
            j["zoom"] = cfg.zoom;
            j["normalize"] = cfg.normalize;
        }
        return hex64(fnv1a64(j.dump()));
    }

    struct CalibrationResult
    {
        std::string detector = "klic"; // "klic" or "supglrt"
        std::string mode = "single";   // supglrt: "per_stage" or "joint"
        std::vector<double> thresholds;
        double target_pfa = 1e-3;
        std::size_t trials = 0;
        std::uint64_t seed = 0;
        std::string config_hash;
        bool full_fidelity = false; // trials >= 100 / Pfa
        std::vector<std::size_t> order_index;
        std::vector<std::vector<double>> tail; // per threshold
        std::vector<std::string> notes;
    };

    inline nlohmann::json to_json(const CalibrationResult &r)
    {
        nlohmann::json th = nlohmann::json::array(), tails = nlohmann::json::array();
        for (double t : r.thresholds)
            th.push_back(number_to_json(t));
        for (const auto &tail : r.tail)
        {
            nlohmann::json a = nlohmann::json::array();
            for (double v : tail)
                a.push_back(number_to_json(v));
            tails.push_back(a);
        }
        return {{"detector", r.detector},   {"mode", r.mode},           {"thresholds", th},
                {"target_pfa", r.target_pfa}, {"trials", r.trials},     {"seed", r.seed},
                {"config_hash", r.config_hash}, {"full_fidelity", r.full_fidelity},
                {"order_index", r.order_index}, {"tail", tails},        {"notes", r.notes}};
    }

    inline CalibrationResult calibration_from_json(const nlohmann::json &j)
    {
        try
        {
            CalibrationResult r;
            r.detector = j.at("detector").get<std::string>();
            r.mode = j.value("mode", std::string("single"));
            for (const auto &t : j.at("thresholds"))
                r.thresholds.push_back(number_from_json(t));
            r.target_pfa = j.at("target_pfa").get<double>();
            r.trials = j.at("trials").get<std::size_t>();
            r.seed = j.at("seed").get<std::uint64_t>();
            r.config_hash = j.at("config_hash").get<std::string>();
            r.full_fidelity = j.value("full_fidelity", false);
            r.order_index = j.value("order_index", std::vector<std::size_t>{});
            if (j.contains("tail"))
                for (const auto &tail : j.at("tail"))
                {
                    r.tail.emplace_back();
                    for (const auto &v : tail)
                        r.tail.back().push_back(number_from_json(v));
                }
            r.notes = j.value("notes", std::vector<std::string>{});
            if (r.thresholds.empty())
                throw data_error("calibration file lists no thresholds");
            return r;
        }
        catch (const nlohmann::json::exception &e)
        {
            throw data_error(std::string("malformed calibration document: ") + e.what());
        }
    }

    inline void write_calibration(const CalibrationResult &r, const std::filesystem::path &path)
    {
        std::ofstream out(path);
        if (!out)
            throw data_error("cannot write calibration file " + path.string());
        out << to_json(r).dump(2) << '\n';
    }

    inline CalibrationResult read_calibration(const std::filesystem::path &path)
    {
        std::ifstream in(path);
        if (!in)
            throw data_error("cannot open calibration file " + path.string());
        nlohmann::json j;
        try
        {
            in >> j;
        }
        catch (const nlohmann::json::exception &e)
        {
            throw data_error("calibration file " + path.string() + " is not valid JSON: " + e.what());
        }
        return calibration_from_json(j);
    }

    // Refuses calibration documents produced for a different geometry, grid or detector setup
    inline void verify_provenance(const CalibrationResult &r, const std::string &expected_hash, const std::string &detector)
    {
        if (r.detector != detector)
            throw provenance_error("calibration was produced for detector '" + r.detector + "', not '" + detector +
                                   "'; rerun `calibrate` with this configuration");
        if (r.config_hash != expected_hash)
            throw provenance_error("calibration config hash " + r.config_hash + " does not match the current " +
                                   "configuration (" + expected_hash + "); rerun `calibrate` with this configuration");
    }

    inline void check_trial_budget(std::size_t n, double pfa, std::vector<std::string> &notes)
    {
        if (pfa >= 1.0)
            return;
        if (double(n) < 10.0 / pfa)
            throw config_error("calibration needs at least 10 / Pfa = " + std::to_string(std::llround(10.0 / pfa)) +
                               " trials, got " + std::to_string(n));
        if (double(n) < 100.0 / pfa)
        {
            const std::string msg = "reduced-fidelity calibration: " + std::to_string(n) + " trials < 100 / Pfa";
            std::clog << "warning: " << msg << '\n';
            notes.push_back(msg);
        }
    }

    // ============================================================================================
    // Per-trial log ratios, reused for thresholds at several (Kmax, rho)
    // ============================================================================================

    // N log(x^H x / x^H P_perp_k x) for k = 1..kmax per trial, row-major
    struct RatioSet
    {
        std::size_t kmax = 0;
        std::vector<double> values;

        std::size_t size() const { return kmax ? values.size() / kmax : 0; }
        std::span<const double> trial(std::size_t i) const { return {values.data() + i * kmax, kmax}; }

        // Penalised statistic restricted to k <= k_limit
        KlicStatistic statistic(std::size_t i, std::size_t k_limit, double rho) const
        {
            return klic_from_log_ratios(trial(i).first(std::min(k_limit, kmax)), rho);
        }

        std::vector<double> statistics(std::size_t k_limit, double rho) const
        {
            std::vector<double> out(size());
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = statistic(i, k_limit, rho).value;
            return out;
        }
    };

    // pixel(i) must be a pure function of i; results are stored by index
    inline RatioSet collect_log_ratios(const Dictionary &dictionary, const DetectorConfig &cfg, std::size_t n,
                                       const std::function<CVector(std::size_t)> &pixel, std::size_t threads)
    {
        DetectorConfig probe = cfg;
        probe.threshold = infinity;
        RatioSet out{cfg.kmax, std::vector<double>(n * cfg.kmax)};
        parallel_for(n, threads, [&](std::size_t i)
        {
            const auto o = klic_detect(pixel(i), dictionary, probe);
            std::copy(o.stage_statistics.begin(), o.stage_statistics.end(), out.values.begin() + std::ptrdiff_t(i * cfg.kmax));
        });
        return out;
    }

    inline std::function<CVector(std::size_t)> noise_source(const AcquisitionGeometry &geometry, std::uint64_t seed,
                                                            double noise_variance = 1.0)
    {
        return [&geometry, seed, noise_variance](std::size_t i)
        {
            Rng rng = trial_rng(seed, i);
            return synthesize_pixel(geometry, {}, noise_variance, rng);
        };
    }

    inline CalibrationResult threshold_from_ratios(const RatioSet &ratios, const DetectorConfig &cfg, double pfa)
    {
        CalibrationResult r;
        r.detector = "klic";
        r.target_pfa = pfa;
        r.trials = ratios.size();
        const auto est = empirical_threshold(ratios.statistics(cfg.kmax, cfg.rho), pfa);
        r.thresholds = {est.threshold};
        r.order_index = {est.order_index};
        r.tail = {est.tail};
        r.full_fidelity = pfa >= 1.0 || double(r.trials) >= 100.0 / pfa;
        return r;
    }

    // Noise-only (sigma^2 = 1) Monte Carlo for the single KLIC-D threshold
    inline CalibrationResult calibrate_klic_threshold(const Dictionary &dictionary, const DetectorConfig &cfg,
                                                      double target_pfa, std::size_t n_trials, std::uint64_t seed,
                                                      std::size_t threads = 0)
    {
        cfg.validate(dictionary.rows(), dictionary.columns());
        std::vector<std::string> notes;
        check_trial_budget(n_trials, target_pfa, notes);
        const auto ratios =
            collect_log_ratios(dictionary, cfg, n_trials, noise_source(dictionary.geometry(), seed), threads);
        CalibrationResult r = threshold_from_ratios(ratios, cfg, target_pfa);
        r.seed = seed;
        r.config_hash = config_hash(dictionary, cfg, "klic");
        r.notes = notes;
        return r;
    }

    enum class SupGlrtCalibrationMode
    {
        per_stage, // P(Lambda_k >= eta_k | H0) = Pfa for every stage
        joint      // eta_1 fixes the overall Pfa; later stages use the rate conditional on reaching them
    };

    // Lambda_1..Lambda_Kmax per trial, row-major
    inline std::vector<double> collect_supglrt_statistics(const SupGlrt &sup, std::size_t n,
                                                          const std::function<CVector(std::size_t)> &pixel,
                                                          std::size_t threads)
    {
        const std::size_t kmax = sup.kmax();
        std::vector<double> out(n * kmax);
        parallel_for(n, threads, [&](std::size_t i)
        {
            const auto st = sup.statistics(pixel(i));
            std::copy(st.lambda.begin(), st.lambda.end(), out.begin() + std::ptrdiff_t(i * kmax));
        });
        return out;
    }

    inline CalibrationResult supglrt_thresholds_from_statistics(const std::vector<double> &lambda, std::size_t kmax,
                                                                double pfa, SupGlrtCalibrationMode mode)
    {
        const std::size_t n = lambda.size() / kmax;
        CalibrationResult r;
        r.detector = "supglrt";
        r.mode = mode == SupGlrtCalibrationMode::per_stage ? "per_stage" : "joint";
        r.target_pfa = pfa;
        r.trials = n;
        r.full_fidelity = pfa >= 1.0 || double(n) >= 100.0 / pfa;
        std::vector<bool> reaching(n, true);
        for (std::size_t k = 0; k < kmax; ++k)
        {
            std::vector<double> all, reached;
            for (std::size_t i = 0; i < n; ++i)
            {
                all.push_back(lambda[i * kmax + k]);
                if (reaching[i])
                    reached.push_back(lambda[i * kmax + k]);
            }
            std::vector<double> *sample = &all;
            if (mode == SupGlrtCalibrationMode::joint && k > 0)
            {
                if (double(reached.size()) >= 10.0 / pfa)
                    sample = &reached;
                else
                    r.notes.push_back("stage " + std::to_string(k + 1) + ": only " + std::to_string(reached.size()) +
                                      " noise trials reach this stage; unconditional quantile used");
            }
            const auto est = empirical_threshold(std::move(*sample), pfa);
            r.thresholds.push_back(est.threshold);
            r.order_index.push_back(est.order_index);
            r.tail.push_back(est.tail);
            for (std::size_t i = 0; i < n; ++i)
                reaching[i] = reaching[i] && lambda[i * kmax + k] >= est.threshold;
        }
        return r;
    }

    inline CalibrationResult calibrate_supglrt_thresholds(const SupGlrt &sup, double target_pfa, std::size_t n_trials,
                                                          std::uint64_t seed, std::size_t threads = 0,
                                                          SupGlrtCalibrationMode mode = SupGlrtCalibrationMode::per_stage)
    {
        std::vector<std::string> notes;
        check_trial_budget(n_trials, target_pfa, notes);
        const auto lambda =
            collect_supglrt_statistics(sup, n_trials, noise_source(sup.dictionary().geometry(), seed), threads);
        CalibrationResult r = supglrt_thresholds_from_statistics(lambda, sup.kmax(), target_pfa, mode);
        r.seed = seed;
        DetectorConfig cfg;
        cfg.kmax = sup.kmax();
        r.config_hash = config_hash(sup.dictionary(), cfg, "supglrt");
        r.notes.insert(r.notes.begin(), notes.begin(), notes.end());
        return r;
    }

    // ============================================================================================
    // Penalty tuning
    // ============================================================================================

    struct RhoPoint
    {
        double rho = 0.0;
        double threshold = 0.0;
        double p_accept_h2 = 0.0; // P(k_hat = 2 | H1)
        double p_accept_h2_se = 0.0;
        double p_accept_multi = 0.0; // P(k_hat >= 2 | H1)
    };

    struct RhoTuning
    {
        double rho = 0.0;
        bool reached = false;
        std::vector<RhoPoint> curve;
        std::string diagnostic;
    };

    struct RhoTuningConfig
    {
        double target_misclass = 1e-3;
        double snr_db = 15.0;
        double pfa = 1e-3;
        std::size_t n_h1 = 10000;
        std::size_t n_noise = 100000;
        std::uint64_t seed = 7;
        std::vector<double> rho_grid; // empty: 1.1, 1.2, ..., 10.0
        ScenarioConfig scenario{};    // H1 truth; fixed on-grid position by default

        std::vector<double> grid() const
        {
            if (!rho_grid.empty())
                return rho_grid;
            std::vector<double> g;
            for (int i = 11; i <= 100; ++i)
                g.push_back(0.1 * i);
            return g;
        }
    };

    // For each rho: eta(rho) from the noise ratios at the target Pfa, then P(accept H2 | H1).
    // Returns the smallest rho on the grid meeting the target.
    inline RhoTuning tune_rho_from_ratios(const RatioSet &noise, const RatioSet &h1, std::size_t kmax, double pfa,
                                          double target, const std::vector<double> &rho_grid)
    {
        if (kmax < 2 || kmax > noise.kmax || kmax > h1.kmax)
            throw config_error("tune_rho: kmax must be >= 2 and covered by the stored log ratios");
        if (rho_grid.empty())
            throw config_error("tune_rho: empty rho grid");
        RhoTuning out;
        for (double rho : rho_grid)
        {
            if (!(rho > 1.0))
                throw config_error("tune_rho: grid values must exceed 1");
            RhoPoint pt;
            pt.rho = rho;
            pt.threshold = empirical_threshold(noise.statistics(kmax, rho), pfa).threshold;
            std::size_t h2 = 0, multi = 0;
            for (std::size_t i = 0; i < h1.size(); ++i)
            {
                const auto st = h1.statistic(i, kmax, rho);
                if (st.value > pt.threshold)
                {
                    h2 += st.k_star == 2;
                    multi += st.k_star >= 2;
                }
            }
            const double n = double(h1.size());
            pt.p_accept_h2 = double(h2) / n;
            pt.p_accept_h2_se = std::sqrt(pt.p_accept_h2 * (1.0 - pt.p_accept_h2) / n);
            pt.p_accept_multi = double(multi) / n;
            out.curve.push_back(pt);
            if (!out.reached && pt.p_accept_h2 <= target)
            {
                out.reached = true;
                out.rho = rho;
            }
        }
        if (!out.reached)
        {
            out.rho = rho_grid.back();
            out.diagnostic = "target P(accept H2 | H1) = " + std::to_string(target) +
                             " not reached on the grid; smallest value " +
                             std::to_string(out.curve.back().p_accept_h2) + " at rho = " + std::to_string(out.rho);
        }
        return out;
    }

    inline RatioSet scenario_log_ratios(const Dictionary &dictionary, const DetectorConfig &cfg,
                                        const ScenarioConfig &scenario, double snr_db, std::size_t n,
                                        std::uint64_t seed, std::size_t threads)
    {
        const auto res = rayleigh_resolutions(dictionary.geometry());
        const auto &geo = dictionary.geometry();
        return collect_log_ratios(dictionary, cfg, n, [&](std::size_t i)
        {
            Rng rng = trial_rng(seed, i);
            const auto truth = draw_truth(scenario, dictionary.grid(), res, snr_db, rng);
            return synthesize_pixel(geo, truth, scenario.noise_variance, rng);
        }, threads);
    }

    inline RhoTuning tune_rho(const Dictionary &dictionary, const DetectorConfig &base, const RhoTuningConfig &tc,
                              std::size_t threads = 0)
    {
        base.validate(dictionary.rows(), dictionary.columns());
        if (tc.scenario.hypothesis != 1)
            throw config_error("tune_rho: the scenario must describe H1 truth");
        tc.scenario.validate();
        const auto noise = collect_log_ratios(dictionary, base, tc.n_noise,
                                              noise_source(dictionary.geometry(), trial_seed(tc.seed, 0)), threads);
        const auto h1 = scenario_log_ratios(dictionary, base, tc.scenario, tc.snr_db, tc.n_h1, trial_seed(tc.seed, 1),
                                            threads);
        return tune_rho_from_ratios(noise, h1, base.kmax, tc.pfa, tc.target_misclass, tc.grid());
    }
}

#endif
