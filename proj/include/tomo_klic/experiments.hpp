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


#ifndef TOMO_KLIC_EXPERIMENTS_HPP
#define TOMO_KLIC_EXPERIMENTS_HPP

#include "calibration.hpp"
#include "common.hpp"
#include "detection.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "scenario.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace tomo_klic
{
    // Any per-pixel detector: KLIC-D or Sup-GLRT bound to their thresholds
    using PixelDetector = std::function<DetectionOutcome(const CVector &)>;

    inline PixelDetector make_klic_detector(const Dictionary &dictionary, const DetectorConfig &cfg)
    {
        cfg.validate(dictionary.rows(), dictionary.columns());
        return [&dictionary, cfg](const CVector &x) { return klic_detect(x, dictionary, cfg); };
    }

    inline PixelDetector make_supglrt_detector(const SupGlrt &sup, std::vector<double> thresholds)
    {
        if (thresholds.size() != sup.kmax())
            throw config_error("make_supglrt_detector: expected one threshold per stage");
        return [&sup, thresholds = std::move(thresholds)](const CVector &x) { return sup.detect(x, thresholds); };
    }

    // ============================================================================================
    // Figures of merit
    // ============================================================================================

    struct MetricsRow
    {
        double snr_db = 0.0;
        std::size_t n_mc = 0;
        std::vector<std::size_t> counts; // trials accepting H_0..H_Kmax
        std::vector<double> p_accept;    // P(accept H_j | H_i)
        std::vector<double> p_accept_se;
        double pd = 0.0, pd_se = 0.0;    // P(k_hat >= 1)
        double pc = 0.0, pc_se = 0.0;    // P(k_hat = i)
        double rmse_k = 0.0, rmse_k_se = 0.0;
        double rmse_h_m = std::numeric_limits<double>::quiet_NaN(), rmse_h_se = 0.0;
        double rmse_v_cm_yr = std::numeric_limits<double>::quiet_NaN(), rmse_v_se = 0.0;
        std::size_t matched_pairs = 0; // pairs entering R_h and R_v
    };

    struct MetricsTable
    {
        std::string detector;
        std::size_t hypothesis = 0;
        std::size_t kmax = 0;
        std::vector<MetricsRow> rows;
    };

    // Standard error of sqrt(mean(e)) from samples e (delta method)
    inline std::pair<double, double> rmse_with_se(const std::vector<double> &squared_errors)
    {
        if (squared_errors.empty())
            return {std::numeric_limits<double>::quiet_NaN(), 0.0};
        const double n = double(squared_errors.size());
        double mean = 0.0;
        for (double e : squared_errors)
            mean += e;
        mean /= n;
        double var = 0.0;
        for (double e : squared_errors)
            var += (e - mean) * (e - mean);
        var = squared_errors.size() > 1 ? var / (n - 1.0) : 0.0;
        const double rmse = std::sqrt(mean);
        const double se = rmse > 0.0 ? std::sqrt(var / n) / (2.0 * rmse) : 0.0;
        return {rmse, se};
    }

    inline double binomial_se(double p, std::size_t n) { return n ? std::sqrt(p * (1.0 - p) / double(n)) : 0.0; }

    struct TrialRecord
    {
        std::size_t k_hat = 0;
        std::vector<double> height_sq_err;   // matched pairs, only when k_hat equals the truth count
        std::vector<double> velocity_sq_err; // [cm/yr]^2
    };

    inline TrialRecord score_trial(const std::vector<Scatterer> &truth, const DetectionOutcome &out,
                                   const AcquisitionGeometry &geometry, const RayleighResolution &res)
    {
        TrialRecord rec;
        rec.k_hat = out.k_hat;
        if (truth.empty() || out.k_hat != truth.size())
            return rec;
        std::vector<ScattererParams> t, e;
        for (const auto &s : truth)
            t.push_back(s.params);
        for (const auto &s : out.scatterers)
            e.push_back(s.params);
        const auto m = match_estimates_to_truth(t, e, res);
        for (const auto &p : m.pairs)
        {
            const double dz =
                geometry.height_from_elevation(t[p.truth].elevation_m) - geometry.height_from_elevation(e[p.estimate].elevation_m);
            const double dv = 100.0 * (t[p.truth].velocity_m_yr - e[p.estimate].velocity_m_yr);
            rec.height_sq_err.push_back(dz * dz);
            rec.velocity_sq_err.push_back(dv * dv);
        }
        return rec;
    }

    inline MetricsRow aggregate(const std::vector<TrialRecord> &trials, std::size_t hypothesis, std::size_t kmax,
                                double snr_db)
    {
        MetricsRow row;
        row.snr_db = snr_db;
        row.n_mc = trials.size();
        row.counts.assign(kmax + 1, 0);
        std::vector<double> k_err, h_err, v_err;
        for (const auto &t : trials)
        {
            row.counts[std::min(t.k_hat, kmax)]++;
            const double d = double(t.k_hat) - double(hypothesis);
            k_err.push_back(d * d);
            h_err.insert(h_err.end(), t.height_sq_err.begin(), t.height_sq_err.end());
            v_err.insert(v_err.end(), t.velocity_sq_err.begin(), t.velocity_sq_err.end());
        }
        const std::size_t n = row.n_mc;
        for (auto c : row.counts)
        {
            const double p = n ? double(c) / double(n) : 0.0;
            row.p_accept.push_back(p);
            row.p_accept_se.push_back(binomial_se(p, n));
        }
        row.pd = 1.0 - row.p_accept[0];
        row.pd_se = row.p_accept_se[0];
        row.pc = hypothesis <= kmax ? row.p_accept[hypothesis] : 0.0;
        row.pc_se = binomial_se(row.pc, n);
        std::tie(row.rmse_k, row.rmse_k_se) = rmse_with_se(k_err);
        std::tie(row.rmse_h_m, row.rmse_h_se) = rmse_with_se(h_err);
        std::tie(row.rmse_v_cm_yr, row.rmse_v_se) = rmse_with_se(v_err);
        row.matched_pairs = h_err.size();
        return row;
    }

    // Monte Carlo over the SNR grid. Trial (s, i) draws its truth and noise from
    // trial_rng(trial_seed(seed, s), i), so results do not depend on the thread count.
    inline MetricsTable run_scenario(const AcquisitionGeometry &geometry, const ParameterGrid &grid,
                                     const PixelDetector &detector, std::size_t kmax, const ScenarioConfig &scenario,
                                     std::size_t threads = 0, const std::string &label = "klic")
    {
        scenario.validate();
        const auto res = rayleigh_resolutions(geometry);
        MetricsTable table{label, scenario.hypothesis, kmax, {}};
        for (std::size_t s = 0; s < scenario.snr_db.size(); ++s)
        {
            const double snr = scenario.snr_db[s];
            const std::uint64_t base = trial_seed(scenario.seed, s);
            std::vector<TrialRecord> rec(scenario.n_mc);
            parallel_for(scenario.n_mc, threads, [&](std::size_t i)
            {
                Rng rng = trial_rng(base, i);
                const auto truth = draw_truth(scenario, grid, res, snr, rng);
                const CVector x = synthesize_pixel(geometry, truth, scenario.noise_variance, rng);
                rec[i] = score_trial(truth, detector(x), geometry, res);
            });
            table.rows.push_back(aggregate(rec, scenario.hypothesis, kmax, snr));
        }
        return table;
    }

    inline std::string format_number(double v)
    {
        if (std::isnan(v))
            return "";
        std::ostringstream os;
        os << std::setprecision(10) << v;
        return os.str();
    }

    // Columns: detector, hypothesis, snr_db, n_mc, pd, pd_se, pc, pc_se, p_accept_h0..h<Kmax>,
    // rmse_k, rmse_k_se, rmse_h_m, rmse_h_se, rmse_v_cm_yr, rmse_v_se, matched_pairs
    inline void write_metrics_csv(const MetricsTable &t, std::ostream &os)
    {
        os << "detector,hypothesis,snr_db,n_mc,pd,pd_se,pc,pc_se";
        for (std::size_t j = 0; j <= t.kmax; ++j)
            os << ",p_accept_h" << j;
        os << ",rmse_k,rmse_k_se,rmse_h_m,rmse_h_se,rmse_v_cm_yr,rmse_v_se,matched_pairs\n";
        for (const auto &r : t.rows)
        {
            os << t.detector << ',' << t.hypothesis << ',' << format_number(r.snr_db) << ',' << r.n_mc << ','
               << format_number(r.pd) << ',' << format_number(r.pd_se) << ',' << format_number(r.pc) << ','
               << format_number(r.pc_se);
            for (double p : r.p_accept)
                os << ',' << format_number(p);
            os << ',' << format_number(r.rmse_k) << ',' << format_number(r.rmse_k_se) << ','
               << format_number(r.rmse_h_m) << ',' << format_number(r.rmse_h_se) << ','
               << format_number(r.rmse_v_cm_yr) << ',' << format_number(r.rmse_v_se) << ',' << r.matched_pairs
               << '\n';
        }
    }

    // ============================================================================================
    // CFAR sensitivity
    // ============================================================================================

    struct CfarRow
    {
        double noise_variance = 1.0;
        std::size_t trials = 0;
        std::size_t exceedances = 0; // trials with k_hat >= 1
        double pfa = 0.0;
        double pfa_se = 0.0;
    };

    // Noise-only pixels at each variance. With common_random_numbers every variance reuses the same
    // standard-normal draws, scaled by sigma.
    inline std::vector<CfarRow> run_cfar_sensitivity(const AcquisitionGeometry &geometry, const PixelDetector &detector,
                                                     const std::vector<double> &variances, std::size_t n_trials,
                                                     std::uint64_t seed, bool common_random_numbers,
                                                     std::size_t threads = 0)
    {
        std::vector<CfarRow> out;
        for (std::size_t v = 0; v < variances.size(); ++v)
        {
            if (!(variances[v] > 0.0))
                throw config_error("run_cfar_sensitivity: variances must be positive");
            const std::uint64_t base = common_random_numbers ? seed : trial_seed(seed, v);
            std::vector<unsigned char> hit(n_trials, 0);
            parallel_for(n_trials, threads, [&](std::size_t i)
            {
                Rng rng = trial_rng(base, i);
                hit[i] = detector(synthesize_pixel(geometry, {}, variances[v], rng)).k_hat > 0;
            });
            CfarRow row;
            row.noise_variance = variances[v];
            row.trials = n_trials;
            for (auto h : hit)
                row.exceedances += h;
            row.pfa = n_trials ? double(row.exceedances) / double(n_trials) : 0.0;
            row.pfa_se = binomial_se(row.pfa, n_trials);
            out.push_back(row);
        }
        return out;
    }

    inline void write_cfar_csv(const std::vector<CfarRow> &rows, std::ostream &os)
    {
        os << "noise_variance,trials,exceedances,pfa,pfa_se\n";
        for (const auto &r : rows)
            os << format_number(r.noise_variance) << ',' << r.trials << ',' << r.exceedances << ','
               << format_number(r.pfa) << ',' << format_number(r.pfa_se) << '\n';
    }

    // ============================================================================================
    // Convergence of the sparse estimation
    // ============================================================================================

    struct ConvergenceRow
    {
        std::size_t hypothesis = 0;
        double snr_db = 0.0;
        std::size_t trials = 0;
        std::vector<double> mean_delta; // average Delta L(t), t = 1..t_bar
        std::vector<double> se;
    };

    // Every trial runs all t_bar iterations (the change-based stop is disabled)
    inline std::vector<ConvergenceRow> run_convergence_study(const Dictionary &dictionary, CsConfig cs,
                                                             const std::vector<double> &snr_db,
                                                             const std::vector<std::size_t> &hypotheses,
                                                             std::size_t n_mc, std::uint64_t seed,
                                                             const ScenarioConfig &base = {}, std::size_t threads = 0)
    {
        cs.stop_epsilon = 0.0;
        cs.validate();
        const auto &geo = dictionary.geometry();
        const auto res = rayleigh_resolutions(geo);
        const std::size_t tbar = cs.max_iterations;
        std::vector<ConvergenceRow> out;
        std::uint64_t cell = 0;
        for (auto h : hypotheses)
            for (double snr : snr_db)
            {
                ScenarioConfig sc = base;
                sc.hypothesis = h;
                sc.power_multipliers = equal_power(h);
                sc.noise_variance = cs.noise_variance;
                sc.validate();
                const std::uint64_t cell_seed = trial_seed(seed, cell++);
                std::vector<double> traces(n_mc * tbar, 0.0);
                parallel_for(n_mc, threads, [&](std::size_t i)
                {
                    Rng rng = trial_rng(cell_seed, i);
                    const auto truth = draw_truth(sc, dictionary.grid(), res, snr, rng);
                    const auto est = run_cs(synthesize_pixel(geo, truth, sc.noise_variance, rng), dictionary, cs);
                    std::copy(est.relative_variation.begin(), est.relative_variation.end(),
                              traces.begin() + std::ptrdiff_t(i * tbar));
                });
                ConvergenceRow row{h, snr, n_mc, std::vector<double>(tbar, 0.0), std::vector<double>(tbar, 0.0)};
                for (std::size_t t = 0; t < tbar; ++t)
                {
                    double m = 0.0, m2 = 0.0;
                    for (std::size_t i = 0; i < n_mc; ++i)
                    {
                        const double d = traces[i * tbar + t];
                        m += d;
                        m2 += d * d;
                    }
                    m /= double(n_mc);
                    const double var = n_mc > 1 ? std::max(0.0, (m2 - double(n_mc) * m * m) / double(n_mc - 1)) : 0.0;
                    row.mean_delta[t] = m;
                    row.se[t] = std::sqrt(var / double(n_mc));
                }
                out.push_back(row);
            }
        return out;
    }

    inline void write_convergence_csv(const std::vector<ConvergenceRow> &rows, std::ostream &os)
    {
        os << "hypothesis,snr_db,trials,t,mean_delta_l,se\n";
        for (const auto &r : rows)
            for (std::size_t t = 0; t < r.mean_delta.size(); ++t)
                os << r.hypothesis << ',' << format_number(r.snr_db) << ',' << r.trials << ',' << (t + 1) << ','
                   << std::setprecision(10) << r.mean_delta[t] << ',' << r.se[t] << '\n';
    }

    // ============================================================================================
    // Building scenario
    // ============================================================================================

    enum class BuildingRegion
    {
        near, // floor only
        mid,  // floor + facade + roof
        far   // floor + facade
    };

    struct BuildingConfig
    {
        double height_m = 89.2;
        std::size_t n_near = 100, n_mid = 100, n_far = 100;
        double snr_db = 15.0;
        double g_floor = 1.0, g_roof = 1.0, g_facade = 1.5; // amplitude multipliers of sqrt(SNR sigma^2)
        double velocity_m_yr = 0.0;
        std::size_t n_mc = 100;
        std::uint64_t seed = 5;
        double noise_variance = 1.0;
        bool snap_to_grid = true;

        std::size_t pixels() const { return n_near + n_mid + n_far; }
    };

    struct BuildingPixel
    {
        BuildingRegion region = BuildingRegion::near;
        std::vector<Scatterer> truth; // floor first, then facade, then roof
    };

    struct BuildingPoint
    {
        std::size_t pixel = 0, trial = 0;
        double height_m = 0.0, velocity_cm_yr = 0.0, amplitude = 0.0;
    };

    struct BuildingResult
    {
        std::vector<BuildingPixel> pixels;
        std::vector<std::size_t> k_hat;      // pixel-major: k_hat[p * n_mc + trial]
        std::vector<BuildingPoint> points;   // every detected scatterer
        std::vector<std::vector<std::size_t>> k_counts; // per pixel, counts of k_hat = 0..Kmax
        std::size_t n_mc = 0;
    };

    // Facade heights are evenly spaced inside (0, H) along each region
    inline std::vector<BuildingPixel> building_layout(const BuildingConfig &cfg, const AcquisitionGeometry &geometry,
                                                      const ParameterGrid &grid)
    {
        if (!(cfg.height_m > 0.0))
            throw config_error("BuildingConfig: height must be positive");
        const double g = amplitude_for_snr(cfg.snr_db, cfg.noise_variance);
        auto make = [&](double z, double mult)
        {
            ScattererParams p{geometry.elevation_from_height(z), cfg.velocity_m_yr, 0.0};
            if (cfg.snap_to_grid)
                p = grid.snap(p);
            return Scatterer{p, cplx(mult * g, 0.0)};
        };
        std::vector<BuildingPixel> out;
        for (std::size_t i = 0; i < cfg.n_near; ++i)
            out.push_back({BuildingRegion::near, {make(0.0, cfg.g_floor)}});
        for (std::size_t i = 0; i < cfg.n_mid; ++i)
            out.push_back({BuildingRegion::mid,
                           {make(0.0, cfg.g_floor), make(cfg.height_m * double(i + 1) / double(cfg.n_mid + 1), cfg.g_facade),
                            make(cfg.height_m, cfg.g_roof)}});
        for (std::size_t i = 0; i < cfg.n_far; ++i)
            out.push_back({BuildingRegion::far,
                           {make(0.0, cfg.g_floor), make(cfg.height_m * double(i + 1) / double(cfg.n_far + 1), cfg.g_facade)}});
        return out;
    }

    // Pixel p of realisation `trial` is drawn from trial_rng(seed, trial * pixels + p)
    inline CVector building_pixel(const BuildingConfig &cfg, const AcquisitionGeometry &geometry,
                                  const BuildingPixel &pixel, std::size_t index, std::size_t trial)
    {
        Rng rng = trial_rng(cfg.seed, trial * cfg.pixels() + index);
        return synthesize_pixel(geometry, pixel.truth, cfg.noise_variance, rng);
    }

    inline BuildingResult run_building_scenario(const AcquisitionGeometry &geometry, const ParameterGrid &grid,
                                                const PixelDetector &detector, std::size_t kmax,
                                                const BuildingConfig &cfg, std::size_t threads = 0)
    {
        BuildingResult r;
        r.pixels = building_layout(cfg, geometry, grid);
        r.n_mc = cfg.n_mc;
        const std::size_t np = r.pixels.size();
        std::vector<DetectionOutcome> outcomes(np * cfg.n_mc);
        parallel_for(np * cfg.n_mc, threads, [&](std::size_t job)
        {
            const std::size_t p = job / cfg.n_mc, t = job % cfg.n_mc;
            outcomes[job] = detector(building_pixel(cfg, geometry, r.pixels[p], p, t));
        });
        r.k_hat.resize(outcomes.size());
        r.k_counts.assign(np, std::vector<std::size_t>(kmax + 1, 0));
        for (std::size_t job = 0; job < outcomes.size(); ++job)
        {
            const auto &o = outcomes[job];
            const std::size_t p = job / cfg.n_mc, t = job % cfg.n_mc;
            r.k_hat[job] = o.k_hat;
            r.k_counts[p][std::min(o.k_hat, kmax)]++;
            for (const auto &s : o.scatterers)
                r.points.push_back({p, t, geometry.height_from_elevation(s.params.elevation_m),
                                    100.0 * s.params.velocity_m_yr, std::abs(s.amplitude)});
        }
        return r;
    }

    struct TripleSummary
    {
        std::size_t cases = 0;           // (pixel, trial) pairs in the triple-interference region
        std::size_t three_detected = 0;  // k_hat = 3
        std::size_t three_and_located = 0; // k_hat = 3 and every matched height within tolerance
        double fraction() const { return cases ? double(three_and_located) / double(cases) : 0.0; }
    };

    inline TripleSummary summarize_triples(const BuildingResult &r, const AcquisitionGeometry &geometry,
                                           double height_tolerance_m)
    {
        const auto res = rayleigh_resolutions(geometry);
        TripleSummary s;
        std::vector<std::vector<ScattererParams>> est(r.k_hat.size());
        for (const auto &pt : r.points)
            est[pt.pixel * r.n_mc + pt.trial].push_back(
                {geometry.elevation_from_height(pt.height_m), pt.velocity_cm_yr / 100.0, 0.0});
        for (std::size_t p = 0; p < r.pixels.size(); ++p)
        {
            if (r.pixels[p].region != BuildingRegion::mid)
                continue;
            std::vector<ScattererParams> truth;
            for (const auto &t : r.pixels[p].truth)
                truth.push_back(t.params);
            for (std::size_t t = 0; t < r.n_mc; ++t)
            {
                const std::size_t job = p * r.n_mc + t;
                ++s.cases;
                if (r.k_hat[job] != 3)
                    continue;
                ++s.three_detected;
                const auto m = match_estimates_to_truth(truth, est[job], res);
                bool ok = m.pairs.size() == 3;
                for (const auto &pr : m.pairs)
                    ok = ok && std::abs(geometry.height_from_elevation(truth[pr.truth].elevation_m - est[job][pr.estimate].elevation_m)) <=
                                   height_tolerance_m;
                s.three_and_located += ok;
            }
        }
        return s;
    }

    inline const char *region_name(BuildingRegion r)
    {
        return r == BuildingRegion::near ? "near" : r == BuildingRegion::mid ? "mid" : "far";
    }

    inline void write_building_points_csv(const BuildingResult &r, std::ostream &os)
    {
        os << "pixel,region,trial,height_m,velocity_cm_yr,amplitude\n";
        for (const auto &p : r.points)
            os << p.pixel << ',' << region_name(r.pixels[p.pixel].region) << ',' << p.trial << ','
               << format_number(p.height_m) << ',' << format_number(p.velocity_cm_yr) << ','
               << format_number(p.amplitude) << '\n';
    }

    inline void write_building_counts_csv(const BuildingResult &r, const AcquisitionGeometry &geometry, std::ostream &os)
    {
        const std::size_t kmax = r.k_counts.empty() ? 0 : r.k_counts[0].size() - 1;
        os << "pixel,region,true_k,true_heights_m";
        for (std::size_t k = 0; k <= kmax; ++k)
            os << ",count_k" << k;
        os << '\n';
        for (std::size_t p = 0; p < r.pixels.size(); ++p)
        {
            os << p << ',' << region_name(r.pixels[p].region) << ',' << r.pixels[p].truth.size() << ',';
            for (std::size_t i = 0; i < r.pixels[p].truth.size(); ++i)
                os << (i ? ";" : "") << format_number(geometry.height_from_elevation(r.pixels[p].truth[i].params.elevation_m));
            for (auto c : r.k_counts[p])
                os << ',' << c;
            os << '\n';
        }
    }

    // ============================================================================================
    // Run manifest
    // ============================================================================================

    // FNV-1a over the bytes of every output file, in the given order
    inline std::string content_hash(const std::vector<std::filesystem::path> &files)
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto &f : files)
        {
            std::ifstream in(f, std::ios::binary);
            if (!in)
                throw data_error("content_hash: cannot read " + f.string());
            std::ostringstream buf;
            buf << in.rdbuf();
            h = fnv1a64(f.filename().string(), h);
            h = fnv1a64(buf.str(), h);
        }
        return hex64(h);
    }

    inline void write_manifest(const std::filesystem::path &path, const std::string &command, const nlohmann::json &config,
                               const nlohmann::json &provenance, const std::vector<std::filesystem::path> &outputs)
    {
        nlohmann::json files = nlohmann::json::array();
        for (const auto &f : outputs)
            files.push_back(f.filename().string());
        const nlohmann::json j{{"command", command},
                               {"config", config},
                               {"provenance", provenance},
                               {"outputs", files},
                               {"content_hash", content_hash(outputs)}};
        std::ofstream out(path);
        if (!out)
            throw data_error("cannot write manifest " + path.string());
        out << j.dump(2) << '\n';
    }
}

#endif
