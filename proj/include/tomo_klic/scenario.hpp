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


#ifndef TOMO_KLIC_SCENARIO_HPP
#define TOMO_KLIC_SCENARIO_HPP

#include "common.hpp"
#include "dictionary.hpp"
#include "random.hpp"
#include "signal_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace tomo_klic
{
    enum class PositionMode
    {
        fixed, // on-grid positions separated in elevation
        random // uniform within +-delta_s/2, +-delta_v/2 of the fixed positions
    };

    enum class PhaseMode
    {
        zero,
        random
    };

    // Simulated truth for Monte-Carlo experiments
    struct ScenarioConfig
    {
        std::size_t hypothesis = 1;                 // number of true scatterers (0..3)
        PositionMode positions = PositionMode::fixed;
        PhaseMode phases = PhaseMode::zero;
        std::vector<double> power_multipliers{1.0}; // |g_i|^2 = m_i * SNR * sigma^2
        std::vector<double> snr_db{0, 5, 10, 15, 20, 25};
        std::size_t n_mc = 5000;
        std::uint64_t seed = 1;
        double noise_variance = 1.0;
        double separation_m = 30.8; // elevation spacing between consecutive fixed scatterers

        void validate() const
        {
            if (hypothesis > 3)
                throw config_error("ScenarioConfig: hypothesis must lie in 0..3");
            if (power_multipliers.size() != hypothesis)
                throw config_error("ScenarioConfig: " + std::to_string(power_multipliers.size()) +
                                   " power multipliers given for hypothesis H" + std::to_string(hypothesis));
            for (double m : power_multipliers)
                if (!(m > 0.0))
                    throw config_error("ScenarioConfig: power multipliers must be positive");
            if (snr_db.empty())
                throw config_error("ScenarioConfig: empty SNR grid");
            if (n_mc == 0)
                throw config_error("ScenarioConfig: n_mc must be >= 1");
            if (!(noise_variance > 0.0))
                throw config_error("ScenarioConfig: noise variance must be positive");
        }
    };

    // Equal-power defaults for H_k
    inline std::vector<double> equal_power(std::size_t k) { return std::vector<double>(k, 1.0); }

    // On-grid reference positions: the first at the grid centre, the others at +i * separation
    // in elevation with the same velocity, each snapped to the nearest grid point.
    inline std::vector<ScattererParams> fixed_positions(const ParameterGrid &grid, std::size_t k, double separation_m)
    {
        const ScattererParams base = grid.point(grid.center_index());
        std::vector<ScattererParams> out;
        for (std::size_t i = 0; i < k; ++i)
        {
            ScattererParams p = base;
            p.elevation_m += double(i) * separation_m;
            out.push_back(grid.snap(p));
        }
        return out;
    }

    // Truth scatterers of one trial. Draws (in order) position offsets, then phases, from rng.
    inline std::vector<Scatterer> draw_truth(const ScenarioConfig &cfg, const ParameterGrid &grid,
                                             const RayleighResolution &res, double snr_db, Rng &rng)
    {
        const auto base = fixed_positions(grid, cfg.hypothesis, cfg.separation_m);
        std::vector<Scatterer> out(cfg.hypothesis);
        for (std::size_t i = 0; i < cfg.hypothesis; ++i)
        {
            out[i].params = base[i];
            if (cfg.positions == PositionMode::random)
            {
                out[i].params.elevation_m += uniform(rng, -0.5 * res.elevation_m, 0.5 * res.elevation_m);
                out[i].params.velocity_m_yr += uniform(rng, -0.5 * res.velocity_m_yr, 0.5 * res.velocity_m_yr);
            }
        }
        for (std::size_t i = 0; i < cfg.hypothesis; ++i)
        {
            const double mag = amplitude_for_snr(snr_db, cfg.noise_variance, cfg.power_multipliers[i]);
            const double phase = cfg.phases == PhaseMode::random ? uniform(rng, 0.0, 2.0 * pi) : 0.0;
            out[i].amplitude = std::polar(mag, phase);
        }
        return out;
    }

    // ============================================================================================
    // Truth-to-estimate assignment
    // ============================================================================================

    struct MatchedPair
    {
        std::size_t truth = 0;
        std::size_t estimate = 0;
        double cost = 0.0;
    };

    struct Matching
    {
        std::vector<MatchedPair> pairs;                // sorted by truth index
        std::vector<std::size_t> unmatched_truth;
        std::vector<std::size_t> unmatched_estimates;
        double total_cost = 0.0;
    };

    inline double normalized_distance(const ScattererParams &a, const ScattererParams &b, const RayleighResolution &res)
    {
        return std::abs(a.elevation_m - b.elevation_m) / res.elevation_m +
               std::abs(a.velocity_m_yr - b.velocity_m_yr) / res.velocity_m_yr;
    }

    // Minimum-cost assignment of min(|truth|, |estimates|) pairs by exhaustive search (lists are short).
    // Ties keep the lexicographically first assignment.
    inline Matching match_estimates_to_truth(std::span<const ScattererParams> truth,
                                             std::span<const ScattererParams> estimates,
                                             const RayleighResolution &res)
    {
        if (truth.size() > 8 || estimates.size() > 8)
            throw config_error("match_estimates_to_truth: lists longer than 8 are not supported");
        const std::size_t nt = truth.size(), ne = estimates.size();
        const std::size_t pairs = std::min(nt, ne);

        std::vector<std::size_t> best, current;
        double best_cost = std::numeric_limits<double>::infinity();

        // Enumerate injective maps from the shorter list into the longer one
        const bool truth_short = nt <= ne;
        const std::size_t n_short = truth_short ? nt : ne, n_long = truth_short ? ne : nt;
        std::vector<bool> used(n_long, false);
        auto cost_of = [&](std::size_t s, std::size_t l)
        {
            return truth_short ? normalized_distance(truth[s], estimates[l], res)
                               : normalized_distance(truth[l], estimates[s], res);
        };
        auto recurse = [&](auto &&self, std::size_t s, double acc) -> void
        {
            if (acc >= best_cost)
                return;
            if (s == n_short)
            {
                best_cost = acc;
                best = current;
                return;
            }
            for (std::size_t l = 0; l < n_long; ++l)
                if (!used[l])
                {
                    used[l] = true;
                    current.push_back(l);
                    self(self, s + 1, acc + cost_of(s, l));
                    current.pop_back();
                    used[l] = false;
                }
        };
        recurse(recurse, 0, 0.0);

        Matching m;
        if (pairs == 0)
        {
            for (std::size_t i = 0; i < nt; ++i)
                m.unmatched_truth.push_back(i);
            for (std::size_t i = 0; i < ne; ++i)
                m.unmatched_estimates.push_back(i);
            return m;
        }
        std::vector<bool> t_matched(nt, false), e_matched(ne, false);
        for (std::size_t s = 0; s < n_short; ++s)
        {
            const std::size_t t = truth_short ? s : best[s];
            const std::size_t e = truth_short ? best[s] : s;
            m.pairs.push_back({t, e, cost_of(s, best[s])});
            t_matched[t] = e_matched[e] = true;
        }
        std::sort(m.pairs.begin(), m.pairs.end(), [](const auto &a, const auto &b) { return a.truth < b.truth; });
        for (std::size_t i = 0; i < nt; ++i)
            if (!t_matched[i])
                m.unmatched_truth.push_back(i);
        for (std::size_t i = 0; i < ne; ++i)
            if (!e_matched[i])
                m.unmatched_estimates.push_back(i);
        m.total_cost = best_cost;
        return m;
    }
}

#endif
