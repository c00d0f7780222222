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


#ifndef TOMO_KLIC_DETECTION_HPP
#define TOMO_KLIC_DETECTION_HPP

#include "common.hpp"
#include "dictionary.hpp"
#include "sparse_estimation.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace tomo_klic
{
    inline constexpr double infinity = std::numeric_limits<double>::infinity();

    // Least-squares amplitudes g = (A^H A)^{-1} A^H x; minimum-norm solution for rank-deficient A
    inline CVector backscatter_estimate(const CVector &x, const CMatrix &a_k)
    {
        if (a_k.rows() != x.size())
            throw config_error("backscatter_estimate: steering matrix rows do not match data length");
        if (a_k.cols() == 0)
            return CVector(0);
        return Eigen::CompleteOrthogonalDecomposition<CMatrix>(a_k).solve(x);
    }

    // x^H P_perp x = ||x - A_k g_hat||^2, evaluated from the least-squares residual
    inline double projection_residual(const CVector &x, const CMatrix &a_k)
    {
        if (a_k.cols() == 0)
            return x.squaredNorm();
        if (a_k.cols() >= x.size())
            throw config_error("projection_residual: k = " + std::to_string(a_k.cols()) +
                               " columns leave no orthogonal complement in C^" + std::to_string(x.size()));
        return (x - a_k * backscatter_estimate(x, a_k)).squaredNorm();
    }

    // ML noise power under H_k: ||P_perp x||^2 / N
    inline double noise_variance_estimate(const CVector &x, const CMatrix &a_k)
    {
        return projection_residual(x, a_k) / double(x.size());
    }

    // h(k) = (6k / 2)(1 + rho)
    inline double penalty(std::size_t k, double rho) { return 3.0 * double(k) * (1.0 + rho); }

    struct KlicStatistic
    {
        std::size_t k_star = 0;          // maximising hypothesis (0 only when x = 0)
        double value = -infinity;        // max_k { N log(x^H x / x^H P_perp_k x) - h(k) }
        std::vector<double> log_ratios;  // N log(x^H x / x^H P_perp_k x), k = 1..Kmax
    };

    // N log(x^H x / r_k) for every residual r_k. A zero residual with x != 0 yields +inf;
    // x = 0 yields -inf for every k (H0 is accepted).
    inline std::vector<double> log_ratios(double energy, std::span<const double> residuals, std::size_t n)
    {
        std::vector<double> out(residuals.size());
        for (std::size_t k = 0; k < residuals.size(); ++k)
        {
            if (!(energy > 0.0))
                out[k] = -infinity;
            else if (!(residuals[k] > 0.0))
                out[k] = infinity;
            else
                out[k] = double(n) * std::log(energy / residuals[k]);
        }
        return out;
    }

    // Penalised maximisation over k; ties go to the smaller k
    inline KlicStatistic klic_from_log_ratios(std::span<const double> ratios, double rho)
    {
        KlicStatistic st;
        st.log_ratios.assign(ratios.begin(), ratios.end());
        for (std::size_t k = 1; k <= ratios.size(); ++k)
        {
            const double term = ratios[k - 1] == infinity ? infinity : ratios[k - 1] - penalty(k, rho);
            if (term > st.value)
            {
                st.value = term;
                st.k_star = k;
            }
        }
        return st;
    }

    // supports[k-1] holds the N x k matrix A_k
    inline KlicStatistic klic_statistic(const CVector &x, std::span<const CMatrix> supports, double rho)
    {
        std::vector<double> residuals;
        residuals.reserve(supports.size());
        for (const auto &a_k : supports)
            residuals.push_back(projection_residual(x, a_k));
        return klic_from_log_ratios(log_ratios(x.squaredNorm(), residuals, std::size_t(x.size())), rho);
    }

    struct DetectorConfig
    {
        std::size_t kmax = 2;
        double rho = 3.0;
        double threshold = infinity; // eta; must come from calibration
        CsConfig cs{};
        bool zoom = false; // second pass on a grid restricted around the first-pass estimates
        bool normalize = true; // run the sparse estimation on x scaled to unit mean power

        void validate(std::size_t n_images, std::size_t n_columns) const
        {
            if (kmax < 1)
                throw config_error("DetectorConfig: kmax must be >= 1");
            if (kmax >= n_images)
                throw config_error("DetectorConfig: kmax must be smaller than the number of images");
            if (!(rho > 1.0))
                throw config_error("DetectorConfig: rho must be > 1");
            if (n_columns < 10 * kmax)
                throw config_error("DetectorConfig: the grid needs at least 10 * kmax points (Kp = " +
                                   std::to_string(n_columns) + ")");
            if (std::isnan(threshold))
                throw config_error("DetectorConfig: threshold is NaN");
            cs.validate();
        }
    };

    struct DetectedScatterer
    {
        ScattererParams params;   // grid position
        cplx amplitude;           // least-squares backscattering coefficient
        std::size_t column = 0;   // dictionary column
    };

    struct DetectionOutcome
    {
        std::size_t k_hat = 0;       // accepted hypothesis
        std::size_t k_star = 0;      // best alternative before thresholding
        double statistic = -infinity;
        double noise_estimate = 0.0; // sigma_hat^2 under the accepted hypothesis
        std::vector<DetectedScatterer> scatterers; // length k_hat
        std::vector<double> stage_statistics;      // KLIC: N log ratios per k; Sup-GLRT: Lambda_k
        std::vector<std::size_t> ranking;          // candidate columns, strongest first
    };

    namespace detail
    {
        inline void fill_outcome(DetectionOutcome &out, const CVector &x, const Dictionary &dictionary,
                                 std::span<const std::size_t> support)
        {
            const CMatrix a_k = gather_columns(dictionary, support);
            const CVector amp = backscatter_estimate(x, a_k);
            out.noise_estimate = noise_variance_estimate(x, a_k);
            out.scatterers.clear();
            for (std::size_t i = 0; i < support.size(); ++i)
                out.scatterers.push_back({grid_lookup(dictionary, support[i]), amp[Eigen::Index(i)], support[i]});
        }

        inline DetectionOutcome klic_single_pass(const CVector &x, const Dictionary &dictionary,
                                                 const DetectorConfig &config)
        {
            const double energy = x.squaredNorm();
            const SparseEstimate est =
                config.normalize && energy > 0.0
                    ? run_cs(CVector(x * std::sqrt(double(x.size()) / energy)), dictionary, config.cs)
                    : run_cs(x, dictionary, config.cs);
            DetectionOutcome out;
            out.ranking = rank_columns(est.g_hat, config.kmax, dictionary.grid(), config.cs.support);

            std::vector<double> residuals;
            for (std::size_t k = 1; k <= config.kmax; ++k)
                residuals.push_back(projection_residual(
                    x, gather_columns(dictionary, std::span<const std::size_t>(out.ranking).first(k))));
            const auto st = klic_from_log_ratios(log_ratios(x.squaredNorm(), residuals, dictionary.rows()), config.rho);

            out.k_star = st.k_star;
            out.statistic = st.value;
            out.stage_statistics = st.log_ratios;
            out.k_hat = st.value > config.threshold ? st.k_star : 0;
            if (out.k_hat > 0)
                fill_outcome(out, x, dictionary, std::span<const std::size_t>(out.ranking).first(out.k_hat));
            else
                out.noise_estimate = x.squaredNorm() / double(x.size());
            return out;
        }
    }

    // Sparse estimation once, nested supports for k = 1..Kmax, penalised GLRT, single threshold.
    // With config.normalize the supports depend on x only up to a complex scale factor, so the
    // statistic is invariant to the noise level.
    inline DetectionOutcome klic_detect(const CVector &x, const Dictionary &dictionary, const DetectorConfig &config)
    {
        config.validate(dictionary.rows(), dictionary.columns());
        if (std::size_t(x.size()) != dictionary.rows())
            throw config_error("klic_detect: data length does not match the dictionary");

        DetectionOutcome out = detail::klic_single_pass(x, dictionary, config);
        if (!config.zoom)
            return out;

        std::vector<ScattererParams> centres;
        for (auto j : out.ranking)
            centres.push_back(grid_lookup(dictionary, j));
        const Dictionary refined =
            build_dictionary(dictionary.geometry(), zoomed_grid(dictionary.grid(), centres));
        DetectionOutcome second = detail::klic_single_pass(x, refined, config);
        second.ranking.clear(); // columns refer to the per-pixel grid
        return second;
    }

    // ============================================================================================
    // Sup-GLRT baseline: Lambda_k = min_{A_{k-1}} x^H P_perp x / min_{A_Kmax} x^H P_perp x,
    // with exhaustive search over all grid subsets (Kmax <= 2).
    // ============================================================================================

    struct SupGlrtStatistics
    {
        std::vector<double> min_residual;              // k = 0..Kmax
        std::vector<std::vector<std::size_t>> support; // minimising subset for k = 0..Kmax
        std::vector<double> lambda;                    // Lambda_1..Lambda_Kmax
    };

    class SupGlrt
    {
    public:
        SupGlrt(Dictionary dictionary, std::size_t kmax, std::size_t max_pairs = 5'000'000)
            : dictionary_(std::move(dictionary)), kmax_(kmax)
        {
            if (kmax_ < 1 || kmax_ > 2)
                throw config_error("SupGlrt: exhaustive search is limited to kmax in {1, 2}");
            if (kmax_ >= dictionary_.rows())
                throw config_error("SupGlrt: kmax must be smaller than the number of images");
            const std::size_t kp = dictionary_.columns();
            if (kmax_ == 2)
            {
                const std::size_t pairs = kp * (kp - 1) / 2;
                if (pairs > max_pairs)
                    throw config_error("SupGlrt: " + std::to_string(pairs) + " candidate pairs exceed the cap of " +
                                       std::to_string(max_pairs));
                gram_ = dictionary_.matrix().adjoint() * dictionary_.matrix();
            }
        }

        const Dictionary &dictionary() const { return dictionary_; }
        std::size_t kmax() const { return kmax_; }

        SupGlrtStatistics statistics(const CVector &x) const
        {
            if (std::size_t(x.size()) != dictionary_.rows())
                throw config_error("SupGlrt: data length does not match the dictionary");
            const CVector c = dictionary_.matrix().adjoint() * x;
            const RVector c2 = c.cwiseAbs2();
            const Eigen::Index kp = c.size();

            SupGlrtStatistics st;
            st.min_residual.push_back(x.squaredNorm());
            st.support.emplace_back();

            // Best single column: unit-norm columns, so the residual is ||x||^2 - |a_j^H x|^2
            Eigen::Index best = 0;
            for (Eigen::Index j = 1; j < kp; ++j)
                if (c2[j] > c2[best])
                    best = j;
            st.support.push_back({std::size_t(best)});
            st.min_residual.push_back(projection_residual(x, gather_columns(dictionary_, st.support.back())));

            if (kmax_ == 2)
            {
                double best_energy = -1.0;
                Eigen::Index bi = 0, bj = 1;
                for (Eigen::Index j = 1; j < kp; ++j)
                {
                    const cplx cj = c[j];
                    for (Eigen::Index i = 0; i < j; ++i)
                    {
                        const cplx gij = gram_(i, j);
                        const double det = 1.0 - std::norm(gij);
                        const double energy =
                            det > 1e-12 ? (c2[i] + c2[j] - 2.0 * std::real(std::conj(c[i]) * gij * cj)) / det
                                        : std::max(c2[i], c2[j]);
                        if (energy > best_energy || (energy == best_energy && (i < bi || (i == bi && j < bj))))
                        {
                            best_energy = energy;
                            bi = i;
                            bj = j;
                        }
                    }
                }
                st.support.push_back({std::size_t(bi), std::size_t(bj)});
                st.min_residual.push_back(projection_residual(x, gather_columns(dictionary_, st.support.back())));
            }

            const double denom = st.min_residual[kmax_];
            for (std::size_t k = 1; k <= kmax_; ++k)
            {
                const double num = st.min_residual[k - 1];
                st.lambda.push_back(denom > 0.0 ? num / denom : (num > 0.0 ? infinity : 1.0));
            }
            return st;
        }

        // Stage k accepts H_{k-1} when Lambda_k < eta_k; otherwise the next stage runs.
        // Passing every stage accepts H_Kmax.
        DetectionOutcome detect(const CVector &x, std::span<const double> thresholds) const
        {
            if (thresholds.size() != kmax_)
                throw config_error("SupGlrt::detect: expected " + std::to_string(kmax_) + " thresholds");
            const auto st = statistics(x);
            DetectionOutcome out;
            out.stage_statistics = st.lambda;
            out.statistic = st.lambda[0];
            out.k_star = kmax_;
            out.k_hat = kmax_;
            for (std::size_t k = 1; k <= kmax_; ++k)
                if (st.lambda[k - 1] < thresholds[k - 1])
                {
                    out.k_hat = k - 1;
                    break;
                }
            out.ranking = st.support[kmax_];
            if (out.k_hat > 0)
                detail::fill_outcome(out, x, dictionary_, st.support[out.k_hat]);
            else
                out.noise_estimate = st.min_residual[0] / double(x.size());
            return out;
        }

    private:
        Dictionary dictionary_;
        std::size_t kmax_;
        CMatrix gram_;
    };
}

#endif
