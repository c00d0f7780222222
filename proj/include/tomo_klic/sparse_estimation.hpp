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


#ifndef TOMO_KLIC_SPARSE_ESTIMATION_HPP
#define TOMO_KLIC_SPARSE_ESTIMATION_HPP

#include "common.hpp"
#include "dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tomo_klic
{
    // How the k strongest entries of the sparse estimate are chosen
    enum class SupportMode
    {
        top_k,      // k largest |g| over all columns
        local_peaks // grid-local maxima of |g| first, then remaining columns by magnitude
    };

    struct CsConfig
    {
        std::size_t max_iterations = 6; // t_bar
        double stop_epsilon = 1e-3;     // relative coefficient change that ends the iteration
        double magnitude_floor = 1e-12; // lower clamp of |g_k| inside C
        double noise_variance = 1.0;    // assumed sigma^2
        SupportMode support = SupportMode::local_peaks;

        void validate() const
        {
            if (max_iterations < 1)
                throw config_error("CsConfig: max_iterations must be >= 1");
            if (!(stop_epsilon >= 0.0))
                throw config_error("CsConfig: stop_epsilon must be >= 0");
            if (!(magnitude_floor >= 0.0))
                throw config_error("CsConfig: magnitude_floor must be >= 0");
            if (!(noise_variance > 0.0))
                throw config_error("CsConfig: noise_variance must be > 0");
        }
    };

    struct SparseEstimate
    {
        CVector g_hat;                           // final coefficient vector (length Kp)
        std::size_t iterations_used = 0;         // number of updates applied
        std::vector<double> objective_trace;     // L(0), L(1), ..., L(iterations_used)
        std::vector<double> relative_variation;  // Delta L(1), ..., |(L(t) - L(t-1)) / L(t)|
        std::vector<double> coefficient_change;  // ||g(t) - g(t-1)|| / ||g(t)||
        double alpha_hat = 0.0;                  // prior parameter at the final iterate
    };

    // Matched-filter start: g_k = |a(p_k)^H x|
    inline CVector initialize_g(const CVector &x, const Dictionary &dictionary)
    {
        if (std::size_t(x.size()) != dictionary.rows())
            throw config_error("initialize_g: data length " + std::to_string(x.size()) +
                               " does not match dictionary rows " + std::to_string(dictionary.rows()));
        const CVector mf = dictionary.matrix().adjoint() * x;
        return mf.cwiseAbs().cast<cplx>();
    }

    // alpha_hat = 4 Kp^2 / (sum_k |g_k| + 1)^2
    inline double estimate_alpha(const CVector &g)
    {
        const double kp = double(g.size());
        const double s = g.cwiseAbs().sum() + 1.0;
        return 4.0 * kp * kp / (s * s);
    }

    // Diagonal of C = ((sum |g| + 1) / Kp) diag(|g_k|), with |g_k| clamped from below by `floor`
    inline RVector weight_diagonal(const CVector &g, double floor)
    {
        const RVector mag = g.cwiseAbs();
        const double scale = (mag.sum() + 1.0) / double(g.size());
        return mag.cwiseMax(floor) * scale;
    }

    // (sigma^2 I + A diag(c) A^H)^{-1} x. Hermitian positive definite for sigma^2 > 0.
    // When tr(C) <= 0.25 sigma^2 the Neumann series sum_j (-E / sigma^2)^j x / sigma^2 with
    // E = A C A^H converges geometrically (||E|| <= tr C) and only needs products with A and A^H;
    // otherwise the N x N matrix is assembled and Cholesky-factorised.
    inline CVector solve_regularized_system(const CMatrix &a, const RVector &c, const CVector &x, double noise_variance)
    {
        const double trace = c.sum();
        if (trace <= 0.25 * noise_variance)
        {
            const double tiny = std::ldexp(1.0, -60);
            CVector term = x / noise_variance;
            CVector y = term;
            for (int j = 0; j < 64 && term.norm() > tiny * y.norm(); ++j)
            {
                const CVector proj = c.cast<cplx>().cwiseProduct(a.adjoint() * term);
                term = -(a * proj) / noise_variance;
                y += term;
            }
            return y;
        }

        // Per-thread buffers: repeated large allocations otherwise dominate through page faults
        thread_local CMatrix b, m;
        b.noalias() = a * c.cwiseSqrt().asDiagonal();
        m.setIdentity(a.rows(), a.rows());
        m *= noise_variance;
        m.noalias() += b * b.adjoint();
        Eigen::LLT<CMatrix> llt(m);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("solve_regularized_system: sigma^2 I + A C A^H is not positive definite");
        return llt.solve(x);
    }

    // One update g <- C A^H (sigma^2 I + A C A^H)^{-1} x. Only an N x N system is solved; the
    // Kp x Kp form with B = diag(1/|g|) is never built.
    inline CVector iterate_g(const CVector &g_prev, const CVector &x, const Dictionary &dictionary,
                             double noise_variance, double magnitude_floor = 1e-12)
    {
        const CMatrix &a = dictionary.matrix();
        if (std::size_t(g_prev.size()) != dictionary.columns())
            throw config_error("iterate_g: coefficient vector length does not match dictionary columns");
        if (std::size_t(x.size()) != dictionary.rows())
            throw config_error("iterate_g: data length does not match dictionary rows");
        if (!(noise_variance > 0.0))
            throw config_error("iterate_g: noise variance must be positive");

        const RVector c = weight_diagonal(g_prev, magnitude_floor);
        const CVector y = solve_regularized_system(a, c, x, noise_variance);
        return c.cast<cplx>().cwiseProduct(a.adjoint() * y);
    }

    // Concentrated log-likelihood with alpha replaced by alpha_hat:
    // -N log(pi sigma^2) - ||x - A g||^2 / sigma^2 + 2 Kp log(2 Kp) - 2 Kp log(sum|g| + 1) - Kp log(2 pi) - 2 Kp
    inline double cs_objective(const CVector &x, const CVector &g, const Dictionary &dictionary, double noise_variance)
    {
        const double n = double(dictionary.rows());
        const double kp = double(dictionary.columns());
        const double misfit = (x - dictionary.matrix() * g).squaredNorm();
        const double l1 = g.cwiseAbs().sum();
        return -n * std::log(pi) - n * std::log(noise_variance) - misfit / noise_variance +
               2.0 * kp * std::log(2.0 * kp) - 2.0 * kp * std::log1p(l1) - kp * std::log(2.0 * pi) - 2.0 * kp;
    }

    // Iterative MAP estimate of the sparse coefficient vector under the Laplace-type prior.
    // Stops after max_iterations updates or once ||g(t) - g(t-1)|| / ||g(t)|| < stop_epsilon.
    inline SparseEstimate run_cs(const CVector &x, const Dictionary &dictionary, const CsConfig &config = {})
    {
        config.validate();
        SparseEstimate est;
        est.g_hat = initialize_g(x, dictionary);
        est.objective_trace.push_back(cs_objective(x, est.g_hat, dictionary, config.noise_variance));

        for (std::size_t t = 1; t <= config.max_iterations; ++t)
        {
            CVector next = iterate_g(est.g_hat, x, dictionary, config.noise_variance, config.magnitude_floor);
            const double norm = next.norm();
            const double change = norm > 0.0 ? (next - est.g_hat).norm() / norm : 0.0;
            est.g_hat = std::move(next);
            est.iterations_used = t;

            const double l = cs_objective(x, est.g_hat, dictionary, config.noise_variance);
            est.relative_variation.push_back(std::abs((l - est.objective_trace.back()) / l));
            est.objective_trace.push_back(l);
            est.coefficient_change.push_back(change);
            if (change < config.stop_epsilon)
                break;
        }
        est.alpha_hat = estimate_alpha(est.g_hat);
        return est;
    }

    // Columns ordered by descending |g|, ties to the lower index; the first `count` are returned.
    // local_peaks puts grid-local maxima ahead of their shoulders; either ranking yields nested supports.
    inline std::vector<std::size_t> rank_columns(const CVector &g, std::size_t count, const ParameterGrid &grid,
                                                 SupportMode mode = SupportMode::local_peaks)
    {
        const std::size_t kp = std::size_t(g.size());
        count = std::min(count, kp);
        const RVector mag = g.cwiseAbs();
        auto stronger = [&](std::size_t a, std::size_t b)
        { return mag[Eigen::Index(a)] > mag[Eigen::Index(b)] || (mag[Eigen::Index(a)] == mag[Eigen::Index(b)] && a < b); };

        std::vector<std::size_t> order(kp);
        std::iota(order.begin(), order.end(), std::size_t(0));
        if (mode == SupportMode::top_k)
        {
            std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(count), order.end(), stronger);
            order.resize(count);
            return order;
        }

        // local_peaks: a nonzero column is a peak if no grid neighbour is strictly stronger
        const auto &es = grid.elevation();
        const auto &ev = grid.velocity();
        const std::size_t nl = grid.thermal() ? grid.thermal()->count : 1;
        std::vector<std::size_t> peaks, rest;
        for (std::size_t j = 0; j < kp; ++j)
        {
            const auto ix = grid.axis_index(j);
            bool peak = mag[Eigen::Index(j)] > 0.0;
            for (int dl = -1; dl <= 1 && peak; ++dl)
                for (int dv = -1; dv <= 1 && peak; ++dv)
                    for (int ds = -1; ds <= 1 && peak; ++ds)
                    {
                        if (!ds && !dv && !dl)
                            continue;
                        const long s = long(ix.elevation) + ds, v = long(ix.velocity) + dv, l = long(ix.thermal) + dl;
                        if (s < 0 || v < 0 || l < 0 || s >= long(es.count) || v >= long(ev.count) || l >= long(nl))
                            continue;
                        if (mag[Eigen::Index(grid.index(std::size_t(s), std::size_t(v), std::size_t(l)))] >
                            mag[Eigen::Index(j)])
                            peak = false;
                    }
            (peak ? peaks : rest).push_back(j);
        }
        std::sort(peaks.begin(), peaks.end(), stronger);
        if (peaks.size() < count)
        {
            std::sort(rest.begin(), rest.end(), stronger);
            peaks.insert(peaks.end(), rest.begin(), rest.begin() + std::ptrdiff_t(count - peaks.size()));
        }
        peaks.resize(count);
        return peaks;
    }

    struct Support
    {
        std::vector<std::size_t> indices; // dictionary columns, strongest first
        CMatrix steering;                 // N x k matrix of the selected columns, same order
    };

    inline CMatrix gather_columns(const Dictionary &dictionary, std::span<const std::size_t> indices)
    {
        CMatrix out(static_cast<Eigen::Index>(dictionary.rows()), static_cast<Eigen::Index>(indices.size()));
        for (std::size_t i = 0; i < indices.size(); ++i)
            out.col(Eigen::Index(i)) = dictionary.column(indices[i]);
        return out;
    }

    // Supports for k and k+1 are nested: both are prefixes of the same ranking.
    inline Support select_support(const SparseEstimate &estimate, std::size_t k, const Dictionary &dictionary,
                                  SupportMode mode = SupportMode::local_peaks)
    {
        if (k < 1)
            throw config_error("select_support: k must be >= 1");
        if (k >= dictionary.rows())
            throw config_error("select_support: k = " + std::to_string(k) + " must be smaller than N = " +
                               std::to_string(dictionary.rows()));
        if (k > dictionary.columns())
            throw config_error("select_support: k exceeds the number of dictionary columns");
        Support s;
        s.indices = rank_columns(estimate.g_hat, k, dictionary.grid(), mode);
        s.steering = gather_columns(dictionary, s.indices);
        return s;
    }
}

#endif
