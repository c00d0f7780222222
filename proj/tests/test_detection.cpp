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


#include <tomo_klic/detection.hpp>
#include <tomo_klic/scenario.hpp>

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

using namespace tomo_klic;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace
{
    CMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64 &rng)
    {
        std::normal_distribution<double> d;
        CMatrix m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i)
                m(i, j) = cplx(d(rng), d(rng));
        return m;
    }

    const Dictionary &reference_dictionary()
    {
        static const Dictionary d = [] {
            const auto geo = reference_geometry();
            return build_dictionary(geo, half_rayleigh_grid(geo, -177.0, 177.0, -0.01, 0.01));
        }();
        return d;
    }

    Dictionary small_dictionary(std::size_t n, std::size_t kp, std::uint64_t seed)
    {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> b(-1200.0, 1200.0), t(0.0, 3.0);
        std::vector<double> base(n), ep(n);
        for (std::size_t i = 0; i < n; ++i)
            base[i] = b(rng), ep[i] = t(rng);
        const AcquisitionGeometry geo(base, ep, std::nullopt, 0.031, 745.0e3, 0.6);
        return build_dictionary(geo, build_grid({-30.0, -30.0 + 7.0 * double(kp - 1), 7.0}, {0.0, 0.0, 1.0}));
    }

    DetectorConfig open_detector(std::size_t kmax = 2)
    {
        DetectorConfig cfg;
        cfg.kmax = kmax;
        cfg.threshold = 0.0;
        return cfg;
    }
}

TEST_CASE("projection residual matches an explicit projector", "[detection]")
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial)
    {
        const Eigen::Index n = 6 + trial % 5, k = 1 + trial % 4;
        const CMatrix a = random_matrix(n, k, rng);
        const CVector x = random_matrix(n, 1, rng).col(0);
        const CMatrix p = CMatrix::Identity(n, n) - a * (a.adjoint() * a).inverse() * a.adjoint();
        const double oracle = std::real(x.dot(p * x));
        CHECK_THAT(projection_residual(x, a), WithinRel(oracle, 1e-10));
        CHECK_THAT(noise_variance_estimate(x, a), WithinRel(oracle / double(n), 1e-10));
    }
    const CVector x = random_matrix(5, 1, rng).col(0);
    CHECK(projection_residual(x, CMatrix(5, 0)) == x.squaredNorm());
    CHECK_THROWS_AS(projection_residual(x, random_matrix(5, 5, rng)), config_error);
    CHECK_THROWS_AS(backscatter_estimate(x, random_matrix(4, 2, rng)), config_error);
}

TEST_CASE("least-squares amplitudes recover noiseless coefficients", "[detection]")
{
    const auto &dict = reference_dictionary();
    const std::vector<std::size_t> cols{100, 450};
    const CMatrix a = gather_columns(dict, cols);
    CVector g(2);
    g << cplx(4.0, -1.0), cplx(0.0, 2.5);
    const CVector est = backscatter_estimate(CVector(a * g), a);
    CHECK((est - g).norm() <= 1e-12 * g.norm());
    CHECK(projection_residual(CVector(a * g), a) <= 1e-24 * g.squaredNorm());
}

TEST_CASE("penalty term", "[detection]")
{
    CHECK(penalty(0, 3.0) == 0.0);
    CHECK(penalty(1, 3.0) == 12.0);
    CHECK(penalty(2, 3.0) == 24.0);
    CHECK(penalty(3, 5.0) == 54.0);
    CHECK_THAT(penalty(2, 1.5), WithinRel(15.0, 1e-15));
}

TEST_CASE("statistic equals the term-by-term maximisation", "[detection]")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 60; ++trial)
    {
        const Eigen::Index n = 12;
        const std::size_t kmax = 1 + std::size_t(trial % 3);
        const CMatrix full = random_matrix(n, Eigen::Index(kmax), rng);
        const CVector x = full * random_matrix(Eigen::Index(kmax), 1, rng).col(0) * 0.3 + random_matrix(n, 1, rng).col(0);
        std::vector<CMatrix> supports;
        for (std::size_t k = 1; k <= kmax; ++k)
            supports.push_back(full.leftCols(Eigen::Index(k)));
        const double rho = 1.5 + 0.5 * (trial % 5);
        const auto st = klic_statistic(x, supports, rho);

        // hand evaluation: -N log sigma_k^2 - h(k) against -N log sigma_0^2
        const double s0 = x.squaredNorm() / double(n);
        double best = -infinity;
        std::size_t arg = 0;
        for (std::size_t k = 1; k <= kmax; ++k)
        {
            const CMatrix &a = supports[k - 1];
            const CMatrix p = CMatrix::Identity(n, n) - a * (a.adjoint() * a).inverse() * a.adjoint();
            const double sk = std::real(x.dot(p * x)) / double(n);
            const double term = -double(n) * std::log(sk) + double(n) * std::log(s0) - 3.0 * double(k) * (1.0 + rho);
            CHECK_THAT(st.log_ratios[k - 1], WithinRel(double(n) * std::log(s0 / sk), 1e-12));
            if (term > best)
                best = term, arg = k;
        }
        CHECK(st.k_star == arg);
        CHECK_THAT(st.value, WithinAbs(best, 1e-12 * std::max(1.0, std::abs(best))));
        for (std::size_t k = 1; k < kmax; ++k)
            CHECK(st.log_ratios[k] >= st.log_ratios[k - 1] - 1e-12);
    }
}

TEST_CASE("ties go to the smaller order", "[detection]")
{
    // ratio_2 - h(2) == ratio_1 - h(1) exactly
    const std::vector<double> ratios{20.0, 32.0};
    const auto st = klic_from_log_ratios(ratios, 3.0);
    CHECK(st.k_star == 1);
    CHECK(st.value == 8.0);
}

TEST_CASE("degenerate inputs", "[detection]")
{
    const auto &dict = reference_dictionary();
    DetectorConfig cfg = open_detector();
    cfg.threshold = -infinity;
    const auto zero = klic_detect(CVector::Zero(38), dict, cfg);
    CHECK(zero.k_hat == 0);
    CHECK(zero.statistic == -infinity);
    CHECK(zero.noise_estimate == 0.0);

    // exact fit gives an infinite log ratio and always beats the threshold
    const std::vector<double> residuals{1.0, 0.0};
    const auto r = log_ratios(4.0, residuals, 10);
    CHECK_THAT(r[0], WithinRel(10.0 * std::log(4.0), 1e-15));
    CHECK(r[1] == infinity);
    CHECK(klic_from_log_ratios(r, 3.0).k_star == 2);
    CHECK(klic_from_log_ratios(r, 3.0).value == infinity);

    const auto noiseless = klic_detect(CVector(3.0 * dict.column(200)), dict, cfg);
    CHECK(noiseless.k_hat >= 1);
    CHECK(noiseless.ranking[0] == 200);
}

TEST_CASE("statistic and supports are invariant to complex scaling", "[detection]")
{
    const auto &dict = reference_dictionary();
    const auto res = rayleigh_resolutions(dict.geometry());
    ScenarioConfig sc;
    sc.hypothesis = 2;
    sc.power_multipliers = {1.0, 1.0};
    sc.positions = PositionMode::random;
    sc.phases = PhaseMode::random;
    DetectorConfig cfg = open_detector();
    for (std::size_t i = 0; i < 40; ++i)
    {
        Rng rng = trial_rng(31, i);
        const auto truth = draw_truth(sc, dict.grid(), res, double(i % 3) * 5.0, rng);
        const CVector x = synthesize_pixel(dict.geometry(), truth, 1.0, rng);
        const auto base = klic_detect(x, dict, cfg);
        for (cplx f : {cplx(2.0, 0.0), cplx(0.5, 0.0), cplx(0.3, -1.7), cplx(1e3, 1e3)})
        {
            const auto o = klic_detect(CVector(f * x), dict, cfg);
            CHECK(o.ranking == base.ranking);
            CHECK(o.k_star == base.k_star);
            CHECK_THAT(o.statistic, WithinAbs(base.statistic, 1e-8 * std::max(1.0, std::abs(base.statistic))));
        }
    }
}

TEST_CASE("a large penalty forces the null hypothesis", "[detection]")
{
    const auto &dict = reference_dictionary();
    DetectorConfig cfg = open_detector();
    cfg.rho = 1e6;
    Rng rng(5);
    const std::vector<Scatterer> truth{{dict.grid().point(300), cplx(amplitude_for_snr(10.0), 0.0)}};
    for (int i = 0; i < 10; ++i)
        CHECK(klic_detect(synthesize_pixel(dict.geometry(), truth, 1.0, rng), dict, cfg).k_hat == 0);
}

TEST_CASE("high SNR recovers the true order and positions", "[detection]")
{
    const auto &dict = reference_dictionary();
    const auto &grid = dict.grid();
    const DetectorConfig cfg = open_detector();
    const auto centre = grid.center_index();
    const auto p0 = grid.point(centre);
    const auto p1 = grid.point(grid.nearest_index({p0.elevation_m + 30.8, p0.velocity_m_yr, 0.0}));
    const double amp = amplitude_for_snr(30.0);
    for (int i = 0; i < 20; ++i)
    {
        Rng rng = trial_rng(8, std::uint64_t(i));
        const std::vector<Scatterer> one{{p0, cplx(amp, 0.0)}};
        const auto o1 = klic_detect(synthesize_pixel(dict.geometry(), one, 1.0, rng), dict, cfg);
        REQUIRE(o1.k_hat == 1);
        CHECK(o1.scatterers[0].column == centre);
        CHECK(o1.scatterers[0].params == p0);
        CHECK_THAT(std::abs(o1.scatterers[0].amplitude), WithinRel(amp, 0.1));

        const std::vector<Scatterer> two{{p0, cplx(amp, 0.0)}, {p1, cplx(0.0, amp)}};
        const auto o2 = klic_detect(synthesize_pixel(dict.geometry(), two, 1.0, rng), dict, cfg);
        REQUIRE(o2.k_hat == 2);
        std::vector<ScattererParams> got{o2.scatterers[0].params, o2.scatterers[1].params};
        CHECK(std::count(got.begin(), got.end(), p0) == 1);
        CHECK(std::count(got.begin(), got.end(), p1) == 1);
        CHECK(o2.noise_estimate > 0.5);
        CHECK(o2.noise_estimate < 1.5);
    }
}

TEST_CASE("noise estimate under the true support", "[detection]")
{
    const auto &dict = reference_dictionary();
    const std::vector<std::size_t> cols{410};
    const CMatrix a = gather_columns(dict, cols);
    const std::vector<Scatterer> truth{{dict.grid().point(410), cplx(3.0, 0.0)}};
    double sum = 0.0;
    const int trials = 4000;
    for (int i = 0; i < trials; ++i)
    {
        Rng rng = trial_rng(12, std::uint64_t(i));
        sum += noise_variance_estimate(synthesize_pixel(dict.geometry(), truth, 2.0, rng), a);
    }
    // E = sigma^2 (N - k) / N
    CHECK_THAT(sum / trials, WithinRel(2.0 * 37.0 / 38.0, 0.02));
}

TEST_CASE("zoomed second pass refines positions", "[detection]")
{
    const auto &dict = reference_dictionary();
    DetectorConfig cfg = open_detector(1);
    cfg.zoom = true;
    const auto p0 = dict.grid().point(dict.grid().center_index());
    const ScattererParams truth_p{p0.elevation_m + 0.9, p0.velocity_m_yr, 0.0};
    Rng rng(2);
    const std::vector<Scatterer> truth{{truth_p, cplx(amplitude_for_snr(35.0), 0.0)}};
    const auto o = klic_detect(synthesize_pixel(dict.geometry(), truth, 1.0, rng), dict, cfg);
    REQUIRE(o.k_hat == 1);
    CHECK(std::abs(o.scatterers[0].params.elevation_m - truth_p.elevation_m) < 0.9);
    CHECK(o.ranking.empty());
}

TEST_CASE("detector configuration validation", "[detection]")
{
    const auto &dict = reference_dictionary();
    const CVector x = dict.column(0);
    auto bad = [&](auto mutate) {
        DetectorConfig cfg = open_detector();
        mutate(cfg);
        CHECK_THROWS_AS(klic_detect(x, dict, cfg), config_error);
    };
    bad([](DetectorConfig &c) { c.kmax = 0; });
    bad([](DetectorConfig &c) { c.kmax = 38; });
    bad([](DetectorConfig &c) { c.rho = 1.0; });
    bad([](DetectorConfig &c) { c.threshold = std::nan(""); });
    bad([](DetectorConfig &c) { c.cs.max_iterations = 0; });
    CHECK_THROWS_AS(klic_detect(CVector::Zero(5), dict, open_detector()), config_error);

    const auto tiny = small_dictionary(38, 19, 1);
    DetectorConfig two = open_detector();
    CHECK_THROWS_AS(klic_detect(CVector::Zero(38), tiny, two), config_error);
}

TEST_CASE("Sup-GLRT agrees with exhaustive enumeration", "[detection]")
{
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 30; ++trial)
    {
        const auto dict = small_dictionary(6, 8, 200 + std::uint64_t(trial));
        const SupGlrt sup(dict, 2);
        const CVector x = random_matrix(6, 1, rng).col(0) + 2.0 * dict.column(std::size_t(trial % 8));
        const auto st = sup.statistics(x);

        double best1 = infinity, best2 = infinity;
        for (std::size_t i = 0; i < 8; ++i)
        {
            const std::vector<std::size_t> one{i};
            best1 = std::min(best1, projection_residual(x, gather_columns(dict, one)));
            for (std::size_t j = i + 1; j < 8; ++j)
            {
                const std::vector<std::size_t> two{i, j};
                best2 = std::min(best2, projection_residual(x, gather_columns(dict, two)));
            }
        }
        CHECK(st.min_residual[0] == x.squaredNorm());
        CHECK_THAT(st.min_residual[1], WithinRel(best1, 1e-10));
        CHECK_THAT(st.min_residual[2], WithinRel(best2, 1e-10));
        CHECK(st.lambda.size() == 2);
        CHECK(st.lambda[0] >= st.lambda[1]);
        CHECK(st.lambda[1] >= 1.0 - 1e-12);
        CHECK_THAT(st.lambda[0], WithinRel(x.squaredNorm() / best2, 1e-10));
    }
}

TEST_CASE("Sup-GLRT stage rule", "[detection]")
{
    const auto &dict = reference_dictionary();
    const SupGlrt sup(dict, 2);
    Rng rng(6);
    const std::vector<Scatterer> truth{{dict.grid().point(300), cplx(amplitude_for_snr(30.0), 0.0)}};
    const CVector x = synthesize_pixel(dict.geometry(), truth, 1.0, rng);
    const auto st = sup.statistics(x);
    const std::vector<double> stop0{infinity, infinity}, stop1{1.0, infinity}, pass{1.0, 1.0};
    CHECK(sup.detect(x, stop0).k_hat == 0);
    CHECK(sup.detect(x, stop1).k_hat == 1);
    CHECK(sup.detect(x, pass).k_hat == 2);
    const auto o = sup.detect(x, stop1);
    CHECK(o.scatterers.size() == 1);
    CHECK(o.scatterers[0].column == st.support[1][0]);
    CHECK(o.stage_statistics == st.lambda);
    CHECK_THROWS_AS(sup.detect(x, std::vector<double>{1.0}), config_error);

    const SupGlrt single(dict, 1);
    const auto s1 = single.statistics(x);
    CHECK(s1.lambda.size() == 1);
    CHECK_THAT(s1.lambda[0], WithinRel(x.squaredNorm() / s1.min_residual[1], 1e-14));
    CHECK(s1.support[1][0] == 300);

    CHECK_THROWS_AS(SupGlrt(dict, 3), config_error);
    CHECK_THROWS_AS(SupGlrt(dict, 2, 1000), config_error);
}
