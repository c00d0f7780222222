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


#include <tomo_klic/calibration.hpp>

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

using namespace tomo_klic;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace
{
    const Dictionary &reference_dictionary()
    {
        static const Dictionary d = [] {
            const auto geo = reference_geometry();
            return build_dictionary(geo, half_rayleigh_grid(geo, -177.0, 177.0, -0.01, 0.01));
        }();
        return d;
    }

    std::filesystem::path scratch(const std::string &name)
    {
        const auto dir = std::filesystem::temp_directory_path() / "tomo_klic_test_calibration";
        std::filesystem::create_directories(dir);
        return dir / name;
    }

    std::size_t exceedances(const std::vector<double> &v, double eta)
    {
        return std::size_t(std::count_if(v.begin(), v.end(), [&](double s) { return s > eta; }));
    }
}

TEST_CASE("order-statistic threshold", "[calibration]")
{
    std::vector<double> stats(1000);
    std::iota(stats.begin(), stats.end(), 1.0);
    std::shuffle(stats.begin(), stats.end(), std::mt19937_64(4));
    const auto est = empirical_threshold(stats, 0.01, 5);
    CHECK(est.threshold == 990.0);
    CHECK(est.order_index == 990);
    CHECK(est.tail == std::vector<double>{1000.0, 999.0, 998.0, 997.0, 996.0});
    CHECK(exceedances(stats, est.threshold) == 10);

    stats.pop_back();
    CHECK(exceedances(stats, empirical_threshold(stats, 0.01).threshold) <= 9);

    CHECK(empirical_threshold(stats, 1.0).threshold == -infinity);
    CHECK(empirical_threshold(stats, 1.0).order_index == 0);
    CHECK_THROWS_AS(empirical_threshold(stats, 0.0), config_error);
    CHECK_THROWS_AS(empirical_threshold(stats, 1.5), config_error);
    CHECK_THROWS_AS(empirical_threshold({}, 0.1), calibration_error);
    CHECK_THROWS_AS(empirical_threshold(std::vector<double>(50, 3.0), 0.1), calibration_error);
}

TEST_CASE("threshold never exceeds the target rate on the calibration sample", "[calibration]")
{
    std::mt19937_64 rng(9);
    std::normal_distribution<double> d;
    std::uniform_real_distribution<double> u(0.001, 0.5);
    for (int trial = 0; trial < 200; ++trial)
    {
        const std::size_t n = 10 + std::size_t(rng() % 3000);
        std::vector<double> stats(n);
        for (auto &s : stats)
            s = std::round(d(rng) * 20.0) / 4.0; // ties included
        if (std::all_of(stats.begin(), stats.end(), [&](double s) { return s == stats[0]; }))
            continue;
        const double pfa = u(rng);
        const double eta = empirical_threshold(stats, pfa).threshold;
        CHECK(double(exceedances(stats, eta)) <= std::floor(pfa * double(n)) + 1e-9);
        // eta is a sample value and at least one trial sits at or above it
        CHECK(std::count(stats.begin(), stats.end(), eta) >= 1);
    }
}

TEST_CASE("trial budget", "[calibration]")
{
    std::vector<std::string> notes;
    CHECK_THROWS_AS(check_trial_budget(9999, 1e-3, notes), config_error);
    check_trial_budget(10000, 1e-3, notes);
    CHECK(notes.size() == 1);
    check_trial_budget(100000, 1e-3, notes);
    CHECK(notes.size() == 1);
    check_trial_budget(1, 1.0, notes);
    CHECK(notes.size() == 1);
    CHECK_THROWS_AS(calibrate_klic_threshold(reference_dictionary(), DetectorConfig{}, 1e-3, 5000, 1), config_error);
}

TEST_CASE("special values survive JSON", "[calibration]")
{
    for (double v : {0.0, -1.5, 1e300, infinity, -infinity})
        CHECK(number_from_json(number_to_json(v)) == v);
    CHECK(std::isnan(number_from_json(number_to_json(std::nan("")))));
    CHECK_THROWS_AS(number_from_json(nlohmann::json("abc")), data_error);
}

TEST_CASE("calibration document round trip and provenance", "[calibration]")
{
    CalibrationResult r;
    r.detector = "supglrt";
    r.mode = "joint";
    r.thresholds = {1.25, infinity};
    r.target_pfa = 0.01;
    r.trials = 12345;
    r.seed = 0xffffffffffffffffULL;
    r.config_hash = "0123456789abcdef";
    r.full_fidelity = true;
    r.order_index = {12222, 0};
    r.tail = {{3.0, 2.0}, {}};
    r.notes = {"a note"};
    const auto path = scratch("round_trip.json");
    write_calibration(r, path);
    const auto back = read_calibration(path);
    CHECK(back.detector == r.detector);
    CHECK(back.mode == r.mode);
    CHECK(back.thresholds == r.thresholds);
    CHECK(back.target_pfa == r.target_pfa);
    CHECK(back.trials == r.trials);
    CHECK(back.seed == r.seed);
    CHECK(back.config_hash == r.config_hash);
    CHECK(back.full_fidelity);
    CHECK(back.order_index == r.order_index);
    CHECK(back.tail == r.tail);
    CHECK(back.notes == r.notes);

    CHECK_NOTHROW(verify_provenance(back, "0123456789abcdef", "supglrt"));
    CHECK_THROWS_AS(verify_provenance(back, "0123456789abcdee", "supglrt"), provenance_error);
    CHECK_THROWS_AS(verify_provenance(back, "0123456789abcdef", "klic"), provenance_error);

    CHECK_THROWS_AS(read_calibration(scratch("missing.json")), data_error);
    std::ofstream(scratch("broken.json")) << "{ not json";
    CHECK_THROWS_AS(read_calibration(scratch("broken.json")), data_error);
    std::ofstream(scratch("partial.json")) << R"({"detector": "klic"})";
    CHECK_THROWS_AS(read_calibration(scratch("partial.json")), data_error);
}

TEST_CASE("configuration hash covers the null distribution inputs", "[calibration]")
{
    const auto &dict = reference_dictionary();
    DetectorConfig cfg;
    const auto h = config_hash(dict, cfg, "klic");
    CHECK(h.size() == 16);
    CHECK(config_hash(dict, cfg, "klic") == h);
    auto differs = [&](auto mutate) {
        DetectorConfig c = cfg;
        mutate(c);
        return config_hash(dict, c, "klic") != h;
    };
    CHECK(differs([](DetectorConfig &c) { c.rho = 3.1; }));
    CHECK(differs([](DetectorConfig &c) { c.kmax = 3; }));
    CHECK(differs([](DetectorConfig &c) { c.cs.max_iterations = 5; }));
    CHECK(differs([](DetectorConfig &c) { c.normalize = false; }));
    CHECK_FALSE(differs([](DetectorConfig &c) { c.threshold = 42.0; }));
    CHECK(config_hash(dict, cfg, "supglrt") != h);

    const auto geo = reference_geometry();
    const auto other = build_dictionary(geo, half_rayleigh_grid(geo, -100.0, 100.0, -0.01, 0.01));
    CHECK(config_hash(other, cfg, "klic") != h);
}

TEST_CASE("KLIC calibration is reproducible and meets its rate", "[calibration]")
{
    const auto &dict = reference_dictionary();
    DetectorConfig cfg;
    const double pfa = 0.05;
    const auto a = calibrate_klic_threshold(dict, cfg, pfa, 2000, 21, 1);
    const auto b = calibrate_klic_threshold(dict, cfg, pfa, 2000, 21, 2);
    CHECK(a.thresholds == b.thresholds);
    CHECK(a.tail == b.tail);
    CHECK(a.order_index == std::vector<std::size_t>{1900});
    CHECK(a.full_fidelity);
    CHECK(a.config_hash == config_hash(dict, cfg, "klic"));
    CHECK(calibrate_klic_threshold(dict, cfg, pfa, 2000, 22, 1).thresholds != a.thresholds);

    // fresh noise realisations
    cfg.threshold = a.thresholds[0];
    const auto fresh = noise_source(dict.geometry(), 999);
    std::size_t alarms = 0;
    const std::size_t n = 2000;
    for (std::size_t i = 0; i < n; ++i)
        alarms += klic_detect(fresh(i), dict, cfg).k_hat > 0;
    const double rate = double(alarms) / double(n);
    CHECK(std::abs(rate - pfa) <= 4.0 * std::sqrt(pfa * (1.0 - pfa) / double(n)));
}

TEST_CASE("noise level does not move the threshold", "[calibration]")
{
    const auto &dict = reference_dictionary();
    DetectorConfig cfg;
    const auto unit = collect_log_ratios(dict, cfg, 300, noise_source(dict.geometry(), 5, 1.0), 1);
    const auto loud = collect_log_ratios(dict, cfg, 300, noise_source(dict.geometry(), 5, 4.0), 1);
    for (std::size_t i = 0; i < unit.values.size(); ++i)
        CHECK_THAT(loud.values[i], WithinAbs(unit.values[i], 1e-9 * std::max(1.0, std::abs(unit.values[i]))));
    CHECK_THAT(threshold_from_ratios(loud, cfg, 0.1).thresholds[0],
               WithinAbs(threshold_from_ratios(unit, cfg, 0.1).thresholds[0], 1e-9));
}

TEST_CASE("stored log ratios serve lower orders and other penalties", "[calibration]")
{
    const auto &dict = reference_dictionary();
    DetectorConfig three;
    three.kmax = 3;
    const auto src = noise_source(dict.geometry(), 17);
    const auto r3 = collect_log_ratios(dict, three, 200, src, 1);
    for (std::size_t kmax : {1, 2})
        for (double rho : {2.0, 3.0, 5.0})
        {
            DetectorConfig c;
            c.kmax = kmax;
            c.rho = rho;
            c.threshold = infinity;
            for (std::size_t i = 0; i < 200; i += 37)
            {
                const auto o = klic_detect(src(i), dict, c);
                const auto st = r3.statistic(i, kmax, rho);
                CHECK(st.value == o.statistic);
                CHECK(st.k_star == o.k_star);
            }
        }
}

TEST_CASE("penalty tuning on hand-built ratios", "[calibration]")
{
    // noise trials far below the alternative, so every H1 trial clears eta
    RatioSet noise{2, {}};
    for (int i = 0; i < 100; ++i)
        noise.values.insert(noise.values.end(), {0.01 * i, 0.02 * i});
    // h(1) = 3(1 + rho), h(2) = 6(1 + rho): (40, 60) prefers k = 2 up to rho = 17/3
    RatioSet h1{2, {40.0, 60.0, 40.0, 45.0}};
    const std::vector<double> grid{2.0, 4.0, 6.0};
    const auto t = tune_rho_from_ratios(noise, h1, 2, 0.1, 0.25, grid);
    REQUIRE(t.curve.size() == 3);
    CHECK(t.curve[0].p_accept_h2 == 0.5);
    CHECK(t.curve[1].p_accept_h2 == 0.5);
    CHECK(t.curve[2].p_accept_h2 == 0.0);
    CHECK(t.reached);
    CHECK(t.rho == 6.0);
    CHECK(t.diagnostic.empty());

    const auto miss = tune_rho_from_ratios(noise, h1, 2, 0.1, 0.25, {2.0, 4.0});
    CHECK_FALSE(miss.reached);
    CHECK_FALSE(miss.diagnostic.empty());
    CHECK_THROWS_AS(tune_rho_from_ratios(noise, h1, 3, 0.1, 0.25, grid), config_error);
    CHECK_THROWS_AS(tune_rho_from_ratios(noise, h1, 2, 0.1, 0.25, {0.5}), config_error);
}

TEST_CASE("Sup-GLRT threshold modes", "[calibration]")
{
    std::mt19937_64 rng(12);
    std::exponential_distribution<double> e(1.0);
    const std::size_t n = 400;
    std::vector<double> lambda;
    for (std::size_t i = 0; i < n; ++i)
    {
        const double l2 = 1.0 + e(rng);
        lambda.insert(lambda.end(), {l2 + e(rng), l2});
    }
    std::vector<double> col1, col2;
    for (std::size_t i = 0; i < n; ++i)
        col1.push_back(lambda[2 * i]), col2.push_back(lambda[2 * i + 1]);

    const double pfa = 0.2;
    const auto per = supglrt_thresholds_from_statistics(lambda, 2, pfa, SupGlrtCalibrationMode::per_stage);
    CHECK(per.mode == "per_stage");
    CHECK(per.thresholds[0] == empirical_threshold(col1, pfa).threshold);
    CHECK(per.thresholds[1] == empirical_threshold(col2, pfa).threshold);

    const auto joint = supglrt_thresholds_from_statistics(lambda, 2, pfa, SupGlrtCalibrationMode::joint);
    CHECK(joint.thresholds[0] == per.thresholds[0]);
    std::vector<double> reached;
    for (std::size_t i = 0; i < n; ++i)
        if (col1[i] >= joint.thresholds[0])
            reached.push_back(col2[i]);
    REQUIRE(double(reached.size()) >= 10.0 / pfa);
    CHECK(joint.thresholds[1] == empirical_threshold(reached, pfa).threshold);
    CHECK(joint.notes.empty());

    const std::vector<double> few(lambda.begin(), lambda.begin() + 2 * 60);
    const auto fallback = supglrt_thresholds_from_statistics(few, 2, pfa, SupGlrtCalibrationMode::joint);
    CHECK(fallback.notes.size() == 1);
}

TEST_CASE("Sup-GLRT calibration on noise", "[calibration]")
{
    const auto &dict = reference_dictionary();
    const SupGlrt sup(dict, 1);
    const double pfa = 0.1;
    const auto r = calibrate_supglrt_thresholds(sup, pfa, 1000, 3, 1);
    CHECK(r.thresholds.size() == 1);
    CHECK(r.thresholds[0] > 1.0);
    CHECK(r.detector == "supglrt");
    CHECK(calibrate_supglrt_thresholds(sup, pfa, 1000, 3, 2).thresholds == r.thresholds);

    const auto fresh = noise_source(dict.geometry(), 1234);
    std::size_t alarms = 0;
    for (std::size_t i = 0; i < 1000; ++i)
        alarms += sup.detect(fresh(i), r.thresholds).k_hat > 0;
    CHECK(std::abs(double(alarms) / 1000.0 - pfa) <= 4.0 * std::sqrt(pfa * (1.0 - pfa) / 1000.0));
}

TEST_CASE("penalty tuning end to end", "[calibration]")
{
    const auto &dict = reference_dictionary();
    DetectorConfig base;
    RhoTuningConfig tc;
    tc.n_noise = 1000;
    tc.n_h1 = 300;
    tc.pfa = 0.05;
    tc.target_misclass = 0.05;
    tc.rho_grid = {1.5, 3.0, 6.0, 9.0};
    const auto t = tune_rho(dict, base, tc, 1);
    REQUIRE(t.curve.size() == 4);
    for (const auto &pt : t.curve)
    {
        CHECK(pt.p_accept_h2 >= 0.0);
        CHECK(pt.p_accept_h2 <= pt.p_accept_multi);
        CHECK(pt.p_accept_multi <= 1.0);
    }
    CHECK(t.curve.front().p_accept_h2 > t.curve.back().p_accept_h2);
    tc.scenario.hypothesis = 2;
    CHECK_THROWS_AS(tune_rho(dict, base, tc, 1), config_error);
}
