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


#include <tomo_klic/experiments.hpp>
#include <tomo_klic/stack_io.hpp>

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace tomo_klic;

namespace
{
    std::filesystem::path scratch(const std::string &name)
    {
        const auto dir = std::filesystem::temp_directory_path() / "tomo_klic_test_stack_io";
        std::filesystem::create_directories(dir);
        return dir / name;
    }

    std::vector<CVector> random_pixels(std::size_t count, std::size_t n, std::uint64_t seed)
    {
        Rng rng(seed);
        std::vector<CVector> out;
        for (std::size_t p = 0; p < count; ++p)
        {
            CVector x(static_cast<Eigen::Index>(n));
            for (auto &z : x)
                z = circular_gaussian(rng, 3.0);
            out.push_back(x);
        }
        return out;
    }

    std::string read_bytes(const std::filesystem::path &p)
    {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        return s.str();
    }

    void write_bytes(const std::filesystem::path &p, const std::string &bytes)
    {
        std::ofstream(p, std::ios::binary) << bytes;
    }

    std::string error_of(const std::filesystem::path &p)
    {
        try
        {
            StackReader r(p);
        }
        catch (const data_error &e)
        {
            return e.what();
        }
        return {};
    }

    const Dictionary &reference_dictionary()
    {
        static const Dictionary d = [] {
            const auto geo = reference_geometry();
            return build_dictionary(geo, half_rayleigh_grid(geo, -177.0, 177.0, -0.01, 0.01));
        }();
        return d;
    }
}

TEST_CASE("stack round trip in both byte orders", "[stack_io]")
{
    const auto pixels = random_pixels(12, 5, 1);
    for (bool big : {false, true})
    {
        const auto path = scratch(big ? "be.tstk" : "le.tstk");
        write_stack(path, {stack_version, 5, 3, 4, big}, pixels);
        CHECK(std::filesystem::file_size(path) == 24 + 12 * 5 * 16);
        StackReader r(path);
        CHECK(r.header().images == 5);
        CHECK(r.header().rows == 3);
        CHECK(r.header().cols == 4);
        CHECK(r.header().big_endian == big);
        for (std::size_t p = 0; p < 12; ++p)
            CHECK(r.read_pixel(p) == pixels[p]);
        const auto mid = r.read_range(5, 4);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(mid[i] == pixels[5 + i]);
        CHECK_THROWS_AS(r.read_range(10, 3), config_error);
    }
    // same samples, different byte order on disk
    const auto le = read_bytes(scratch("le.tstk")), be = read_bytes(scratch("be.tstk"));
    CHECK(le.substr(0, 4) == "TSTK");
    CHECK(le[4] == 0);
    CHECK(be[4] == 1);
    CHECK(le.substr(24, 8) == std::string(be.rbegin() + std::ptrdiff_t(be.size() - 32), be.rbegin() + std::ptrdiff_t(be.size() - 24)));
}

TEST_CASE("writer enforces the declared size", "[stack_io]")
{
    StackWriter w(scratch("short.tstk"), {stack_version, 2, 1, 2, false});
    CHECK_THROWS_AS(w.write_pixel(CVector::Zero(3)), config_error);
    w.write_pixel(CVector::Zero(2));
    CHECK_THROWS_AS(w.close(), config_error);
    w.write_pixel(CVector::Zero(2));
    CHECK_THROWS_AS(w.write_pixel(CVector::Zero(2)), config_error);
    CHECK_NOTHROW(w.close());
    CHECK_THROWS_AS(StackWriter(scratch("zero.tstk"), {stack_version, 0, 1, 1, false}), config_error);
}

TEST_CASE("malformed stacks report path and byte offset", "[stack_io]")
{
    const auto good = scratch("good.tstk");
    write_stack(good, {stack_version, 3, 2, 2, false}, random_pixels(4, 3, 2));
    const auto bytes = read_bytes(good);

    auto variant = [&](const std::string &name, std::string b) {
        const auto p = scratch(name);
        write_bytes(p, b);
        return error_of(p);
    };

    std::string b = bytes;
    b[0] = 'X';
    auto msg = variant("magic.tstk", b);
    CHECK(msg.find("magic.tstk: byte offset 0: bad magic") != std::string::npos);

    b = bytes;
    b[4] = 7;
    CHECK(variant("flag.tstk", b).find("byte offset 4: invalid byte-order flag 7") != std::string::npos);

    b = bytes;
    b[8] = 2;
    CHECK(variant("version.tstk", b).find("byte offset 8: unsupported version 2") != std::string::npos);

    b = bytes;
    b[12] = 0;
    CHECK(variant("images.tstk", b).find("byte offset 12: N must be positive") != std::string::npos);

    msg = variant("trunc.tstk", bytes.substr(0, bytes.size() - 5));
    CHECK(msg.find("truncated payload: expected " + std::to_string(bytes.size()) + " bytes, found " +
                   std::to_string(bytes.size() - 5)) != std::string::npos);
    CHECK(msg.find("byte offset " + std::to_string(bytes.size() - 5)) != std::string::npos);

    CHECK(variant("trailing.tstk", bytes + "xx").find("trailing bytes") != std::string::npos);
    CHECK(variant("header.tstk", bytes.substr(0, 10)).find("truncated header") != std::string::npos);
    CHECK(variant("empty.tstk", "").find("bad magic") != std::string::npos);
    CHECK(error_of(scratch("does_not_exist.tstk")).find("cannot open") != std::string::npos);
}

TEST_CASE("complex float32 conversion", "[stack_io]")
{
    const std::uint32_t n = 4, rows = 2, cols = 3;
    std::vector<float> samples(std::size_t(rows * cols * n * 2));
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> u(-10.0f, 10.0f);
    for (auto &s : samples)
        s = u(rng);
    for (bool big : {false, true})
    {
        std::string raw;
        for (float s : samples)
        {
            const float v = big != detail::host_big_endian ? detail::byteswap_value(s) : s;
            raw.append(reinterpret_cast<const char *>(&v), 4);
        }
        const auto in = scratch("raw.cf32"), out = scratch("converted.tstk");
        write_bytes(in, raw);
        const auto h = convert_cf32(in, n, rows, cols, out, big);
        CHECK(h.pixels() == 6);
        StackReader r(out);
        for (std::uint64_t p = 0; p < 6; ++p)
        {
            const CVector x = r.read_pixel(p);
            for (std::uint32_t k = 0; k < n; ++k)
            {
                CHECK(x[k].real() == double(samples[(p * n + k) * 2]));
                CHECK(x[k].imag() == double(samples[(p * n + k) * 2 + 1]));
            }
        }
        CHECK_THROWS_AS(convert_cf32(in, n, rows + 1, cols, out, big), data_error);
    }
    CHECK_THROWS_AS(convert_cf32(scratch("missing.cf32"), 1, 1, 1, scratch("x.tstk")), data_error);
}

TEST_CASE("map export", "[stack_io]")
{
    DetectionMap map{1, 3, 3, {}};
    map.records.push_back({0, -infinity, {}});
    map.records.push_back({2, 41.5, {{1.25, -0.5, 3.0}, {20.0, 0.125, 1.5}}});
    map.records.push_back({1, infinity, {{0.1, 0.0, 2.0}}});
    std::ostringstream csv;
    write_map_csv(map, csv);
    std::istringstream lines(csv.str());
    std::string header, r0, r1, r2;
    std::getline(lines, header);
    std::getline(lines, r0);
    std::getline(lines, r1);
    std::getline(lines, r2);
    CHECK(header == "row,col,k_hat,z_1,z_2,z_3,v_1,v_2,v_3,amp_1,amp_2,amp_3,statistic");
    CHECK(r0 == "0,0,0,,,,,,,,,,-inf");
    CHECK(r1 == "0,1,2,1.25,20,,-0.5,0.125,,3,1.5,,41.5");
    CHECK(r2 == "0,2,1,0.10000000000000001,,,0,,,2,,,inf");

    const auto j = map_to_json(map);
    CHECK(j.at("rows") == 1);
    CHECK(j.at("kmax") == 3);
    REQUIRE(j.at("pixels").size() == 3);
    CHECK(j["pixels"][1]["k_hat"] == 2);
    CHECK(j["pixels"][1]["scatterers"][1]["z_m"] == 20.0);
    CHECK(j["pixels"][0]["statistic"] == "-inf");
    CHECK(j["pixels"][0]["scatterers"].empty());

    DetectionMap empty{0, 0, 2, {}};
    std::ostringstream e;
    write_map_csv(empty, e);
    CHECK(e.str() == "row,col,k_hat,z_1,z_2,v_1,v_2,amp_1,amp_2,statistic\n");
}

TEST_CASE("scene detection reproduces the per-pixel harness", "[stack_io]")
{
    const auto &dict = reference_dictionary();
    const auto &geo = dict.geometry();
    BuildingConfig cfg;
    cfg.n_near = 4;
    cfg.n_mid = 4;
    cfg.n_far = 4;
    cfg.n_mc = 1;
    DetectorConfig det_cfg;
    det_cfg.kmax = 3;
    det_cfg.threshold = 30.0;
    const auto det = make_klic_detector(dict, det_cfg);
    const auto r = run_building_scenario(geo, dict.grid(), det, 3, cfg, 1);

    std::vector<CVector> pixels;
    for (std::size_t p = 0; p < r.pixels.size(); ++p)
        pixels.push_back(building_pixel(cfg, geo, r.pixels[p], p, 0));
    const auto path = scratch("scene.tstk");
    write_stack(path, {stack_version, 38, 1, std::uint32_t(pixels.size()), false}, pixels);

    StackReader reader(path);
    std::vector<std::uint64_t> progress;
    const auto map = detect_scene(reader, geo, det, 3, 2, [&](std::uint64_t done, std::uint64_t) { progress.push_back(done); }, 5);
    CHECK(progress == std::vector<std::uint64_t>{5, 10, 12});
    REQUIRE(map.records.size() == 12);
    for (std::size_t p = 0; p < 12; ++p)
        CHECK(map.records[p].k_hat == r.k_hat[p]);

    // CSV and JSON describe the same map
    std::ostringstream csv;
    write_map_csv(map, csv);
    const auto j = map_to_json(map);
    std::istringstream lines(csv.str());
    std::string line;
    std::getline(lines, line);
    for (std::size_t p = 0; p < 12; ++p)
    {
        std::getline(lines, line);
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');)
            f.push_back(c);
        CHECK(std::stoul(f[2]) == j["pixels"][p]["k_hat"].get<std::size_t>());
        for (std::size_t k = 0; k < map.records[p].k_hat; ++k)
            CHECK(std::stod(f[3 + k]) == j["pixels"][p]["scatterers"][k]["z_m"].get<double>());
    }

    const auto wrong = scratch("wrong_n.tstk");
    write_stack(wrong, {stack_version, 5, 1, 1, false}, random_pixels(1, 5, 1));
    StackReader wr(wrong);
    CHECK_THROWS_AS(detect_scene(wr, geo, det, 3), data_error);
}

TEST_CASE("all-zero scene accepts the null hypothesis everywhere", "[stack_io]")
{
    const auto &dict = reference_dictionary();
    DetectorConfig cfg;
    cfg.threshold = -1e300;
    const auto path = scratch("zeros.tstk");
    write_stack(path, {stack_version, 38, 2, 3, true}, std::vector<CVector>(6, CVector::Zero(38)));
    StackReader reader(path);
    const auto map = detect_scene(reader, dict.geometry(), make_klic_detector(dict, cfg), 2);
    for (const auto &rec : map.records)
    {
        CHECK(rec.k_hat == 0);
        CHECK(rec.scatterers.empty());
    }
}
