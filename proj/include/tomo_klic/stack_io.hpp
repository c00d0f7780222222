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


#ifndef TOMO_KLIC_STACK_IO_HPP
#define TOMO_KLIC_STACK_IO_HPP

#include "calibration.hpp"
#include "common.hpp"
#include "detection.hpp"
#include "parallel.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace tomo_klic
{
    // Stack file layout (all integers and samples in the byte order given by the flag):
    //   0  char[4]  "TSTK"
    //   4  uint8    byte order: 0 little endian, 1 big endian
    //   5  uint8[3] reserved, zero
    //   8  uint32   format version (1)
    //  12  uint32   N, images per pixel
    //  16  uint32   rows
    //  20  uint32   cols
    //  24  payload: rows * cols pixels in row-major order, each N (re, im) float64 pairs
    inline constexpr std::array<char, 4> stack_magic{'T', 'S', 'T', 'K'};
    inline constexpr std::uint32_t stack_version = 1;
    inline constexpr std::size_t stack_header_bytes = 24;

    struct StackHeader
    {
        std::uint32_t version = stack_version;
        std::uint32_t images = 0;
        std::uint32_t rows = 0;
        std::uint32_t cols = 0;
        bool big_endian = false;

        std::uint64_t pixels() const { return std::uint64_t(rows) * cols; }
        std::uint64_t pixel_bytes() const { return std::uint64_t(images) * 16; }
        std::uint64_t file_bytes() const { return stack_header_bytes + pixels() * pixel_bytes(); }
    };

    namespace detail
    {
        inline constexpr bool host_big_endian = std::endian::native == std::endian::big;

        template <typename T>
        T byteswap_value(T v)
        {
            unsigned char b[sizeof(T)];
            std::memcpy(b, &v, sizeof(T));
            for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
                std::swap(b[i], b[sizeof(T) - 1 - i]);
            std::memcpy(&v, b, sizeof(T));
            return v;
        }

        template <typename T>
        void put(std::ostream &os, T v, bool big_endian)
        {
            if (big_endian != host_big_endian)
                v = byteswap_value(v);
            os.write(reinterpret_cast<const char *>(&v), sizeof(T));
        }

        template <typename T>
        T get(const unsigned char *p, bool big_endian)
        {
            T v;
            std::memcpy(&v, p, sizeof(T));
            return big_endian != host_big_endian ? byteswap_value(v) : v;
        }
    }

    // Exclusive sequential writer
    class StackWriter
    {
    public:
        StackWriter(const std::filesystem::path &path, StackHeader header) : header_(header), out_(path, std::ios::binary)
        {
            if (!out_)
                throw data_error("cannot create stack file " + path.string());
            if (header_.images == 0)
                throw config_error("StackWriter: N must be positive");
            out_.write(stack_magic.data(), 4);
            out_.put(char(header_.big_endian ? 1 : 0));
            out_.put(0), out_.put(0), out_.put(0);
            detail::put(out_, header_.version, header_.big_endian);
            detail::put(out_, header_.images, header_.big_endian);
            detail::put(out_, header_.rows, header_.big_endian);
            detail::put(out_, header_.cols, header_.big_endian);
        }

        void write_pixel(const CVector &x)
        {
            if (std::uint64_t(x.size()) != header_.images)
                throw config_error("StackWriter: pixel has " + std::to_string(x.size()) + " samples, header says " +
                                   std::to_string(header_.images));
            if (written_ >= header_.pixels())
                throw config_error("StackWriter: more pixels than rows * cols");
            for (Eigen::Index n = 0; n < x.size(); ++n)
            {
                detail::put(out_, x[n].real(), header_.big_endian);
                detail::put(out_, x[n].imag(), header_.big_endian);
            }
            ++written_;
        }

        void close()
        {
            if (written_ != header_.pixels())
                throw config_error("StackWriter: " + std::to_string(written_) + " of " +
                                   std::to_string(header_.pixels()) + " pixels written");
            out_.close();
            if (!out_)
                throw data_error("StackWriter: write failed");
        }

    private:
        StackHeader header_;
        std::ofstream out_;
        std::uint64_t written_ = 0;
    };

    inline void write_stack(const std::filesystem::path &path, StackHeader header, const std::vector<CVector> &pixels)
    {
        StackWriter w(path, header);
        for (const auto &x : pixels)
            w.write_pixel(x);
        w.close();
    }

    // Streaming reader; each instance owns its file handle, so separate readers may serve disjoint ranges
    // concurrently.
    class StackReader
    {
    public:
        explicit StackReader(const std::filesystem::path &path) : path_(path), in_(path, std::ios::binary)
        {
            if (!in_)
                throw data_error("cannot open stack file " + path.string());
            unsigned char h[stack_header_bytes];
            in_.read(reinterpret_cast<char *>(h), stack_header_bytes);
            const auto got = std::size_t(in_.gcount());
            if (got < 4 || std::memcmp(h, stack_magic.data(), 4) != 0)
                throw data_error(where(0) + "bad magic: expected \"TSTK\"");
            if (got < stack_header_bytes)
                throw data_error(where(got) + "truncated header: expected " + std::to_string(stack_header_bytes) +
                                 " bytes, found " + std::to_string(got));
            if (h[4] > 1)
                throw data_error(where(4) + "invalid byte-order flag " + std::to_string(int(h[4])));
            header_.big_endian = h[4] == 1;
            header_.version = detail::get<std::uint32_t>(h + 8, header_.big_endian);
            if (header_.version != stack_version)
                throw data_error(where(8) + "unsupported version " + std::to_string(header_.version));
            header_.images = detail::get<std::uint32_t>(h + 12, header_.big_endian);
            header_.rows = detail::get<std::uint32_t>(h + 16, header_.big_endian);
            header_.cols = detail::get<std::uint32_t>(h + 20, header_.big_endian);
            if (header_.images == 0)
                throw data_error(where(12) + "N must be positive");
            const auto actual = std::filesystem::file_size(path);
            if (actual != header_.file_bytes())
                throw data_error(where(std::min<std::uint64_t>(actual, header_.file_bytes())) +
                                 (actual < header_.file_bytes() ? "truncated payload" : "trailing bytes") +
                                 ": expected " + std::to_string(header_.file_bytes()) + " bytes, found " +
                                 std::to_string(actual));
        }

        const StackHeader &header() const { return header_; }

        CVector read_pixel(std::uint64_t index)
        {
            std::vector<CVector> out = read_range(index, 1);
            return std::move(out[0]);
        }

        std::vector<CVector> read_range(std::uint64_t begin, std::uint64_t count)
        {
            if (begin + count > header_.pixels())
                throw config_error("StackReader: pixel range out of bounds");
            const std::uint64_t offset = stack_header_bytes + begin * header_.pixel_bytes();
            std::vector<unsigned char> buf(count * header_.pixel_bytes());
            in_.clear();
            in_.seekg(std::streamoff(offset));
            in_.read(reinterpret_cast<char *>(buf.data()), std::streamsize(buf.size()));
            if (std::uint64_t(in_.gcount()) != buf.size())
                throw data_error(where(offset + std::uint64_t(in_.gcount())) + "unexpected end of payload");
            std::vector<CVector> out(count, CVector(Eigen::Index(header_.images)));
            const unsigned char *p = buf.data();
            for (auto &x : out)
                for (Eigen::Index n = 0; n < x.size(); ++n, p += 16)
                    x[n] = cplx(detail::get<double>(p, header_.big_endian), detail::get<double>(p + 8, header_.big_endian));
            return out;
        }

    private:
        std::string where(std::uint64_t offset) const
        {
            return path_.string() + ": byte offset " + std::to_string(offset) + ": ";
        }

        std::filesystem::path path_;
        std::ifstream in_;
        StackHeader header_;
    };

    inline StackHeader read_stack_header(const std::filesystem::path &path) { return StackReader(path).header(); }

    // Raw interleaved float32 (re, im) pixels, row-major, no header, converted to a stack file
    inline StackHeader convert_cf32(const std::filesystem::path &raw, std::uint32_t images, std::uint32_t rows,
                                    std::uint32_t cols, const std::filesystem::path &out, bool raw_big_endian = false)
    {
        StackHeader header{stack_version, images, rows, cols, false};
        const std::uint64_t expected = header.pixels() * images * 8;
        std::ifstream in(raw, std::ios::binary);
        if (!in)
            throw data_error("cannot open raw file " + raw.string());
        const auto actual = std::filesystem::file_size(raw);
        if (actual != expected)
            throw data_error(raw.string() + ": expected " + std::to_string(expected) + " bytes of complex float32, found " +
                             std::to_string(actual));
        StackWriter w(out, header);
        std::vector<unsigned char> buf(std::size_t(images) * 8);
        CVector x(static_cast<Eigen::Index>(images));
        for (std::uint64_t p = 0; p < header.pixels(); ++p)
        {
            in.read(reinterpret_cast<char *>(buf.data()), std::streamsize(buf.size()));
            for (std::uint32_t n = 0; n < images; ++n)
                x[Eigen::Index(n)] = cplx(detail::get<float>(buf.data() + 8 * n, raw_big_endian),
                                          detail::get<float>(buf.data() + 8 * n + 4, raw_big_endian));
            w.write_pixel(x);
        }
        w.close();
        return header;
    }

    // ============================================================================================
    // Scene processing and map export
    // ============================================================================================

    struct MapScatterer
    {
        double height_m = 0.0;
        double velocity_cm_yr = 0.0;
        double amplitude = 0.0; // |g_hat|
    };

    struct PixelRecord
    {
        std::size_t k_hat = 0;
        double statistic = 0.0;
        std::vector<MapScatterer> scatterers;
    };

    struct DetectionMap
    {
        std::size_t rows = 0, cols = 0, kmax = 0;
        std::vector<PixelRecord> records; // row-major, rows * cols
    };

    inline PixelRecord to_record(const DetectionOutcome &o, const AcquisitionGeometry &geometry)
    {
        PixelRecord r{o.k_hat, o.statistic, {}};
        for (const auto &s : o.scatterers)
            r.scatterers.push_back({geometry.height_from_elevation(s.params.elevation_m), 100.0 * s.params.velocity_m_yr,
                                    std::abs(s.amplitude)});
        return r;
    }

    // Pixels are read tile by tile and detected independently; progress(done, total) is called after each tile.
    inline DetectionMap detect_scene(StackReader &reader, const AcquisitionGeometry &geometry,
                                     const std::function<DetectionOutcome(const CVector &)> &detector, std::size_t kmax,
                                     std::size_t threads = 0,
                                     const std::function<void(std::uint64_t, std::uint64_t)> &progress = {},
                                     std::uint64_t tile = 4096)
    {
        const auto &h = reader.header();
        if (h.images != geometry.size())
            throw data_error("stack has N = " + std::to_string(h.images) + " images but the geometry lists " +
                             std::to_string(geometry.size()));
        DetectionMap map{h.rows, h.cols, kmax, std::vector<PixelRecord>(h.pixels())};
        for (std::uint64_t begin = 0; begin < h.pixels(); begin += tile)
        {
            const std::uint64_t count = std::min<std::uint64_t>(tile, h.pixels() - begin);
            const auto pixels = reader.read_range(begin, count);
            parallel_for(count, threads, [&](std::size_t i)
            { map.records[begin + i] = to_record(detector(pixels[i]), geometry); });
            if (progress)
                progress(begin + count, h.pixels());
        }
        return map;
    }

    namespace detail
    {
        inline std::string exact(double v)
        {
            if (std::isinf(v))
                return v > 0 ? "inf" : "-inf";
            std::ostringstream os;
            os << std::setprecision(17) << v;
            return os.str();
        }
    }

    // Columns: row, col, k_hat, z_1..z_Kmax, v_1..v_Kmax, amp_1..amp_Kmax, statistic; empty cells for absent scatterers
    inline void write_map_csv(const DetectionMap &map, std::ostream &os)
    {
        os << "row,col,k_hat";
        for (const char *f : {"z", "v", "amp"})
            for (std::size_t k = 1; k <= map.kmax; ++k)
                os << ',' << f << '_' << k;
        os << ",statistic\n";
        for (std::size_t i = 0; i < map.records.size(); ++i)
        {
            const auto &r = map.records[i];
            os << i / map.cols << ',' << i % map.cols << ',' << r.k_hat;
            for (int f = 0; f < 3; ++f)
                for (std::size_t k = 0; k < map.kmax; ++k)
                {
                    os << ',';
                    if (k < r.scatterers.size())
                    {
                        const auto &s = r.scatterers[k];
                        os << detail::exact(f == 0 ? s.height_m : f == 1 ? s.velocity_cm_yr : s.amplitude);
                    }
                }
            os << ',' << detail::exact(r.statistic) << '\n';
        }
    }

    inline nlohmann::json map_to_json(const DetectionMap &map)
    {
        nlohmann::json px = nlohmann::json::array();
        for (std::size_t i = 0; i < map.records.size(); ++i)
        {
            const auto &r = map.records[i];
            nlohmann::json sc = nlohmann::json::array();
            for (const auto &s : r.scatterers)
                sc.push_back({{"z_m", s.height_m}, {"v_cm_yr", s.velocity_cm_yr}, {"amplitude", s.amplitude}});
            px.push_back({{"row", i / map.cols},
                          {"col", i % map.cols},
                          {"k_hat", r.k_hat},
                          {"statistic", number_to_json(r.statistic)},
                          {"scatterers", sc}});
        }
        return {{"rows", map.rows}, {"cols", map.cols}, {"kmax", map.kmax}, {"pixels", px}};
    }

    inline void write_map_json(const DetectionMap &map, std::ostream &os) { os << map_to_json(map).dump(1) << '\n'; }
}

#endif
