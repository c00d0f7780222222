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

#ifndef TOMO_KLIC_COMMON_HPP
#define TOMO_KLIC_COMMON_HPP

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tomo_klic
{
    using cplx = std::complex<double>;
    using CVector = Eigen::VectorXcd;
    using CMatrix = Eigen::MatrixXcd;
    using RVector = Eigen::VectorXd;

    inline constexpr double pi = 3.14159265358979323846;
    inline constexpr double days_per_year = 365.25;

    // Invalid configuration or inconsistent inputs (CLI exit code 2)
    class config_error : public std::invalid_argument
    {
    public:
        using std::invalid_argument::invalid_argument;
    };

    // Malformed or truncated input data (CLI exit code 3)
    class data_error : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    // Threshold provenance does not match the detector configuration (CLI exit code 4)
    class provenance_error : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    // Monte-Carlo calibration could not produce a usable threshold
    class calibration_error : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    // 64-bit FNV-1a, used for configuration and content hashes
    inline std::uint64_t fnv1a64(const std::string &bytes, std::uint64_t h = 0xcbf29ce484222325ULL)
    {
        for (unsigned char c : bytes)
        {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    inline std::string hex64(std::uint64_t v)
    {
        static const char *digits = "0123456789abcdef";
        std::string s(16, '0');
        for (int i = 15; i >= 0; --i, v >>= 4)
            s[std::size_t(i)] = digits[v & 0xF];
        return s;
    }

    inline double db_to_linear_power(double db) { return std::pow(10.0, db / 10.0); }
}

#endif
