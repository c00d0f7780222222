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

#ifndef TOMO_KLIC_RANDOM_HPP
#define TOMO_KLIC_RANDOM_HPP

#include "common.hpp"

#include <cstdint>
#include <random>

namespace tomo_klic
{
    using Rng = std::mt19937_64;

    inline std::uint64_t splitmix64(std::uint64_t x)
    {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    // Seed of an individual Monte-Carlo trial. Depends only on (base, index), so serial and
    // parallel runs draw identical samples for every trial.
    inline std::uint64_t trial_seed(std::uint64_t base, std::uint64_t index)
    {
        return splitmix64(splitmix64(base) ^ (index * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
    }

    inline Rng trial_rng(std::uint64_t base, std::uint64_t index) { return Rng(trial_seed(base, index)); }

    // Circular complex Gaussian sample with E|w|^2 = variance
    inline cplx circular_gaussian(Rng &rng, double variance)
    {
        std::normal_distribution<double> normal(0.0, std::sqrt(0.5 * variance));
        const double re = normal(rng);
        const double im = normal(rng);
        return {re, im};
    }

    inline double uniform(Rng &rng, double lo, double hi)
    {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    }
}

#endif
