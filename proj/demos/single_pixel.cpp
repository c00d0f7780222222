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


// Calibrates a threshold on noise, then detects two interfering scatterers in one synthetic pixel.

#include <tomo_klic.hpp>

#include <iostream>

using namespace tomo_klic;

int main()
{
    const auto geometry = reference_geometry();
    const auto grid = half_rayleigh_grid(geometry, -177.0, 177.0, -0.01, 0.01);
    const auto dictionary = build_dictionary(geometry, grid);
    const auto res = rayleigh_resolutions(geometry);
    std::cout << "N = " << geometry.size() << ", Kp = " << dictionary.columns() << ", elevation resolution "
              << res.elevation_m << " m, height resolution " << res.height_m << " m\n";

    DetectorConfig cfg;
    cfg.kmax = 2;
    cfg.rho = 3.0;
    const auto cal = calibrate_klic_threshold(dictionary, cfg, 1e-2, 10000, 1);
    cfg.threshold = cal.thresholds[0];
    std::cout << "threshold " << cfg.threshold << " for Pfa = 1e-2 from " << cal.trials << " noise trials\n";

    const auto p0 = grid.point(grid.center_index());
    const auto p1 = grid.snap({p0.elevation_m + 30.8, p0.velocity_m_yr, 0.0});
    const double g = amplitude_for_snr(15.0);
    const std::vector<Scatterer> truth{{p0, cplx(g, 0.0)}, {p1, std::polar(g, 1.0)}};
    Rng rng(2024);
    const CVector x = synthesize_pixel(geometry, truth, 1.0, rng);

    const auto out = klic_detect(x, dictionary, cfg);
    std::cout << "statistic " << out.statistic << ", accepted H" << out.k_hat << '\n';
    for (const auto &s : out.scatterers)
        std::cout << "  height " << geometry.height_from_elevation(s.params.elevation_m) << " m, velocity "
                  << 100.0 * s.params.velocity_m_yr << " cm/yr, |g| " << std::abs(s.amplitude) << '\n';
    std::cout << "truth heights " << geometry.height_from_elevation(p0.elevation_m) << " m and "
              << geometry.height_from_elevation(p1.elevation_m) << " m\n";
    return 0;
}
