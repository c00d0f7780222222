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


// Writes a simulated building strip to a stack file, reads it back and prints the detection map.

#include <tomo_klic.hpp>

#include <filesystem>
#include <iostream>

using namespace tomo_klic;

int main(int argc, char **argv)
{
    const std::filesystem::path stack = argc > 1 ? argv[1] : "building_scene.tstk";
    const auto geometry = reference_geometry();
    const auto grid = half_rayleigh_grid(geometry, -177.0, 177.0, -0.01, 0.01);
    const auto dictionary = build_dictionary(geometry, grid);

    BuildingConfig building;
    building.n_near = building.n_mid = building.n_far = 4;
    const auto layout = building_layout(building, geometry, grid);
    std::vector<CVector> pixels;
    for (std::size_t p = 0; p < layout.size(); ++p)
        pixels.push_back(building_pixel(building, geometry, layout[p], p, 0));
    write_stack(stack, {stack_version, std::uint32_t(geometry.size()), 1, std::uint32_t(pixels.size()), false}, pixels);
    std::cout << "wrote " << pixels.size() << " pixels to " << stack.string() << '\n';

    DetectorConfig cfg;
    cfg.kmax = 3;
    cfg.rho = 5.0;
    cfg.threshold = calibrate_klic_threshold(dictionary, cfg, 1e-2, 10000, 1).thresholds[0];

    StackReader reader(stack);
    const auto map = detect_scene(reader, geometry, make_klic_detector(dictionary, cfg), cfg.kmax);
    write_map_csv(map, std::cout);
    return 0;
}
