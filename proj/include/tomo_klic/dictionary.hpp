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


#ifndef TOMO_KLIC_DICTIONARY_HPP
#define TOMO_KLIC_DICTIONARY_HPP

#include "common.hpp"
#include "signal_model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tomo_klic
{
    // Uniformly sampled axis: min, min + spacing, ..., min + (count - 1) spacing
    struct GridAxis
    {
        double min = 0.0;
        double spacing = 0.0;
        std::size_t count = 1;

        double value(std::size_t i) const { return min + spacing * double(i); }
        double last() const { return value(count - 1); }

        // Index of the sample nearest to v (clamped to the axis)
        std::size_t nearest(double v) const
        {
            if (count == 1 || spacing == 0.0)
                return 0;
            const double f = std::round((v - min) / spacing);
            return std::size_t(std::clamp(f, 0.0, double(count - 1)));
        }

        bool operator==(const GridAxis &) const = default;
    };

    // Requested range of one axis. spacing must be positive unless the range is a single point.
    struct AxisSpec
    {
        double min = 0.0;
        double max = 0.0;
        double spacing = 0.0;
    };

    // floor(span / spacing) + 1 samples from min. A small relative tolerance keeps max on the axis
    // when the span is an integer multiple of the spacing.
    inline GridAxis build_axis(const AxisSpec &spec, const char *name)
    {
        const double span = spec.max - spec.min;
        if (!std::isfinite(spec.min) || !std::isfinite(spec.max) || !std::isfinite(spec.spacing))
            throw config_error(std::string("build_grid: non-finite ") + name + " axis");
        if (span < 0.0)
            throw config_error(std::string("build_grid: empty ") + name + " range (max < min)");
        if (spec.spacing < 0.0)
            throw config_error(std::string("build_grid: negative ") + name + " spacing");
        if (span == 0.0)
            return {spec.min, spec.spacing, 1};
        if (spec.spacing == 0.0)
            throw config_error(std::string("build_grid: zero ") + name + " spacing on a non-degenerate range");
        const auto count = std::size_t(std::floor(span / spec.spacing * (1.0 + 1e-12))) + 1;
        return {spec.min, spec.spacing, count};
    }

    // Ordered set of candidate scatterer positions. Enumeration is elevation fastest, then
    // velocity, then thermal: j = i_s + n_s * (i_v + n_v * i_l).
    class ParameterGrid
    {
    public:
        ParameterGrid(GridAxis elevation, GridAxis velocity, std::optional<GridAxis> thermal = std::nullopt)
            : elevation_(elevation), velocity_(velocity), thermal_(thermal)
        {
            if (elevation_.count == 0 || velocity_.count == 0 || (thermal_ && thermal_->count == 0))
                throw config_error("ParameterGrid: every axis needs at least one point");
        }

        const GridAxis &elevation() const { return elevation_; }
        const GridAxis &velocity() const { return velocity_; }
        const std::optional<GridAxis> &thermal() const { return thermal_; }
        bool has_thermal() const { return thermal_.has_value(); }

        std::size_t size() const
        {
            return elevation_.count * velocity_.count * (thermal_ ? thermal_->count : 1);
        }

        std::size_t index(std::size_t i_s, std::size_t i_v, std::size_t i_l = 0) const
        {
            if (i_s >= elevation_.count || i_v >= velocity_.count || i_l >= (thermal_ ? thermal_->count : 1))
                throw std::out_of_range("ParameterGrid::index: axis index out of range");
            return i_s + elevation_.count * (i_v + velocity_.count * i_l);
        }

        struct AxisIndex
        {
            std::size_t elevation, velocity, thermal;
        };

        AxisIndex axis_index(std::size_t j) const
        {
            if (j >= size())
                throw std::out_of_range("ParameterGrid: column index " + std::to_string(j) + " out of range (Kp = " +
                                        std::to_string(size()) + ")");
            const std::size_t i_s = j % elevation_.count;
            const std::size_t rest = j / elevation_.count;
            return {i_s, rest % velocity_.count, rest / velocity_.count};
        }

        ScattererParams point(std::size_t j) const
        {
            const auto ix = axis_index(j);
            return {elevation_.value(ix.elevation), velocity_.value(ix.velocity),
                    thermal_ ? thermal_->value(ix.thermal) : 0.0};
        }

        // Column nearest to an arbitrary parameter vector
        std::size_t nearest_index(const ScattererParams &p) const
        {
            return index(elevation_.nearest(p.elevation_m), velocity_.nearest(p.velocity_m_yr),
                         thermal_ ? thermal_->nearest(p.thermal_m_c) : 0);
        }

        ScattererParams snap(const ScattererParams &p) const { return point(nearest_index(p)); }

        // Grid cell centre used as the reference position of simulated scatterers
        std::size_t center_index() const
        {
            return index(elevation_.count / 2, velocity_.count / 2, thermal_ ? thermal_->count / 2 : 0);
        }

        bool operator==(const ParameterGrid &) const = default;

    private:
        GridAxis elevation_;
        GridAxis velocity_;
        std::optional<GridAxis> thermal_;
    };

    inline ParameterGrid build_grid(const AxisSpec &elevation, const AxisSpec &velocity,
                                    std::optional<AxisSpec> thermal = std::nullopt)
    {
        return ParameterGrid(build_axis(elevation, "elevation"), build_axis(velocity, "velocity"),
                             thermal ? std::optional<GridAxis>(build_axis(*thermal, "thermal")) : std::nullopt);
    }

    // Elevation and velocity ranges sampled at half the Rayleigh resolution of the geometry
    inline ParameterGrid half_rayleigh_grid(const AcquisitionGeometry &geometry,
                                            double s_min, double s_max, double v_min, double v_max)
    {
        const auto res = rayleigh_resolutions(geometry);
        return build_grid({s_min, s_max, 0.5 * res.elevation_m}, {v_min, v_max, 0.5 * res.velocity_m_yr});
    }

    // Same point count per axis, restricted to the bounding box of `estimates` widened by one
    // step of the original grid on each side.
    inline ParameterGrid zoomed_grid(const ParameterGrid &grid, std::span<const ScattererParams> estimates)
    {
        if (estimates.empty())
            return grid;
        auto zoom_axis = [](const GridAxis &axis, double lo, double hi)
        {
            if (axis.count == 1)
                return axis;
            lo -= axis.spacing;
            hi += axis.spacing;
            return GridAxis{lo, (hi - lo) / double(axis.count - 1), axis.count};
        };
        double s_lo = estimates[0].elevation_m, s_hi = s_lo, v_lo = estimates[0].velocity_m_yr, v_hi = v_lo,
               l_lo = estimates[0].thermal_m_c, l_hi = l_lo;
        for (const auto &p : estimates)
        {
            s_lo = std::min(s_lo, p.elevation_m), s_hi = std::max(s_hi, p.elevation_m);
            v_lo = std::min(v_lo, p.velocity_m_yr), v_hi = std::max(v_hi, p.velocity_m_yr);
            l_lo = std::min(l_lo, p.thermal_m_c), l_hi = std::max(l_hi, p.thermal_m_c);
        }
        return ParameterGrid(zoom_axis(grid.elevation(), s_lo, s_hi), zoom_axis(grid.velocity(), v_lo, v_hi),
                             grid.thermal() ? std::optional<GridAxis>(zoom_axis(*grid.thermal(), l_lo, l_hi))
                                            : std::nullopt);
    }

    // Augmented steering matrix A = [a(p_1), ..., a(p_Kp)] bound to its grid and geometry
    class Dictionary
    {
    public:
        const CMatrix &matrix() const { return matrix_; }
        const ParameterGrid &grid() const { return grid_; }
        const AcquisitionGeometry &geometry() const { return geometry_; }
        std::size_t rows() const { return std::size_t(matrix_.rows()); }
        std::size_t columns() const { return std::size_t(matrix_.cols()); }
        auto column(std::size_t j) const { return matrix_.col(Eigen::Index(j)); }

    private:
        Dictionary(CMatrix m, ParameterGrid g, AcquisitionGeometry geo)
            : matrix_(std::move(m)), grid_(std::move(g)), geometry_(std::move(geo)) {}

        friend Dictionary build_dictionary(const AcquisitionGeometry &, const ParameterGrid &, std::size_t);

        CMatrix matrix_;
        ParameterGrid grid_;
        AcquisitionGeometry geometry_;
    };

    inline constexpr std::size_t default_dictionary_cap = 50'000'000; // complex entries (~800 MB)

    inline Dictionary build_dictionary(const AcquisitionGeometry &geometry, const ParameterGrid &grid,
                                       std::size_t max_entries = default_dictionary_cap)
    {
        const std::size_t kp = grid.size();
        const std::size_t n = geometry.size();
        if (kp == 0)
            throw config_error("build_dictionary: empty grid");
        if (kp > max_entries / n)
            throw config_error("build_dictionary: dictionary of " + std::to_string(n) + " x " + std::to_string(kp) +
                               " exceeds the cap of " + std::to_string(max_entries) +
                               " entries; coarsen the grid or raise the cap");
        const auto freqs = spatial_frequencies(geometry, grid.has_thermal());

        CMatrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kp));
        for (std::size_t j = 0; j < kp; ++j)
            a.col(Eigen::Index(j)) = steering_vector(freqs, grid.point(j));
        return Dictionary(std::move(a), grid, geometry);
    }

    inline ScattererParams grid_lookup(const Dictionary &dictionary, std::size_t column_index)
    {
        return dictionary.grid().point(column_index);
    }
}

#endif
