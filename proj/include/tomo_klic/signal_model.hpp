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


#ifndef TOMO_KLIC_SIGNAL_MODEL_HPP
#define TOMO_KLIC_SIGNAL_MODEL_HPP

#include "common.hpp"
#include "random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace tomo_klic
{
    // Position of a scatterer in the tomographic parameter space
    struct ScattererParams
    {
        double elevation_m = 0.0;   // Elevation s, orthogonal to the line of sight [m]
        double velocity_m_yr = 0.0; // Mean deformation velocity v [m/yr]
        double thermal_m_c = 0.0;   // Thermal dilation coefficient l [m/degC]

        bool operator==(const ScattererParams &) const = default;
    };

    struct Scatterer
    {
        ScattererParams params;
        cplx amplitude{0.0, 0.0}; // Complex backscattering coefficient g
    };

    // Fourier mates of (s, v, l) for one acquisition
    struct SpatialFrequency
    {
        double elevation = 0.0; // xi_n = 2 b_n / (lambda r0)      [1/m]
        double velocity = 0.0;  // eta_n = 2 t_n / lambda           [yr/m]
        double thermal = 0.0;   // zeta_n = 2 T_n / lambda          [degC/m]
    };

    struct RayleighResolution
    {
        double elevation_m = 0.0;   // delta_s = lambda r0 / (2 dB)
        double height_m = 0.0;      // delta_z = delta_s sin(theta)
        double velocity_m_yr = 0.0; // delta_v = lambda / (2 dt)
    };

    // Per-acquisition baselines, epochs and (optionally) temperatures, plus the radar constants
    // shared by the stack. Immutable after construction.
    class AcquisitionGeometry
    {
    public:
        AcquisitionGeometry(std::vector<double> baselines_m,
                            std::vector<double> epochs_yr,
                            std::optional<std::vector<double>> temperatures_c,
                            double wavelength_m,
                            double range_m,
                            double incidence_rad)
            : baselines_(std::move(baselines_m)), epochs_(std::move(epochs_yr)),
              temperatures_(std::move(temperatures_c)), wavelength_(wavelength_m), range_(range_m),
              incidence_(incidence_rad)
        {
            if (baselines_.size() < 2)
                throw config_error("AcquisitionGeometry: at least two acquisitions are required");
            if (epochs_.size() != baselines_.size())
                throw config_error("AcquisitionGeometry: epochs and baselines differ in length");
            if (temperatures_ && temperatures_->size() != baselines_.size())
                throw config_error("AcquisitionGeometry: temperatures and baselines differ in length");
            if (!(wavelength_ > 0.0) || !std::isfinite(wavelength_))
                throw config_error("AcquisitionGeometry: wavelength must be positive");
            if (!(range_ > 0.0) || !std::isfinite(range_))
                throw config_error("AcquisitionGeometry: range must be positive");
            if (!(incidence_ > 0.0 && incidence_ < 0.5 * pi))
                throw config_error("AcquisitionGeometry: incidence angle must lie in (0, pi/2)");
            for (std::size_t n = 0; n < baselines_.size(); ++n)
                if (!std::isfinite(baselines_[n]) || !std::isfinite(epochs_[n]) ||
                    (temperatures_ && !std::isfinite((*temperatures_)[n])))
                    throw config_error("AcquisitionGeometry: non-finite acquisition parameter at index " +
                                       std::to_string(n));
            frequencies_.resize(baselines_.size());
            for (std::size_t n = 0; n < baselines_.size(); ++n)
            {
                frequencies_[n].elevation = 2.0 * baselines_[n] / (wavelength_ * range_);
                frequencies_[n].velocity = 2.0 * epochs_[n] / wavelength_;
                frequencies_[n].thermal = temperatures_ ? 2.0 * (*temperatures_)[n] / wavelength_ : 0.0;
            }
        }

        // Epoch input in days since an arbitrary reference, converted to years
        static AcquisitionGeometry from_days(std::vector<double> baselines_m,
                                             const std::vector<double> &epochs_days,
                                             std::optional<std::vector<double>> temperatures_c,
                                             double wavelength_m, double range_m, double incidence_rad)
        {
            std::vector<double> years(epochs_days.size());
            std::transform(epochs_days.begin(), epochs_days.end(), years.begin(),
                           [](double d) { return d / days_per_year; });
            return AcquisitionGeometry(std::move(baselines_m), std::move(years), std::move(temperatures_c),
                                       wavelength_m, range_m, incidence_rad);
        }

        std::size_t size() const { return baselines_.size(); }
        const std::vector<double> &baselines_m() const { return baselines_; }
        const std::vector<double> &epochs_yr() const { return epochs_; }
        const std::optional<std::vector<double>> &temperatures_c() const { return temperatures_; }
        bool has_temperatures() const { return temperatures_.has_value(); }
        double wavelength_m() const { return wavelength_; }
        double range_m() const { return range_; }
        double incidence_rad() const { return incidence_; }
        const std::vector<SpatialFrequency> &frequencies() const { return frequencies_; }

        double height_from_elevation(double s) const { return s * std::sin(incidence_); }
        double elevation_from_height(double z) const { return z / std::sin(incidence_); }

    private:
        std::vector<double> baselines_;
        std::vector<double> epochs_;
        std::optional<std::vector<double>> temperatures_;
        double wavelength_;
        double range_;
        double incidence_;
        std::vector<SpatialFrequency> frequencies_;
    };

    // Frequencies (xi_n, eta_n, zeta_n) of every acquisition. A thermal dimension needs temperatures.
    inline std::vector<SpatialFrequency> spatial_frequencies(const AcquisitionGeometry &geometry,
                                                             bool thermal_requested = false)
    {
        if (thermal_requested && !geometry.has_temperatures())
            throw config_error("spatial_frequencies: a thermal grid axis requires acquisition temperatures");
        return geometry.frequencies();
    }

    // {a(p)}_n = exp(-j 2 pi zeta_n^T p) / sqrt(N)
    inline CVector steering_vector(std::span<const SpatialFrequency> freqs, const ScattererParams &p)
    {
        const double scale = 1.0 / std::sqrt(double(freqs.size()));
        CVector a(static_cast<Eigen::Index>(freqs.size()));
        for (std::size_t n = 0; n < freqs.size(); ++n)
        {
            const double phase = -2.0 * pi *
                                 (freqs[n].elevation * p.elevation_m + freqs[n].velocity * p.velocity_m_yr +
                                  freqs[n].thermal * p.thermal_m_c);
            a[Eigen::Index(n)] = std::polar(scale, phase);
        }
        return a;
    }

    inline CVector steering_vector(const AcquisitionGeometry &geometry, const ScattererParams &p)
    {
        return steering_vector(std::span<const SpatialFrequency>(geometry.frequencies()), p);
    }

    inline RayleighResolution rayleigh_resolutions(const AcquisitionGeometry &geometry)
    {
        const auto [bmin, bmax] = std::minmax_element(geometry.baselines_m().begin(), geometry.baselines_m().end());
        const auto [tmin, tmax] = std::minmax_element(geometry.epochs_yr().begin(), geometry.epochs_yr().end());
        const double baseline_span = *bmax - *bmin;
        const double time_span = *tmax - *tmin;
        if (!(baseline_span > 0.0))
            throw config_error("rayleigh_resolutions: degenerate geometry, zero baseline span");
        if (!(time_span > 0.0))
            throw config_error("rayleigh_resolutions: degenerate geometry, zero temporal span");

        RayleighResolution r;
        r.elevation_m = geometry.wavelength_m() * geometry.range_m() / (2.0 * baseline_span);
        r.height_m = r.elevation_m * std::sin(geometry.incidence_rad());
        r.velocity_m_yr = geometry.wavelength_m() / (2.0 * time_span);
        return r;
    }

    // x = sum_k g_k a(p_k) + w,  w ~ CN(0, sigma^2 I). Noise is drawn after the deterministic part,
    // one (re, im) pair per acquisition in order, so a given rng state fixes the output bits.
    inline CVector synthesize_pixel(const AcquisitionGeometry &geometry,
                                    std::span<const Scatterer> scatterers,
                                    double noise_variance,
                                    Rng &rng)
    {
        if (!(noise_variance >= 0.0))
            throw config_error("synthesize_pixel: noise variance must be non-negative");
        CVector x = CVector::Zero(Eigen::Index(geometry.size()));
        for (const auto &sc : scatterers)
            x += sc.amplitude * steering_vector(geometry, sc.params);
        if (noise_variance > 0.0)
            for (Eigen::Index n = 0; n < x.size(); ++n)
                x[n] += circular_gaussian(rng, noise_variance);
        return x;
    }

    // Amplitude modulus that realises a per-scatterer SNR (|g|^2 / sigma^2) in dB
    inline double amplitude_for_snr(double snr_db, double noise_variance = 1.0, double power_multiplier = 1.0)
    {
        return std::sqrt(power_multiplier * noise_variance * db_to_linear_power(snr_db));
    }

    // ============================================================================================
    // Geometry files
    //
    // CSV with header "index,baseline_m,epoch_days,temperature_c" (temperature column optional,
    // and may be left empty on every row) plus a JSON sidecar holding wavelength_m, range_m and
    // incidence_deg. The sidecar defaults to "<csv>.meta.json".
    // ============================================================================================

    inline std::vector<std::string> split_csv_line(const std::string &line)
    {
        std::vector<std::string> out;
        std::string field;
        std::istringstream ss(line);
        while (std::getline(ss, field, ','))
        {
            field.erase(0, field.find_first_not_of(" \t\r"));
            const auto last = field.find_last_not_of(" \t\r");
            field.erase(last == std::string::npos ? 0 : last + 1);
            out.push_back(field);
        }
        if (!line.empty() && line.back() == ',')
            out.emplace_back();
        return out;
    }

    inline AcquisitionGeometry read_geometry(const std::filesystem::path &csv_path,
                                             std::optional<std::filesystem::path> metadata_path = std::nullopt)
    {
        std::ifstream in(csv_path);
        if (!in)
            throw data_error("read_geometry: cannot open " + csv_path.string());

        std::string line;
        if (!std::getline(in, line))
            throw data_error("read_geometry: empty geometry file " + csv_path.string());
        const auto header = split_csv_line(line);
        auto column = [&](const std::string &name) -> int
        {
            auto it = std::find(header.begin(), header.end(), name);
            return it == header.end() ? -1 : int(it - header.begin());
        };
        const int c_index = column("index"), c_base = column("baseline_m"), c_epoch = column("epoch_days"),
                  c_temp = column("temperature_c");
        if (c_index < 0 || c_base < 0 || c_epoch < 0)
            throw data_error("read_geometry: header must contain index,baseline_m,epoch_days");

        std::vector<double> baselines, epochs, temps;
        std::size_t temp_count = 0, line_no = 1;
        while (std::getline(in, line))
        {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos)
                continue;
            const auto f = split_csv_line(line);
            auto get = [&](int c) -> std::string { return c >= 0 && std::size_t(c) < f.size() ? f[std::size_t(c)] : ""; };
            try
            {
                if (std::stoul(get(c_index)) != baselines.size())
                    throw data_error("read_geometry: indices must be consecutive from 0 (line " +
                                       std::to_string(line_no) + ")");
                baselines.push_back(std::stod(get(c_base)));
                epochs.push_back(std::stod(get(c_epoch)));
                const std::string t = get(c_temp);
                temps.push_back(t.empty() ? 0.0 : std::stod(t));
                temp_count += t.empty() ? 0 : 1;
            }
            catch (const std::logic_error &)
            {
                throw data_error("read_geometry: malformed number on line " + std::to_string(line_no));
            }
        }
        if (temp_count != 0 && temp_count != baselines.size())
            throw data_error("read_geometry: temperature column must be filled on all rows or none");

        const auto meta_path = metadata_path.value_or(std::filesystem::path(csv_path.string() + ".meta.json"));
        std::ifstream meta_in(meta_path);
        if (!meta_in)
            throw data_error("read_geometry: cannot open metadata sidecar " + meta_path.string());
        nlohmann::json meta;
        try
        {
            meta = nlohmann::json::parse(meta_in);
            return AcquisitionGeometry::from_days(
                std::move(baselines), epochs,
                temp_count ? std::optional<std::vector<double>>(std::move(temps)) : std::nullopt,
                meta.at("wavelength_m").get<double>(), meta.at("range_m").get<double>(),
                meta.at("incidence_deg").get<double>() * pi / 180.0);
        }
        catch (const nlohmann::json::exception &e)
        {
            throw data_error("read_geometry: bad metadata sidecar " + meta_path.string() + ": " + e.what());
        }
    }

    inline void write_geometry(const AcquisitionGeometry &geometry, const std::filesystem::path &csv_path)
    {
        std::ofstream out(csv_path);
        if (!out)
            throw data_error("write_geometry: cannot create " + csv_path.string());
        out.precision(17);
        out << "index,baseline_m,epoch_days,temperature_c\n";
        for (std::size_t n = 0; n < geometry.size(); ++n)
        {
            out << n << ',' << geometry.baselines_m()[n] << ',' << geometry.epochs_yr()[n] * days_per_year << ',';
            if (geometry.has_temperatures())
                out << (*geometry.temperatures_c())[n];
            out << '\n';
        }
        std::ofstream meta(csv_path.string() + ".meta.json");
        nlohmann::json j = {{"wavelength_m", geometry.wavelength_m()},
                            {"range_m", geometry.range_m()},
                            {"incidence_deg", geometry.incidence_rad() * 180.0 / pi}};
        meta << j.dump(2) << '\n';
    }

    // 38-acquisition X-band constellation: lambda = 3.1 cm, r0 = 745 km, theta = 34.4 deg,
    // baseline span 2118.8 m, temporal span 971 days. Mirrors data/reference_geometry.csv.
    inline AcquisitionGeometry reference_geometry()
    {
        std::vector<double> baselines = {
            329.5, -718.4, 14.3, 580.1, 435.0, -1036.4, -680.1, -176.6, 583.6, -182.8,
            417.2, 729.2, 344.7, 750.1, 435.8, -188.7, -394.8, -415.6, 0.0, 0.0,
            -844.1, 215.6, -825.9, -692.6, 26.9, 194.6, -805.8, -741.0, -822.0, 1082.4,
            -69.7, 401.1, -880.9, 300.3, -84.8, -89.5, -132.3, -719.6};
        const std::vector<double> days = {
            0, 10, 40, 88, 116, 128, 142, 187, 202, 222, 261, 295, 324, 351, 426, 451, 468, 492, 529,
            565, 579, 588, 620, 644, 689, 733, 766, 782, 802, 821, 831, 854, 878, 896, 907, 937, 961, 971};
        return AcquisitionGeometry::from_days(std::move(baselines), days, std::nullopt, 0.031, 745.0e3,
                                              34.4 * pi / 180.0);
    }
}

#endif
