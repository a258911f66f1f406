#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "dosegnn/volume.hpp"

namespace dosegnn {

/// Synthetic plan generator settings. Lengths in mm, dose in Gy.
struct PhantomConfig {
    std::uint64_t seed = 7;
    Index3 ct_dims{24, 24, 24};
    Vec3 ct_spacing{2.0, 2.0, 2.0};
    Index3 dose_dims{16, 16, 16};
    Vec3 dose_spacing{2.5, 2.5, 2.5};
    double dose_origin_jitter = 3.0;
    double ptv_radius_min = 8.0;
    double ptv_radius_max = 14.0;
    double prescription_dose = 60.0;
    double falloff_tau = 8.0;
    double angular_amplitude = 0.3;
    int n_oars = 2;

    /// Throws DataError on invalid settings, including a dose grid that
    /// cannot stay inside the CT extent for every admissible jitter.
    void validate() const;
};

nlohmann::json to_json(const PhantomConfig& cfg);
PhantomConfig phantom_config_from_json(const nlohmann::json& j);

/// Ground-truth dose at distance `r` and polar angle `theta` from the PTV
/// center: Rx * (1 + a cos theta) / (1 + a) * exp(-max(0, r - R) / tau).
double analytic_dose(double r, double theta, double ptv_radius, const PhantomConfig& cfg);

/// Deterministic case generator; identical (cfg, case_index) give identical bundles.
PlanBundle generate_phantom(const PhantomConfig& cfg, std::uint64_t case_index);

/// Cases 0..count-1, named case_0000, case_0001, ...
std::vector<PlanBundle> generate_dataset(const PhantomConfig& cfg, std::size_t count);

std::string case_name(std::size_t case_index);

}  // namespace dosegnn
