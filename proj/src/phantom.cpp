#include "dosegnn/phantom.hpp"

#include <cstdio>

#include "dosegnn/error.hpp"
#include "dosegnn/features.hpp"
#include "dosegnn/random.hpp"

namespace dosegnn {

using nlohmann::json;

namespace {

constexpr float kAirHu = -1000.0f;
constexpr float kBodyHu = 0.0f;
constexpr float kPtvHu = 80.0f;
constexpr float kOarHu = -40.0f;
constexpr double kOarGap = 2.0;  // mm between PTV surface and OAR surface

double center_span(const Index3& dims, const Vec3& spacing, int axis) {
    return static_cast<double>(dims[axis] - 1) * spacing[axis];
}

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
json idx_json(const Index3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
Index3 idx_from(const json& j) {
    return {j.at(0).get<std::int64_t>(), j.at(1).get<std::int64_t>(), j.at(2).get<std::int64_t>()};
}

}  // namespace

void PhantomConfig::validate() const {
    GridGeometry{{}, ct_spacing, ct_dims}.validate();
    GridGeometry{{}, dose_spacing, dose_dims}.validate();
    if (dose_origin_jitter < 0.0) throw DataError("dose_origin_jitter must be >= 0");
    if (!(ptv_radius_min > 0.0) || ptv_radius_max < ptv_radius_min) {
        throw DataError("ptv radius range must satisfy 0 < min <= max");
    }
    if (!(prescription_dose > 0.0)) throw DataError("prescription_dose must be > 0");
    if (!(falloff_tau > 0.0)) throw DataError("falloff_tau must be > 0");
    if (!(angular_amplitude >= 0.0 && angular_amplitude < 1.0)) {
        throw DataError("angular_amplitude must lie in [0, 1)");
    }
    if (n_oars < 0) throw DataError("n_oars must be >= 0");
    for (int a = 0; a < 3; ++a) {
        const double ct = center_span(ct_dims, ct_spacing, a);
        const double dose = center_span(dose_dims, dose_spacing, a);
        if (dose + 2.0 * dose_origin_jitter > ct) {
            throw DataError("dose grid (span " + std::to_string(dose) + " mm plus jitter +/-" +
                            std::to_string(dose_origin_jitter) + " mm) does not fit inside CT span " +
                            std::to_string(ct) + " mm along axis " + std::to_string(a));
        }
    }
}

json to_json(const PhantomConfig& c) {
    return {{"seed", c.seed},
            {"ct_dims", idx_json(c.ct_dims)},
            {"ct_spacing", vec_json(c.ct_spacing)},
            {"dose_dims", idx_json(c.dose_dims)},
            {"dose_spacing", vec_json(c.dose_spacing)},
            {"dose_origin_jitter", c.dose_origin_jitter},
            {"ptv_radius_range", json::array({c.ptv_radius_min, c.ptv_radius_max})},
            {"prescription_dose", c.prescription_dose},
            {"falloff_tau", c.falloff_tau},
            {"angular_amplitude", c.angular_amplitude},
            {"n_oars", c.n_oars}};
}

PhantomConfig phantom_config_from_json(const json& j) {
    PhantomConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.ct_dims = idx_from(j.at("ct_dims"));
        c.ct_spacing = vec_from(j.at("ct_spacing"));
        c.dose_dims = idx_from(j.at("dose_dims"));
        c.dose_spacing = vec_from(j.at("dose_spacing"));
        c.dose_origin_jitter = j.at("dose_origin_jitter").get<double>();
        c.ptv_radius_min = j.at("ptv_radius_range").at(0).get<double>();
        c.ptv_radius_max = j.at("ptv_radius_range").at(1).get<double>();
        c.prescription_dose = j.at("prescription_dose").get<double>();
        c.falloff_tau = j.at("falloff_tau").get<double>();
        c.angular_amplitude = j.at("angular_amplitude").get<double>();
        c.n_oars = j.at("n_oars").get<int>();
    } catch (const json::exception& e) {
        throw DataError(std::string("bad phantom config: ") + e.what());
    }
    c.validate();
    return c;
}

double analytic_dose(double r, double theta, double ptv_radius, const PhantomConfig& cfg) {
    const double a = cfg.angular_amplitude;
    const double angular = (1.0 + a * std::cos(theta)) / (1.0 + a);
    return cfg.prescription_dose * angular * std::exp(-std::max(0.0, r - ptv_radius) / cfg.falloff_tau);
}

std::string case_name(std::size_t case_index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "case_%04zu", case_index);
    return buf;
}

// Draw order per case (all from one SplitMix64 stream seeded with
// derive_seed(cfg.seed, case_index)): dose jitter x, y, z; PTV radius;
// PTV center x, y, z; then per OAR: radius, direction cos(polar), azimuth.
PlanBundle generate_phantom(const PhantomConfig& cfg, std::uint64_t case_index) {
    cfg.validate();
    SplitMix64 rng(derive_seed(cfg.seed, case_index));

    GridGeometry ct_geom{{}, cfg.ct_spacing, cfg.ct_dims};
    for (int a = 0; a < 3; ++a) ct_geom.origin[a] = -0.5 * center_span(cfg.ct_dims, cfg.ct_spacing, a);

    GridGeometry dose_geom{{}, cfg.dose_spacing, cfg.dose_dims};
    for (int a = 0; a < 3; ++a) {
        const double jitter = rng.uniform(-cfg.dose_origin_jitter, cfg.dose_origin_jitter);
        dose_geom.origin[a] = -0.5 * center_span(cfg.dose_dims, cfg.dose_spacing, a) + jitter;
    }

    const double ptv_radius = rng.uniform(cfg.ptv_radius_min, cfg.ptv_radius_max);
    const Box dose_box = center_bounds(dose_geom);
    Vec3 seeded_center;
    for (int a = 0; a < 3; ++a) {
        const double lo = dose_box.lo[a] + ptv_radius;
        const double hi = dose_box.hi[a] - ptv_radius;
        const double u = rng.uniform();
        seeded_center[a] = lo <= hi ? lo + (hi - lo) * u : 0.5 * (dose_box.lo[a] + dose_box.hi[a]);
    }

    struct Sphere {
        Vec3 center;
        double radius;
    };
    std::vector<Sphere> oars;
    for (int i = 0; i < cfg.n_oars; ++i) {
        const double radius = rng.uniform(4.0, 7.0);
        const double cos_polar = rng.uniform(-1.0, 1.0);
        const double azimuth = rng.uniform(0.0, 2.0 * M_PI);
        const double sin_polar = std::sqrt(std::max(0.0, 1.0 - cos_polar * cos_polar));
        const Vec3 dir{sin_polar * std::cos(azimuth), sin_polar * std::sin(azimuth), cos_polar};
        oars.push_back({seeded_center + dir * (ptv_radius + radius + kOarGap), radius});
    }

    // CT: air, body ellipsoid, OARs, PTV painted in that order.
    VoxelGrid ct(ct_geom, "HU");
    Vec3 semi_axes;
    for (int a = 0; a < 3; ++a) {
        semi_axes[a] = (a == 1 ? 0.42 : 0.48) * static_cast<double>(cfg.ct_dims[a]) * cfg.ct_spacing[a];
    }
    StructureMask ptv_mask{"PTV", MaskGrid::Ct, std::vector<std::uint8_t>(ct_geom.voxel_count(), 0)};
    std::vector<StructureMask> oar_masks;
    for (int i = 0; i < cfg.n_oars; ++i) {
        oar_masks.push_back({"OAR_" + std::to_string(i + 1), MaskGrid::Ct,
                             std::vector<std::uint8_t>(ct_geom.voxel_count(), 0)});
    }

    const auto centers = voxel_centers(ct_geom);
    for (std::size_t f = 0; f < centers.size(); ++f) {
        const Vec3& p = centers[f];
        const Vec3 q{p.x / semi_axes.x, p.y / semi_axes.y, p.z / semi_axes.z};
        float hu = squared_norm(q) <= 1.0 ? kBodyHu : kAirHu;
        const bool in_ptv = squared_distance(p, seeded_center) <= ptv_radius * ptv_radius;
        for (std::size_t i = 0; i < oars.size(); ++i) {
            if (!in_ptv && squared_distance(p, oars[i].center) <= oars[i].radius * oars[i].radius) {
                hu = kOarHu;
                oar_masks[i].values[f] = 1;
            }
        }
        if (in_ptv) {
            hu = kPtvHu;
            ptv_mask.values[f] = 1;
        }
        ct.values()[f] = hu;
    }

    PlanBundle plan;
    plan.name = case_name(case_index);
    plan.ct = std::move(ct);
    plan.prescription_dose = cfg.prescription_dose;
    plan.structures.push_back(std::move(ptv_mask));
    for (auto& m : oar_masks) plan.structures.push_back(std::move(m));
    plan.dose_geometry = dose_geom;
    plan.update_ptv_center();

    VoxelGrid dose(dose_geom, "Gy");
    const auto dose_centers = voxel_centers(dose_geom);
    for (std::size_t f = 0; f < dose_centers.size(); ++f) {
        const auto feat = relative_features(dose_centers[f], plan.ptv_center);
        dose.values()[f] = static_cast<float>(analytic_dose(feat.distance, feat.angle, ptv_radius, cfg));
    }
    plan.dose = std::move(dose);
    plan.validate();
    return plan;
}

std::vector<PlanBundle> generate_dataset(const PhantomConfig& cfg, std::size_t count) {
    if (count < 1) throw DataError("dataset count must be >= 1");
    std::vector<PlanBundle> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate_phantom(cfg, i));
    return out;
}

}  // namespace dosegnn
