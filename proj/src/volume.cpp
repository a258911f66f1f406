#include "dosegnn/volume.hpp"

#include <algorithm>
#include <stdexcept>

#include "dosegnn/error.hpp"

namespace dosegnn {

namespace {
constexpr const char* kAxisNames[3] = {"x", "y", "z"};
}

void GridGeometry::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw DataError(std::string("grid spacing along ") + kAxisNames[a] +
                            " must be positive, got " + std::to_string(spacing[a]));
        }
        if (dims[a] < 1) {
            throw DataError(std::string("grid dims along ") + kAxisNames[a] +
                            " must be >= 1, got " + std::to_string(dims[a]));
        }
        if (!std::isfinite(origin[a])) {
            throw DataError(std::string("grid origin along ") + kAxisNames[a] + " is not finite");
        }
    }
}

std::size_t flatten(const GridGeometry& g, const Index3& idx) {
    return static_cast<std::size_t>(idx.x + g.dims.x * (idx.y + g.dims.y * idx.z));
}

Index3 unflatten(const GridGeometry& g, std::size_t flat) {
    const auto f = static_cast<std::int64_t>(flat);
    const std::int64_t plane = g.dims.x * g.dims.y;
    return {f % g.dims.x, (f % plane) / g.dims.x, f / plane};
}

Vec3 index_to_world(const GridGeometry& g, const Index3& idx) {
    for (int a = 0; a < 3; ++a) {
        if (idx[a] < 0 || idx[a] >= g.dims[a]) {
            throw std::out_of_range(std::string("index along ") + kAxisNames[a] + " is " +
                                    std::to_string(idx[a]) + ", valid range is [0, " +
                                    std::to_string(g.dims[a]) + ")");
        }
    }
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = g.origin[a] + static_cast<double>(idx[a]) * g.spacing[a];
    return p;
}

Index3 world_to_nearest_index(const GridGeometry& g, const Vec3& p) {
    Index3 idx;
    for (int a = 0; a < 3; ++a) {
        // std::round rounds half away from zero.
        const double r = std::round((p[a] - g.origin[a]) / g.spacing[a]);
        const double clamped = std::clamp(r, 0.0, static_cast<double>(g.dims[a] - 1));
        idx[a] = static_cast<std::int64_t>(clamped);
    }
    return idx;
}

std::vector<Vec3> voxel_centers(const GridGeometry& g) {
    std::vector<Vec3> out;
    out.reserve(g.voxel_count());
    for (std::int64_t z = 0; z < g.dims.z; ++z) {
        for (std::int64_t y = 0; y < g.dims.y; ++y) {
            for (std::int64_t x = 0; x < g.dims.x; ++x) {
                out.push_back({g.origin.x + static_cast<double>(x) * g.spacing.x,
                               g.origin.y + static_cast<double>(y) * g.spacing.y,
                               g.origin.z + static_cast<double>(z) * g.spacing.z});
            }
        }
    }
    return out;
}

Box center_bounds(const GridGeometry& g) {
    Box box;
    for (int a = 0; a < 3; ++a) {
        box.lo[a] = g.origin[a];
        box.hi[a] = g.origin[a] + static_cast<double>(g.dims[a] - 1) * g.spacing[a];
    }
    return box;
}

VoxelGrid::VoxelGrid(GridGeometry geometry, std::vector<float> values, std::string unit)
    : geometry_(geometry), values_(std::move(values)), unit_(std::move(unit)) {
    geometry_.validate();
    if (values_.size() != geometry_.voxel_count()) {
        throw DataError("voxel grid has " + std::to_string(values_.size()) + " values but dims require " +
                        std::to_string(geometry_.voxel_count()));
    }
}

VoxelGrid::VoxelGrid(GridGeometry geometry, std::string unit)
    : VoxelGrid(geometry, std::vector<float>(geometry.voxel_count(), 0.0f), std::move(unit)) {}

std::string to_string(MaskGrid grid) { return grid == MaskGrid::Ct ? "ct" : "dose"; }

MaskGrid mask_grid_from_string(const std::string& s) {
    if (s == "ct") return MaskGrid::Ct;
    if (s == "dose") return MaskGrid::Dose;
    throw DataError("structure grid must be \"ct\" or \"dose\", got \"" + s + "\"");
}

std::size_t StructureMask::count() const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(),
                                                  [](std::uint8_t v) { return v != 0; }));
}

Vec3 mask_centroid(const StructureMask& mask, const GridGeometry& g) {
    if (mask.values.size() != g.voxel_count()) {
        throw DataError("mask '" + mask.name + "' has " + std::to_string(mask.values.size()) +
                        " voxels, grid has " + std::to_string(g.voxel_count()));
    }
    Vec3 sum;
    std::size_t n = 0;
    for (std::size_t f = 0; f < mask.values.size(); ++f) {
        if (mask.values[f] == 0) continue;
        sum = sum + index_to_world(g, unflatten(g, f));
        ++n;
    }
    if (n == 0) throw DataError("mask '" + mask.name + "' is empty; centroid undefined");
    return sum * (1.0 / static_cast<double>(n));
}

const GridGeometry& PlanBundle::target_geometry() const {
    if (!dose_geometry) throw DataError("plan '" + name + "' has no dose geometry");
    return *dose_geometry;
}

const GridGeometry& PlanBundle::mask_geometry(const StructureMask& mask) const {
    return mask.grid == MaskGrid::Ct ? ct.geometry() : target_geometry();
}

const StructureMask& PlanBundle::ptv() const {
    const StructureMask* found = nullptr;
    for (const auto& s : structures) {
        if (s.name != "PTV") continue;
        if (found) throw DataError("plan '" + name + "' has more than one PTV structure");
        found = &s;
    }
    if (!found) throw DataError("plan '" + name + "' has no PTV structure");
    return *found;
}

void PlanBundle::update_ptv_center() {
    const auto& mask = ptv();
    ptv_center = mask_centroid(mask, mask_geometry(mask));
}

void PlanBundle::validate() const {
    ct.geometry().validate();
    if (ct.size() != ct.geometry().voxel_count()) throw DataError("plan '" + name + "': CT size mismatch");
    if (dose) {
        if (!dose_geometry || !(dose->geometry() == *dose_geometry)) {
            throw DataError("plan '" + name + "': dose geometry inconsistent with dose volume");
        }
    }
    if (dose_geometry) dose_geometry->validate();
    for (const auto& s : structures) {
        if (s.values.size() != mask_geometry(s).voxel_count()) {
            throw DataError("plan '" + name + "': structure '" + s.name + "' does not match its grid");
        }
    }
    if (ptv().count() == 0) throw DataError("plan '" + name + "': PTV mask is empty");
    if (!(prescription_dose > 0.0)) throw DataError("plan '" + name + "': prescription dose must be > 0");
}

StructureMask transfer_mask(const StructureMask& mask, const GridGeometry& source,
                            const GridGeometry& target) {
    StructureMask out;
    out.name = mask.name;
    out.grid = MaskGrid::Dose;
    out.values.resize(target.voxel_count());
    const auto centers = voxel_centers(target);
    for (std::size_t f = 0; f < centers.size(); ++f) {
        out.values[f] = mask.values[flatten(source, world_to_nearest_index(source, centers[f]))];
    }
    return out;
}

}  // namespace dosegnn
