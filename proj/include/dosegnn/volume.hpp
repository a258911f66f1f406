#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dosegnn {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }

    friend Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double squared_norm(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(squared_norm(a)); }

/// Squared distance used by every proximity predicate in the library.
inline double squared_distance(const Vec3& a, const Vec3& b) { return squared_norm(a - b); }

struct Index3 {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t z = 0;

    std::int64_t operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    std::int64_t& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
    friend bool operator==(const Index3&, const Index3&) = default;
};

/// Axis-aligned regular grid geometry. `origin` is the world position (mm)
/// of the center of voxel (0,0,0).
struct GridGeometry {
    Vec3 origin;
    Vec3 spacing{1.0, 1.0, 1.0};
    Index3 dims{1, 1, 1};

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims.x) * static_cast<std::size_t>(dims.y) *
               static_cast<std::size_t>(dims.z);
    }

    /// Throws DataError if a spacing is not strictly positive or a dim is < 1.
    void validate() const;

    friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Flat index with x fastest: x + nx * (y + ny * z).
std::size_t flatten(const GridGeometry& geometry, const Index3& idx);
Index3 unflatten(const GridGeometry& geometry, std::size_t flat);

/// origin + idx * spacing. Throws std::out_of_range naming the offending axis.
Vec3 index_to_world(const GridGeometry& geometry, const Index3& idx);

/// Nearest voxel center, ties rounded half away from zero, clamped into the grid.
Index3 world_to_nearest_index(const GridGeometry& geometry, const Vec3& p);

/// World positions of all voxel centers in flat order.
std::vector<Vec3> voxel_centers(const GridGeometry& geometry);

/// Lowest and highest voxel-center coordinates along each axis.
struct Box {
    Vec3 lo;
    Vec3 hi;
    bool contains(const Vec3& p) const {
        return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z &&
               p.z <= hi.z;
    }
};
Box center_bounds(const GridGeometry& geometry);

/// Scalar field on a grid. Values are kept as 32-bit floats, the on-disk type.
class VoxelGrid {
public:
    VoxelGrid() = default;
    VoxelGrid(GridGeometry geometry, std::vector<float> values, std::string unit);
    /// Zero-filled grid.
    VoxelGrid(GridGeometry geometry, std::string unit);

    const GridGeometry& geometry() const { return geometry_; }
    const std::vector<float>& values() const { return values_; }
    std::vector<float>& values() { return values_; }
    const std::string& unit() const { return unit_; }

    std::size_t size() const { return values_.size(); }
    float at(const Index3& idx) const { return values_[flatten(geometry_, idx)]; }
    float& at(const Index3& idx) { return values_[flatten(geometry_, idx)]; }

private:
    GridGeometry geometry_;
    std::vector<float> values_;
    std::string unit_;
};

enum class MaskGrid { Ct, Dose };

std::string to_string(MaskGrid grid);
MaskGrid mask_grid_from_string(const std::string& s);

struct StructureMask {
    std::string name;
    MaskGrid grid = MaskGrid::Ct;
    std::vector<std::uint8_t> values;

    std::size_t count() const;
};

/// Unweighted mean of the world positions of true voxels.
/// Throws DataError for an empty mask or a size mismatch.
Vec3 mask_centroid(const StructureMask& mask, const GridGeometry& geometry);

/// One treatment case. `dose` holds ground truth and may be absent, in which
/// case `dose_geometry` alone describes the prediction target.
struct PlanBundle {
    std::string name;
    VoxelGrid ct;
    std::optional<VoxelGrid> dose;
    std::optional<GridGeometry> dose_geometry;
    std::vector<StructureMask> structures;
    double prescription_dose = 0.0;
    Vec3 ptv_center;

    /// Throws DataError when the bundle carries no dose geometry.
    const GridGeometry& target_geometry() const;
    const GridGeometry& mask_geometry(const StructureMask& mask) const;
    /// Throws DataError unless exactly one structure is named "PTV".
    const StructureMask& ptv() const;
    /// Recomputes ptv_center from the PTV mask.
    void update_ptv_center();
    /// Checks every bundle invariant; throws DataError on violation.
    void validate() const;
};

/// Resamples `mask` onto `target` by nearest-voxel lookup on its own grid.
StructureMask transfer_mask(const StructureMask& mask, const GridGeometry& source,
                            const GridGeometry& target);

}  // namespace dosegnn
