#pragma once

#include <algorithm>
#include <cmath>

#include "dosegnn/volume.hpp"

namespace dosegnn {

/// Position of a dose voxel relative to the PTV center.
struct DoseNodeFeatures {
    double distance = 0.0;  ///< mm
    double angle = 0.0;     ///< polar angle against +z, radians in [0, pi]
};

/// Polar angle is defined as 0 at r = 0.
inline DoseNodeFeatures relative_features(const Vec3& p, const Vec3& center) {
    const Vec3 d = p - center;
    const double r = norm(d);
    if (r == 0.0) return {0.0, 0.0};
    return {r, std::acos(std::clamp(d.z / r, -1.0, 1.0))};
}

}  // namespace dosegnn
