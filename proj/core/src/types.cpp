#include "tiltfield/types.hpp"

#include <string>

#include "tiltfield/error.hpp"

namespace tiltfield {

void GridSpec::validate() const {
    if (n1 < 1 || n2 < 1 || n3 < 1) {
        throw InvalidArgument("grid dimensions must be >= 1");
    }
    if (!(voxel_size > 0.0)) {
        throw InvalidArgument("voxel size must be positive");
    }
}

VoxelVolume::VoxelVolume(const GridSpec& grid, double fill) : grid_(grid) {
    grid_.validate();
    data_.assign(grid_.voxel_count(), fill);
}

void TiltSeries::validate() const {
    if (images.empty()) {
        throw InvalidArgument("tilt series is empty");
    }
    const int n = images.front().n();
    if (n < 2) {
        throw InvalidArgument("tilt series images must be at least 2x2");
    }
    for (const auto& im : images) {
        if (im.n() != n || im.size() != static_cast<std::size_t>(n) * n) {
            throw ShapeMismatch("tilt series images differ in size");
        }
    }
    if (angles.size() != images.size()) {
        throw ShapeMismatch("tilt series has " + std::to_string(images.size()) + " images but " +
                            std::to_string(angles.size()) + " angles");
    }
    if (!dose_weights.empty() && dose_weights.size() != images.size()) {
        throw ShapeMismatch("dose weight count does not match image count");
    }
}

}  // namespace tiltfield
