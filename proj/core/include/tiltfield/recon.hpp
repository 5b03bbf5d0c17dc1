#pragma once

#include <string>
#include <vector>

#include "tiltfield/deform.hpp"
#include "tiltfield/geometry.hpp"
#include "tiltfield/types.hpp"

namespace tiltfield {

enum class FbpFilter { Ramp, RampHann };

std::string to_string(FbpFilter filter);
FbpFilter fbp_filter_from_string(const std::string& name);

struct FbpOptions {
    FbpFilter filter = FbpFilter::RampHann;
    int workers = 1;
};

/// Angular integration weight of each projection: half the gap to each
/// neighbour (edge projections reuse their single gap); pi for one projection.
std::vector<double> angle_weights(const std::vector<double>& angles);

/// Ramp-filters every detector row along the first axis (spectral, zero padded
/// to at least twice the width) with the spatially sampled ramp kernel.
TiltSeries ramp_filter(const TiltSeries& series, FbpFilter filter, int workers = 1);

/// Filtered backprojection for parallel-beam single-axis tilt geometry.
VoxelVolume fbp(const TiltSeries& series, const GridSpec& grid, const FbpOptions& options = {});

/// Voxel-driven projections of a volume, one per angle (trilinear ray sampling).
TiltSeries project(const VoxelVolume& volume, const std::vector<double>& angles, int detector_n,
                   const RenderOptions& options = {});

/// Exact transpose of project() under the same options.
VoxelVolume backproject(const TiltSeries& series, const GridSpec& grid, const RenderOptions& options = {});

/// Undoes each projection's deformation (resample_image in undo mode).
TiltSeries align_series(const TiltSeries& series, const std::vector<DeformParams>& gammas,
                        const InverseMapOptions& inverse = {}, int workers = 1);

}  // namespace tiltfield
