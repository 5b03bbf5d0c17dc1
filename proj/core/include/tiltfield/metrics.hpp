#pragma once

#include <array>
#include <vector>

#include "tiltfield/types.hpp"

namespace tiltfield {

/// <a, b> / (|a| |b|). With subtract_mean, both volumes are centered first.
double cc(const VoxelVolume& a, const VoxelVolume& b, bool subtract_mean = false);

struct FscCurve {
    int box = 0;                // volume side length
    std::vector<int> radii;     // 1 .. box / 2
    std::vector<double> values;
    std::vector<std::size_t> shell_counts;

    /// Spatial frequency of shell r in 1 / length units.
    double frequency(int r, double voxel_size) const { return r / (box * voxel_size); }
};

/// Shell-wise Re(sum conj(A) B) / sqrt(sum |A|^2 sum |B|^2), shells round(|xi|).
FscCurve fsc(const VoxelVolume& a, const VoxelVolume& b);

/// First crossing below threshold, linearly interpolated between shells and
/// returned as a spatial frequency; Nyquist (1 / (2 voxel_size)) if the curve
/// never drops below.
double fsc_resolution(const FscCurve& curve, double threshold, double voxel_size);

struct Registration {
    std::array<int, 3> shift{0, 0, 0};  // (i, j, k) shift of mov relative to ref
    VoxelVolume registered;
};

/// Integer shift maximizing the circular cross-correlation; registered is mov
/// rolled back by that shift.
Registration register_translation(const VoxelVolume& ref, const VoxelVolume& mov);

/// Circular shift: out(x + s) = v(x).
VoxelVolume circular_shift(const VoxelVolume& v, const std::array<int, 3>& shift);

enum class Axis { X = 0, Y = 1, Z = 2 };

/// Central slice normal to axis, as an image whose first index runs along the
/// lower remaining axis.
Image central_slice(const VoxelVolume& v, Axis axis);

/// Magnitude of the centered 2-D DFT of a slice (zero frequency at n / 2).
Image slice_spectrum_magnitude(const Image& slice);

/// log(1 + magnitude) of the central slice's centered 2-D DFT.
Image central_slice_spectrum(const VoxelVolume& v, Axis axis);

struct WedgeStats {
    double wedge_mean = 0.0;   // inside the missing wedge
    double sampled_mean = 0.0; // inside the measured double cone
    std::size_t wedge_count = 0;
    std::size_t sampled_count = 0;
};

/// Splits a centered y-normal spectrum (first index kx, second kz) by the angle
/// of (kx, kz) from the kz axis. Frequencies within 90 - max_tilt - margin of the
/// kz axis count as wedge, those beyond 90 - max_tilt + margin as sampled; DC and
/// radii below min_radius or above n / 2 are skipped.
WedgeStats wedge_statistics(const Image& spectrum, double max_tilt_deg, double margin_deg = 5.0,
                            double min_radius = 2.0);

}  // namespace tiltfield
