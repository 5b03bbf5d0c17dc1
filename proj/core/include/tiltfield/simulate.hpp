#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tiltfield/deform.hpp"
#include "tiltfield/geometry.hpp"
#include "tiltfield/types.hpp"

namespace tiltfield {

/// Evenly spaced angles in degrees from first to last inclusive.
std::vector<double> angle_range(double first_deg, double last_deg, double step_deg);

enum class SnrDefinition {
    Squared,  // -20 log10(|n|^2 / |y|^2)
    Power,    // -10 log10(|n|^2 / |y|^2)
};

std::string to_string(SnrDefinition d);
SnrDefinition snr_definition_from_string(const std::string& name);

/// Simulation settings. Pixel bounds refer to the simulated detector size;
/// scaled_for() converts the 512-pixel reference bounds.
struct SimProtocol {
    std::vector<double> angles_deg = angle_range(-60.0, 60.0, 2.0);
    double max_shift_px = 12.0;
    double max_rotation_deg = 0.01;
    double max_local_px = 2.0;
    int truth_grid = 5;
    Interpolation truth_interp = Interpolation::Bicubic;
    double snr_db = 10.0;  // +inf disables noise
    SnrDefinition snr_definition = SnrDefinition::Squared;
    std::uint64_t seed = 0;

    static constexpr int kReferenceSize = 512;
    static SimProtocol scaled_for(int detector_n);

    std::vector<double> angles_rad() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const SimProtocol& p);
void from_json(const nlohmann::json& j, SimProtocol& p);

enum class PhantomKind { Blobs, Shepp3d, File };

std::string to_string(PhantomKind kind);
PhantomKind phantom_kind_from_string(const std::string& name);

struct PhantomOptions {
    int blob_count = 12;
    std::filesystem::path file;
};

/// Non-negative test volumes: random anisotropic Gaussian blobs, a 3-D
/// Shepp-Logan head, or an MRC file resampled onto grid.
VoxelVolume make_phantom(PhantomKind kind, const GridSpec& grid, std::uint64_t seed,
                         const PhantomOptions& options = {});

/// One independent deformation per angle, drawn from the protocol bounds for a
/// detector of detector_n pixels.
std::vector<DeformParams> sample_deformations(const SimProtocol& protocol, int detector_n);

/// Noise variance that makes the chosen SNR definition evaluate to snr_db in expectation.
double noise_variance_for_snr(double signal_energy, std::size_t count, double snr_db, SnrDefinition def);

/// Adds i.i.d. Gaussian noise to every image. Each projection draws from its own
/// stream derived from seed.
TiltSeries add_noise_to_snr(const TiltSeries& series, double snr_db, std::uint64_t seed,
                            SnrDefinition def = SnrDefinition::Squared);

double measure_snr(const TiltSeries& clean, const TiltSeries& noisy, SnrDefinition def = SnrDefinition::Squared);

struct GroundTruth {
    VoxelVolume volume;
    std::vector<DeformParams> gammas_true;
    TiltSeries noiseless_ts;         // undeformed, no noise
    TiltSeries clean_deformed_ts;    // deformed, no noise
    TiltSeries noisy_ts;             // deformed plus noise
    TiltSeries noisy_undeformed_ts;  // undeformed plus independent noise
};

GroundTruth generate_ground_truth(const VoxelVolume& volume, const SimProtocol& protocol,
                                  const RenderOptions& render = {});

}  // namespace tiltfield
