#pragma once

#include <array>
#include <functional>
#include <vector>

#include "tiltfield/types.hpp"

namespace tiltfield {

struct DeformParams;

enum class Quadrature { Midpoint, Trapezoid };

/// N x N detector whose pixel centers map onto [-1, 1]^2 the same way voxel
/// centers do.
struct DetectorSpec {
    int n = 2;

    void validate() const;
    double pixel_center(int i) const { return GridSpec::center(i, n); }
    Vec2 pixel_coord(int i, int j) const { return {pixel_center(i), pixel_center(j)}; }
};

/// Parametric ray o + t d clipped against the [-1, 1]^3 cube.
struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();
    double t_min = 0.0;
    double t_max = 0.0;
    int n_samples = 2;
    // Cube faces that bound t_min / t_max; -1 when degenerate.
    int entry_axis = -1;
    int exit_axis = -1;

    bool degenerate() const { return !(t_max > t_min); }
    Vec3 at(double t) const { return origin + t * direction; }
};

/// Quadrature nodes on the unit interval: sample s sits at t_min + offset[s] * L
/// with weight weight[s] * L, where L = t_max - t_min.
struct QuadratureRule {
    std::vector<double> offsets;
    std::vector<double> weights;
};

QuadratureRule make_quadrature(Quadrature rule, int n_samples);

using Sampler = std::function<double(const Vec3&)>;

Mat3 tilt_matrix(double alpha);

/// Rotation about the second axis: [[c, 0, s], [0, 1, 0], [-s, 0, c]] x.
Vec3 tilt_rotate(const Vec3& x, double alpha);

/// Ray through detector point p at tilt theta: samples tilt_rotate((p1, p2, t), theta),
/// so the direction is the rotated third axis.
Ray ray_through(const Vec2& detector_point, double theta, int n_samples);

Ray ray_for_pixel(int i, int j, double theta, const DetectorSpec& detector, int n_samples);

/// Quadrature of sampler along the clipped ray, multiplied by path_scale (physical
/// length per normalized unit). Degenerate rays integrate to exactly 0.
double integrate_ray(const Sampler& sampler, const Ray& ray, Quadrature quadrature, int n_samples,
                     double path_scale = 1.0);

struct RenderOptions {
    Quadrature quadrature = Quadrature::Midpoint;
    int n_samples = 0;  // 0 selects the detector size (one sample per voxel depth)
    double path_scale = 1.0;
    int workers = 1;

    int samples_for(const DetectorSpec& detector) const { return n_samples > 0 ? n_samples : detector.n; }
};

/// Projection of sampler at tilt theta. With gamma, pixel x integrates the ray
/// through the warped coordinate forward_map(gamma, x).
Image render_projection(const Sampler& sampler, double theta, const DetectorSpec& detector,
                        const DeformParams* gamma = nullptr, const RenderOptions& options = {});

/// Up to 8 trilinear taps into a voxel volume. Inside the cube, coordinates are
/// clamped to the outermost voxel centers; points outside the cube yield no taps.
struct TrilinearTaps {
    std::array<std::size_t, 8> index{};
    std::array<double, 8> weight{};
    int count = 0;
};

TrilinearTaps trilinear_taps(const GridSpec& grid, const Vec3& x);

/// Trilinear sampler over a voxel volume (zero outside the cube).
class VoxelSampler {
public:
    explicit VoxelSampler(const VoxelVolume& volume) : volume_(&volume) {}

    double operator()(const Vec3& x) const;

private:
    const VoxelVolume* volume_;
};

}  // namespace tiltfield
