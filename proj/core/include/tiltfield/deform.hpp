#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tiltfield/error.hpp"
#include "tiltfield/types.hpp"

namespace tiltfield {

enum class Interpolation { Bilinear, Bicubic };

std::string to_string(Interpolation interp);
Interpolation interpolation_from_string(const std::string& name);

/// Interpolation stencil: flat control-point indices and their weights.
/// Bicubic stencils may repeat an index after edge clamping.
struct ControlTaps {
    std::array<int, 16> index{};
    std::array<double, 16> weight{};
    int count = 0;
};

/// Displacement vectors on an n1 x n2 lattice spanning [-1, 1]^2. Point (i, j)
/// sits at (-1 + 2i/(n1-1), -1 + 2j/(n2-1)) and is stored at i * n2 + j.
class ControlGrid {
public:
    ControlGrid() : ControlGrid(2, 2) {}
    ControlGrid(int n1, int n2, Interpolation interp = Interpolation::Bilinear);

    int n1() const { return n1_; }
    int n2() const { return n2_; }
    Interpolation interpolation() const { return interp_; }
    std::size_t size() const { return displacements_.size(); }

    Vec2& at(int i, int j) { return displacements_[static_cast<std::size_t>(i) * n2_ + j]; }
    const Vec2& at(int i, int j) const { return displacements_[static_cast<std::size_t>(i) * n2_ + j]; }
    std::vector<Vec2>& displacements() { return displacements_; }
    const std::vector<Vec2>& displacements() const { return displacements_; }

    Vec2 node_position(int i, int j) const;
    void validate() const;

    /// Stencil at x, clamped to [-1, 1]^2.
    ControlTaps taps(const Vec2& x) const;

    bool operator==(const ControlGrid&) const = default;

private:
    int n1_;
    int n2_;
    Interpolation interp_;
    std::vector<Vec2> displacements_;
};

/// gamma = {shift tau, in-plane angle alpha in [0, 2pi), local control grid}.
struct DeformParams {
    Vec2 tau = Vec2::Zero();
    double alpha = 0.0;
    ControlGrid grid;

    static DeformParams identity(int n1 = 2, int n2 = 2, Interpolation interp = Interpolation::Bilinear);

    void wrap();
    bool is_identity() const;
    bool operator==(const DeformParams&) const = default;
};

/// Maps any angle onto [0, 2pi).
double wrap_angle(double alpha);

Mat2 rotation2d(double alpha);

/// phi(C)(x): interpolated local displacement.
Vec2 displacement_at(const ControlGrid& grid, const Vec2& x);

/// m(x) = R_alpha (x + phi(x)) - tau; the deformed image at x reads the
/// undeformed image at m(x).
Vec2 forward_map(const DeformParams& gamma, const Vec2& x);

/// Thrown when the fixed-point inversion does not reach the tolerance.
class InverseMapError : public Error {
public:
    InverseMapError(const Vec2& last_iterate, double residual);

    Vec2 last_iterate;
    double residual;
};

struct InverseMapOptions {
    double tol = 1e-6;
    int max_iter = 50;
};

/// Solves forward_map(gamma, x) = z by x <- R_alpha^T (z + tau) - phi(x).
Vec2 inverse_map(const DeformParams& gamma, const Vec2& z, double tol = 1e-6, int max_iter = 50);

enum class ResampleMode { Apply, Undo };

/// Bilinear resampling at pixel centers mapped through forward_map (apply) or
/// inverse_map (undo). Samples falling off the image read zero.
Image resample_image(const Image& image, const DeformParams& gamma, ResampleMode mode,
                     const InverseMapOptions& inverse = {});

/// Bilinear image lookup at a normalized detector coordinate (zero padded).
double sample_image(const Image& image, const Vec2& x);

/// sqrt(sum_i |phi(x_i)|^2) over the mesh_p x mesh_p uniform mesh of [-1, 1]^2.
double deformation_norm(const ControlGrid& grid, int mesh_p = 10);

struct RegularizerWeights {
    double rotation = 1e-4;
    double shift = 1e-4;
    double local = 1e-4;
};

/// lambda1 min(|a|, |2pi - a|) + lambda2 |tau| + lambda3 |Phi(C)|, a = wrapped alpha.
double regularizer(const DeformParams& gamma, const RegularizerWeights& lambdas, int mesh_p = 10);

/// Gradient buffers with the same layout as DeformParams.
struct DeformGradient {
    Vec2 tau = Vec2::Zero();
    double alpha = 0.0;
    std::vector<Vec2> grid;

    explicit DeformGradient(std::size_t grid_points = 0) : grid(grid_points, Vec2::Zero()) {}
    void set_zero();
};

/// Adds the (sub)gradient of regularizer() to grad and returns its value. The
/// subgradient of every non-differentiable point (alpha = 0, tau = 0, Phi = 0) is 0.
double regularizer_with_gradient(const DeformParams& gamma, const RegularizerWeights& lambdas, int mesh_p,
                                 DeformGradient& grad);

void to_json(nlohmann::json& j, const ControlGrid& grid);
void from_json(const nlohmann::json& j, ControlGrid& grid);
void to_json(nlohmann::json& j, const DeformParams& gamma);
void from_json(const nlohmann::json& j, DeformParams& gamma);

}  // namespace tiltfield
