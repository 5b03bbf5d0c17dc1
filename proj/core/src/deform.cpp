#include "tiltfield/deform.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace tiltfield {

namespace {

constexpr double kTwoPi = 2.0 * kPi;

// Catmull-Rom weights for offsets -1, 0, 1, 2 at fractional position f.
std::array<double, 4> catmull_rom(double f) {
    const double f2 = f * f;
    const double f3 = f2 * f;
    return {0.5 * (-f3 + 2.0 * f2 - f), 0.5 * (3.0 * f3 - 5.0 * f2 + 2.0), 0.5 * (-3.0 * f3 + 4.0 * f2 + f),
            0.5 * (f3 - f2)};
}

struct AxisStencil {
    std::array<int, 4> index{};
    std::array<double, 4> weight{};
    int count = 0;
};

AxisStencil axis_stencil(double x, int n, Interpolation interp) {
    const double u = (std::clamp(x, -1.0, 1.0) + 1.0) * 0.5 * (n - 1);
    const int i0 = std::min(static_cast<int>(std::floor(u)), n - 2);
    const double f = u - i0;
    AxisStencil s;
    if (interp == Interpolation::Bilinear) {
        s.index = {i0, i0 + 1, 0, 0};
        s.weight = {1.0 - f, f, 0.0, 0.0};
        s.count = 2;
    } else {
        const auto w = catmull_rom(f);
        for (int k = 0; k < 4; ++k) {
            s.index[k] = std::clamp(i0 - 1 + k, 0, n - 1);
            s.weight[k] = w[k];
        }
        s.count = 4;
    }
    return s;
}

}  // namespace

std::string to_string(Interpolation interp) {
    return interp == Interpolation::Bilinear ? "bilinear" : "bicubic";
}

Interpolation interpolation_from_string(const std::string& name) {
    if (name == "bilinear") {
        return Interpolation::Bilinear;
    }
    if (name == "bicubic") {
        return Interpolation::Bicubic;
    }
    throw InvalidArgument("unknown interpolation '" + name + "'");
}

ControlGrid::ControlGrid(int n1, int n2, Interpolation interp)
    : n1_(n1), n2_(n2), interp_(interp) {
    if (n1 < 2 || n2 < 2) {
        throw InvalidArgument("control grid needs at least 2 points per axis");
    }
    displacements_.assign(static_cast<std::size_t>(n1) * n2, Vec2::Zero());
}

Vec2 ControlGrid::node_position(int i, int j) const {
    return {-1.0 + 2.0 * i / (n1_ - 1), -1.0 + 2.0 * j / (n2_ - 1)};
}

void ControlGrid::validate() const {
    if (n1_ < 2 || n2_ < 2) {
        throw InvalidArgument("control grid needs at least 2 points per axis");
    }
    if (displacements_.size() != static_cast<std::size_t>(n1_) * n2_) {
        throw ShapeMismatch("control grid displacement count does not match its shape");
    }
    for (const auto& d : displacements_) {
        if (!std::isfinite(d[0]) || !std::isfinite(d[1])) {
            throw InvalidArgument("control grid displacement is not finite");
        }
    }
}

ControlTaps ControlGrid::taps(const Vec2& x) const {
    const AxisStencil a = axis_stencil(x[0], n1_, interp_);
    const AxisStencil b = axis_stencil(x[1], n2_, interp_);
    ControlTaps t;
    for (int p = 0; p < a.count; ++p) {
        for (int q = 0; q < b.count; ++q) {
            t.index[t.count] = a.index[p] * n2_ + b.index[q];
            t.weight[t.count] = a.weight[p] * b.weight[q];
            ++t.count;
        }
    }
    return t;
}

DeformParams DeformParams::identity(int n1, int n2, Interpolation interp) {
    DeformParams g;
    g.grid = ControlGrid(n1, n2, interp);
    return g;
}

void DeformParams::wrap() { alpha = wrap_angle(alpha); }

bool DeformParams::is_identity() const {
    if (tau[0] != 0.0 || tau[1] != 0.0 || alpha != 0.0) {
        return false;
    }
    return std::all_of(grid.displacements().begin(), grid.displacements().end(),
                       [](const Vec2& d) { return d[0] == 0.0 && d[1] == 0.0; });
}

double wrap_angle(double alpha) {
    double a = std::fmod(alpha, kTwoPi);
    if (a < 0.0) {
        a += kTwoPi;
    }
    if (a >= kTwoPi) {
        a = 0.0;
    }
    return a;
}

Mat2 rotation2d(double alpha) {
    const double c = std::cos(alpha);
    const double s = std::sin(alpha);
    Mat2 r;
    r << c, -s, s, c;
    return r;
}

Vec2 displacement_at(const ControlGrid& grid, const Vec2& x) {
    const ControlTaps t = grid.taps(x);
    Vec2 d = Vec2::Zero();
    const auto& c = grid.displacements();
    for (int k = 0; k < t.count; ++k) {
        d += t.weight[k] * c[t.index[k]];
    }
    return d;
}

Vec2 forward_map(const DeformParams& gamma, const Vec2& x) {
    return rotation2d(gamma.alpha) * (x + displacement_at(gamma.grid, x)) - gamma.tau;
}

InverseMapError::InverseMapError(const Vec2& last, double res)
    : Error("inverse deformation map did not converge (residual " + std::to_string(res) + ")"),
      last_iterate(last),
      residual(res) {}

Vec2 inverse_map(const DeformParams& gamma, const Vec2& z, double tol, int max_iter) {
    if (!(tol > 0.0)) {
        throw InvalidArgument("inverse_map tolerance must be positive");
    }
    const Vec2 base = rotation2d(gamma.alpha).transpose() * (z + gamma.tau);
    Vec2 x = base;
    double residual = (forward_map(gamma, x) - z).norm();
    for (int it = 0; it < max_iter && residual > tol; ++it) {
        x = base - displacement_at(gamma.grid, x);
        residual = (forward_map(gamma, x) - z).norm();
    }
    if (!(residual <= tol)) {
        throw InverseMapError(x, residual);
    }
    return x;
}

double sample_image(const Image& image, const Vec2& x) {
    const int n = image.n();
    // Snap lattice-aligned coordinates so identity and integer-pixel maps copy exactly.
    auto snap = [](double u) {
        const double r = std::round(u);
        return std::abs(u - r) < 1e-9 ? r : u;
    };
    const double u = snap(GridSpec::index_of(x[0], n));
    const double v = snap(GridSpec::index_of(x[1], n));
    if (!(u > -1.0 && v > -1.0 && u < n && v < n)) {
        return 0.0;
    }
    const int i0 = static_cast<int>(std::floor(u));
    const int j0 = static_cast<int>(std::floor(v));
    const double a = u - i0;
    const double b = v - j0;
    auto pix = [&](int i, int j) { return (i < 0 || j < 0 || i >= n || j >= n) ? 0.0 : image.at(i, j); };
    double value = (1.0 - a) * (1.0 - b) * pix(i0, j0);
    if (a != 0.0) value += a * (1.0 - b) * pix(i0 + 1, j0);
    if (b != 0.0) value += (1.0 - a) * b * pix(i0, j0 + 1);
    if (a != 0.0 && b != 0.0) value += a * b * pix(i0 + 1, j0 + 1);
    return value;
}

Image resample_image(const Image& image, const DeformParams& gamma, ResampleMode mode,
                     const InverseMapOptions& inverse) {
    const int n = image.n();
    Image out(n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const Vec2 p(GridSpec::center(i, n), GridSpec::center(j, n));
            const Vec2 src = mode == ResampleMode::Apply ? forward_map(gamma, p)
                                                         : inverse_map(gamma, p, inverse.tol, inverse.max_iter);
            out.at(i, j) = sample_image(image, src);
        }
    }
    return out;
}

double deformation_norm(const ControlGrid& grid, int mesh_p) {
    if (mesh_p < 2) {
        throw InvalidArgument("deformation mesh needs at least 2 points per axis");
    }
    double sum = 0.0;
    for (int a = 0; a < mesh_p; ++a) {
        for (int b = 0; b < mesh_p; ++b) {
            const Vec2 x(-1.0 + 2.0 * a / (mesh_p - 1), -1.0 + 2.0 * b / (mesh_p - 1));
            sum += displacement_at(grid, x).squaredNorm();
        }
    }
    return std::sqrt(sum);
}

double regularizer(const DeformParams& gamma, const RegularizerWeights& lambdas, int mesh_p) {
    const double a = wrap_angle(gamma.alpha);
    double value = lambdas.rotation * std::min(std::abs(a), std::abs(kTwoPi - a));
    value += lambdas.shift * gamma.tau.norm();
    if (lambdas.local != 0.0) {
        value += lambdas.local * deformation_norm(gamma.grid, mesh_p);
    }
    return value;
}

void DeformGradient::set_zero() {
    tau.setZero();
    alpha = 0.0;
    std::fill(grid.begin(), grid.end(), Vec2::Zero());
}

double regularizer_with_gradient(const DeformParams& gamma, const RegularizerWeights& lambdas, int mesh_p,
                                 DeformGradient& grad) {
    if (grad.grid.size() != gamma.grid.size()) {
        grad.grid.assign(gamma.grid.size(), Vec2::Zero());
    }
    const double a = wrap_angle(gamma.alpha);
    double value = 0.0;
    if (a != 0.0) {
        if (a < kPi) {
            value += lambdas.rotation * a;
            grad.alpha += lambdas.rotation;
        } else {
            value += lambdas.rotation * (kTwoPi - a);
            grad.alpha -= lambdas.rotation;
        }
    }
    const double tn = gamma.tau.norm();
    value += lambdas.shift * tn;
    if (tn > 0.0) {
        grad.tau += lambdas.shift * gamma.tau / tn;
    }
    if (lambdas.local != 0.0) {
        if (mesh_p < 2) {
            throw InvalidArgument("deformation mesh needs at least 2 points per axis");
        }
        std::vector<std::pair<ControlTaps, Vec2>> samples;
        samples.reserve(static_cast<std::size_t>(mesh_p) * mesh_p);
        double sum = 0.0;
        for (int p = 0; p < mesh_p; ++p) {
            for (int q = 0; q < mesh_p; ++q) {
                const Vec2 x(-1.0 + 2.0 * p / (mesh_p - 1), -1.0 + 2.0 * q / (mesh_p - 1));
                const ControlTaps t = gamma.grid.taps(x);
                Vec2 d = Vec2::Zero();
                for (int k = 0; k < t.count; ++k) {
                    d += t.weight[k] * gamma.grid.displacements()[t.index[k]];
                }
                sum += d.squaredNorm();
                samples.emplace_back(t, d);
            }
        }
        const double norm = std::sqrt(sum);
        value += lambdas.local * norm;
        if (norm > 0.0) {
            const double scale = lambdas.local / norm;
            for (const auto& [t, d] : samples) {
                for (int k = 0; k < t.count; ++k) {
                    grad.grid[t.index[k]] += scale * t.weight[k] * d;
                }
            }
        }
    }
    return value;
}

void to_json(nlohmann::json& j, const ControlGrid& grid) {
    nlohmann::json disp = nlohmann::json::array();
    for (const auto& d : grid.displacements()) {
        disp.push_back({d[0], d[1]});
    }
    j = {{"n1", grid.n1()}, {"n2", grid.n2()}, {"interp", to_string(grid.interpolation())}, {"displacements", disp}};
}

void from_json(const nlohmann::json& j, ControlGrid& grid) {
    ControlGrid g(j.at("n1").get<int>(), j.at("n2").get<int>(),
                  interpolation_from_string(j.at("interp").get<std::string>()));
    const auto& disp = j.at("displacements");
    if (disp.size() != g.size()) {
        throw ShapeMismatch("control grid JSON has " + std::to_string(disp.size()) + " displacements, expected " +
                            std::to_string(g.size()));
    }
    for (std::size_t k = 0; k < g.size(); ++k) {
        g.displacements()[k] = Vec2(disp[k].at(0).get<double>(), disp[k].at(1).get<double>());
    }
    g.validate();
    grid = std::move(g);
}

void to_json(nlohmann::json& j, const DeformParams& gamma) {
    j = {{"tau", {gamma.tau[0], gamma.tau[1]}}, {"alpha", gamma.alpha}, {"grid", gamma.grid}};
}

void from_json(const nlohmann::json& j, DeformParams& gamma) {
    gamma.tau = Vec2(j.at("tau").at(0).get<double>(), j.at("tau").at(1).get<double>());
    gamma.alpha = wrap_angle(j.at("alpha").get<double>());
    gamma.grid = j.at("grid").get<ControlGrid>();
}

}  // namespace tiltfield
