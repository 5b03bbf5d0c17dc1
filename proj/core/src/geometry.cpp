#include "tiltfield/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tiltfield/deform.hpp"
#include "tiltfield/error.hpp"
#include "tiltfield/parallel.hpp"

namespace tiltfield {

void DetectorSpec::validate() const {
    if (n < 2) {
        throw InvalidArgument("detector must have at least 2 pixels per side");
    }
}

QuadratureRule make_quadrature(Quadrature rule, int n_samples) {
    if (n_samples < 2) {
        throw InvalidArgument("quadrature needs at least 2 samples");
    }
    QuadratureRule q;
    q.offsets.resize(n_samples);
    q.weights.resize(n_samples);
    if (rule == Quadrature::Midpoint) {
        for (int s = 0; s < n_samples; ++s) {
            q.offsets[s] = (s + 0.5) / n_samples;
            q.weights[s] = 1.0 / n_samples;
        }
    } else {
        const double h = 1.0 / (n_samples - 1);
        for (int s = 0; s < n_samples; ++s) {
            q.offsets[s] = s * h;
            q.weights[s] = (s == 0 || s == n_samples - 1) ? 0.5 * h : h;
        }
    }
    return q;
}

Mat3 tilt_matrix(double alpha) {
    const double c = std::cos(alpha);
    const double s = std::sin(alpha);
    Mat3 r;
    r << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
    return r;
}

Vec3 tilt_rotate(const Vec3& x, double alpha) {
    const double c = std::cos(alpha);
    const double s = std::sin(alpha);
    return {c * x[0] + s * x[2], x[1], -s * x[0] + c * x[2]};
}

Ray ray_through(const Vec2& p, double theta, int n_samples) {
    Ray ray;
    ray.origin = tilt_rotate(Vec3(p[0], p[1], 0.0), theta);
    ray.direction = tilt_rotate(Vec3::UnitZ(), theta);
    ray.n_samples = n_samples;

    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    int a0 = -1;
    int a1 = -1;
    for (int a = 0; a < 3; ++a) {
        const double o = ray.origin[a];
        const double d = ray.direction[a];
        if (std::abs(d) < 1e-15) {
            if (o < -1.0 || o > 1.0) {
                t0 = t1 = 0.0;
                a0 = a1 = -1;
                break;
            }
            continue;
        }
        double lo = (-1.0 - o) / d;
        double hi = (1.0 - o) / d;
        if (lo > hi) {
            std::swap(lo, hi);
        }
        if (lo > t0) {
            t0 = lo;
            a0 = a;
        }
        if (hi < t1) {
            t1 = hi;
            a1 = a;
        }
    }
    if (!(t1 > t0)) {
        ray.t_min = ray.t_max = 0.0;
        ray.entry_axis = ray.exit_axis = -1;
    } else {
        ray.t_min = t0;
        ray.t_max = t1;
        ray.entry_axis = a0;
        ray.exit_axis = a1;
    }
    return ray;
}

Ray ray_for_pixel(int i, int j, double theta, const DetectorSpec& detector, int n_samples) {
    return ray_through(detector.pixel_coord(i, j), theta, n_samples);
}

double integrate_ray(const Sampler& sampler, const Ray& ray, Quadrature quadrature, int n_samples,
                     double path_scale) {
    if (n_samples < 2) {
        throw InvalidArgument("integrate_ray needs at least 2 samples");
    }
    if (ray.degenerate()) {
        return 0.0;
    }
    // Same sample positions as the backprojection adjoint, so boundary samples agree bitwise.
    const QuadratureRule quad = make_quadrature(quadrature, n_samples);
    const double length = ray.t_max - ray.t_min;
    double sum = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        sum += quad.weights[s] * sampler(ray.at(ray.t_min + quad.offsets[s] * length));
    }
    sum *= length;
    return sum * path_scale;
}

Image render_projection(const Sampler& sampler, double theta, const DetectorSpec& detector,
                        const DeformParams* gamma, const RenderOptions& options) {
    detector.validate();
    const int n = detector.n;
    const int samples = options.samples_for(detector);
    Image image(n);
    parallel_for(static_cast<std::size_t>(n), options.workers, [&](std::size_t begin, std::size_t end, int) {
        for (std::size_t jj = begin; jj < end; ++jj) {
            const int j = static_cast<int>(jj);
            for (int i = 0; i < n; ++i) {
                Vec2 p = detector.pixel_coord(i, j);
                if (gamma != nullptr) {
                    p = forward_map(*gamma, p);
                }
                const Ray ray = ray_through(p, theta, samples);
                image.at(i, j) = integrate_ray(sampler, ray, options.quadrature, samples, options.path_scale);
            }
        }
    });
    return image;
}

TrilinearTaps trilinear_taps(const GridSpec& grid, const Vec3& x) {
    TrilinearTaps taps;
    if (x[0] < -1.0 || x[0] > 1.0 || x[1] < -1.0 || x[1] > 1.0 || x[2] < -1.0 || x[2] > 1.0) {
        return taps;
    }
    const std::array<int, 3> n{grid.n1, grid.n2, grid.n3};
    std::array<int, 3> i0{};
    std::array<int, 3> i1{};
    std::array<double, 3> f{};
    for (int a = 0; a < 3; ++a) {
        const double u = std::clamp(GridSpec::index_of(x[a], n[a]), 0.0, static_cast<double>(n[a] - 1));
        int lo = static_cast<int>(std::floor(u));
        lo = std::min(lo, std::max(n[a] - 2, 0));
        i0[a] = lo;
        i1[a] = std::min(lo + 1, n[a] - 1);
        f[a] = u - lo;
    }
    for (int c = 0; c < 8; ++c) {
        const int ci = (c & 1) ? i1[0] : i0[0];
        const int cj = (c & 2) ? i1[1] : i0[1];
        const int ck = (c & 4) ? i1[2] : i0[2];
        const double w = ((c & 1) ? f[0] : 1.0 - f[0]) * ((c & 2) ? f[1] : 1.0 - f[1]) *
                         ((c & 4) ? f[2] : 1.0 - f[2]);
        taps.index[c] = (static_cast<std::size_t>(ck) * grid.n2 + cj) * grid.n1 + ci;
        taps.weight[c] = w;
    }
    taps.count = 8;
    return taps;
}

double VoxelSampler::operator()(const Vec3& x) const {
    const TrilinearTaps taps = trilinear_taps(volume_->grid(), x);
    const auto& data = volume_->data();
    double v = 0.0;
    for (int c = 0; c < taps.count; ++c) {
        v += taps.weight[c] * data[taps.index[c]];
    }
    return v;
}

}  // namespace tiltfield
