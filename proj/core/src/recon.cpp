#include "tiltfield/recon.hpp"

#include <algorithm>
#include <cmath>

#include "tiltfield/error.hpp"
#include "tiltfield/fft.hpp"
#include "tiltfield/parallel.hpp"

namespace tiltfield {

std::string to_string(FbpFilter filter) { return filter == FbpFilter::Ramp ? "ramp" : "ramp-hann"; }

FbpFilter fbp_filter_from_string(const std::string& name) {
    if (name == "ramp") {
        return FbpFilter::Ramp;
    }
    if (name == "ramp-hann") {
        return FbpFilter::RampHann;
    }
    throw InvalidArgument("unknown filter '" + name + "'");
}

namespace {

void check_series(const TiltSeries& series) {
    if (series.images.empty()) {
        throw InvalidArgument("tilt series is empty");
    }
    series.validate();
    for (double a : series.angles) {
        if (!(std::abs(a) < kPi / 2)) {
            throw InvalidArgument("tilt angles must lie in (-90, 90) degrees");
        }
    }
}

int padded_length(int n) {
    int p = 1;
    while (p < 2 * n) {
        p <<= 1;
    }
    return p;
}

// Frequency response of the spatially sampled ramp kernel (unit pixel spacing).
std::vector<double> ramp_response(int p, FbpFilter filter) {
    std::vector<Complex> h(p, Complex(0.0, 0.0));
    h[0] = 0.25;
    for (int k = 1; k < p / 2; ++k) {
        if (k % 2 == 1) {
            const double v = -1.0 / (kPi * kPi * k * k);
            h[k] = v;
            h[p - k] = v;
        }
    }
    fft_inplace(h, {p}, false);
    std::vector<double> out(p);
    for (int k = 0; k < p; ++k) {
        double v = h[k].real();
        if (filter == FbpFilter::RampHann) {
            const int f = k <= p / 2 ? k : p - k;
            v *= 0.5 * (1.0 + std::cos(kPi * f / (p / 2)));
        }
        out[k] = v;
    }
    return out;
}

}  // namespace

std::vector<double> angle_weights(const std::vector<double>& angles) {
    const std::size_t m = angles.size();
    std::vector<double> w(m, kPi);
    if (m < 2) {
        return w;
    }
    std::vector<std::size_t> order(m);
    for (std::size_t k = 0; k < m; ++k) {
        order[k] = k;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return angles[a] < angles[b]; });
    for (std::size_t r = 0; r < m; ++r) {
        const double lo = r > 0 ? angles[order[r]] - angles[order[r - 1]] : angles[order[1]] - angles[order[0]];
        const double hi =
            r + 1 < m ? angles[order[r + 1]] - angles[order[r]] : angles[order[m - 1]] - angles[order[m - 2]];
        w[order[r]] = 0.5 * (lo + hi);
    }
    return w;
}

TiltSeries ramp_filter(const TiltSeries& series, FbpFilter filter, int workers) {
    check_series(series);
    const int n = series.image_size();
    const int p = padded_length(n);
    const std::vector<double> response = ramp_response(p, filter);
    // Kernel in pixel units; dividing by the pixel spacing (2 / n) gives normalized units.
    const double spacing_scale = n / 2.0;
    TiltSeries out = series;
    parallel_for(series.size(), workers, [&](std::size_t begin, std::size_t end, int) {
        std::vector<Complex> row(p);
        for (std::size_t m = begin; m < end; ++m) {
            const Image& in = series.images[m];
            Image& img = out.images[m];
            for (int j = 0; j < n; ++j) {
                std::fill(row.begin(), row.end(), Complex(0.0, 0.0));
                for (int i = 0; i < n; ++i) {
                    row[i] = in.at(i, j);
                }
                fft_inplace(row, {p}, false);
                for (int k = 0; k < p; ++k) {
                    row[k] *= response[k];
                }
                fft_inplace(row, {p}, true);
                for (int i = 0; i < n; ++i) {
                    img.at(i, j) = row[i].real() * spacing_scale;
                }
            }
        }
    });
    return out;
}

VoxelVolume fbp(const TiltSeries& series, const GridSpec& grid, const FbpOptions& options) {
    check_series(series);
    grid.validate();
    const TiltSeries filtered = ramp_filter(series, options.filter, options.workers);
    const std::vector<double> weights = angle_weights(series.angles);
    const int n = series.image_size();
    VoxelVolume out(grid);
    parallel_for(static_cast<std::size_t>(grid.n3), options.workers, [&](std::size_t begin, std::size_t end, int) {
        for (std::size_t kk = begin; kk < end; ++kk) {
            const int k = static_cast<int>(kk);
            const double x3 = GridSpec::center(k, grid.n3);
            for (std::size_t m = 0; m < series.size(); ++m) {
                const double c = std::cos(series.angles[m]);
                const double s = std::sin(series.angles[m]);
                const Image& q = filtered.images[m];
                const double w = weights[m];
                for (int j = 0; j < grid.n2; ++j) {
                    const double v = GridSpec::index_of(GridSpec::center(j, grid.n2), n);
                    const int j0 = static_cast<int>(std::floor(v));
                    const double fv = v - j0;
                    for (int i = 0; i < grid.n1; ++i) {
                        const double p1 = c * GridSpec::center(i, grid.n1) - s * x3;
                        const double u = GridSpec::index_of(p1, n);
                        const int i0 = static_cast<int>(std::floor(u));
                        const double fu = u - i0;
                        double acc = 0.0;
                        for (int b = 0; b < 2; ++b) {
                            const int jj = j0 + b;
                            if (jj < 0 || jj >= n) {
                                continue;
                            }
                            const double wv = b ? fv : 1.0 - fv;
                            if (wv == 0.0) {
                                continue;
                            }
                            if (i0 >= 0 && i0 < n) {
                                acc += wv * (1.0 - fu) * q.at(i0, jj);
                            }
                            if (i0 + 1 >= 0 && i0 + 1 < n) {
                                acc += wv * fu * q.at(i0 + 1, jj);
                            }
                        }
                        out.at(i, j, k) += w * acc;
                    }
                }
            }
        }
    });
    return out;
}

TiltSeries project(const VoxelVolume& volume, const std::vector<double>& angles, int detector_n,
                   const RenderOptions& options) {
    const DetectorSpec detector{detector_n};
    detector.validate();
    TiltSeries out;
    out.angles = angles;
    VoxelSampler sampler(volume);
    for (double theta : angles) {
        out.images.push_back(render_projection(sampler, theta, detector, nullptr, options));
    }
    return out;
}

VoxelVolume backproject(const TiltSeries& series, const GridSpec& grid, const RenderOptions& options) {
    check_series(series);
    grid.validate();
    const DetectorSpec detector{series.image_size()};
    const int n = detector.n;
    const int samples = options.samples_for(detector);
    const QuadratureRule quad = make_quadrature(options.quadrature, samples);
    const int workers = std::max(1, options.workers);
    std::vector<std::vector<double>> partial(workers, std::vector<double>(grid.voxel_count(), 0.0));
    const std::size_t rows = series.size() * static_cast<std::size_t>(n);
    parallel_for(rows, workers, [&](std::size_t begin, std::size_t end, int worker) {
        std::vector<double>& acc = partial[worker];
        for (std::size_t r = begin; r < end; ++r) {
            const std::size_t m = r / n;
            const int j = static_cast<int>(r % n);
            const double theta = series.angles[m];
            for (int i = 0; i < n; ++i) {
                const double y = series.images[m].at(i, j);
                if (y == 0.0) {
                    continue;
                }
                const Ray ray = ray_for_pixel(i, j, theta, detector, samples);
                if (ray.degenerate()) {
                    continue;
                }
                const double length = ray.t_max - ray.t_min;
                for (int s = 0; s < samples; ++s) {
                    const Vec3 x = ray.at(ray.t_min + quad.offsets[s] * length);
                    const TrilinearTaps taps = trilinear_taps(grid, x);
                    const double w = quad.weights[s] * length * options.path_scale * y;
                    for (int c = 0; c < taps.count; ++c) {
                        acc[taps.index[c]] += w * taps.weight[c];
                    }
                }
            }
        }
    });
    VoxelVolume out(grid);
    for (const auto& p : partial) {
        for (std::size_t v = 0; v < p.size(); ++v) {
            out.data()[v] += p[v];
        }
    }
    return out;
}

TiltSeries align_series(const TiltSeries& series, const std::vector<DeformParams>& gammas,
                        const InverseMapOptions& inverse, int workers) {
    if (gammas.size() != series.size()) {
        throw ShapeMismatch("need one deformation per projection");
    }
    TiltSeries out = series;
    parallel_for(series.size(), workers, [&](std::size_t begin, std::size_t end, int) {
        for (std::size_t m = begin; m < end; ++m) {
            out.images[m] = resample_image(series.images[m], gammas[m], ResampleMode::Undo, inverse);
        }
    });
    return out;
}

}  // namespace tiltfield
