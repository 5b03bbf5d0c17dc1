#include "tiltfield/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "tiltfield/error.hpp"
#include "tiltfield/fft.hpp"

namespace tiltfield {

namespace {

void require_same_shape(const VoxelVolume& a, const VoxelVolume& b) {
    const GridSpec& ga = a.grid();
    const GridSpec& gb = b.grid();
    if (ga.n1 != gb.n1 || ga.n2 != gb.n2 || ga.n3 != gb.n3) {
        throw ShapeMismatch("volumes differ in shape");
    }
}

std::vector<int> dims_of(const GridSpec& g) { return {g.n3, g.n2, g.n1}; }

// Signed frequency index of DFT bin k out of n.
int signed_freq(int k, int n) { return k <= n / 2 ? k : k - n; }

}  // namespace

double cc(const VoxelVolume& a, const VoxelVolume& b, bool subtract_mean) {
    require_same_shape(a, b);
    const auto& x = a.data();
    const auto& y = b.data();
    double ma = 0.0;
    double mb = 0.0;
    if (subtract_mean) {
        for (std::size_t k = 0; k < x.size(); ++k) {
            ma += x[k];
            mb += y[k];
        }
        ma /= static_cast<double>(x.size());
        mb /= static_cast<double>(y.size());
    }
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double u = x[k] - ma;
        const double v = y[k] - mb;
        ab += u * v;
        aa += u * u;
        bb += v * v;
    }
    if (aa == 0.0 || bb == 0.0) {
        throw InvalidArgument("cc is undefined for a zero-norm volume");
    }
    return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

FscCurve fsc(const VoxelVolume& a, const VoxelVolume& b) {
    require_same_shape(a, b);
    const GridSpec& g = a.grid();
    if (!g.is_cube()) {
        throw ShapeMismatch("fsc needs cubic volumes");
    }
    const int n = g.n1;
    const auto fa = fft_real(a.data(), dims_of(g));
    const auto fb = fft_real(b.data(), dims_of(g));
    const int shells = n / 2;
    std::vector<double> num(shells + 1, 0.0);
    std::vector<double> pa(shells + 1, 0.0);
    std::vector<double> pb(shells + 1, 0.0);
    std::vector<std::size_t> count(shells + 1, 0);
    std::size_t idx = 0;
    for (int k = 0; k < n; ++k) {
        const int fk = signed_freq(k, n);
        for (int j = 0; j < n; ++j) {
            const int fj = signed_freq(j, n);
            for (int i = 0; i < n; ++i, ++idx) {
                const int fi = signed_freq(i, n);
                const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(fi * fi + fj * fj + fk * fk))));
                if (r < 1 || r > shells) {
                    continue;
                }
                num[r] += (std::conj(fa[idx]) * fb[idx]).real();
                pa[r] += std::norm(fa[idx]);
                pb[r] += std::norm(fb[idx]);
                ++count[r];
            }
        }
    }
    FscCurve curve;
    curve.box = n;
    for (int r = 1; r <= shells; ++r) {
        const double denom = std::sqrt(pa[r] * pb[r]);
        curve.radii.push_back(r);
        curve.values.push_back(denom > 0.0 ? std::clamp(num[r] / denom, -1.0, 1.0) : 0.0);
        curve.shell_counts.push_back(count[r]);
    }
    return curve;
}

double fsc_resolution(const FscCurve& curve, double threshold, double voxel_size) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw InvalidArgument("fsc threshold must lie in (0, 1)");
    }
    const double nyquist = 1.0 / (2.0 * voxel_size);
    for (std::size_t s = 0; s < curve.values.size(); ++s) {
        if (curve.values[s] < threshold) {
            if (s == 0) {
                return curve.frequency(curve.radii[0], voxel_size);
            }
            const double v0 = curve.values[s - 1];
            const double v1 = curve.values[s];
            const double r0 = curve.radii[s - 1];
            const double r1 = curve.radii[s];
            const double r = r0 + (v0 - threshold) / (v0 - v1) * (r1 - r0);
            return r / (curve.box * voxel_size);
        }
    }
    return nyquist;
}

VoxelVolume circular_shift(const VoxelVolume& v, const std::array<int, 3>& shift) {
    const GridSpec& g = v.grid();
    VoxelVolume out(g);
    auto wrap = [](int x, int n) { return ((x % n) + n) % n; };
    for (int k = 0; k < g.n3; ++k) {
        const int kk = wrap(k + shift[2], g.n3);
        for (int j = 0; j < g.n2; ++j) {
            const int jj = wrap(j + shift[1], g.n2);
            for (int i = 0; i < g.n1; ++i) {
                out.at(wrap(i + shift[0], g.n1), jj, kk) = v.at(i, j, k);
            }
        }
    }
    return out;
}

Registration register_translation(const VoxelVolume& ref, const VoxelVolume& mov) {
    require_same_shape(ref, mov);
    const GridSpec& g = ref.grid();
    auto fr = fft_real(ref.data(), dims_of(g));
    const auto fm = fft_real(mov.data(), dims_of(g));
    // corr(s) = sum_x ref(x) mov(x + s)  <->  conj(R) M
    for (std::size_t k = 0; k < fr.size(); ++k) {
        fr[k] = std::conj(fr[k]) * fm[k];
    }
    fft_inplace(fr, dims_of(g), true);
    std::size_t best = 0;
    for (std::size_t k = 1; k < fr.size(); ++k) {
        if (fr[k].real() > fr[best].real()) {
            best = k;
        }
    }
    Registration reg;
    const int i = static_cast<int>(best % g.n1);
    const int j = static_cast<int>((best / g.n1) % g.n2);
    const int k = static_cast<int>(best / (static_cast<std::size_t>(g.n1) * g.n2));
    reg.shift = {signed_freq(i, g.n1), signed_freq(j, g.n2), signed_freq(k, g.n3)};
    reg.registered = circular_shift(mov, {-reg.shift[0], -reg.shift[1], -reg.shift[2]});
    return reg;
}

Image central_slice(const VoxelVolume& v, Axis axis) {
    const GridSpec& g = v.grid();
    if (!g.is_cube()) {
        throw ShapeMismatch("central slices need a cubic volume");
    }
    const int n = g.n1;
    const int c = n / 2;
    Image out(n);
    for (int b = 0; b < n; ++b) {
        for (int a = 0; a < n; ++a) {
            switch (axis) {
            case Axis::X:
                out.at(a, b) = v.at(c, a, b);
                break;
            case Axis::Y:
                out.at(a, b) = v.at(a, c, b);
                break;
            case Axis::Z:
                out.at(a, b) = v.at(a, b, c);
                break;
            }
        }
    }
    return out;
}

Image slice_spectrum_magnitude(const Image& slice) {
    const int n = slice.n();
    auto f = fft_real(slice.data(), {n, n});
    Image out(n);
    for (int b = 0; b < n; ++b) {
        for (int a = 0; a < n; ++a) {
            out.at((a + n / 2) % n, (b + n / 2) % n) = std::abs(f[static_cast<std::size_t>(b) * n + a]);
        }
    }
    return out;
}

Image central_slice_spectrum(const VoxelVolume& v, Axis axis) {
    Image mag = slice_spectrum_magnitude(central_slice(v, axis));
    for (double& x : mag.data()) {
        x = std::log1p(x);
    }
    return mag;
}

WedgeStats wedge_statistics(const Image& spectrum, double max_tilt_deg, double margin_deg, double min_radius) {
    const int n = spectrum.n();
    const double wedge_edge = 90.0 - max_tilt_deg;
    WedgeStats st;
    double wsum = 0.0;
    double ssum = 0.0;
    for (int b = 0; b < n; ++b) {
        const int kz = b - n / 2;
        for (int a = 0; a < n; ++a) {
            const int kx = a - n / 2;
            const double r = std::hypot(kx, kz);
            if (r < min_radius || r > n / 2) {
                continue;
            }
            // angle from the kz axis, folded into [0, 90]
            const double ang = rad_to_deg(std::atan2(std::abs(kx), std::abs(kz)));
            if (ang < wedge_edge - margin_deg) {
                wsum += spectrum.at(a, b);
                ++st.wedge_count;
            } else if (ang > wedge_edge + margin_deg) {
                ssum += spectrum.at(a, b);
                ++st.sampled_count;
            }
        }
    }
    st.wedge_mean = st.wedge_count ? wsum / st.wedge_count : 0.0;
    st.sampled_mean = st.sampled_count ? ssum / st.sampled_count : 0.0;
    return st;
}

}  // namespace tiltfield
