#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "tiltfield/metrics.hpp"
#include "tiltfield/recon.hpp"
#include "tiltfield/simulate.hpp"

namespace tiltfield {
namespace {

VoxelVolume random_volume(int n, std::uint64_t seed) {
    VoxelVolume v(GridSpec::cube(n));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& x : v.data()) {
        x = g(rng);
    }
    return v;
}

VoxelVolume scaled(const VoxelVolume& v, double s) {
    VoxelVolume out = v;
    for (double& x : out.data()) {
        x *= s;
    }
    return out;
}

TEST(Cc, Examples) {
    const VoxelVolume v = random_volume(8, 1);
    EXPECT_NEAR(cc(v, v), 1.0, 1e-12);
    EXPECT_NEAR(cc(v, scaled(v, 2.0)), 1.0, 1e-12);
    VoxelVolume a(GridSpec::cube(4));
    VoxelVolume b(GridSpec::cube(4));
    a.at(0, 0, 0) = 1.0;
    b.at(3, 3, 3) = 1.0;
    EXPECT_EQ(cc(a, b), 0.0);
    const VoxelVolume w = random_volume(8, 2);
    EXPECT_NEAR(cc(v, w), cc(w, v), 1e-12);
    EXPECT_GE(cc(v, w), -1.0);
    EXPECT_LE(cc(v, w), 1.0);
}

TEST(Cc, ErrorsAndMeanSubtraction) {
    const VoxelVolume v = random_volume(4, 3);
    EXPECT_THROW(cc(v, VoxelVolume(GridSpec::cube(4))), InvalidArgument);
    EXPECT_THROW(cc(v, random_volume(5, 3)), ShapeMismatch);
    VoxelVolume shifted = v;
    for (double& x : shifted.data()) {
        x += 10.0;
    }
    EXPECT_NEAR(cc(v, shifted, true), 1.0, 1e-12);
    EXPECT_LT(cc(v, shifted, false), 0.9);
}

TEST(Fsc, SelfAndSignFlip) {
    const VoxelVolume v = random_volume(16, 4);
    const FscCurve same = fsc(v, v);
    ASSERT_EQ(same.radii.size(), 8u);
    EXPECT_EQ(same.radii.front(), 1);
    EXPECT_EQ(same.radii.back(), 8);
    for (double x : same.values) {
        EXPECT_NEAR(x, 1.0, 1e-10);
    }
    for (double x : fsc(v, scaled(v, -1.0)).values) {
        EXPECT_NEAR(x, -1.0, 1e-10);
    }
}

TEST(Fsc, InvariantUnderGlobalScaling) {
    const VoxelVolume a = random_volume(12, 5);
    const VoxelVolume b = random_volume(12, 6);
    const FscCurve c1 = fsc(a, b);
    const FscCurve c2 = fsc(scaled(a, 3.5), scaled(b, 3.5));
    for (std::size_t k = 0; k < c1.values.size(); ++k) {
        EXPECT_NEAR(c1.values[k], c2.values[k], 1e-12);
    }
}

TEST(Fsc, WhiteNoiseNullDistribution) {
    const VoxelVolume a = random_volume(64, 7);
    const VoxelVolume b = random_volume(64, 8);
    const FscCurve c = fsc(a, b);
    int inside = 0;
    for (std::size_t k = 0; k < c.values.size(); ++k) {
        inside += std::abs(c.values[k]) < 3.0 / std::sqrt(static_cast<double>(c.shell_counts[k])) ? 1 : 0;
    }
    EXPECT_GE(inside, static_cast<int>(std::ceil(0.95 * c.values.size())));
}

TEST(Fsc, RequiresMatchingCubes) {
    EXPECT_THROW(fsc(random_volume(8, 1), random_volume(6, 1)), ShapeMismatch);
    EXPECT_THROW(fsc(VoxelVolume(GridSpec{4, 4, 6, 1.0}), VoxelVolume(GridSpec{4, 4, 6, 1.0})), ShapeMismatch);
}

FscCurve synthetic_curve(int box, const std::function<double(int)>& f) {
    FscCurve c;
    c.box = box;
    for (int r = 1; r <= box / 2; ++r) {
        c.radii.push_back(r);
        c.values.push_back(f(r));
        c.shell_counts.push_back(1);
    }
    return c;
}

TEST(FscResolution, Examples) {
    const double vs = 2.0;
    const FscCurve flat = synthetic_curve(64, [](int) { return 1.0; });
    EXPECT_DOUBLE_EQ(fsc_resolution(flat, 0.5, vs), 1.0 / (2 * vs));

    const FscCurve step = synthetic_curve(64, [](int r) { return r <= 10 ? 1.0 : 0.0; });
    EXPECT_NEAR(fsc_resolution(step, 0.5, vs), step.frequency(10, vs) + 0.5 / (64 * vs), 1e-12);

    // Logistic with its 0.5 crossing at r0; linear interpolation is exact at symmetric neighbours.
    const double r0 = 17.5;
    const FscCurve logistic = synthetic_curve(64, [&](int r) { return 1.0 / (1.0 + std::exp((r - r0) / 2.0)); });
    EXPECT_NEAR(fsc_resolution(logistic, 0.5, vs), r0 / (64 * vs), 1e-6);
}

TEST(Registration, IdentityAndLatticeShift) {
    const VoxelVolume ref = make_phantom(PhantomKind::Blobs, GridSpec::cube(24), 3);
    const Registration same = register_translation(ref, ref);
    EXPECT_EQ(same.shift, (std::array<int, 3>{0, 0, 0}));
    const VoxelVolume mov = circular_shift(ref, {3, -2, 5});
    const Registration r = register_translation(ref, mov);
    EXPECT_EQ(r.shift, (std::array<int, 3>{3, -2, 5}));
    EXPECT_EQ(r.registered.data(), ref.data());
    const Registration again = register_translation(ref, r.registered);
    EXPECT_EQ(again.shift, (std::array<int, 3>{0, 0, 0}));
}

TEST(Registration, RobustToZeroDbNoise) {
    const int n = 64;
    const VoxelVolume ref = make_phantom(PhantomKind::Blobs, GridSpec::cube(n), 5);
    double energy = 0.0;
    for (double x : ref.data()) {
        energy += x * x;
    }
    // At 0 dB the printed formula gives |noise|^2 = |signal|^2.
    const double sigma = std::sqrt(energy / ref.size());
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> pick(-6, 6);
    std::normal_distribution<double> g(0.0, sigma);
    int exact = 0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
        const std::array<int, 3> s{pick(rng), pick(rng), pick(rng)};
        VoxelVolume mov = circular_shift(ref, s);
        for (double& x : mov.data()) {
            x += g(rng);
        }
        exact += register_translation(ref, mov).shift == s ? 1 : 0;
    }
    EXPECT_GE(exact, 95);
}

TEST(CentralSlice, ConstantHasOnlyDc) {
    const int n = 16;
    const VoxelVolume v(GridSpec::cube(n), 2.0);
    const Image s = central_slice_spectrum(v, Axis::Y);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            if (i == n / 2 && j == n / 2) {
                EXPECT_NEAR(s.at(i, j), std::log1p(2.0 * n * n), 1e-10);
            } else {
                EXPECT_NEAR(s.at(i, j), 0.0, 1e-10);
            }
        }
    }
}

TEST(CentralSlice, SinusoidHasTwoPeaks) {
    const int n = 32;
    Image img(n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            img.at(i, j) = std::cos(2 * kPi * 5 * i / n);
        }
    }
    const Image mag = slice_spectrum_magnitude(img);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const bool peak = j == n / 2 && (i == n / 2 + 5 || i == n / 2 - 5);
            EXPECT_NEAR(mag.at(i, j), peak ? n * n / 2.0 : 0.0, 1e-9);
        }
    }
}

TEST(CentralSlice, PicksTheMiddlePlane) {
    const int n = 6;
    VoxelVolume v(GridSpec::cube(n));
    for (int k = 0; k < n; ++k) {
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                v.at(i, j, k) = 100 * i + 10 * j + k;
            }
        }
    }
    const Image y = central_slice(v, Axis::Y);
    EXPECT_EQ(y.at(2, 4), v.at(2, 3, 4));
    const Image x = central_slice(v, Axis::X);
    EXPECT_EQ(x.at(1, 5), v.at(3, 1, 5));
    const Image z = central_slice(v, Axis::Z);
    EXPECT_EQ(z.at(5, 0), v.at(5, 0, 3));
}

TEST(WedgeStatistics, SyntheticMask) {
    const int n = 32;
    Image spec(n, 0.0);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const double kx = i - n / 2;
            const double kz = j - n / 2;
            const double from_kz = std::atan2(std::abs(kx), std::abs(kz)) * 180.0 / kPi;
            spec.at(i, j) = from_kz < 30.0 ? 1.0 : 5.0;
        }
    }
    const WedgeStats w = wedge_statistics(spec, 60.0);
    EXPECT_DOUBLE_EQ(w.wedge_mean, 1.0);
    EXPECT_DOUBLE_EQ(w.sampled_mean, 5.0);
    EXPECT_GT(w.wedge_count, 0u);
    EXPECT_GT(w.sampled_count, w.wedge_count);
}

TEST(WedgeStatistics, FbpFromLimitedTiltsShowsMissingWedge) {
    const int n = 48;
    const VoxelVolume phantom = make_phantom(PhantomKind::Blobs, GridSpec::cube(n), 11);
    std::vector<double> angles;
    for (double d : angle_range(-60, 60, 2)) {
        angles.push_back(deg_to_rad(d));
    }
    const TiltSeries ts = project(phantom, angles, n);
    auto ratio = [&](FbpFilter filter) {
        FbpOptions opt;
        opt.filter = filter;
        const VoxelVolume rec = fbp(ts, phantom.grid(), opt);
        const WedgeStats w = wedge_statistics(slice_spectrum_magnitude(central_slice(rec, Axis::Y)), 60.0);
        return w.wedge_mean / w.sampled_mean;
    };
    EXPECT_LT(ratio(FbpFilter::Ramp), 0.10);
    // The Hann window lowers the sampled high frequencies, so the ratio lands near 10.1% on this phantom.
    EXPECT_LT(ratio(FbpFilter::RampHann), 0.12);
}

}  // namespace
}  // namespace tiltfield
