#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "tiltfield/deform.hpp"

namespace tiltfield {
namespace {

ControlGrid random_grid(int n1, int n2, Interpolation interp, double scale, std::uint64_t seed) {
    ControlGrid g(n1, n2, interp);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (Vec2& d : g.displacements()) {
        d = Vec2(u(rng), u(rng));
    }
    return g;
}

TEST(ControlGrid, RejectsTooFewNodes) {
    EXPECT_THROW(ControlGrid(1, 4), InvalidArgument);
}

TEST(DisplacementAt, ExactAtControlPoints) {
    for (Interpolation interp : {Interpolation::Bilinear, Interpolation::Bicubic}) {
        const ControlGrid g = random_grid(5, 4, interp, 0.1, 1);
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 4; ++j) {
                EXPECT_NEAR((displacement_at(g, g.node_position(i, j)) - g.at(i, j)).norm(), 0.0, 1e-15);
            }
        }
    }
}

TEST(DisplacementAt, BilinearMidpointIsMean) {
    const ControlGrid g = random_grid(4, 4, Interpolation::Bilinear, 0.1, 2);
    const Vec2 x = 0.5 * (g.node_position(1, 2) + g.node_position(2, 2));
    EXPECT_NEAR((displacement_at(g, x) - 0.5 * (g.at(1, 2) + g.at(2, 2))).norm(), 0.0, 1e-15);
}

TEST(DisplacementAt, BicubicReproducesQuadraticsInInterior) {
    ControlGrid g(9, 9, Interpolation::Bicubic);
    auto field = [](const Vec2& x) {
        return Vec2(0.3 * x[0] * x[0] - 0.2 * x[0] * x[1] + 0.1 * x[1] + 0.05,
                    -0.1 * x[1] * x[1] + 0.4 * x[0] * x[1] - 0.3 * x[0]);
    };
    for (int i = 0; i < 9; ++i) {
        for (int j = 0; j < 9; ++j) {
            g.at(i, j) = field(g.node_position(i, j));
        }
    }
    std::mt19937_64 rng(4);
    // One cell away from the border the stencil needs no clamped nodes.
    std::uniform_real_distribution<double> u(-0.75, 0.75);
    for (int t = 0; t < 200; ++t) {
        const Vec2 x(u(rng), u(rng));
        EXPECT_NEAR((displacement_at(g, x) - field(x)).norm(), 0.0, 1e-10);
    }
}

TEST(DisplacementAt, BicubicCubicErrorShrinksWithSpacing) {
    auto field = [](const Vec2& x) { return Vec2(x[0] * x[0] * x[0], x[1] * x[1] * x[0]); };
    auto max_err = [&](int n) {
        ControlGrid g(n, n, Interpolation::Bicubic);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                g.at(i, j) = field(g.node_position(i, j));
            }
        }
        double e = 0.0;
        for (int t = 0; t <= 20; ++t) {
            const Vec2 x(-0.5 + t * 0.05, 0.37);
            e = std::max(e, (displacement_at(g, x) - field(x)).norm());
        }
        return e;
    };
    const double coarse = max_err(9);
    const double fine = max_err(17);
    EXPECT_LT(fine, coarse / 6.0);
}

TEST(DisplacementAt, LinearInControlDisplacements) {
    for (Interpolation interp : {Interpolation::Bilinear, Interpolation::Bicubic}) {
        const ControlGrid a = random_grid(6, 5, interp, 0.1, 10);
        const ControlGrid b = random_grid(6, 5, interp, 0.1, 11);
        ControlGrid c(6, 5, interp);
        for (std::size_t k = 0; k < c.size(); ++k) {
            c.displacements()[k] = 2.0 * a.displacements()[k] - 0.7 * b.displacements()[k];
        }
        for (const Vec2 x : {Vec2(0.13, -0.42), Vec2(-0.9, 0.99), Vec2(0.5, 0.5)}) {
            const Vec2 expected = 2.0 * displacement_at(a, x) - 0.7 * displacement_at(b, x);
            EXPECT_NEAR((displacement_at(c, x) - expected).norm(), 0.0, 1e-12);
        }
    }
}

TEST(DisplacementAt, ClampsOutsideDomain) {
    const ControlGrid g = random_grid(4, 4, Interpolation::Bilinear, 0.1, 12);
    EXPECT_NEAR((displacement_at(g, Vec2(3.0, -5.0)) - g.at(3, 0)).norm(), 0.0, 1e-15);
}

TEST(ForwardMap, Examples) {
    DeformParams id = DeformParams::identity(4, 4);
    EXPECT_EQ(forward_map(id, Vec2(0.3, -0.8)), Vec2(0.3, -0.8));

    DeformParams shift = id;
    shift.tau = Vec2(0.1, 0.2);
    EXPECT_NEAR((forward_map(shift, Vec2(0, 0)) - Vec2(-0.1, -0.2)).norm(), 0.0, 1e-15);

    DeformParams rot = id;
    rot.alpha = kPi / 2;
    EXPECT_NEAR((forward_map(rot, Vec2(1, 0)) - Vec2(0, 1)).norm(), 0.0, 1e-15);
}

TEST(ForwardMap, AffineCaseInvertsInClosedForm) {
    DeformParams g = DeformParams::identity(3, 3);
    g.tau = Vec2(0.05, -0.13);
    g.alpha = 0.7;
    const Vec2 x(0.21, -0.66);
    const Vec2 z = forward_map(g, x);
    const Vec2 back = rotation2d(g.alpha).transpose() * (z + g.tau);
    EXPECT_NEAR((back - x).norm(), 0.0, 1e-12);
}

TEST(InverseMap, IdentityAndRigidRoundTrip) {
    DeformParams id = DeformParams::identity(4, 4);
    EXPECT_NEAR((inverse_map(id, Vec2(0.4, 0.1)) - Vec2(0.4, 0.1)).norm(), 0.0, 1e-15);

    DeformParams g = id;
    g.tau = Vec2(-0.2, 0.03);
    g.alpha = 5.9;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 50; ++t) {
        const Vec2 x(u(rng), u(rng));
        EXPECT_LT((inverse_map(g, forward_map(g, x)) - x).norm(), 1e-9);
    }
}

TEST(InverseMap, MatchesLongFixedPointOracle) {
    DeformParams g = DeformParams::identity(6, 6, Interpolation::Bicubic);
    g.grid = random_grid(6, 6, Interpolation::Bicubic, 0.014, 8);
    g.tau = Vec2(0.03, -0.01);
    g.alpha = 0.02;
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    const double tol = 1e-8;
    for (int t = 0; t < 50; ++t) {
        const Vec2 z(u(rng), u(rng));
        const Vec2 x = inverse_map(g, z, tol, 50);
        Vec2 oracle = rotation2d(g.alpha).transpose() * (z + g.tau);
        for (int it = 0; it < 10000; ++it) {
            oracle = rotation2d(g.alpha).transpose() * (z + g.tau) - displacement_at(g.grid, oracle);
        }
        // A residual below tol bounds the error by tol / (1 - L), L the contraction constant.
        EXPECT_LT((x - oracle).norm(), 2 * tol);
        EXPECT_LE((forward_map(g, x) - z).norm(), tol);
    }
}

TEST(InverseMap, NonConvergenceCarriesIterate) {
    DeformParams g = DeformParams::identity(4, 4);
    g.grid = random_grid(4, 4, Interpolation::Bilinear, 0.3, 13);
    try {
        inverse_map(g, Vec2(0.1, 0.2), 1e-14, 1);
        FAIL() << "expected InverseMapError";
    } catch (const InverseMapError& e) {
        EXPECT_GT(e.residual, 1e-14);
        EXPECT_TRUE(std::isfinite(e.last_iterate[0]));
    }
}

Image smooth_image(int n) {
    Image img(n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const double x = GridSpec::center(i, n);
            const double y = GridSpec::center(j, n);
            img.at(i, j) = std::sin(2.1 * x + 0.3) * std::cos(1.7 * y) + 0.5 * x * y;
        }
    }
    return img;
}

TEST(ResampleImage, IdentityIsBitwise) {
    const Image img = smooth_image(16);
    const DeformParams id = DeformParams::identity(4, 4);
    EXPECT_EQ(resample_image(img, id, ResampleMode::Apply), img);
}

TEST(ResampleImage, IntegerShiftMovesPixels) {
    const int n = 20;
    const Image img = smooth_image(n);
    DeformParams g = DeformParams::identity(4, 4);
    g.tau = Vec2(2.0 * 3 / n, -2.0 * 2 / n);
    const Image out = resample_image(img, g, ResampleMode::Apply);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const int si = i - 3;
            const int sj = j + 2;
            if (si >= 0 && si < n && sj >= 0 && sj < n) {
                EXPECT_NEAR(out.at(i, j), img.at(si, sj), 1e-12);
            }
        }
    }
    EXPECT_EQ(out.at(0, 5), 0.0);
}

TEST(ResampleImage, UndoInvertsApplyOnSmoothImage) {
    const int n = 64;
    const Image img = smooth_image(n);
    DeformParams g = DeformParams::identity(5, 5);
    g.grid = random_grid(5, 5, Interpolation::Bilinear, 0.01, 14);
    g.tau = Vec2(0.021, -0.034);
    g.alpha = 0.01;
    const Image back = resample_image(resample_image(img, g, ResampleMode::Apply), g, ResampleMode::Undo);
    // Bilinear error bound h^2/8 * max|f''| with h = 2/n and |f''| <= 2.1^2 + 1.7^2.
    const double h = 2.0 / n;
    const double bound = h * h / 8.0 * (2.1 * 2.1 + 1.7 * 1.7 + 1.0);
    double worst = 0.0;
    for (int j = 8; j < n - 8; ++j) {
        for (int i = 8; i < n - 8; ++i) {
            worst = std::max(worst, std::abs(back.at(i, j) - img.at(i, j)));
        }
    }
    EXPECT_LT(worst, 2.0 * 2.0 * bound);
}

TEST(SampleImage, ReadsPixelCentersAndZeroOutside) {
    const Image img = smooth_image(8);
    EXPECT_DOUBLE_EQ(sample_image(img, Vec2(GridSpec::center(3, 8), GridSpec::center(5, 8))), img.at(3, 5));
    EXPECT_EQ(sample_image(img, Vec2(1.5, 0.0)), 0.0);
}

TEST(DeformationNorm, Examples) {
    ControlGrid g(4, 4);
    EXPECT_EQ(deformation_norm(g, 10), 0.0);
    for (Vec2& d : g.displacements()) {
        d = Vec2(0.1, 0.0);
    }
    EXPECT_NEAR(deformation_norm(g, 5), 0.5, 1e-12);
}

TEST(DeformationNorm, MatchesDirectSum) {
    const ControlGrid g = random_grid(7, 5, Interpolation::Bicubic, 0.05, 15);
    const int p = 10;
    double sum = 0.0;
    for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) {
            const Vec2 x(-1.0 + 2.0 * a / (p - 1), -1.0 + 2.0 * b / (p - 1));
            sum += displacement_at(g, x).squaredNorm();
        }
    }
    EXPECT_NEAR(deformation_norm(g, p), std::sqrt(sum), 1e-12);
}

TEST(Regularizer, Examples) {
    DeformParams id = DeformParams::identity(4, 4);
    EXPECT_EQ(regularizer(id, {3.0, 2.0, 1.0}), 0.0);

    DeformParams g = id;
    g.alpha = 2 * kPi - 0.01;
    EXPECT_NEAR(regularizer(g, {1.0, 1.0, 1.0}), 0.01, 1e-12);
}

TEST(Regularizer, TermByTermAndWrapInvariant) {
    DeformParams g = DeformParams::identity(5, 5);
    g.grid = random_grid(5, 5, Interpolation::Bilinear, 0.05, 16);
    g.tau = Vec2(0.3, -0.4);
    g.alpha = 0.2;
    const RegularizerWeights w{0.5, 2.0, 3.0};
    const double expected = 0.5 * 0.2 + 2.0 * 0.5 + 3.0 * deformation_norm(g.grid, 10);
    EXPECT_NEAR(regularizer(g, w), expected, 1e-12);
    DeformParams h = g;
    h.alpha += 2 * kPi;
    EXPECT_NEAR(regularizer(h, w), regularizer(g, w), 1e-12);
}

TEST(Regularizer, GradientMatchesFiniteDifferences) {
    DeformParams g = DeformParams::identity(4, 4);
    g.grid = random_grid(4, 4, Interpolation::Bicubic, 0.05, 17);
    g.tau = Vec2(0.03, -0.02);
    g.alpha = 6.1;
    const RegularizerWeights w{0.7, 1.3, 2.1};
    DeformGradient grad(g.grid.size());
    const double value = regularizer_with_gradient(g, w, 10, grad);
    EXPECT_NEAR(value, regularizer(g, w, 10), 1e-14);
    const double eps = 1e-6;
    auto fd = [&](auto&& mutate) {
        DeformParams p = g;
        DeformParams m = g;
        mutate(p, eps);
        mutate(m, -eps);
        return (regularizer(p, w, 10) - regularizer(m, w, 10)) / (2 * eps);
    };
    EXPECT_NEAR(grad.alpha, fd([](DeformParams& q, double e) { q.alpha += e; }), 1e-7);
    EXPECT_NEAR(grad.tau[0], fd([](DeformParams& q, double e) { q.tau[0] += e; }), 1e-7);
    EXPECT_NEAR(grad.tau[1], fd([](DeformParams& q, double e) { q.tau[1] += e; }), 1e-7);
    for (std::size_t k = 0; k < g.grid.size(); ++k) {
        for (int c = 0; c < 2; ++c) {
            const double num = fd([&](DeformParams& q, double e) { q.grid.displacements()[k][c] += e; });
            EXPECT_NEAR(grad.grid[k][c], num, 1e-7);
        }
    }
}

TEST(Regularizer, SubgradientAtIdentityIsZero) {
    const DeformParams id = DeformParams::identity(3, 3);
    DeformGradient grad(id.grid.size());
    EXPECT_EQ(regularizer_with_gradient(id, {1, 1, 1}, 10, grad), 0.0);
    EXPECT_EQ(grad.alpha, 0.0);
    EXPECT_EQ(grad.tau, Vec2::Zero());
    for (const Vec2& d : grad.grid) {
        EXPECT_EQ(d, Vec2::Zero());
    }
}

TEST(DeformParams, WrapAndJsonRoundTrip) {
    EXPECT_NEAR(wrap_angle(-0.5), 2 * kPi - 0.5, 1e-15);
    EXPECT_NEAR(wrap_angle(7.0), 7.0 - 2 * kPi, 1e-15);
    DeformParams g = DeformParams::identity(3, 4, Interpolation::Bicubic);
    g.grid = random_grid(3, 4, Interpolation::Bicubic, 0.05, 18);
    g.tau = Vec2(0.1, 1.0 / 3.0);
    g.alpha = 0.123456789012345;
    const nlohmann::json j = g;
    const DeformParams back = nlohmann::json::parse(j.dump()).get<DeformParams>();
    EXPECT_EQ(back, g);
    EXPECT_TRUE(DeformParams::identity(2, 2).is_identity());
    EXPECT_FALSE(g.is_identity());
}

TEST(Interpolation, NamesRoundTrip) {
    EXPECT_EQ(interpolation_from_string(to_string(Interpolation::Bicubic)), Interpolation::Bicubic);
    EXPECT_EQ(interpolation_from_string(to_string(Interpolation::Bilinear)), Interpolation::Bilinear);
    EXPECT_THROW(interpolation_from_string("spline"), InvalidArgument);
}

}  // namespace
}  // namespace tiltfield
