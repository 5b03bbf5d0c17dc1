#include "tiltfield/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "tiltfield/error.hpp"
#include "tiltfield/io.hpp"
#include "tiltfield/parallel.hpp"
#include "tiltfield/rng.hpp"

namespace tiltfield {

namespace {

constexpr std::uint64_t kDeformStream = 0x1000;
constexpr std::uint64_t kNoiseStream = 0x2000;
constexpr std::uint64_t kUndeformedNoiseStream = 0x3000;
constexpr std::uint64_t kPhantomStream = 0x4000;
constexpr int kProbeMesh = 256;
constexpr double kProbeMargin = 0.95;

struct Ellipsoid {
    Vec3 center;
    Vec3 axes;
    double phi_deg;
    double value;
};

// Modified (higher contrast) 3-D Shepp-Logan head.
const Ellipsoid kShepp[] = {
    {{0.0, 0.0, 0.0}, {0.69, 0.92, 0.81}, 0.0, 1.0},
    {{0.0, -0.0184, 0.0}, {0.6624, 0.874, 0.78}, 0.0, -0.8},
    {{0.22, 0.0, 0.0}, {0.11, 0.31, 0.22}, -18.0, -0.2},
    {{-0.22, 0.0, 0.0}, {0.16, 0.41, 0.28}, 18.0, -0.2},
    {{0.0, 0.35, -0.15}, {0.21, 0.25, 0.41}, 0.0, 0.1},
    {{0.0, 0.1, 0.25}, {0.046, 0.046, 0.05}, 0.0, 0.1},
    {{0.0, -0.1, 0.25}, {0.046, 0.046, 0.05}, 0.0, 0.1},
    {{-0.08, -0.605, 0.0}, {0.046, 0.023, 0.05}, 0.0, 0.1},
    {{0.0, -0.606, 0.0}, {0.023, 0.023, 0.02}, 0.0, 0.1},
    {{0.06, -0.605, 0.0}, {0.023, 0.046, 0.02}, 0.0, 0.1},
};

Mat3 random_rotation(Rng& rng) {
    std::normal_distribution<double> normal;
    Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
    q.normalize();
    return q.toRotationMatrix();
}

VoxelVolume blobs(const GridSpec& grid, std::uint64_t seed, int count) {
    Rng rng = make_rng(seed, kPhantomStream);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal;
    struct Blob {
        Vec3 center;
        Mat3 precision;
        double amplitude;
    };
    std::vector<Blob> list;
    for (int b = 0; b < count; ++b) {
        Vec3 dir(normal(rng), normal(rng), normal(rng));
        dir.normalize();
        const double radius = 0.5 * std::cbrt(unit(rng));
        const Vec3 sigma(0.05 + 0.1 * unit(rng), 0.05 + 0.1 * unit(rng), 0.05 + 0.1 * unit(rng));
        const Mat3 rot = random_rotation(rng);
        const Mat3 inv = rot * sigma.cwiseInverse().cwiseAbs2().asDiagonal() * rot.transpose();
        list.push_back({radius * dir, inv, 0.5 + 0.5 * unit(rng)});
    }
    VoxelVolume v(grid);
    for (int k = 0; k < grid.n3; ++k) {
        for (int j = 0; j < grid.n2; ++j) {
            for (int i = 0; i < grid.n1; ++i) {
                const Vec3 x = grid.voxel_center(i, j, k);
                double sum = 0.0;
                for (const Blob& b : list) {
                    const Vec3 d = x - b.center;
                    sum += b.amplitude * std::exp(-0.5 * d.dot(b.precision * d));
                }
                v.at(i, j, k) = sum;
            }
        }
    }
    return v;
}

VoxelVolume shepp(const GridSpec& grid) {
    VoxelVolume v(grid);
    for (int k = 0; k < grid.n3; ++k) {
        for (int j = 0; j < grid.n2; ++j) {
            for (int i = 0; i < grid.n1; ++i) {
                const Vec3 x = grid.voxel_center(i, j, k);
                double sum = 0.0;
                for (const Ellipsoid& e : kShepp) {
                    const double phi = deg_to_rad(e.phi_deg);
                    const double c = std::cos(phi);
                    const double s = std::sin(phi);
                    const Vec3 d = x - e.center;
                    const double u = c * d[0] + s * d[1];
                    const double w = -s * d[0] + c * d[1];
                    const double r = (u / e.axes[0]) * (u / e.axes[0]) + (w / e.axes[1]) * (w / e.axes[1]) +
                                     (d[2] / e.axes[2]) * (d[2] / e.axes[2]);
                    if (r <= 1.0) {
                        sum += e.value;
                    }
                }
                v.at(i, j, k) = std::max(sum, 0.0);
            }
        }
    }
    return v;
}

VoxelVolume from_file(const GridSpec& grid, const std::filesystem::path& path) {
    VoxelVolume src = read_volume(path);
    const GridSpec& g = src.grid();
    if (g.n1 == grid.n1 && g.n2 == grid.n2 && g.n3 == grid.n3) {
        VoxelVolume out(grid);
        out.data() = src.data();
        return out;
    }
    VoxelVolume out(grid);
    VoxelSampler sampler(src);
    for (int k = 0; k < grid.n3; ++k) {
        for (int j = 0; j < grid.n2; ++j) {
            for (int i = 0; i < grid.n1; ++i) {
                out.at(i, j, k) = sampler(grid.voxel_center(i, j, k));
            }
        }
    }
    return out;
}

double probe_sup_norm(const ControlGrid& grid) {
    double sup = 0.0;
    for (int a = 0; a < kProbeMesh; ++a) {
        for (int b = 0; b < kProbeMesh; ++b) {
            const Vec2 x(-1.0 + 2.0 * a / (kProbeMesh - 1), -1.0 + 2.0 * b / (kProbeMesh - 1));
            sup = std::max(sup, displacement_at(grid, x).norm());
        }
    }
    return sup;
}

Vec2 uniform_disc(Rng& rng, double radius) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double r = radius * std::sqrt(unit(rng));
    const double t = 2.0 * kPi * unit(rng);
    return {r * std::cos(t), r * std::sin(t)};
}

}  // namespace

std::vector<double> angle_range(double first_deg, double last_deg, double step_deg) {
    if (!(step_deg > 0.0) || last_deg < first_deg) {
        throw InvalidArgument("angle range needs step > 0 and last >= first");
    }
    std::vector<double> out;
    const int count = static_cast<int>(std::floor((last_deg - first_deg) / step_deg + 1e-9)) + 1;
    for (int k = 0; k < count; ++k) {
        out.push_back(first_deg + k * step_deg);
    }
    return out;
}

std::string to_string(SnrDefinition d) { return d == SnrDefinition::Squared ? "squared" : "power"; }

SnrDefinition snr_definition_from_string(const std::string& name) {
    if (name == "squared") {
        return SnrDefinition::Squared;
    }
    if (name == "power") {
        return SnrDefinition::Power;
    }
    throw InvalidArgument("unknown SNR definition '" + name + "'");
}

SimProtocol SimProtocol::scaled_for(int detector_n) {
    SimProtocol p;
    const double scale = static_cast<double>(detector_n) / kReferenceSize;
    p.max_shift_px *= scale;
    p.max_local_px *= scale;
    return p;
}

std::vector<double> SimProtocol::angles_rad() const {
    std::vector<double> out;
    for (double d : angles_deg) {
        out.push_back(deg_to_rad(d));
    }
    return out;
}

void SimProtocol::validate() const {
    if (angles_deg.empty()) {
        throw InvalidArgument("protocol needs at least one angle");
    }
    for (std::size_t k = 1; k < angles_deg.size(); ++k) {
        if (!(angles_deg[k] > angles_deg[k - 1])) {
            throw InvalidArgument("protocol angles must be strictly increasing");
        }
    }
    if (max_shift_px < 0.0 || max_rotation_deg < 0.0 || max_local_px < 0.0) {
        throw InvalidArgument("protocol bounds must be non-negative");
    }
    if (truth_grid < 2) {
        throw InvalidArgument("truth control grid needs at least 2 points per axis");
    }
}

void to_json(nlohmann::json& j, const SimProtocol& p) {
    j = {{"angles_deg", p.angles_deg},
         {"max_shift_px", p.max_shift_px},
         {"max_rotation_deg", p.max_rotation_deg},
         {"max_local_px", p.max_local_px},
         {"truth_grid", p.truth_grid},
         {"truth_interp", to_string(p.truth_interp)},
         {"snr_db", std::isinf(p.snr_db) ? nlohmann::json("inf") : nlohmann::json(p.snr_db)},
         {"snr_definition", to_string(p.snr_definition)},
         {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, SimProtocol& p) {
    SimProtocol s;
    s.angles_deg = j.value("angles_deg", s.angles_deg);
    s.max_shift_px = j.value("max_shift_px", s.max_shift_px);
    s.max_rotation_deg = j.value("max_rotation_deg", s.max_rotation_deg);
    s.max_local_px = j.value("max_local_px", s.max_local_px);
    s.truth_grid = j.value("truth_grid", s.truth_grid);
    s.truth_interp = interpolation_from_string(j.value("truth_interp", to_string(s.truth_interp)));
    if (j.contains("snr_db")) {
        const auto& v = j.at("snr_db");
        s.snr_db = v.is_string() ? std::numeric_limits<double>::infinity() : v.get<double>();
    }
    s.snr_definition = snr_definition_from_string(j.value("snr_definition", to_string(s.snr_definition)));
    s.seed = j.value("seed", s.seed);
    s.validate();
    p = s;
}

std::string to_string(PhantomKind kind) {
    switch (kind) {
    case PhantomKind::Blobs:
        return "blobs";
    case PhantomKind::Shepp3d:
        return "shepp3d";
    case PhantomKind::File:
        return "file";
    }
    return "blobs";
}

PhantomKind phantom_kind_from_string(const std::string& name) {
    if (name == "blobs") {
        return PhantomKind::Blobs;
    }
    if (name == "shepp3d") {
        return PhantomKind::Shepp3d;
    }
    if (name == "file") {
        return PhantomKind::File;
    }
    throw InvalidArgument("unknown phantom '" + name + "'");
}

VoxelVolume make_phantom(PhantomKind kind, const GridSpec& grid, std::uint64_t seed, const PhantomOptions& options) {
    grid.validate();
    switch (kind) {
    case PhantomKind::Blobs:
        return blobs(grid, seed, options.blob_count);
    case PhantomKind::Shepp3d:
        return shepp(grid);
    case PhantomKind::File:
        return from_file(grid, options.file);
    }
    throw InvalidArgument("unknown phantom kind");
}

std::vector<DeformParams> sample_deformations(const SimProtocol& protocol, int detector_n) {
    protocol.validate();
    const double px = 2.0 / detector_n;
    const double max_shift = protocol.max_shift_px * px;
    const double max_rot = deg_to_rad(protocol.max_rotation_deg);
    const double max_local = protocol.max_local_px * px;
    std::vector<DeformParams> out;
    for (std::size_t m = 0; m < protocol.angles_deg.size(); ++m) {
        Rng rng = make_rng(protocol.seed, kDeformStream + m);
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        DeformParams g = DeformParams::identity(protocol.truth_grid, protocol.truth_grid, protocol.truth_interp);
        if (max_shift > 0.0) {
            g.tau = uniform_disc(rng, max_shift);
        }
        if (max_rot > 0.0) {
            g.alpha = wrap_angle(max_rot * unit(rng));
        }
        if (max_local > 0.0) {
            for (Vec2& d : g.grid.displacements()) {
                d = uniform_disc(rng, max_local);
            }
            // Interpolation can overshoot the nodes; pull the field back inside the bound.
            const double limit = kProbeMargin * max_local;
            const double sup = probe_sup_norm(g.grid);
            if (sup > limit) {
                for (Vec2& d : g.grid.displacements()) {
                    d *= limit / sup;
                }
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

double noise_variance_for_snr(double signal_energy, std::size_t count, double snr_db, SnrDefinition def) {
    const double divisor = def == SnrDefinition::Squared ? 20.0 : 10.0;
    return signal_energy * std::pow(10.0, -snr_db / divisor) / static_cast<double>(count);
}

TiltSeries add_noise_to_snr(const TiltSeries& series, double snr_db, std::uint64_t seed, SnrDefinition def) {
    if (std::isinf(snr_db) && snr_db > 0.0) {
        return series;
    }
    double energy = 0.0;
    std::size_t count = 0;
    for (const Image& img : series.images) {
        for (double v : img.data()) {
            energy += v * v;
        }
        count += img.size();
    }
    if (!(energy > 0.0)) {
        throw InvalidArgument("SNR is undefined for a zero-energy series");
    }
    const double sigma = std::sqrt(noise_variance_for_snr(energy, count, snr_db, def));
    TiltSeries out = series;
    for (std::size_t m = 0; m < out.size(); ++m) {
        Rng rng = make_rng(seed, m);
        std::normal_distribution<double> normal(0.0, sigma);
        for (double& v : out.images[m].data()) {
            v += normal(rng);
        }
    }
    return out;
}

double measure_snr(const TiltSeries& clean, const TiltSeries& noisy, SnrDefinition def) {
    if (clean.size() != noisy.size()) {
        throw ShapeMismatch("series differ in length");
    }
    double signal = 0.0;
    double noise = 0.0;
    for (std::size_t m = 0; m < clean.size(); ++m) {
        const auto& a = clean.images[m].data();
        const auto& b = noisy.images[m].data();
        if (a.size() != b.size()) {
            throw ShapeMismatch("series images differ in size");
        }
        for (std::size_t k = 0; k < a.size(); ++k) {
            signal += a[k] * a[k];
            noise += (b[k] - a[k]) * (b[k] - a[k]);
        }
    }
    const double factor = def == SnrDefinition::Squared ? 20.0 : 10.0;
    return -factor * std::log10(noise / signal);
}

GroundTruth generate_ground_truth(const VoxelVolume& volume, const SimProtocol& protocol,
                                  const RenderOptions& render) {
    protocol.validate();
    const GridSpec& grid = volume.grid();
    if (!grid.is_cube()) {
        throw ShapeMismatch("simulation needs a cubic volume");
    }
    const DetectorSpec detector{grid.n1};
    const std::vector<double> angles = protocol.angles_rad();
    const std::size_t m_count = angles.size();

    GroundTruth gt;
    gt.volume = volume;
    gt.gammas_true = sample_deformations(protocol, detector.n);

    gt.noiseless_ts.angles = angles;
    gt.noiseless_ts.images.resize(m_count);
    gt.clean_deformed_ts.angles = angles;
    gt.clean_deformed_ts.images.resize(m_count);

    RenderOptions inner = render;
    inner.workers = 1;
    VoxelSampler sampler(gt.volume);
    parallel_for(m_count, render.workers, [&](std::size_t begin, std::size_t end, int) {
        for (std::size_t m = begin; m < end; ++m) {
            gt.noiseless_ts.images[m] = render_projection(sampler, angles[m], detector, nullptr, inner);
            gt.clean_deformed_ts.images[m] =
                gt.gammas_true[m].is_identity()
                    ? gt.noiseless_ts.images[m]
                    : render_projection(sampler, angles[m], detector, &gt.gammas_true[m], inner);
        }
    });

    gt.noisy_ts = add_noise_to_snr(gt.clean_deformed_ts, protocol.snr_db, derive_seed(protocol.seed, kNoiseStream),
                                   protocol.snr_definition);
    gt.noisy_undeformed_ts = add_noise_to_snr(gt.noiseless_ts, protocol.snr_db,
                                              derive_seed(protocol.seed, kUndeformedNoiseStream),
                                              protocol.snr_definition);
    return gt;
}

}  // namespace tiltfield
