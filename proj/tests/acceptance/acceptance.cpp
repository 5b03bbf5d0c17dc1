// Acceptance checks: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tiltfield/deform.hpp"
#include "tiltfield/io.hpp"
#include "tiltfield/metrics.hpp"
#include "tiltfield/neural_volume.hpp"
#include "tiltfield/recon.hpp"
#include "tiltfield/simulate.hpp"
#include "tiltfield/training.hpp"
#include "tiltfield_cli/cli.hpp"

using namespace tiltfield;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("criterion %d %s: %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    failures += pass ? 0 : 1;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---- 1 ----

void gradient_check() {
    const auto t0 = Clock::now();
    VolumeSpec spec;
    spec.encoding.levels = 4;
    spec.encoding.features = 2;
    spec.encoding.log2_table_size = 10;
    spec.encoding.min_resolution = 4;
    spec.encoding.max_resolution = 16;
    spec.network.hidden_layers = 2;
    spec.network.hidden_width = 16;
    spec.precision = Precision::F64;
    const ParamLayout layout = make_layout(spec);
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> params(layout.total);
    for (double& p : params) {
        p = u(rng);
    }
    const NeuralVolume base(spec, params);
    const double h = 1e-4;
    const ParamBlock::Kind kinds[3] = {ParamBlock::Kind::HashTable, ParamBlock::Kind::Weight, ParamBlock::Kind::Bias};
    const char* names[3] = {"table", "weight", "bias"};
    double worst[3] = {0.0, 0.0, 0.0};
    int probes[3] = {0, 0, 0};
    int kinks = 0;
    for (int c = 0; c < 3; ++c) {
        std::vector<std::size_t> members;
        for (const ParamBlock& b : layout.blocks) {
            if (b.kind == kinds[c]) {
                for (std::size_t k = 0; k < b.size; ++k) {
                    members.push_back(b.offset + k);
                }
            }
        }
        while (probes[c] < 100) {
            const Vec3 x(u(rng), u(rng), u(rng));
            const std::vector<Vec3> pts{x};
            const std::vector<double> up{1.0};
            const std::vector<double> grad = base.gradient(pts, up);
            std::vector<std::size_t> active;
            for (std::size_t k : members) {
                if (grad[k] != 0.0) {
                    active.push_back(k);
                }
            }
            if (active.empty()) {
                continue;
            }
            const std::size_t k = active[std::uniform_int_distribution<std::size_t>(0, active.size() - 1)(rng)];
            std::vector<double> plus = params;
            std::vector<double> minus = params;
            plus[k] += h;
            minus[k] -= h;
            const double f_plus = NeuralVolume(spec, plus).density_at(x);
            const double f_minus = NeuralVolume(spec, minus).density_at(x);
            const double f0 = base.density_at(x);
            // A ReLU switching inside [-h, h] makes the one-sided slopes disagree; the
            // central difference is meaningless there, so such probes are redrawn.
            const double right = (f_plus - f0) / h;
            const double left = (f0 - f_minus) / h;
            if (std::abs(right - left) > 1e-2 * std::max({std::abs(right), std::abs(left), 1e-6})) {
                ++kinks;
                continue;
            }
            const double num = (f_plus - f_minus) / (2 * h);
            const double rel = std::abs(grad[k] - num) / std::max({std::abs(grad[k]), std::abs(num), 1e-12});
            worst[c] = std::max(worst[c], rel);
            ++probes[c];
        }
    }
    const double elapsed = seconds_since(t0);
    const bool pass = worst[0] < 1e-4 && worst[1] < 1e-4 && worst[2] < 1e-4 && elapsed < 120.0;
    report(1, pass,
           fmt("max rel err over 100 probes each: %s %.2e, %s %.2e, %s %.2e (< 1e-4); %d kink probes redrawn; "
               "%.1f s (< 120 s)",
               names[0], worst[0], names[1], worst[1], names[2], worst[2], kinks, elapsed));
}

// ---- 2 ----

void deformation_suite() {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double node_err = 0.0;
    for (Interpolation interp : {Interpolation::Bilinear, Interpolation::Bicubic}) {
        ControlGrid g(7, 5, interp);
        for (Vec2& d : g.displacements()) {
            d = Vec2(0.05 * u(rng), 0.05 * u(rng));
        }
        for (int i = 0; i < 7; ++i) {
            for (int j = 0; j < 5; ++j) {
                node_err = std::max(node_err, (displacement_at(g, g.node_position(i, j)) - g.at(i, j)).norm());
            }
        }
    }

    double residual = 0.0;
    for (int t = 0; t < 20; ++t) {
        DeformParams g = DeformParams::identity(10, 10, Interpolation::Bilinear);
        g.tau = Vec2(0.1 * u(rng), 0.1 * u(rng));
        g.alpha = wrap_angle(0.01 * u(rng));
        for (Vec2& d : g.grid.displacements()) {
            d = Vec2(0.01 * u(rng), 0.01 * u(rng));
        }
        for (int q = 0; q < 50; ++q) {
            const Vec2 x(0.9 * u(rng), 0.9 * u(rng));
            const Vec2 z = forward_map(g, x);
            residual = std::max(residual, (forward_map(g, inverse_map(g, z, 1e-9, 100)) - z).norm());
        }
    }

    DeformParams r = DeformParams::identity(6, 6, Interpolation::Bicubic);
    r.tau = Vec2(0.03, -0.07);
    r.alpha = 0.3;
    for (Vec2& d : r.grid.displacements()) {
        d = Vec2(0.02 * u(rng), 0.02 * u(rng));
    }
    const RegularizerWeights w{0.4, 1.7, 2.3};
    double mesh = 0.0;
    for (int a = 0; a < 10; ++a) {
        for (int b = 0; b < 10; ++b) {
            mesh += displacement_at(r.grid, Vec2(-1.0 + 2.0 * a / 9, -1.0 + 2.0 * b / 9)).squaredNorm();
        }
    }
    const double expected = 0.4 * 0.3 + 1.7 * r.tau.norm() + 2.3 * std::sqrt(mesh);
    const double term_err = std::abs(regularizer(r, w, 10) - expected);

    DeformParams wrap = DeformParams::identity(4, 4);
    wrap.alpha = 2 * kPi - 0.01;
    const double wrap_value = regularizer(wrap, {1.0, 1.0, 1.0}, 10);

    const bool pass = node_err < 1e-12 && residual < 1e-6 && term_err < 1e-12 && std::abs(wrap_value - 0.01) < 1e-12;
    report(2, pass,
           fmt("control-point err %.1e (< 1e-12); inverse residual %.1e (< 1e-6); regularizer term err %.1e "
               "(< 1e-12); wrap case %.12f (= 0.01)",
               node_err, residual, term_err, wrap_value));
}

// ---- 3 ----

std::vector<double> protocol_angles() {
    std::vector<double> out;
    for (double d : angle_range(-60, 60, 2)) {
        out.push_back(deg_to_rad(d));
    }
    return out;
}

void projector_and_fbp() {
    const int n = 32;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    VoxelVolume x(GridSpec::cube(n));
    for (double& v : x.data()) {
        v = u(rng);
    }
    TiltSeries y;
    for (double a : {-60.0, -35.0, -4.0, 0.0, 17.0, 48.0, 60.0}) {
        y.angles.push_back(deg_to_rad(a));
        y.images.emplace_back(n);
        for (double& v : y.images.back().data()) {
            v = u(rng);
        }
    }
    const TiltSeries px = project(x, y.angles, n);
    const VoxelVolume bty = backproject(y, x.grid());
    double lhs = 0.0;
    for (std::size_t m = 0; m < y.size(); ++m) {
        for (std::size_t k = 0; k < y.images[m].size(); ++k) {
            lhs += px.images[m].data()[k] * y.images[m].data()[k];
        }
    }
    double rhs = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        rhs += x.data()[k] * bty.data()[k];
    }
    const double adjoint = std::abs(lhs - rhs) / std::abs(lhs);

    const VoxelVolume phantom = make_phantom(PhantomKind::Blobs, GridSpec::cube(64), 7);
    const TiltSeries ts = project(phantom, protocol_angles(), 64);
    const auto t0 = Clock::now();
    const VoxelVolume rec = fbp(ts, phantom.grid());
    const double elapsed = seconds_since(t0);
    const double value = cc(rec, phantom);
    report(3, adjoint < 1e-3 && value >= 0.7 && elapsed < 60.0,
           fmt("adjoint rel err %.2e on 32^3 (< 1e-3); fbp cc %.4f (>= 0.7) in %.2f s (< 60 s)", adjoint, value,
               elapsed));
}

// ---- 4 to 8 share one simulation ----

struct Scenario {
    VoxelVolume phantom;
    GroundTruth gt;
    std::optional<TrainResult> result;
    double train_seconds = 0.0;
};

constexpr int kSize = 64;

SimProtocol scenario_protocol() {
    SimProtocol p;
    p.max_shift_px = 3.0;
    p.max_rotation_deg = 0.01;
    p.max_local_px = 1.0;
    p.snr_db = 10.0;
    p.seed = 11;
    return p;
}

TrainConfig scenario_config() {
    TrainConfig c;
    c.epochs = 300;
    c.pixels_per_projection = 500;
    c.n_samples = 32;
    c.lr_shift = 5e-3;
    c.volume.network.hidden_width = 32;
    c.volume.precision = Precision::F32;
    c.seed = 3;
    return c;
}

void snr_targeting(const GroundTruth& gt) {
    double worst = 0.0;
    double lo = 1e9;
    double hi = -1e9;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const TiltSeries noisy = add_noise_to_snr(gt.clean_deformed_ts, 10.0, 1000 + seed);
        const double snr = measure_snr(gt.clean_deformed_ts, noisy);
        worst = std::max(worst, std::abs(snr - 10.0));
        lo = std::min(lo, snr);
        hi = std::max(hi, snr);
    }
    report(4, worst <= 0.1, fmt("measured SNR over 20 seeds in [%.4f, %.4f] dB, max deviation %.4f (<= 0.1)", lo, hi,
                                worst));
}

double shift_rmse_px(const std::vector<DeformParams>& est, const std::vector<DeformParams>& truth) {
    double se = 0.0;
    for (std::size_t m = 0; m < est.size(); ++m) {
        se += (est[m].tau - truth[m].tau).squaredNorm();
    }
    return std::sqrt(se / est.size()) * kSize / 2.0;
}

void end_to_end(Scenario& s) {
    const GridSpec grid = s.phantom.grid();
    const VoxelVolume nn = s.result->volume.export_grid(grid);
    const VoxelVolume nn_reg = register_translation(s.phantom, nn).registered;
    const VoxelVolume fbp_def = fbp(s.gt.noisy_ts, grid);
    const VoxelVolume fbp_def_reg = register_translation(s.phantom, fbp_def).registered;
    const TiltSeries aligned = align_series(s.gt.noisy_ts, s.result->gammas);
    const VoxelVolume fbp_aligned = fbp(aligned, grid);
    const VoxelVolume fbp_und = fbp(s.gt.noisy_undeformed_ts, grid);

    // 5
    const double rmse = shift_rmse_px(s.result->gammas, s.gt.gammas_true);
    const double cc_nn = cc(nn_reg, s.phantom);
    const double cc_def = cc(fbp_def_reg, s.phantom);
    const bool time_ok = s.train_seconds <= 30 * 60;
    report(5, rmse < 0.5 && cc_nn >= cc_def + 0.10 && cc_nn >= 0.75 && time_ok,
           fmt("(a) shift RMSE %.3f px (< 0.5); (b) cc nn %.4f vs fbp deformed %.4f, margin %.4f (>= 0.10); "
               "(c) cc nn %.4f (>= 0.75); training %.0f s (<= 1800 s)",
               rmse, cc_nn, cc_def, cc_nn - cc_def, cc_nn, s.train_seconds));

    // 6
    const double cc_al = cc(fbp_aligned, s.phantom);
    const double cc_und = cc(fbp_und, s.phantom);
    report(6, std::abs(cc_al - cc_und) <= 0.05,
           fmt("cc fbp(aligned with estimate) %.4f vs fbp(undeformed noisy) %.4f, |diff| %.4f (<= 0.05)", cc_al,
               cc_und, std::abs(cc_al - cc_und)));

    // 7
    const WedgeStats wn = wedge_statistics(slice_spectrum_magnitude(central_slice(nn, Axis::Y)), 60.0);
    const WedgeStats wf = wedge_statistics(slice_spectrum_magnitude(central_slice(fbp_aligned, Axis::Y)), 60.0);
    report(7, wn.wedge_mean > wf.wedge_mean && wn.wedge_mean < wn.sampled_mean && wf.wedge_mean < wf.sampled_mean,
           fmt("wedge mean nn %.4g > fbp %.4g; nn wedge %.4g < sampled %.4g; fbp wedge %.4g < sampled %.4g",
               wn.wedge_mean, wf.wedge_mean, wn.wedge_mean, wn.sampled_mean, wf.wedge_mean, wf.sampled_mean));

    // 8
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 1.0);
    VoxelVolume a(GridSpec::cube(kSize));
    VoxelVolume b(GridSpec::cube(kSize));
    for (double& v : a.data()) {
        v = g(rng);
    }
    for (double& v : b.data()) {
        v = g(rng);
    }
    VoxelVolume neg = a;
    for (double& v : neg.data()) {
        v = -v;
    }
    double self_err = 0.0;
    for (double v : fsc(a, a).values) {
        self_err = std::max(self_err, std::abs(v - 1.0));
    }
    double flip_err = 0.0;
    for (double v : fsc(a, neg).values) {
        flip_err = std::max(flip_err, std::abs(v + 1.0));
    }
    const FscCurve null = fsc(a, b);
    std::size_t inside = 0;
    for (std::size_t k = 0; k < null.values.size(); ++k) {
        inside += std::abs(null.values[k]) < 3.0 / std::sqrt(static_cast<double>(null.shell_counts[k])) ? 1 : 0;
    }
    const double null_frac = static_cast<double>(inside) / null.values.size();
    const FscCurve f_nn = fsc(s.phantom, nn_reg);
    const FscCurve f_def = fsc(s.phantom, fbp_def_reg);
    const std::size_t third = f_nn.values.size() / 3;
    std::size_t dominated = 0;
    double min_gap = 1e9;
    for (std::size_t k = 0; k < third; ++k) {
        dominated += f_nn.values[k] >= f_def.values[k] ? 1 : 0;
        min_gap = std::min(min_gap, f_nn.values[k] - f_def.values[k]);
    }
    report(8, self_err < 1e-10 && flip_err < 1e-10 && null_frac >= 0.95 && dominated == third,
           fmt("self err %.1e, sign-flip err %.1e (< 1e-10); null shells inside 3/sqrt(count): %.0f%% (>= 95%%); "
               "nn FSC >= fbp-deformed FSC on %zu/%zu lowest shells (min gap %.4f)",
               self_err, flip_err, 100 * null_frac, dominated, third, min_gap));
}

// ---- 9 ----

struct RunHashes {
    std::map<std::string, std::string> hashes;
    int status = 0;
};

RunHashes pipeline(const fs::path& dir) {
    RunHashes out;
    std::ostringstream sink;
    auto step = [&](std::vector<std::string> args) {
        if (out.status == 0) {
            out.status = cli::run(args, sink, sink);
        }
    };
    const std::string d = dir.string();
    step({"simulate", "--size", "24", "--angles", "-60:60:10", "--seed", "5", "--workers", "2", "--out", d + "/sim"});
    step({"train", "--ts", d + "/sim/noisy.mrc", "--angles", d + "/sim/angles.tlt", "--epochs", "5", "--pixels", "200",
          "--levels", "4", "--log2-table", "12", "--hidden-width", "16", "--samples", "16", "--seed", "5",
          "--workers", "2", "--quiet", "--out", d + "/train"});
    step({"reconstruct", "--ts", d + "/sim/noisy.mrc", "--angles", d + "/sim/angles.tlt", "--gammas",
          d + "/train/gamma_est.json", "--workers", "2", "--out", d + "/rec"});
    step({"evaluate", "--ref", d + "/sim/gt.mrc", "--est", d + "/train/recon_nn.mrc", "--register", "--out",
          d + "/eval"});
    if (out.status != 0) {
        return out;
    }
    for (const char* stage : {"sim", "train", "rec", "eval"}) {
        for (const auto& entry : fs::directory_iterator(dir / stage)) {
            const std::string name = entry.path().filename().string();
            std::string key = std::string(stage) + "/" + name;
            if (name == "loss.csv") {
                // The last column is wall-clock time; every other column must match.
                std::ifstream in(entry.path());
                std::string line;
                std::string kept;
                while (std::getline(in, line)) {
                    kept += line.substr(0, line.rfind(',')) + "\n";
                }
                out.hashes[key + " (without wall_seconds)"] = sha256_hex(kept);
                continue;
            }
            out.hashes[key] = sha256_file(entry.path());
        }
    }
    return out;
}

void determinism() {
    // Both runs use the same directory: manifests record input paths, so a second
    // location would differ for reasons unrelated to determinism.
    const fs::path root = fs::temp_directory_path() / "tiltfield_acceptance_determinism";
    fs::remove_all(root);
    const RunHashes a = pipeline(root);
    fs::remove_all(root);
    const RunHashes b = pipeline(root);
    std::size_t differing = 0;
    for (const auto& [name, hash] : a.hashes) {
        const auto it = b.hashes.find(name);
        differing += (it == b.hashes.end() || it->second != hash) ? 1 : 0;
    }
    const bool pass = a.status == 0 && b.status == 0 && !a.hashes.empty() && a.hashes.size() == b.hashes.size() &&
                      differing == 0;
    report(9, pass,
           fmt("two pipeline runs (exit %d, %d): %zu output files hashed, %zu differ", a.status, b.status,
               a.hashes.size(), differing));
    fs::remove_all(root);
}

}  // namespace

int main() {
    gradient_check();
    deformation_suite();
    projector_and_fbp();

    Scenario s;
    s.phantom = make_phantom(PhantomKind::Blobs, GridSpec::cube(kSize), 7);
    s.gt = generate_ground_truth(s.phantom, scenario_protocol());
    snr_targeting(s.gt);

    const auto t0 = Clock::now();
    try {
        s.result.emplace(train(s.gt.noisy_ts, scenario_config()));
        s.train_seconds = seconds_since(t0);
        end_to_end(s);
    } catch (const TrainingDiverged& e) {
        for (int id : {5, 6, 7, 8}) {
            report(id, false, std::string("training diverged: ") + e.what());
        }
    }

    determinism();
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
