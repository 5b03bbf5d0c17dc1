#include "tiltfield_cli/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "tiltfield/error.hpp"
#include "tiltfield/io.hpp"
#include "tiltfield/metrics.hpp"
#include "tiltfield/neural_volume.hpp"
#include "tiltfield/parallel.hpp"
#include "tiltfield/recon.hpp"
#include "tiltfield/simulate.hpp"
#include "tiltfield/training.hpp"
#include "tiltfield/version.hpp"

namespace tiltfield::cli {

namespace {

// Parses "first:last:step" (degrees).
std::vector<double> parse_angle_range(const std::string& text) {
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) {
        try {
            std::size_t used = 0;
            parts.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception&) {
            throw InvalidArgument("bad angle range '" + text + "' (expected first:last:step)");
        }
    }
    if (parts.size() != 3) {
        throw InvalidArgument("bad angle range '" + text + "' (expected first:last:step)");
    }
    return angle_range(parts[0], parts[1], parts[2]);
}

double parse_snr(const std::string& text) {
    if (text == "inf" || text == "+inf") {
        return std::numeric_limits<double>::infinity();
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw InvalidArgument("bad SNR value '" + text + "'");
}

std::vector<std::string> reversed(const std::vector<std::string>& args) {
    return {args.rbegin(), args.rend()};
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError(IoError::Kind::Unwritable, "cannot create output directory " + dir.string());
    }
}

std::vector<double> to_radians(const std::vector<double>& degrees) {
    std::vector<double> out;
    for (double d : degrees) {
        out.push_back(deg_to_rad(d));
    }
    return out;
}

RunManifest base_manifest(const std::string& command) {
    RunManifest m;
    m.command = command;
    m.versions = {{"tiltfield", kVersion}};
    return m;
}

void hash_outputs(RunManifest& m, const fs::path& dir, const std::vector<std::string>& names) {
    for (const auto& name : names) {
        m.output_hashes[name] = sha256_file(dir / name);
    }
}

// Runs a parsed subcommand body and maps exceptions onto exit codes.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const TrainingDiverged& e) {
        err << "error: " << e.what() << "\n";
        return kDiverged;
    } catch (const ShapeMismatch& e) {
        err << "error: " << e.what() << "\n";
        return kShapeMismatch;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kIoError;
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << "\n";
        return kBadFlags;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

int parse(CLI::App& app, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        app.parse(reversed(args));
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return -1;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << "run with --help for usage\n";
        return kBadFlags;
    }
    return kOk;
}

}  // namespace

int cmd_simulate(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Simulate a deformed, noisy tilt series from a phantom", "tiltfield simulate"};
    std::string phantom = "blobs";
    std::string phantom_file;
    int size = 64;
    double voxel_size = 1.0;
    int blobs = 12;
    std::string angles = "-60:60:2";
    double max_shift_px = -1.0;
    double max_rot_deg = 0.01;
    double max_local_px = -1.0;
    int truth_grid = 5;
    std::string truth_interp = "bicubic";
    std::string snr = "10";
    std::string snr_definition = "squared";
    std::uint64_t seed = 0;
    int samples = 0;
    int workers = default_workers();
    std::string out_dir;
    app.add_option("--phantom", phantom, "blobs, shepp3d or file")->check(CLI::IsMember({"blobs", "shepp3d", "file"}));
    app.add_option("--phantom-file", phantom_file, "MRC volume for --phantom file");
    app.add_option("--size", size, "volume and detector size")->check(CLI::Range(2, 4096));
    app.add_option("--voxel-size", voxel_size, "physical voxel size")->check(CLI::PositiveNumber);
    app.add_option("--blobs", blobs, "number of blobs")->check(CLI::NonNegativeNumber);
    app.add_option("--angles", angles, "first:last:step in degrees");
    app.add_option("--max-shift-px", max_shift_px, "shift bound in pixels (default 12 * size / 512)");
    app.add_option("--max-rot-deg", max_rot_deg, "in-plane rotation bound in degrees")->check(CLI::NonNegativeNumber);
    app.add_option("--max-local-px", max_local_px, "local displacement bound in pixels (default 2 * size / 512)");
    app.add_option("--truth-grid", truth_grid, "control points per axis of the true field")->check(CLI::Range(2, 1000));
    app.add_option("--truth-interp", truth_interp, "bilinear or bicubic")->check(CLI::IsMember({"bilinear", "bicubic"}));
    app.add_option("--snr-db", snr, "target SNR in dB, or inf");
    app.add_option("--snr-definition", snr_definition, "squared or power")->check(CLI::IsMember({"squared", "power"}));
    app.add_option("--seed", seed, "random seed");
    app.add_option("--samples", samples, "ray samples (0: one per voxel)")->check(CLI::NonNegativeNumber);
    app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "output directory")->required();
    if (int rc = parse(app, args, out, err); rc != kOk) {
        return rc < 0 ? kOk : rc;
    }
    return guarded(err, [&] {
        if (phantom == "file" && phantom_file.empty()) {
            throw InvalidArgument("--phantom file needs --phantom-file");
        }
        SimProtocol protocol = SimProtocol::scaled_for(size);
        protocol.angles_deg = parse_angle_range(angles);
        if (max_shift_px >= 0.0) {
            protocol.max_shift_px = max_shift_px;
        }
        protocol.max_rotation_deg = max_rot_deg;
        if (max_local_px >= 0.0) {
            protocol.max_local_px = max_local_px;
        }
        protocol.truth_grid = truth_grid;
        protocol.truth_interp = interpolation_from_string(truth_interp);
        protocol.snr_db = parse_snr(snr);
        protocol.snr_definition = snr_definition_from_string(snr_definition);
        protocol.seed = seed;
        protocol.validate();

        const fs::path dir(out_dir);
        ensure_dir(dir);
        PhantomOptions popt;
        popt.blob_count = blobs;
        popt.file = phantom_file;
        const GridSpec grid = GridSpec::cube(size, voxel_size);
        const VoxelVolume volume = make_phantom(phantom_kind_from_string(phantom), grid, seed, popt);
        RenderOptions render;
        render.n_samples = samples;
        render.workers = workers;
        const GroundTruth gt = generate_ground_truth(volume, protocol, render);

        write_volume(gt.volume, dir / "gt.mrc");
        write_stack(gt.noiseless_ts, dir / "noiseless.mrc", voxel_size);
        write_stack(gt.clean_deformed_ts, dir / "deformed.mrc", voxel_size);
        write_stack(gt.noisy_ts, dir / "noisy.mrc", voxel_size);
        write_stack(gt.noisy_undeformed_ts, dir / "noisy_undeformed.mrc", voxel_size);
        write_angles(dir / "angles.tlt", protocol.angles_deg);
        write_deform_params(dir / "gamma_true.json", gt.gammas_true);
        write_json(dir / "protocol.json", nlohmann::json(protocol));

        RunManifest manifest = base_manifest("simulate");
        manifest.protocol = protocol;
        manifest.config = {{"phantom", phantom}, {"phantom_file", phantom_file}, {"size", size},
                           {"voxel_size", voxel_size}, {"blobs", blobs}, {"samples", samples},
                           {"projections", protocol.angles_deg.size()}};
        manifest.seeds = {{"seed", seed}};
        if (!phantom_file.empty()) {
            manifest.input_hashes[phantom_file] = sha256_file(phantom_file);
        }
        hash_outputs(manifest, dir,
                     {"gt.mrc", "noiseless.mrc", "deformed.mrc", "noisy.mrc", "noisy_undeformed.mrc", "angles.tlt",
                      "gamma_true.json", "protocol.json"});
        save_run_manifest(manifest, dir / "manifest.json");
        out << "wrote " << protocol.angles_deg.size() << " projections of " << size << "x" << size << " to "
            << dir.string() << " (SNR " << measure_snr(gt.clean_deformed_ts, gt.noisy_ts, protocol.snr_definition)
            << " dB)\n";
        return static_cast<int>(kOk);
    });
}

int cmd_train(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Jointly estimate deformations and a neural volume", "tiltfield train"};
    TrainConfig cfg;
    cfg.workers = default_workers();
    std::string ts_path;
    std::string angles_path;
    std::string config_path;
    std::string out_dir;
    std::string dose = "series";
    std::string quadrature = "midpoint";
    std::string control_interp = "bilinear";
    std::string precision = "f32";
    bool quiet = false;
    bool no_shift = false;
    bool no_rotation = false;
    bool no_local = false;
    app.add_option("--ts", ts_path, "tilt series MRC stack")->required();
    app.add_option("--angles", angles_path, "tilt angles file (degrees)")->required();
    app.add_option("--config", config_path, "JSON training config; flags override it");
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--epochs", cfg.epochs)->check(CLI::PositiveNumber);
    app.add_option("--pixels", cfg.pixels_per_projection, "pixels per projection per epoch")->check(CLI::PositiveNumber);
    app.add_option("--projections-per-step", cfg.projections_per_step)->check(CLI::PositiveNumber);
    app.add_option("--dose", dose, "series or quadratic")->check(CLI::IsMember({"series", "quadratic"}));
    app.add_option("--lr-volume", cfg.lr_volume)->check(CLI::PositiveNumber);
    app.add_option("--lr-shift", cfg.lr_shift)->check(CLI::PositiveNumber);
    app.add_option("--lr-rotation", cfg.lr_rotation)->check(CLI::PositiveNumber);
    app.add_option("--lr-local", cfg.lr_local)->check(CLI::PositiveNumber);
    app.add_option("--beta1", cfg.beta1);
    app.add_option("--beta2", cfg.beta2);
    app.add_option("--eps", cfg.eps);
    app.add_option("--lambda-rotation", cfg.lambdas.rotation)->check(CLI::NonNegativeNumber);
    app.add_option("--lambda-shift", cfg.lambdas.shift)->check(CLI::NonNegativeNumber);
    app.add_option("--lambda-local", cfg.lambdas.local)->check(CLI::NonNegativeNumber);
    app.add_option("--mesh-p", cfg.mesh_p)->check(CLI::Range(2, 100000));
    app.add_option("--quadrature", quadrature)->check(CLI::IsMember({"midpoint", "trapezoid"}));
    app.add_option("--samples", cfg.n_samples, "ray samples (0: detector size)")->check(CLI::NonNegativeNumber);
    app.add_option("--control-grid", cfg.control_grid)->check(CLI::Range(2, 1000));
    app.add_option("--control-interp", control_interp)->check(CLI::IsMember({"bilinear", "bicubic"}));
    app.add_flag("--no-shift", no_shift, "keep shifts at zero");
    app.add_flag("--no-rotation", no_rotation, "keep rotations at zero");
    app.add_flag("--no-local", no_local, "keep local fields at zero");
    app.add_option("--deform-warmup", cfg.deform_warmup_epochs)->check(CLI::NonNegativeNumber);
    app.add_option("--levels", cfg.volume.encoding.levels)->check(CLI::PositiveNumber);
    app.add_option("--features", cfg.volume.encoding.features)->check(CLI::PositiveNumber);
    app.add_option("--log2-table", cfg.volume.encoding.log2_table_size)->check(CLI::Range(1, 30));
    app.add_option("--min-res", cfg.volume.encoding.min_resolution)->check(CLI::PositiveNumber);
    app.add_option("--max-res", cfg.volume.encoding.max_resolution, "0: half the detector size")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--hidden-layers", cfg.volume.network.hidden_layers)->check(CLI::PositiveNumber);
    app.add_option("--hidden-width", cfg.volume.network.hidden_width)->check(CLI::PositiveNumber);
    app.add_option("--initial-density", cfg.volume.network.initial_density)->check(CLI::PositiveNumber);
    app.add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--seed", cfg.seed);
    app.add_option("--early-stop-window", cfg.early_stop_window)->check(CLI::PositiveNumber);
    app.add_option("--early-stop-threshold", cfg.early_stop_threshold)->check(CLI::NonNegativeNumber);
    app.add_option("--early-stop-patience", cfg.early_stop_patience)->check(CLI::PositiveNumber);
    app.add_option("--workers", cfg.workers)->check(CLI::PositiveNumber);
    app.add_flag("--quiet", quiet, "no per-epoch progress");
    if (int rc = parse(app, args, out, err); rc != kOk) {
        return rc < 0 ? kOk : rc;
    }
    return guarded(err, [&] {
        if (!config_path.empty()) {
            // File values first, then anything given explicitly on the command line.
            TrainConfig from_file = read_json(config_path).get<TrainConfig>();
            nlohmann::json merged = from_file;
            const nlohmann::json flags = cfg;
            const nlohmann::json defaults = TrainConfig{};
            for (auto it = flags.begin(); it != flags.end(); ++it) {
                if (it.value() != defaults.at(it.key())) {
                    merged[it.key()] = it.value();
                }
            }
            cfg = merged.get<TrainConfig>();
        }
        if (app.count("--dose") || config_path.empty()) {
            cfg.dose = dose_weighting_from_string(dose);
        }
        if (app.count("--quadrature") || config_path.empty()) {
            cfg.quadrature = quadrature == "midpoint" ? Quadrature::Midpoint : Quadrature::Trapezoid;
        }
        if (app.count("--control-interp") || config_path.empty()) {
            cfg.control_interp = interpolation_from_string(control_interp);
        }
        if (app.count("--precision") || config_path.empty()) {
            cfg.volume.precision = precision_from_string(precision);
        }
        cfg.estimate_shift = cfg.estimate_shift && !no_shift;
        cfg.estimate_rotation = cfg.estimate_rotation && !no_rotation;
        cfg.estimate_local = cfg.estimate_local && !no_local;
        cfg.validate();

        const std::vector<double> degrees = read_angles(angles_path);
        const TiltSeries series = read_stack(ts_path, to_radians(degrees));
        const double pixel_size = read_mrc(ts_path).header.voxel_size();
        const fs::path dir(out_dir);
        ensure_dir(dir);

        RunManifest manifest = base_manifest("train");
        manifest.config = cfg;
        manifest.config["volume_resolved"] = cfg.resolved_volume(series.image_size());
        manifest.config["projections"] = series.size();
        manifest.seeds = {{"seed", cfg.seed}};
        manifest.input_hashes = {{ts_path, sha256_file(ts_path)}, {angles_path, sha256_file(angles_path)}};

        std::vector<std::vector<double>> rows;
        auto write_outputs = [&](const TrainResult& result) {
            rows.clear();
            for (const LossRecord& r : result.log) {
                rows.push_back({static_cast<double>(r.epoch), r.total_loss, r.data_loss, r.reg_loss, r.wall_seconds});
            }
            write_csv(dir / "loss.csv", {"epoch", "total_loss", "data_loss", "reg_loss", "wall_seconds"}, rows);
            save_checkpoint(result.volume, dir / "checkpoint.tfnv");
            write_deform_params(dir / "gamma_est.json", result.gammas);
            const int n = series.image_size();
            write_volume(result.volume.export_grid(GridSpec::cube(n, pixel_size), cfg.workers), dir / "recon_nn.mrc");
            hash_outputs(manifest, dir, {"checkpoint.tfnv", "gamma_est.json", "recon_nn.mrc"});
            save_run_manifest(manifest, dir / "manifest.json");
        };

        try {
            const TrainResult result = train(series, cfg, [&](const LossRecord& r) {
                if (!quiet && (r.epoch == 1 || r.epoch % 10 == 0)) {
                    out << "epoch " << r.epoch << " loss " << r.total_loss << " (data " << r.data_loss << ", reg "
                        << r.reg_loss << ") " << r.wall_seconds << "s\n";
                }
            });
            manifest.config["epochs_run"] = result.log.size();
            manifest.config["early_stopped"] = result.early_stopped;
            write_outputs(result);
            out << "trained " << result.log.size() << " epochs; outputs in " << dir.string() << "\n";
        } catch (const TrainingDiverged& e) {
            manifest.config["diverged_at_epoch"] = e.epoch;
            write_outputs(e.last_good);
            throw;
        }
        return static_cast<int>(kOk);
    });
}

int cmd_reconstruct(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Filtered backprojection, optionally after undoing estimated deformations", "tiltfield reconstruct"};
    std::string ts_path;
    std::string angles_path;
    std::string gammas_path;
    std::string method = "fbp";
    std::string filter = "ramp-hann";
    int size = 0;
    int workers = default_workers();
    std::string out_dir;
    app.add_option("--ts", ts_path, "tilt series MRC stack")->required();
    app.add_option("--angles", angles_path, "tilt angles file (degrees)")->required();
    app.add_option("--gammas", gammas_path, "deformations to undo before reconstruction");
    app.add_option("--method", method)->check(CLI::IsMember({"fbp"}));
    app.add_option("--filter", filter)->check(CLI::IsMember({"ramp", "ramp-hann"}));
    app.add_option("--size", size, "output volume size (default: detector size)")->check(CLI::NonNegativeNumber);
    app.add_option("--workers", workers)->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "output directory")->required();
    if (int rc = parse(app, args, out, err); rc != kOk) {
        return rc < 0 ? kOk : rc;
    }
    return guarded(err, [&] {
        const std::vector<double> degrees = read_angles(angles_path);
        TiltSeries series = read_stack(ts_path, to_radians(degrees));
        const double pixel_size = read_mrc(ts_path).header.voxel_size();
        const fs::path dir(out_dir);
        ensure_dir(dir);
        RunManifest manifest = base_manifest("reconstruct");
        manifest.config = {{"method", method}, {"filter", filter}, {"size", size}, {"aligned", !gammas_path.empty()}};
        manifest.input_hashes = {{ts_path, sha256_file(ts_path)}, {angles_path, sha256_file(angles_path)}};
        std::vector<std::string> outputs;
        if (!gammas_path.empty()) {
            manifest.input_hashes[gammas_path] = sha256_file(gammas_path);
            series = align_series(series, read_deform_params(gammas_path), {}, workers);
            write_stack(series, dir / "aligned.mrc", pixel_size);
            outputs.push_back("aligned.mrc");
        }
        const int n = size > 0 ? size : series.image_size();
        FbpOptions opt;
        opt.filter = fbp_filter_from_string(filter);
        opt.workers = workers;
        write_volume(fbp(series, GridSpec::cube(n, pixel_size), opt), dir / "recon_fbp.mrc");
        outputs.push_back("recon_fbp.mrc");
        hash_outputs(manifest, dir, outputs);
        save_run_manifest(manifest, dir / "manifest.json");
        out << "wrote " << (dir / "recon_fbp.mrc").string() << "\n";
        return static_cast<int>(kOk);
    });
}

int cmd_evaluate(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Compare a reconstruction with a reference volume", "tiltfield evaluate"};
    std::string ref_path;
    std::string est_path;
    std::string out_dir;
    bool do_register = false;
    bool subtract_mean = false;
    double threshold = 0.5;
    double max_tilt = 60.0;
    app.add_option("--ref", ref_path, "reference volume")->required();
    app.add_option("--est", est_path, "estimated volume")->required();
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_flag("--register", do_register, "align by integer translation first");
    app.add_flag("--subtract-mean", subtract_mean, "mean-subtracted correlation");
    app.add_option("--threshold", threshold, "FSC threshold")->check(CLI::Range(0.0, 1.0));
    app.add_option("--max-tilt", max_tilt, "tilt range used for the wedge statistics")->check(CLI::Range(0.0, 90.0));
    if (int rc = parse(app, args, out, err); rc != kOk) {
        return rc < 0 ? kOk : rc;
    }
    return guarded(err, [&] {
        const VoxelVolume ref = read_volume(ref_path);
        VoxelVolume est = read_volume(est_path);
        const fs::path dir(out_dir);
        ensure_dir(dir);
        std::array<int, 3> shift{0, 0, 0};
        if (do_register) {
            Registration reg = register_translation(ref, est);
            shift = reg.shift;
            est = std::move(reg.registered);
        }
        const double value = cc(ref, est, subtract_mean);
        const FscCurve curve = fsc(ref, est);
        const double voxel = ref.grid().voxel_size;
        std::vector<std::vector<double>> rows;
        for (std::size_t s = 0; s < curve.radii.size(); ++s) {
            rows.push_back({static_cast<double>(curve.radii[s]), curve.frequency(curve.radii[s], voxel), curve.values[s]});
        }
        write_csv(dir / "fsc.csv", {"shell_index", "spatial_frequency", "fsc"}, rows);
        write_image(central_slice_spectrum(ref, Axis::Y), dir / "spectrum_ref.mrc");
        write_image(central_slice_spectrum(est, Axis::Y), dir / "spectrum_est.mrc");
        const WedgeStats wr = wedge_statistics(slice_spectrum_magnitude(central_slice(ref, Axis::Y)), max_tilt);
        const WedgeStats we = wedge_statistics(slice_spectrum_magnitude(central_slice(est, Axis::Y)), max_tilt);
        nlohmann::json metrics = {
            {"cc", value},
            {"fsc_resolution", fsc_resolution(curve, threshold, voxel)},
            {"fsc_threshold", threshold},
            {"shift", shift},
            {"wedge_mean_ref", wr.wedge_mean},
            {"sampled_mean_ref", wr.sampled_mean},
            {"wedge_mean_est", we.wedge_mean},
            {"sampled_mean_est", we.sampled_mean},
        };
        write_json(dir / "metrics.json", metrics);
        out << "cc " << value << ", resolution " << metrics["fsc_resolution"].get<double>() << " at FSC "
            << threshold << ", shift (" << shift[0] << ", " << shift[1] << ", " << shift[2] << ")\n";
        return static_cast<int>(kOk);
    });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    static const char* usage =
        "usage: tiltfield <command> [options]\n"
        "\n"
        "commands:\n"
        "  simulate      phantom -> deformed noisy tilt series\n"
        "  train         joint deformation and neural-volume estimation\n"
        "  reconstruct   filtered backprojection (optionally aligned)\n"
        "  evaluate      CC, FSC and spectra against a reference\n"
        "\n"
        "Run 'tiltfield <command> --help' for command options.\n";
    if (args.empty()) {
        err << usage;
        return kBadFlags;
    }
    const std::string& command = args.front();
    const std::vector<std::string> rest(args.begin() + 1, args.end());
    if (command == "--help" || command == "-h" || command == "help") {
        out << usage;
        return kOk;
    }
    if (command == "--version") {
        out << "tiltfield " << kVersion << "\n";
        return kOk;
    }
    if (command == "simulate") {
        return cmd_simulate(rest, out, err);
    }
    if (command == "train") {
        return cmd_train(rest, out, err);
    }
    if (command == "reconstruct") {
        return cmd_reconstruct(rest, out, err);
    }
    if (command == "evaluate") {
        return cmd_evaluate(rest, out, err);
    }
    err << "unknown command '" << command << "'\n" << usage;
    return kBadFlags;
}

}  // namespace tiltfield::cli
