#include "tiltfield/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "tiltfield/parallel.hpp"

namespace tiltfield {

std::string to_string(DoseWeighting d) { return d == DoseWeighting::Series ? "series" : "quadratic"; }

DoseWeighting dose_weighting_from_string(const std::string& name) {
    if (name == "series" || name == "none") {
        return DoseWeighting::Series;
    }
    if (name == "quadratic") {
        return DoseWeighting::Quadratic;
    }
    throw InvalidArgument("unknown dose weighting '" + name + "'");
}

double quadratic_dose_weight(double theta_rad) {
    const double r = rad_to_deg(theta_rad) / 60.0;
    return std::max(1.0, 2.0 - r * r);
}

VolumeSpec TrainConfig::resolved_volume(int detector_n) const {
    VolumeSpec v = volume;
    if (v.encoding.max_resolution <= 0) {
        v.encoding.max_resolution = std::max(v.encoding.min_resolution, detector_n / 2);
    }
    v.validate();
    return v;
}

void TrainConfig::validate() const {
    if (pixels_per_projection < 1 || epochs < 1 || projections_per_step < 1) {
        throw InvalidArgument("pixels, epochs and projections per step must be >= 1");
    }
    if (!(lr_volume > 0.0 && lr_shift > 0.0 && lr_rotation > 0.0 && lr_local > 0.0)) {
        throw InvalidArgument("learning rates must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
        throw InvalidArgument("Adam needs 0 <= beta < 1 and eps > 0");
    }
    if (lambdas.rotation < 0.0 || lambdas.shift < 0.0 || lambdas.local < 0.0) {
        throw InvalidArgument("regularization weights must be non-negative");
    }
    if (mesh_p < 2 || control_grid < 2) {
        throw InvalidArgument("mesh and control grid need at least 2 points per axis");
    }
    if (n_samples != 0 && n_samples < 2) {
        throw InvalidArgument("ray sampling needs at least 2 samples");
    }
    if (!(path_scale > 0.0)) {
        throw InvalidArgument("path scale must be positive");
    }
    if (early_stop_window < 1 || early_stop_patience < 1 || early_stop_threshold < 0.0) {
        throw InvalidArgument("invalid early-stopping settings");
    }
    if (workers < 1 || rays_per_block < 1 || deform_warmup_epochs < 0) {
        throw InvalidArgument("workers and block size must be >= 1");
    }
    VolumeSpec v = volume;
    if (v.encoding.max_resolution <= 0) {
        v.encoding.max_resolution = v.encoding.min_resolution;
    }
    v.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"pixels_per_projection", c.pixels_per_projection},
         {"epochs", c.epochs},
         {"projections_per_step", c.projections_per_step},
         {"lr_volume", c.lr_volume},
         {"lr_shift", c.lr_shift},
         {"lr_rotation", c.lr_rotation},
         {"lr_local", c.lr_local},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"eps", c.eps},
         {"lambda_rotation", c.lambdas.rotation},
         {"lambda_shift", c.lambdas.shift},
         {"lambda_local", c.lambdas.local},
         {"mesh_p", c.mesh_p},
         {"dose", to_string(c.dose)},
         {"quadrature", c.quadrature == Quadrature::Midpoint ? "midpoint" : "trapezoid"},
         {"n_samples", c.n_samples},
         {"path_scale", c.path_scale},
         {"control_grid", c.control_grid},
         {"control_interp", to_string(c.control_interp)},
         {"estimate_shift", c.estimate_shift},
         {"estimate_rotation", c.estimate_rotation},
         {"estimate_local", c.estimate_local},
         {"deform_warmup_epochs", c.deform_warmup_epochs},
         {"volume", c.volume},
         {"seed", c.seed},
         {"early_stop_window", c.early_stop_window},
         {"early_stop_threshold", c.early_stop_threshold},
         {"early_stop_patience", c.early_stop_patience},
         {"workers", c.workers},
         {"rays_per_block", c.rays_per_block}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig t;
    t.pixels_per_projection = j.value("pixels_per_projection", t.pixels_per_projection);
    t.epochs = j.value("epochs", t.epochs);
    t.projections_per_step = j.value("projections_per_step", t.projections_per_step);
    t.lr_volume = j.value("lr_volume", t.lr_volume);
    t.lr_shift = j.value("lr_shift", t.lr_shift);
    t.lr_rotation = j.value("lr_rotation", t.lr_rotation);
    t.lr_local = j.value("lr_local", t.lr_local);
    t.beta1 = j.value("beta1", t.beta1);
    t.beta2 = j.value("beta2", t.beta2);
    t.eps = j.value("eps", t.eps);
    t.lambdas.rotation = j.value("lambda_rotation", t.lambdas.rotation);
    t.lambdas.shift = j.value("lambda_shift", t.lambdas.shift);
    t.lambdas.local = j.value("lambda_local", t.lambdas.local);
    t.mesh_p = j.value("mesh_p", t.mesh_p);
    t.dose = dose_weighting_from_string(j.value("dose", to_string(t.dose)));
    const std::string quad = j.value("quadrature", std::string("midpoint"));
    if (quad != "midpoint" && quad != "trapezoid") {
        throw InvalidArgument("unknown quadrature '" + quad + "'");
    }
    t.quadrature = quad == "midpoint" ? Quadrature::Midpoint : Quadrature::Trapezoid;
    t.n_samples = j.value("n_samples", t.n_samples);
    t.path_scale = j.value("path_scale", t.path_scale);
    t.control_grid = j.value("control_grid", t.control_grid);
    t.control_interp = interpolation_from_string(j.value("control_interp", to_string(t.control_interp)));
    t.estimate_shift = j.value("estimate_shift", t.estimate_shift);
    t.estimate_rotation = j.value("estimate_rotation", t.estimate_rotation);
    t.estimate_local = j.value("estimate_local", t.estimate_local);
    t.deform_warmup_epochs = j.value("deform_warmup_epochs", t.deform_warmup_epochs);
    if (j.contains("volume")) {
        // max_resolution 0 (auto) is not a valid VolumeSpec on its own.
        nlohmann::json v = j.at("volume");
        const int max_res = v.value("max_resolution", 0);
        v["max_resolution"] = std::max(max_res, v.value("min_resolution", 8));
        t.volume = v.get<VolumeSpec>();
        t.volume.encoding.max_resolution = max_res;
    }
    t.seed = j.value("seed", t.seed);
    t.early_stop_window = j.value("early_stop_window", t.early_stop_window);
    t.early_stop_threshold = j.value("early_stop_threshold", t.early_stop_threshold);
    t.early_stop_patience = j.value("early_stop_patience", t.early_stop_patience);
    t.workers = j.value("workers", t.workers);
    t.rays_per_block = j.value("rays_per_block", t.rays_per_block);
    t.validate();
    c = t;
}

// ---- optimizer ----

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamHyper& h,
               const std::string& block) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeMismatch("Adam buffers do not match the parameters of " + block);
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            throw NonFiniteGradient(block);
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double g = grads[k];
        state.m[k] = h.beta1 * state.m[k] + (1.0 - h.beta1) * g;
        state.v[k] = h.beta2 * state.v[k] + (1.0 - h.beta2) * g * g;
        const double mhat = state.m[k] / c1;
        const double vhat = state.v[k] / c2;
        params[k] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
}

// ---- minibatches ----

std::vector<PixelSample> sample_minibatch(Rng& rng, const TiltSeries& series, int k) {
    series.validate();
    const int n = series.image_size();
    const int pixels = n * n;
    if (k < 1 || k > pixels) {
        throw InvalidArgument("minibatch size must lie in [1, N^2]");
    }
    std::vector<PixelSample> out;
    out.reserve(series.size() * static_cast<std::size_t>(k));
    std::vector<int> chosen;
    std::vector<char> taken(pixels, 0);
    for (std::size_t m = 0; m < series.size(); ++m) {
        chosen.clear();
        if (k == pixels) {
            chosen.resize(pixels);
            std::iota(chosen.begin(), chosen.end(), 0);
        } else {
            // Floyd's algorithm: k distinct draws with k RNG calls.
            for (int r = pixels - k; r < pixels; ++r) {
                std::uniform_int_distribution<int> pick(0, r);
                const int t = pick(rng);
                const int v = taken[t] ? r : t;
                taken[v] = 1;
                chosen.push_back(v);
            }
            for (int v : chosen) {
                taken[v] = 0;
            }
            std::sort(chosen.begin(), chosen.end());
        }
        const Image& img = series.images[m];
        for (int p : chosen) {
            const int i = p % n;
            const int j = p / n;
            out.push_back({static_cast<int>(m), i, j, img.at(i, j)});
        }
    }
    return out;
}

// ---- forward / backward engine ----

namespace {

struct RayState {
    bool valid = false;
    double length = 0.0;
    int entry = -1;
    int exit = -1;
    Vec2 u = Vec2::Zero();  // x + phi(x)
    ControlTaps taps;
    std::size_t first_point = 0;
    double pred = 0.0;
    double g = 0.0;  // d loss / d prediction
};

struct WorkerBuffers {
    NeuralVolume::Workspace ws;
    std::vector<Vec3> points;
    std::vector<double> density;
    std::vector<double> upstream;
    std::vector<Vec3> input_grad;
    std::vector<RayState> rays;
    std::vector<double> volume_grad;
    std::vector<DeformGradient> deform;
    std::vector<char> touched;
    double loss = 0.0;
};

class Engine {
public:
    Engine(const NeuralVolume& volume, const std::vector<DeformParams>& gammas, const TiltSeries& series,
           const TrainConfig& config)
        : volume_(volume),
          gammas_(gammas),
          series_(series),
          config_(config),
          n_(series.image_size()),
          samples_(config.samples_for(series.image_size())),
          quad_(make_quadrature(config.quadrature, samples_)) {}

    /// Sum over samples of scale[m] * |r|; with want_grad, gradients land in the
    /// returned worker-0 buffers after merging.
    double run(std::span<const PixelSample> batch, const std::vector<double>& scale, bool want_grad,
               std::vector<WorkerBuffers>& buffers) {
        const int workers = std::max(1, config_.workers);
        if (buffers.size() != static_cast<std::size_t>(workers)) {
            buffers.clear();
            buffers.resize(workers);
        }
        for (auto& b : buffers) {
            b.loss = 0.0;
            if (want_grad) {
                b.volume_grad.assign(volume_.parameter_count(), 0.0);
                b.deform.resize(series_.size());
                b.touched.assign(series_.size(), 0);
                for (std::size_t m = 0; m < series_.size(); ++m) {
                    if (b.deform[m].grid.size() != gammas_[m].grid.size()) {
                        b.deform[m] = DeformGradient(gammas_[m].grid.size());
                    } else {
                        b.deform[m].set_zero();
                    }
                }
            }
        }
        const std::size_t block = static_cast<std::size_t>(config_.rays_per_block);
        const std::size_t blocks = (batch.size() + block - 1) / block;
        parallel_for(blocks, workers, [&](std::size_t begin, std::size_t end, int worker) {
            WorkerBuffers& buf = buffers[worker];
            for (std::size_t b = begin; b < end; ++b) {
                const std::size_t first = b * block;
                const std::size_t last = std::min(batch.size(), first + block);
                process(batch.subspan(first, last - first), scale, want_grad, buf);
            }
        });
        double loss = 0.0;
        for (auto& b : buffers) {
            loss += b.loss;
        }
        if (want_grad) {
            WorkerBuffers& root = buffers[0];
            for (std::size_t w = 1; w < buffers.size(); ++w) {
                const WorkerBuffers& other = buffers[w];
                for (std::size_t k = 0; k < root.volume_grad.size(); ++k) {
                    root.volume_grad[k] += other.volume_grad[k];
                }
                for (std::size_t m = 0; m < series_.size(); ++m) {
                    if (!other.touched[m]) {
                        continue;
                    }
                    root.touched[m] = 1;
                    root.deform[m].tau += other.deform[m].tau;
                    root.deform[m].alpha += other.deform[m].alpha;
                    for (std::size_t c = 0; c < root.deform[m].grid.size(); ++c) {
                        root.deform[m].grid[c] += other.deform[m].grid[c];
                    }
                }
            }
        }
        return loss;
    }

private:
    void process(std::span<const PixelSample> batch, const std::vector<double>& scale, bool want_grad,
                 WorkerBuffers& buf) {
        const DetectorSpec detector{n_};
        buf.rays.assign(batch.size(), RayState{});
        buf.points.clear();
        for (std::size_t r = 0; r < batch.size(); ++r) {
            const PixelSample& px = batch[r];
            const DeformParams& gamma = gammas_[px.m];
            RayState& st = buf.rays[r];
            const Vec2 x = detector.pixel_coord(px.i, px.j);
            st.taps = gamma.grid.taps(x);
            Vec2 phi = Vec2::Zero();
            for (int t = 0; t < st.taps.count; ++t) {
                phi += st.taps.weight[t] * gamma.grid.displacements()[st.taps.index[t]];
            }
            st.u = x + phi;
            const Vec2 z = rotation2d(gamma.alpha) * st.u - gamma.tau;
            const Ray ray = ray_through(z, series_.angles[px.m], samples_);
            if (ray.degenerate()) {
                continue;
            }
            st.valid = true;
            st.length = ray.t_max - ray.t_min;
            st.entry = ray.entry_axis;
            st.exit = ray.exit_axis;
            st.first_point = buf.points.size();
            for (int s = 0; s < samples_; ++s) {
                buf.points.push_back(ray.at(ray.t_min + quad_.offsets[s] * st.length));
            }
        }
        buf.density.resize(buf.points.size());
        if (!buf.points.empty()) {
            volume_.forward(buf.points, buf.ws, buf.density);
        }
        const double ps = config_.path_scale;
        bool any_grad = false;
        for (std::size_t r = 0; r < batch.size(); ++r) {
            RayState& st = buf.rays[r];
            double pred = 0.0;
            if (st.valid) {
                for (int s = 0; s < samples_; ++s) {
                    pred += quad_.weights[s] * buf.density[st.first_point + s];
                }
                pred *= st.length * ps;
            }
            st.pred = pred;
            const double res = batch[r].value - pred;
            const double w = scale[batch[r].m];
            buf.loss += w * std::abs(res);
            st.g = res > 0.0 ? -w : (res < 0.0 ? w : 0.0);
            if (st.valid && st.g != 0.0) {
                any_grad = true;
            }
        }
        if (!want_grad || !any_grad) {
            return;
        }
        buf.upstream.assign(buf.points.size(), 0.0);
        for (std::size_t r = 0; r < batch.size(); ++r) {
            const RayState& st = buf.rays[r];
            if (!st.valid) {
                continue;
            }
            for (int s = 0; s < samples_; ++s) {
                buf.upstream[st.first_point + s] = st.g * ps * quad_.weights[s] * st.length;
            }
        }
        buf.input_grad.resize(buf.points.size());
        volume_.backward(buf.ws, buf.upstream, buf.volume_grad, buf.input_grad);

        for (std::size_t r = 0; r < batch.size(); ++r) {
            const RayState& st = buf.rays[r];
            if (!st.valid || st.g == 0.0) {
                continue;
            }
            const PixelSample& px = batch[r];
            const DeformParams& gamma = gammas_[px.m];
            const double theta = series_.angles[px.m];
            const double c = std::cos(theta);
            const double s = std::sin(theta);
            const Vec3 dir(s, 0.0, c);
            const Vec3 axis_dir[2] = {Vec3(c, 0.0, -s), Vec3(0.0, 1.0, 0.0)};
            Vec2 gz = Vec2::Zero();
            for (int k = 0; k < 2; ++k) {
                const Vec3& e = axis_dir[k];
                const double dtmin = -e[st.entry] / dir[st.entry];
                const double dtmax = -e[st.exit] / dir[st.exit];
                const double dlen = dtmax - dtmin;
                double acc = 0.0;
                for (int q = 0; q < samples_; ++q) {
                    const std::size_t p = st.first_point + q;
                    acc += st.g * ps * quad_.weights[q] * dlen * buf.density[p];
                    acc += buf.input_grad[p].dot(e + (dtmin + quad_.offsets[q] * dlen) * dir);
                }
                gz[k] = acc;
            }
            DeformGradient& dg = buf.deform[px.m];
            buf.touched[px.m] = 1;
            dg.tau -= gz;
            const double ca = std::cos(gamma.alpha);
            const double sa = std::sin(gamma.alpha);
            Mat2 dr;
            dr << -sa, -ca, ca, -sa;
            dg.alpha += gz.dot(dr * st.u);
            const Vec2 back = rotation2d(gamma.alpha).transpose() * gz;
            for (int t = 0; t < st.taps.count; ++t) {
                dg.grid[st.taps.index[t]] += st.taps.weight[t] * back;
            }
        }
    }

    const NeuralVolume& volume_;
    const std::vector<DeformParams>& gammas_;
    const TiltSeries& series_;
    const TrainConfig& config_;
    int n_;
    int samples_;
    QuadratureRule quad_;
};

void check_inputs(const std::vector<DeformParams>& gammas, const TiltSeries& series) {
    series.validate();
    if (gammas.size() != series.size()) {
        throw ShapeMismatch("need one deformation per projection");
    }
}

// Per-projection w_m / |B_m| and the list of projections present.
std::vector<double> batch_scale(std::span<const PixelSample> batch, const TiltSeries& series,
                                const TrainConfig& config, std::vector<std::size_t>& present) {
    std::vector<std::size_t> count(series.size(), 0);
    for (const PixelSample& p : batch) {
        if (p.m < 0 || static_cast<std::size_t>(p.m) >= series.size()) {
            throw ShapeMismatch("batch refers to a projection outside the series");
        }
        ++count[p.m];
    }
    std::vector<double> scale(series.size(), 0.0);
    present.clear();
    for (std::size_t m = 0; m < series.size(); ++m) {
        if (count[m] > 0) {
            scale[m] = projection_weight(series, m, config) / static_cast<double>(count[m]);
            present.push_back(m);
        }
    }
    return scale;
}

}  // namespace

double projection_weight(const TiltSeries& series, std::size_t m, const TrainConfig& config) {
    return config.dose == DoseWeighting::Quadratic ? quadratic_dose_weight(series.angles[m]) : series.weight(m);
}

double predict_pixel(const NeuralVolume& volume, const DeformParams& gamma, double theta, int i, int j, int n,
                     const TrainConfig& config) {
    const DetectorSpec detector{n};
    const Vec2 z = forward_map(gamma, detector.pixel_coord(i, j));
    const int samples = config.samples_for(n);
    const Ray ray = ray_through(z, theta, samples);
    if (ray.degenerate()) {
        return 0.0;
    }
    const QuadratureRule quad = make_quadrature(config.quadrature, samples);
    const double length = ray.t_max - ray.t_min;
    std::vector<Vec3> pts;
    for (int s = 0; s < samples; ++s) {
        pts.push_back(ray.at(ray.t_min + quad.offsets[s] * length));
    }
    std::vector<double> dens(pts.size());
    NeuralVolume::Workspace ws;
    volume.forward(pts, ws, dens);
    double sum = 0.0;
    for (int s = 0; s < samples; ++s) {
        sum += quad.weights[s] * dens[s];
    }
    return sum * length * config.path_scale;
}

double data_loss(std::span<const PixelSample> batch, const NeuralVolume& volume,
                 const std::vector<DeformParams>& gammas, const TiltSeries& series, const TrainConfig& config) {
    check_inputs(gammas, series);
    if (batch.empty()) {
        throw InvalidArgument("data loss needs a non-empty batch");
    }
    Engine engine(volume, gammas, series, config);
    std::vector<double> scale(series.size(), 1.0 / static_cast<double>(batch.size()));
    std::vector<WorkerBuffers> buffers;
    return engine.run(batch, scale, false, buffers);
}

LossTerms total_loss(std::span<const PixelSample> batch, const NeuralVolume& volume,
                     const std::vector<DeformParams>& gammas, const TiltSeries& series, const TrainConfig& config) {
    check_inputs(gammas, series);
    std::vector<std::size_t> present;
    const std::vector<double> scale = batch_scale(batch, series, config, present);
    Engine engine(volume, gammas, series, config);
    std::vector<WorkerBuffers> buffers;
    LossTerms t;
    t.data = engine.run(batch, scale, false, buffers);
    for (std::size_t m : present) {
        t.reg += regularizer(gammas[m], config.lambdas, config.mesh_p);
    }
    t.total = t.data + t.reg;
    return t;
}

namespace {

LossGradient evaluate_with_gradient(Engine& engine, std::span<const PixelSample> batch,
                                    const std::vector<DeformParams>& gammas, const TiltSeries& series,
                                    const TrainConfig& config, std::vector<WorkerBuffers>& buffers) {
    std::vector<std::size_t> present;
    const std::vector<double> scale = batch_scale(batch, series, config, present);
    LossGradient out;
    out.loss.data = engine.run(batch, scale, true, buffers);
    WorkerBuffers& root = buffers[0];
    for (std::size_t m : present) {
        out.loss.reg += regularizer_with_gradient(gammas[m], config.lambdas, config.mesh_p, root.deform[m]);
    }
    out.loss.total = out.loss.data + out.loss.reg;
    out.volume = std::move(root.volume_grad);
    out.deforms = std::move(root.deform);
    root.volume_grad.clear();
    root.deform.clear();
    return out;
}

}  // namespace

LossGradient loss_and_gradient(std::span<const PixelSample> batch, const NeuralVolume& volume,
                               const std::vector<DeformParams>& gammas, const TiltSeries& series,
                               const TrainConfig& config) {
    check_inputs(gammas, series);
    Engine engine(volume, gammas, series, config);
    std::vector<WorkerBuffers> buffers;
    return evaluate_with_gradient(engine, batch, gammas, series, config, buffers);
}

// ---- training ----

bool should_stop_early(const std::vector<LossRecord>& log, int window, double threshold, int patience) {
    const std::size_t windows = log.size() / static_cast<std::size_t>(window);
    if (windows < static_cast<std::size_t>(patience) + 1) {
        return false;
    }
    auto mean = [&](std::size_t w) {
        double s = 0.0;
        for (std::size_t e = w * window; e < (w + 1) * window; ++e) {
            s += log[e].total_loss;
        }
        return s / window;
    };
    for (int p = 0; p < patience; ++p) {
        const std::size_t cur = windows - 1 - p;
        const double prev = mean(cur - 1);
        const double now = mean(cur);
        const double improvement = prev != 0.0 ? (prev - now) / std::abs(prev) : 0.0;
        if (improvement >= threshold) {
            return false;
        }
    }
    return true;
}

namespace {

std::span<double> flat(std::vector<Vec2>& v) { return {v.data()->data(), 2 * v.size()}; }
std::span<const double> flat(const std::vector<Vec2>& v) { return {v.data()->data(), 2 * v.size()}; }

}  // namespace

TrainResult train(const TiltSeries& series, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    series.validate();
    if (series.images.empty()) {
        throw InvalidArgument("cannot train on an empty series");
    }
    const int n = series.image_size();
    if (config.pixels_per_projection > n * n) {
        throw InvalidArgument("pixels per projection exceeds the image size");
    }
    const std::size_t m_count = series.size();

    TrainResult state{NeuralVolume(config.resolved_volume(n), derive_seed(config.seed, 1)), {}, {}, false};
    for (std::size_t m = 0; m < m_count; ++m) {
        state.gammas.push_back(DeformParams::identity(config.control_grid, config.control_grid, config.control_interp));
    }
    TrainResult last_good = state;

    Rng batch_rng = make_rng(config.seed, 2);
    Rng order_rng = make_rng(config.seed, 3);
    AdamState volume_state(state.volume.parameter_count());
    std::vector<AdamState> shift_state(m_count, AdamState(2));
    std::vector<AdamState> rotation_state(m_count, AdamState(1));
    std::vector<AdamState> local_state(m_count, AdamState(2 * state.gammas[0].grid.size()));
    const AdamHyper volume_hyper{config.lr_volume, config.beta1, config.beta2, config.eps};
    const AdamHyper shift_hyper{config.lr_shift, config.beta1, config.beta2, config.eps};
    const AdamHyper rotation_hyper{config.lr_rotation, config.beta1, config.beta2, config.eps};
    const AdamHyper local_hyper{config.lr_local, config.beta1, config.beta2, config.eps};

    Engine engine(state.volume, state.gammas, series, config);
    std::vector<WorkerBuffers> buffers;
    std::vector<std::size_t> order(m_count);
    std::vector<PixelSample> chunk;
    const auto start = std::chrono::steady_clock::now();
    const std::size_t k = static_cast<std::size_t>(config.pixels_per_projection);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const std::vector<PixelSample> batch = sample_minibatch(batch_rng, series, config.pixels_per_projection);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), order_rng);
        const bool update_deform = epoch > config.deform_warmup_epochs;

        LossTerms epoch_terms;
        try {
            for (std::size_t c0 = 0; c0 < m_count; c0 += config.projections_per_step) {
                const std::size_t c1 = std::min(m_count, c0 + config.projections_per_step);
                chunk.clear();
                for (std::size_t c = c0; c < c1; ++c) {
                    const std::size_t m = order[c];
                    chunk.insert(chunk.end(), batch.begin() + static_cast<std::ptrdiff_t>(m * k),
                                 batch.begin() + static_cast<std::ptrdiff_t>((m + 1) * k));
                }
                LossGradient lg = evaluate_with_gradient(engine, chunk, state.gammas, series, config, buffers);
                if (!std::isfinite(lg.loss.total)) {
                    throw NonFiniteGradient("loss");
                }
                epoch_terms.total += lg.loss.total;
                epoch_terms.data += lg.loss.data;
                epoch_terms.reg += lg.loss.reg;

                adam_step(state.volume.mutable_parameters(), lg.volume, volume_state, volume_hyper, "volume");
                state.volume.commit();
                if (update_deform) {
                    for (std::size_t c = c0; c < c1; ++c) {
                        const std::size_t m = order[c];
                        DeformParams& g = state.gammas[m];
                        const DeformGradient& dg = lg.deforms[m];
                        if (config.estimate_shift) {
                            adam_step({g.tau.data(), 2}, {dg.tau.data(), 2}, shift_state[m], shift_hyper, "shift");
                        }
                        if (config.estimate_rotation) {
                            adam_step({&g.alpha, 1}, {&dg.alpha, 1}, rotation_state[m], rotation_hyper, "rotation");
                            g.wrap();
                        }
                        if (config.estimate_local) {
                            adam_step(flat(g.grid.displacements()), flat(dg.grid), local_state[m], local_hyper,
                                      "local");
                        }
                    }
                }
                buffers[0].volume_grad = std::move(lg.volume);
                buffers[0].deform = std::move(lg.deforms);
            }
        } catch (const NonFiniteGradient& e) {
            throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(),
                                   std::move(last_good), epoch);
        }

        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const LossRecord rec{epoch, epoch_terms.total, epoch_terms.data, epoch_terms.reg, elapsed};
        state.log.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }
        last_good.volume = state.volume;
        last_good.gammas = state.gammas;
        last_good.log = state.log;

        if (epoch % config.early_stop_window == 0 &&
            should_stop_early(state.log, config.early_stop_window, config.early_stop_threshold,
                              config.early_stop_patience)) {
            state.early_stopped = true;
            break;
        }
    }
    return state;
}

}  // namespace tiltfield
