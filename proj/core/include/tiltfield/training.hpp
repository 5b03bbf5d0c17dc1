#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tiltfield/deform.hpp"
#include "tiltfield/error.hpp"
#include "tiltfield/geometry.hpp"
#include "tiltfield/neural_volume.hpp"
#include "tiltfield/rng.hpp"
#include "tiltfield/types.hpp"

namespace tiltfield {

enum class DoseWeighting {
    Series,     // per-image weights stored in the series (1 when absent)
    Quadratic,  // 2 at 0 degrees falling to 1 at 60 degrees
};

std::string to_string(DoseWeighting d);
DoseWeighting dose_weighting_from_string(const std::string& name);

/// 1 + (1 - (theta / 60deg)^2), never below 1.
double quadratic_dose_weight(double theta_rad);

struct TrainConfig {
    int pixels_per_projection = 1500;
    int epochs = 1000;
    int projections_per_step = 5;

    double lr_volume = 1e-2;
    double lr_shift = 1e-3;
    double lr_rotation = 1e-4;
    double lr_local = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    RegularizerWeights lambdas;
    int mesh_p = 10;
    DoseWeighting dose = DoseWeighting::Series;

    Quadrature quadrature = Quadrature::Midpoint;
    int n_samples = 0;  // 0: detector size
    double path_scale = 1.0;

    int control_grid = 10;
    Interpolation control_interp = Interpolation::Bilinear;
    bool estimate_shift = true;
    bool estimate_rotation = true;
    bool estimate_local = true;
    /// Deformations stay frozen for this many initial epochs.
    int deform_warmup_epochs = 0;

    /// max_resolution 0 selects half the detector size.
    VolumeSpec volume = default_volume();

    std::uint64_t seed = 0;
    int early_stop_window = 50;
    double early_stop_threshold = 1e-3;
    int early_stop_patience = 3;

    int workers = 1;
    int rays_per_block = 64;

    static VolumeSpec default_volume() {
        VolumeSpec v;
        v.encoding.max_resolution = 0;
        return v;
    }

    VolumeSpec resolved_volume(int detector_n) const;
    int samples_for(int detector_n) const { return n_samples > 0 ? n_samples : detector_n; }
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// ---- optimizer ----

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;

    explicit AdamState(std::size_t size = 0) : m(size, 0.0), v(size, 0.0) {}
};

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update. Throws NonFiniteGradient naming `block`
/// before touching anything if a gradient entry is not finite.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamHyper& hyper,
               const std::string& block = "parameters");

class NonFiniteGradient : public Error {
public:
    explicit NonFiniteGradient(const std::string& block)
        : Error("non-finite gradient in " + block), block_(block) {}
    const std::string& block() const { return block_; }

private:
    std::string block_;
};

// ---- minibatches ----

struct PixelSample {
    int m = 0;
    int i = 0;
    int j = 0;
    double value = 0.0;

    bool operator==(const PixelSample&) const = default;
};

/// k distinct pixels per projection for every projection, sorted by (m, j, i).
std::vector<PixelSample> sample_minibatch(Rng& rng, const TiltSeries& series, int k);

// ---- losses ----

/// Modeled value of pixel (i, j) of projection m.
double predict_pixel(const NeuralVolume& volume, const DeformParams& gamma, double theta, int i, int j, int n,
                     const TrainConfig& config);

double projection_weight(const TiltSeries& series, std::size_t m, const TrainConfig& config);

/// Mean |y - prediction| over the batch.
double data_loss(std::span<const PixelSample> batch, const NeuralVolume& volume,
                 const std::vector<DeformParams>& gammas, const TiltSeries& series, const TrainConfig& config);

struct LossTerms {
    double total = 0.0;
    double data = 0.0;  // sum over projections of w_m * mean |r|
    double reg = 0.0;
};

/// sum_m w_m mean_m |r| + sum_m reg(gamma_m) over the projections in the batch.
LossTerms total_loss(std::span<const PixelSample> batch, const NeuralVolume& volume,
                     const std::vector<DeformParams>& gammas, const TiltSeries& series, const TrainConfig& config);

struct LossGradient {
    LossTerms loss;
    std::vector<double> volume;           // parameter_count() entries
    std::vector<DeformGradient> deforms;  // one per projection (zero when absent)
};

/// total_loss and its gradient with respect to the volume parameters and every
/// deformation. The l1 subgradient at a zero residual is 0.
LossGradient loss_and_gradient(std::span<const PixelSample> batch, const NeuralVolume& volume,
                               const std::vector<DeformParams>& gammas, const TiltSeries& series,
                               const TrainConfig& config);

// ---- training ----

struct LossRecord {
    int epoch = 0;
    double total_loss = 0.0;
    double data_loss = 0.0;
    double reg_loss = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    NeuralVolume volume;
    std::vector<DeformParams> gammas;
    std::vector<LossRecord> log;
    bool early_stopped = false;
};

/// Thrown when the loss or a gradient stops being finite; carries the state at
/// the end of the last finite epoch.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& what, TrainResult last_good, int epoch)
        : Error(what), last_good(std::move(last_good)), epoch(epoch) {}

    TrainResult last_good;
    int epoch;
};

/// True once `patience` consecutive window means each improved by less than
/// threshold (relative) over the previous window.
bool should_stop_early(const std::vector<LossRecord>& log, int window, double threshold, int patience);

using EpochCallback = std::function<void(const LossRecord&)>;

TrainResult train(const TiltSeries& series, const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace tiltfield
