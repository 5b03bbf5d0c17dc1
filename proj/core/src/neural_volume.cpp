#include "tiltfield/neural_volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tiltfield/error.hpp"
#include "tiltfield/parallel.hpp"
#include "tiltfield/rng.hpp"

namespace tiltfield {

namespace {

constexpr std::uint32_t kPrime1 = 2654435761u;
constexpr std::uint32_t kPrime2 = 805459861u;

template <typename S>
S softplus(S t) {
    return std::log1p(std::exp(-std::abs(t))) + std::max(t, S(0));
}

template <typename S>
S sigmoid(S t) {
    if (t >= S(0)) {
        return S(1) / (S(1) + std::exp(-t));
    }
    const S e = std::exp(t);
    return e / (S(1) + e);
}

}  // namespace

std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& name) {
    if (name == "f32") {
        return Precision::F32;
    }
    if (name == "f64") {
        return Precision::F64;
    }
    throw InvalidArgument("unknown precision '" + name + "'");
}

int EncodingSpec::resolution(int level) const {
    if (levels == 1) {
        return min_resolution;
    }
    const double growth = std::exp((std::log(static_cast<double>(max_resolution)) -
                                    std::log(static_cast<double>(min_resolution))) /
                                   (levels - 1));
    return static_cast<int>(std::floor(min_resolution * std::pow(growth, level) + 1e-9));
}

bool EncodingSpec::is_dense(int level) const {
    const double vertices = std::pow(static_cast<double>(resolution(level)) + 1.0, 3.0);
    return vertices <= static_cast<double>(table_size());
}

void EncodingSpec::validate() const {
    if (levels < 1 || features < 1) {
        throw InvalidArgument("encoding needs at least one level and one feature");
    }
    if (log2_table_size < 1 || log2_table_size > 30) {
        throw InvalidArgument("encoding table size must be a power of two between 2 and 2^30");
    }
    if (min_resolution < 1 || max_resolution < min_resolution) {
        throw InvalidArgument("encoding resolutions must satisfy 1 <= min <= max");
    }
}

void NetworkSpec::validate() const {
    if (hidden_layers < 1 || hidden_width < 1) {
        throw InvalidArgument("network needs at least one hidden layer of width >= 1");
    }
    if (!(initial_density > 0.0)) {
        throw InvalidArgument("initial density must be positive");
    }
}

VolumeSpec VolumeSpec::for_resolution(int resolution) {
    VolumeSpec spec;
    spec.encoding.max_resolution = std::max(spec.encoding.min_resolution, resolution / 2);
    return spec;
}

void VolumeSpec::validate() const {
    encoding.validate();
    network.validate();
}

void to_json(nlohmann::json& j, const VolumeSpec& spec) {
    j = {{"levels", spec.encoding.levels},
         {"features", spec.encoding.features},
         {"log2_table_size", spec.encoding.log2_table_size},
         {"min_resolution", spec.encoding.min_resolution},
         {"max_resolution", spec.encoding.max_resolution},
         {"hidden_layers", spec.network.hidden_layers},
         {"hidden_width", spec.network.hidden_width},
         {"initial_density", spec.network.initial_density},
         {"precision", to_string(spec.precision)}};
}

void from_json(const nlohmann::json& j, VolumeSpec& spec) {
    VolumeSpec s;
    s.encoding.levels = j.value("levels", s.encoding.levels);
    s.encoding.features = j.value("features", s.encoding.features);
    s.encoding.log2_table_size = j.value("log2_table_size", s.encoding.log2_table_size);
    s.encoding.min_resolution = j.value("min_resolution", s.encoding.min_resolution);
    s.encoding.max_resolution = j.value("max_resolution", s.encoding.max_resolution);
    s.network.hidden_layers = j.value("hidden_layers", s.network.hidden_layers);
    s.network.hidden_width = j.value("hidden_width", s.network.hidden_width);
    s.network.initial_density = j.value("initial_density", s.network.initial_density);
    s.precision = precision_from_string(j.value("precision", std::string("f64")));
    s.validate();
    spec = s;
}

ParamLayout make_layout(const VolumeSpec& spec) {
    spec.validate();
    ParamLayout layout;
    const auto& enc = spec.encoding;
    const std::size_t level_size = enc.table_size() * static_cast<std::size_t>(enc.features);
    for (int l = 0; l < enc.levels; ++l) {
        layout.blocks.push_back({"table" + std::to_string(l), ParamBlock::Kind::HashTable, layout.total, level_size});
        layout.total += level_size;
    }
    const int width = spec.network.hidden_width;
    for (int l = 0; l <= spec.network.hidden_layers; ++l) {
        const int in = l == 0 ? enc.output_dim() : width;
        const int out = l == spec.network.hidden_layers ? 1 : width;
        const std::size_t wsize = static_cast<std::size_t>(in) * out;
        layout.blocks.push_back(
            {"weight" + std::to_string(l), ParamBlock::Kind::Weight, layout.total, wsize, out, in});
        layout.total += wsize;
        layout.blocks.push_back(
            {"bias" + std::to_string(l), ParamBlock::Kind::Bias, layout.total, static_cast<std::size_t>(out)});
        layout.total += out;
    }
    return layout;
}

// ---------------------------------------------------------------------------

template <typename S>
struct TypedCache {
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    int batch = 0;
    std::vector<std::uint32_t> corner;  // [point][level][8]
    std::vector<S> frac;                // [point][level][3]
    Mat encoded;                        // D x B
    std::vector<Mat> hidden;            // W x B, post-activation
    Eigen::Matrix<S, 1, Eigen::Dynamic> output;  // pre-activation
};

struct NeuralVolume::Workspace::Impl {
    TypedCache<float> f32;
    TypedCache<double> f64;
};

NeuralVolume::Workspace::Workspace() : impl_(std::make_unique<Impl>()) {}
NeuralVolume::Workspace::~Workspace() = default;
NeuralVolume::Workspace::Workspace(Workspace&&) noexcept = default;
NeuralVolume::Workspace& NeuralVolume::Workspace::operator=(Workspace&&) noexcept = default;

template <typename S>
struct VolumeKernel {
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
    using CMap = Eigen::Map<const Mat>;
    using CVecMap = Eigen::Map<const Vec>;

    const NeuralVolume& volume;
    const S* params;
    std::vector<int> res;
    std::vector<char> dense;

    explicit VolumeKernel(const NeuralVolume& v) : volume(v), params(nullptr) {
        const auto& enc = v.spec_.encoding;
        for (int l = 0; l < enc.levels; ++l) {
            res.push_back(enc.resolution(l));
            dense.push_back(enc.is_dense(l) ? 1 : 0);
        }
        if constexpr (std::is_same_v<S, double>) {
            params = v.params_.data();
        } else {
            if (v.dirty_) {
                throw std::logic_error("NeuralVolume parameters edited without commit()");
            }
            params = v.mirror_.data();
        }
    }

    static TypedCache<S>& cache(NeuralVolume::Workspace& ws) {
        if constexpr (std::is_same_v<S, double>) {
            return ws.impl().f64;
        } else {
            return ws.impl().f32;
        }
    }
    static const TypedCache<S>& cache(const NeuralVolume::Workspace& ws) {
        if constexpr (std::is_same_v<S, double>) {
            return ws.impl().f64;
        } else {
            return ws.impl().f32;
        }
    }

    const ParamBlock& block(std::size_t k) const { return volume.layout_.blocks[k]; }
    std::size_t weight_block(int layer) const { return volume.spec_.encoding.levels + 2 * layer; }

    std::uint32_t vertex_index(int level, std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
        const std::uint32_t mask = static_cast<std::uint32_t>(volume.spec_.encoding.table_size() - 1);
        if (dense[level]) {
            const std::uint32_t side = static_cast<std::uint32_t>(res[level]) + 1;
            return i + side * (j + side * k);
        }
        return (i ^ (j * kPrime1) ^ (k * kPrime2)) & mask;
    }

    void encode(std::span<const Vec3> points, TypedCache<S>& c) const {
        const auto& enc = volume.spec_.encoding;
        const int levels = enc.levels;
        const int features = enc.features;
        const int batch = static_cast<int>(points.size());
        c.batch = batch;
        c.corner.resize(static_cast<std::size_t>(batch) * levels * 8);
        c.frac.resize(static_cast<std::size_t>(batch) * levels * 3);
        c.encoded.setZero(enc.output_dim(), batch);
        const std::size_t table_stride = enc.table_size() * features;

        for (int b = 0; b < batch; ++b) {
            const Vec3& x = points[b];
            for (int l = 0; l < levels; ++l) {
                const int n = res[l];
                std::uint32_t base[3];
                S f[3];
                for (int a = 0; a < 3; ++a) {
                    const double u = (std::clamp(x[a], -1.0, 1.0) + 1.0) * 0.5 * n;
                    const int i0 = std::min(static_cast<int>(std::floor(u)), n - 1);
                    base[a] = static_cast<std::uint32_t>(i0);
                    f[a] = static_cast<S>(u - i0);
                }
                std::uint32_t* corner = &c.corner[(static_cast<std::size_t>(b) * levels + l) * 8];
                S* fr = &c.frac[(static_cast<std::size_t>(b) * levels + l) * 3];
                fr[0] = f[0];
                fr[1] = f[1];
                fr[2] = f[2];
                const S* table = params + l * table_stride;
                for (int q = 0; q < 8; ++q) {
                    const std::uint32_t ci = base[0] + (q & 1);
                    const std::uint32_t cj = base[1] + ((q >> 1) & 1);
                    const std::uint32_t ck = base[2] + ((q >> 2) & 1);
                    const std::uint32_t idx = vertex_index(l, ci, cj, ck);
                    corner[q] = idx;
                    const S w = ((q & 1) ? f[0] : S(1) - f[0]) * (((q >> 1) & 1) ? f[1] : S(1) - f[1]) *
                                (((q >> 2) & 1) ? f[2] : S(1) - f[2]);
                    const S* entry = table + static_cast<std::size_t>(idx) * features;
                    S* out = c.encoded.data() + static_cast<std::size_t>(b) * enc.output_dim() + l * features;
                    for (int ft = 0; ft < features; ++ft) {
                        out[ft] += w * entry[ft];
                    }
                }
            }
        }
    }

    void forward(std::span<const Vec3> points, TypedCache<S>& c, std::span<double> density) const {
        encode(points, c);
        const int hidden = volume.spec_.network.hidden_layers;
        c.hidden.resize(hidden);
        const Mat* input = &c.encoded;
        for (int l = 0; l < hidden; ++l) {
            const ParamBlock& wb = block(weight_block(l));
            const ParamBlock& bb = block(weight_block(l) + 1);
            CMap w(params + wb.offset, wb.rows, wb.cols);
            CVecMap bias(params + bb.offset, bb.size);
            c.hidden[l].noalias() = w * (*input);
            c.hidden[l].colwise() += bias;
            c.hidden[l] = c.hidden[l].cwiseMax(S(0));
            input = &c.hidden[l];
        }
        const ParamBlock& wb = block(weight_block(hidden));
        const ParamBlock& bb = block(weight_block(hidden) + 1);
        CMap w(params + wb.offset, wb.rows, wb.cols);
        c.output.noalias() = w * (*input);
        c.output.array() += params[bb.offset];
        for (int b = 0; b < c.batch; ++b) {
            density[b] = static_cast<double>(softplus(c.output(b)));
        }
    }

    // Results go through Eigen-owned temporaries: evaluating straight into the
    // caller's buffer would make the summation order depend on its address.
    static void add_to(std::span<double> grad, std::size_t offset, const S* src, Eigen::Index count) {
        for (Eigen::Index k = 0; k < count; ++k) {
            grad[offset + k] += static_cast<double>(src[k]);
        }
    }

    void backward(const TypedCache<S>& c, std::span<const double> upstream, std::span<double> grad,
                  std::span<Vec3> input_grad) const {
        const auto& enc = volume.spec_.encoding;
        const int hidden = volume.spec_.network.hidden_layers;
        const int batch = c.batch;

        Eigen::Matrix<S, 1, Eigen::Dynamic> g_out(batch);
        for (int b = 0; b < batch; ++b) {
            const S v = static_cast<S>(upstream[b]) * sigmoid(c.output(b));
            // Deep in empty space the sigmoid underflows; denormals would stall the GEMMs below.
            g_out(b) = std::abs(v) < std::numeric_limits<S>::min() ? S(0) : v;
        }

        // Output layer.
        {
            const ParamBlock& wb = block(weight_block(hidden));
            const ParamBlock& bb = block(weight_block(hidden) + 1);
            const Mat& in = c.hidden[hidden - 1];
            const Mat gw = g_out * in.transpose();
            add_to(grad, wb.offset, gw.data(), gw.size());
            grad[bb.offset] += static_cast<double>(g_out.sum());
        }
        Mat g;
        {
            const ParamBlock& wb = block(weight_block(hidden));
            CMap w(params + wb.offset, wb.rows, wb.cols);
            g.noalias() = w.transpose() * g_out;
            g = (c.hidden[hidden - 1].array() > S(0)).select(g, S(0));
        }
        for (int l = hidden - 1; l >= 0; --l) {
            const ParamBlock& wb = block(weight_block(l));
            const ParamBlock& bb = block(weight_block(l) + 1);
            const Mat& in = l == 0 ? c.encoded : c.hidden[l - 1];
            const Mat gw = g * in.transpose();
            const Vec gb = g.rowwise().sum();
            add_to(grad, wb.offset, gw.data(), gw.size());
            add_to(grad, bb.offset, gb.data(), gb.size());
            CMap w(params + wb.offset, wb.rows, wb.cols);
            Mat prev;
            prev.noalias() = w.transpose() * g;
            if (l > 0) {
                prev = (c.hidden[l - 1].array() > S(0)).select(prev, S(0));
            }
            g.swap(prev);
        }
        // g is now d/d encoded (D x B): scatter into tables and, optionally, into x.
        const int levels = enc.levels;
        const int features = enc.features;
        const std::size_t table_stride = enc.table_size() * features;
        const bool want_input = !input_grad.empty();
        for (int b = 0; b < batch; ++b) {
            Vec3 dx = Vec3::Zero();
            for (int l = 0; l < levels; ++l) {
                const std::uint32_t* corner = &c.corner[(static_cast<std::size_t>(b) * levels + l) * 8];
                const S* f = &c.frac[(static_cast<std::size_t>(b) * levels + l) * 3];
                double* gtable = grad.data() + l * table_stride;
                const S* table = params + l * table_stride;
                const double half_res = 0.5 * res[l];
                for (int q = 0; q < 8; ++q) {
                    const S wx = (q & 1) ? f[0] : S(1) - f[0];
                    const S wy = ((q >> 1) & 1) ? f[1] : S(1) - f[1];
                    const S wz = ((q >> 2) & 1) ? f[2] : S(1) - f[2];
                    const S w = wx * wy * wz;
                    const std::size_t entry = static_cast<std::size_t>(corner[q]) * features;
                    S dot = S(0);
                    for (int ft = 0; ft < features; ++ft) {
                        const S ge = g(l * features + ft, b);
                        gtable[entry + ft] += static_cast<double>(w * ge);
                        if (want_input) {
                            dot += ge * table[entry + ft];
                        }
                    }
                    if (want_input) {
                        const S sx = (q & 1) ? S(1) : S(-1);
                        const S sy = ((q >> 1) & 1) ? S(1) : S(-1);
                        const S sz = ((q >> 2) & 1) ? S(1) : S(-1);
                        dx[0] += static_cast<double>(dot * sx * wy * wz) * half_res;
                        dx[1] += static_cast<double>(dot * wx * sy * wz) * half_res;
                        dx[2] += static_cast<double>(dot * wx * wy * sz) * half_res;
                    }
                }
            }
            if (want_input) {
                input_grad[b] = dx;
            }
        }
    }
};

// ---------------------------------------------------------------------------

NeuralVolume::NeuralVolume(const VolumeSpec& spec, std::uint64_t seed) : spec_(spec), layout_(make_layout(spec)) {
    params_.assign(layout_.total, 0.0);
    Rng rng(derive_seed(seed, 0x766f6cULL));
    std::uniform_real_distribution<double> table_init(-1e-4, 1e-4);
    for (const auto& blk : layout_.blocks) {
        if (blk.kind == ParamBlock::Kind::HashTable) {
            for (std::size_t k = 0; k < blk.size; ++k) {
                params_[blk.offset + k] = table_init(rng);
            }
        } else if (blk.kind == ParamBlock::Kind::Weight) {
            const double bound = std::sqrt(6.0 / blk.cols);
            std::uniform_real_distribution<double> w_init(-bound, bound);
            for (std::size_t k = 0; k < blk.size; ++k) {
                params_[blk.offset + k] = w_init(rng);
            }
        }
    }
    // softplus(b) = initial_density
    params_[layout_.blocks.back().offset] = std::log(std::expm1(spec_.network.initial_density));
    sync_mirror();
}

NeuralVolume::NeuralVolume(const VolumeSpec& spec, std::vector<double> parameters)
    : spec_(spec), layout_(make_layout(spec)), params_(parameters.begin(), parameters.end()) {
    if (params_.size() != layout_.total) {
        throw ShapeMismatch("parameter vector has " + std::to_string(params_.size()) + " entries, spec expects " +
                            std::to_string(layout_.total));
    }
    sync_mirror();
}

NeuralVolume::NeuralVolume(const NeuralVolume& other) = default;
NeuralVolume& NeuralVolume::operator=(const NeuralVolume& other) = default;
NeuralVolume::NeuralVolume(NeuralVolume&&) noexcept = default;
NeuralVolume& NeuralVolume::operator=(NeuralVolume&&) noexcept = default;
NeuralVolume::~NeuralVolume() = default;

std::span<double> NeuralVolume::mutable_parameters() {
    dirty_ = true;
    return params_;
}

void NeuralVolume::commit() { sync_mirror(); }

void NeuralVolume::sync_mirror() {
    if (spec_.precision == Precision::F32) {
        mirror_.resize(params_.size());
        std::transform(params_.begin(), params_.end(), mirror_.begin(),
                       [](double v) { return static_cast<float>(v); });
    } else {
        mirror_.clear();
    }
    dirty_ = false;
}

void NeuralVolume::forward(std::span<const Vec3> points, Workspace& ws, std::span<double> density) const {
    if (density.size() < points.size()) {
        throw ShapeMismatch("density output is shorter than the point batch");
    }
    if (spec_.precision == Precision::F32) {
        VolumeKernel<float> k(*this);
        k.forward(points, VolumeKernel<float>::cache(ws), density);
    } else {
        VolumeKernel<double> k(*this);
        k.forward(points, VolumeKernel<double>::cache(ws), density);
    }
}

void NeuralVolume::backward(const Workspace& ws, std::span<const double> upstream, std::span<double> grad,
                            std::span<Vec3> input_grad) const {
    if (grad.size() != params_.size()) {
        throw ShapeMismatch("gradient buffer does not match the parameter count");
    }
    if (spec_.precision == Precision::F32) {
        VolumeKernel<float> k(*this);
        const auto& c = VolumeKernel<float>::cache(ws);
        if (upstream.size() < static_cast<std::size_t>(c.batch)) {
            throw ShapeMismatch("upstream is shorter than the cached batch");
        }
        k.backward(c, upstream, grad, input_grad);
    } else {
        VolumeKernel<double> k(*this);
        const auto& c = VolumeKernel<double>::cache(ws);
        if (upstream.size() < static_cast<std::size_t>(c.batch)) {
            throw ShapeMismatch("upstream is shorter than the cached batch");
        }
        k.backward(c, upstream, grad, input_grad);
    }
}

std::vector<double> NeuralVolume::hash_encode(const Vec3& x) const {
    Workspace ws;
    const Vec3 pts[1] = {x};
    std::vector<double> out(spec_.encoding.output_dim());
    if (spec_.precision == Precision::F32) {
        VolumeKernel<float> k(*this);
        auto& c = VolumeKernel<float>::cache(ws);
        k.encode(pts, c);
        for (int d = 0; d < spec_.encoding.output_dim(); ++d) out[d] = c.encoded(d, 0);
    } else {
        VolumeKernel<double> k(*this);
        auto& c = VolumeKernel<double>::cache(ws);
        k.encode(pts, c);
        for (int d = 0; d < spec_.encoding.output_dim(); ++d) out[d] = c.encoded(d, 0);
    }
    return out;
}

double NeuralVolume::density_at(const Vec3& x) const {
    Workspace ws;
    const Vec3 pts[1] = {x};
    double out[1];
    forward(pts, ws, out);
    return out[0];
}

std::vector<double> NeuralVolume::gradient(std::span<const Vec3> points, std::span<const double> upstream) const {
    std::vector<double> grad(params_.size(), 0.0);
    Workspace ws;
    std::vector<double> density(points.size());
    forward(points, ws, density);
    backward(ws, upstream, grad);
    return grad;
}

VoxelVolume NeuralVolume::export_grid(const GridSpec& grid, int workers) const {
    VoxelVolume out(grid);
    const std::size_t total = grid.voxel_count();
    constexpr std::size_t kBlock = 4096;
    const std::size_t blocks = (total + kBlock - 1) / kBlock;
    parallel_for(blocks, workers, [&](std::size_t begin, std::size_t end, int) {
        Workspace ws;
        std::vector<Vec3> pts;
        std::vector<double> dens;
        for (std::size_t blk = begin; blk < end; ++blk) {
            const std::size_t first = blk * kBlock;
            const std::size_t last = std::min(total, first + kBlock);
            pts.resize(last - first);
            dens.resize(last - first);
            for (std::size_t v = first; v < last; ++v) {
                const int i = static_cast<int>(v % grid.n1);
                const int j = static_cast<int>((v / grid.n1) % grid.n2);
                const int k = static_cast<int>(v / (static_cast<std::size_t>(grid.n1) * grid.n2));
                pts[v - first] = grid.voxel_center(i, j, k);
            }
            forward(pts, ws, dens);
            std::copy(dens.begin(), dens.end(), out.data().begin() + static_cast<std::ptrdiff_t>(first));
        }
    });
    return out;
}

}  // namespace tiltfield
