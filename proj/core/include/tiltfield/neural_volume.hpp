#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tiltfield/types.hpp"

namespace tiltfield {

enum class Precision { F32, F64 };

std::string to_string(Precision p);
Precision precision_from_string(const std::string& name);

/// Multi-resolution grid encoding. Level l has resolution N_l growing
/// geometrically from min_resolution to max_resolution; a level whose
/// (N_l + 1)^3 vertices fit in the table is indexed directly, otherwise by the
/// XOR-of-primes spatial hash.
struct EncodingSpec {
    int levels = 8;
    int features = 2;
    int log2_table_size = 16;
    int min_resolution = 8;
    int max_resolution = 32;

    std::size_t table_size() const { return std::size_t{1} << log2_table_size; }
    int output_dim() const { return levels * features; }
    int resolution(int level) const;
    bool is_dense(int level) const;
    void validate() const;
};

struct NetworkSpec {
    int hidden_layers = 2;
    int hidden_width = 64;
    /// Density everywhere at initialization (sets the output bias).
    double initial_density = 0.01;

    void validate() const;
};

struct VolumeSpec {
    EncodingSpec encoding;
    NetworkSpec network;
    Precision precision = Precision::F64;

    /// Default spec for a target volume of `resolution` voxels per side.
    static VolumeSpec for_resolution(int resolution);
    void validate() const;
};

void to_json(nlohmann::json& j, const VolumeSpec& spec);
void from_json(const nlohmann::json& j, VolumeSpec& spec);

/// Where each parameter block lives inside the flat parameter vector.
struct ParamBlock {
    enum class Kind { HashTable, Weight, Bias };
    std::string name;
    Kind kind;
    std::size_t offset;
    std::size_t size;
    int rows = 0;  // weights only: (rows x cols), column-major
    int cols = 0;
};

struct ParamLayout {
    std::vector<ParamBlock> blocks;
    std::size_t total = 0;
};

ParamLayout make_layout(const VolumeSpec& spec);

/// Coordinate network V(psi): [-1, 1]^3 -> R+, density = softplus(MLP(encode(x))).
/// Parameters live in one flat double vector; in F32 mode a float mirror is used
/// for evaluation and must be refreshed with commit() after edits.
class NeuralVolume {
public:
    class Workspace;

    NeuralVolume(const VolumeSpec& spec, std::uint64_t seed);
    NeuralVolume(const VolumeSpec& spec, std::vector<double> parameters);
    NeuralVolume(const NeuralVolume& other);
    NeuralVolume& operator=(const NeuralVolume& other);
    NeuralVolume(NeuralVolume&&) noexcept;
    NeuralVolume& operator=(NeuralVolume&&) noexcept;
    ~NeuralVolume();

    const VolumeSpec& spec() const { return spec_; }
    const ParamLayout& layout() const { return layout_; }
    std::size_t parameter_count() const { return params_.size(); }

    std::span<const double> parameters() const { return params_; }
    std::span<double> mutable_parameters();
    void commit();

    std::vector<double> hash_encode(const Vec3& x) const;
    double density_at(const Vec3& x) const;

    /// Batched evaluation. The workspace keeps what backward() needs.
    void forward(std::span<const Vec3> points, Workspace& ws, std::span<double> density) const;

    /// Adds d(sum_i upstream_i * density_i)/dpsi to grad (parameter_count() long)
    /// and, when input_grad is non-empty, stores upstream_i * d density_i / d x_i.
    void backward(const Workspace& ws, std::span<const double> upstream, std::span<double> grad,
                  std::span<Vec3> input_grad = {}) const;

    /// Convenience: gradient of sum_i upstream_i * density(x_i) over all parameters.
    std::vector<double> gradient(std::span<const Vec3> points, std::span<const double> upstream) const;

    /// Samples density at every voxel center of grid.
    VoxelVolume export_grid(const GridSpec& grid, int workers = 1) const;

private:
    template <typename S>
    friend struct VolumeKernel;

    void sync_mirror();

    VolumeSpec spec_;
    ParamLayout layout_;
    // Aligned so vectorized kernels see the same block alignment on every run.
    std::vector<double, Eigen::aligned_allocator<double>> params_;
    std::vector<float, Eigen::aligned_allocator<float>> mirror_;
    bool dirty_ = false;
};

class NeuralVolume::Workspace {
public:
    Workspace();
    ~Workspace();
    Workspace(Workspace&&) noexcept;
    Workspace& operator=(Workspace&&) noexcept;

    struct Impl;
    Impl& impl() { return *impl_; }
    const Impl& impl() const { return *impl_; }

private:
    std::unique_ptr<Impl> impl_;
};

}  // namespace tiltfield
