#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tiltfield/deform.hpp"
#include "tiltfield/neural_volume.hpp"
#include "tiltfield/types.hpp"

namespace tiltfield {

namespace fs = std::filesystem;

// ---- MRC2014 ----

/// Subset of the 1024-byte MRC2014 header that the library reads and writes.
struct MrcHeader {
    int nx = 0;
    int ny = 0;
    int nz = 0;
    int mode = 2;
    int mx = 0;
    int my = 0;
    int mz = 0;
    float cell[3] = {0.0f, 0.0f, 0.0f};
    float dmin = 0.0f;
    float dmax = 0.0f;
    float dmean = 0.0f;
    float rms = 0.0f;
    int ispg = 0;
    int nsymbt = 0;
    int nversion = 20140;

    double voxel_size() const { return mx > 0 ? static_cast<double>(cell[0]) / mx : 1.0; }
};

struct MrcData {
    MrcHeader header;
    std::vector<float> values;  // x fastest, then y, then z
};

/// Reads a mode-2 little-endian MRC file. Extended headers are skipped.
MrcData read_mrc(const fs::path& path);

/// Writes nx * ny * nz floats with cell = n * voxel_size. ispg 1 marks a volume,
/// 0 an image stack.
void write_mrc(const fs::path& path, int nx, int ny, int nz, std::span<const float> values, double voxel_size,
               int ispg);

VoxelVolume read_volume(const fs::path& path);
void write_volume(const VoxelVolume& volume, const fs::path& path);

/// Loads an image stack; angles (radians) are attached when given and must
/// match the stack depth.
TiltSeries read_stack(const fs::path& path, const std::vector<double>& angles = {});
void write_stack(const TiltSeries& series, const fs::path& path, double pixel_size = 1.0);
void write_image(const Image& image, const fs::path& path, double pixel_size = 1.0);

// ---- text sidecars ----

/// One decimal degree value per line; blank lines are ignored.
std::vector<double> read_angles(const fs::path& path);
void write_angles(const fs::path& path, const std::vector<double>& degrees);

std::vector<DeformParams> read_deform_params(const fs::path& path);
void write_deform_params(const fs::path& path, const std::vector<DeformParams>& gammas);

nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& value);

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

// ---- checkpoints ----

/// Binary container: "TFNV", u32 version, u32 scalar bytes (4 or 8), seven i32
/// spec fields (levels, features, log2 table size, min/max resolution, hidden
/// layers, hidden width), u64 parameter count, little-endian payload, CRC-32 of
/// everything before it.
void save_checkpoint(const NeuralVolume& volume, const fs::path& path);
NeuralVolume load_checkpoint(const fs::path& path);

// ---- reproducibility ----

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);

struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json protocol = nlohmann::json::object();
    std::map<std::string, std::uint64_t> seeds;
    std::map<std::string, std::string> versions;
    std::map<std::string, std::string> input_hashes;
    std::map<std::string, std::string> output_hashes;

    bool operator==(const RunManifest&) const = default;
};

void to_json(nlohmann::json& j, const RunManifest& manifest);
void from_json(const nlohmann::json& j, RunManifest& manifest);

void save_run_manifest(const RunManifest& manifest, const fs::path& path);
RunManifest load_run_manifest(const fs::path& path);

// ---- plumbing ----

/// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

}  // namespace tiltfield
