#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace tiltfield {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Dense voxel lattice. Each axis is mapped affinely onto [-1, 1] with voxel
/// centers at -1 + (2i + 1) / n; physical lengths use voxel_size (nm).
struct GridSpec {
    int n1 = 1;
    int n2 = 1;
    int n3 = 1;
    double voxel_size = 1.0;

    static GridSpec cube(int n, double voxel_size = 1.0) { return {n, n, n, voxel_size}; }

    void validate() const;
    std::size_t voxel_count() const {
        return static_cast<std::size_t>(n1) * static_cast<std::size_t>(n2) * static_cast<std::size_t>(n3);
    }
    bool is_cube() const { return n1 == n2 && n2 == n3; }

    /// Normalized coordinate of the center of voxel `index` along an axis of `n` voxels.
    static double center(int index, int n) { return -1.0 + (2.0 * index + 1.0) / n; }
    /// Inverse of center(): continuous voxel index of a normalized coordinate.
    static double index_of(double x, int n) { return (x + 1.0) * 0.5 * n - 0.5; }

    Vec3 voxel_center(int i, int j, int k) const {
        return {center(i, n1), center(j, n2), center(k, n3)};
    }

    bool operator==(const GridSpec&) const = default;
};

/// Density samples on a GridSpec, stored with the first axis fastest.
class VoxelVolume {
public:
    VoxelVolume() = default;
    explicit VoxelVolume(const GridSpec& grid, double fill = 0.0);

    const GridSpec& grid() const { return grid_; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * grid_.n2 + j) * grid_.n1 + i;
    }
    double& at(int i, int j, int k) { return data_[index(i, j, k)]; }
    double at(int i, int j, int k) const { return data_[index(i, j, k)]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

private:
    GridSpec grid_{};
    std::vector<double> data_;
};

/// Square detector image; pixel (i, j) has i along detector axis 1.
class Image {
public:
    Image() = default;
    explicit Image(int n, double fill = 0.0)
        : n_(n), data_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), fill) {}

    int n() const { return n_; }
    std::size_t size() const { return data_.size(); }

    double& at(int i, int j) { return data_[static_cast<std::size_t>(j) * n_ + i]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(j) * n_ + i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const Image&) const = default;

private:
    int n_ = 0;
    std::vector<double> data_;
};

/// Stack of projections with their tilt angles (radians) and per-image dose weights.
struct TiltSeries {
    std::vector<Image> images;
    std::vector<double> angles;
    std::vector<double> dose_weights;

    std::size_t size() const { return images.size(); }
    int image_size() const { return images.empty() ? 0 : images.front().n(); }

    /// Checks that every image is square and equally sized and that angle and
    /// weight counts match. Missing weights are not an error: they default to 1.
    void validate() const;
    double weight(std::size_t m) const { return dose_weights.empty() ? 1.0 : dose_weights[m]; }
};

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

}  // namespace tiltfield
