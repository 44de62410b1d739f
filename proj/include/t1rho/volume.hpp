#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "t1rho/error.hpp"

namespace t1rho {

struct Dims {
    int nx = 0, ny = 0, nz = 0;

    std::size_t count() const { return std::size_t(nx) * std::size_t(ny) * std::size_t(nz); }
    std::size_t slice_count() const { return std::size_t(nx) * std::size_t(ny); }
    bool operator==(const Dims&) const = default;
};

struct Spacing {
    double sx = 1.0, sy = 1.0, sz = 1.0;
    bool operator==(const Spacing&) const = default;
};

inline std::string to_string(const Dims& d) {
    return "(" + std::to_string(d.nx) + "," + std::to_string(d.ny) + "," + std::to_string(d.nz) + ")";
}

/// Scalar voxel grid. Storage is row-major with x fastest: index = (z*ny + y)*nx + x.
class Volume3D {
public:
    Volume3D() = default;

    Volume3D(Dims dims, Spacing spacing, double fill = 0.0) : dims_(dims), spacing_(spacing) {
        check_geometry();
        require(std::isfinite(fill), "non-finite fill value");
        data_.assign(dims_.count(), fill);
    }

    Volume3D(Dims dims, Spacing spacing, std::vector<double> data)
        : dims_(dims), spacing_(spacing), data_(std::move(data)) {
        check_geometry();
        require(data_.size() == dims_.count(), "data length does not match dims " + to_string(dims_));
        require(all_finite(), "non-finite voxel value");
    }

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(int x, int y, int z) const {
        return (std::size_t(z) * std::size_t(dims_.ny) + std::size_t(y)) * std::size_t(dims_.nx) + std::size_t(x);
    }

    double& at(int x, int y, int z) { return data_[index(x, y, z)]; }
    double at(int x, int y, int z) const { return data_[index(x, y, z)]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    std::span<double> slice(int z) {
        return std::span<double>(data_).subspan(std::size_t(z) * dims_.slice_count(), dims_.slice_count());
    }
    std::span<const double> slice(int z) const {
        return std::span<const double>(data_).subspan(std::size_t(z) * dims_.slice_count(), dims_.slice_count());
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    double max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

    bool operator==(const Volume3D&) const = default;

private:
    void check_geometry() const {
        require(dims_.nx > 0 && dims_.ny > 0 && dims_.nz > 0, "non-positive dimension " + to_string(dims_));
        require(spacing_.sx > 0 && spacing_.sy > 0 && spacing_.sz > 0, "non-positive spacing");
    }

    Dims dims_;
    Spacing spacing_;
    std::vector<double> data_;
};

inline Volume3D new_volume(Dims dims, Spacing spacing, double fill) { return Volume3D(dims, spacing, fill); }

/// Binary label grid: 0 = background, 1 = ROI. Same index layout as Volume3D.
class RoiMask {
public:
    RoiMask() = default;
    explicit RoiMask(Dims dims, std::uint8_t fill = 0) : dims_(dims) {
        require(dims.nx > 0 && dims.ny > 0 && dims.nz > 0, "non-positive dimension " + to_string(dims));
        labels_.assign(dims.count(), fill ? 1 : 0);
    }

    const Dims& dims() const { return dims_; }
    std::size_t size() const { return labels_.size(); }
    std::size_t index(int x, int y, int z) const {
        return (std::size_t(z) * std::size_t(dims_.ny) + std::size_t(y)) * std::size_t(dims_.nx) + std::size_t(x);
    }

    bool operator[](std::size_t i) const { return labels_[i] != 0; }
    bool at(int x, int y, int z) const { return labels_[index(x, y, z)] != 0; }
    void set(std::size_t i, bool on) { labels_[i] = on ? 1 : 0; }
    void set(int x, int y, int z, bool on) { set(index(x, y, z), on); }

    std::span<const std::uint8_t> labels() const { return labels_; }

    std::size_t count() const {
        return std::size_t(std::count(labels_.begin(), labels_.end(), std::uint8_t{1}));
    }
    std::size_t count_in_slice(int z) const {
        auto first = labels_.begin() + std::ptrdiff_t(std::size_t(z) * dims_.slice_count());
        return std::size_t(std::count(first, first + std::ptrdiff_t(dims_.slice_count()), std::uint8_t{1}));
    }

    bool operator==(const RoiMask&) const = default;

private:
    Dims dims_;
    std::vector<std::uint8_t> labels_;
};

/// Spin-lock times (ms) sorted ascending, plus the spin-lock frequency as metadata.
class TslSchedule {
public:
    TslSchedule() = default;
    explicit TslSchedule(std::vector<double> tsl_ms, double fsl_hz = 300.0) : tsl_(std::move(tsl_ms)), fsl_hz_(fsl_hz) {
        require(!tsl_.empty(), "empty TSL schedule");
        std::sort(tsl_.begin(), tsl_.end());
        for (std::size_t i = 0; i < tsl_.size(); ++i) {
            require(std::isfinite(tsl_[i]) && tsl_[i] >= 0.0, "negative or non-finite TSL");
            if (i > 0) require(tsl_[i] > tsl_[i - 1], "duplicate TSL " + std::to_string(tsl_[i]));
        }
    }

    std::span<const double> tsl_ms() const { return tsl_; }
    std::size_t size() const { return tsl_.size(); }
    double operator[](std::size_t i) const { return tsl_[i]; }
    double fsl_hz() const { return fsl_hz_; }

private:
    std::vector<double> tsl_;
    double fsl_hz_ = 300.0;
};

/// Normalized 1D Gaussian taps of half-width `radius`.
inline std::vector<double> gaussian_kernel_1d(int radius, double sigma) {
    require(radius >= 1, "smoothing radius must be >= 1");
    require(sigma > 0.0 && std::isfinite(sigma), "non-positive sigma");
    std::vector<double> k(std::size_t(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[std::size_t(i + radius)] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
        sum += k[std::size_t(i + radius)];
    }
    for (double& v : k) v /= sum;
    return k;
}

/// Per-slice 2D truncated Gaussian with edge replication. The 2D kernel is the
/// outer product of the normalized 1D taps, so it is applied separably.
inline Volume3D gaussian_smooth(const Volume3D& vol, int radius = 3, double sigma = 1.0) {
    const auto k = gaussian_kernel_1d(radius, sigma);
    const auto& d = vol.dims();
    Volume3D out(d, vol.spacing(), 0.0);
    std::vector<double> tmp(d.slice_count());
    for (int z = 0; z < d.nz; ++z) {
        auto src = vol.slice(z);
        auto dst = out.slice(z);
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    const int xs = std::clamp(x + t, 0, d.nx - 1);
                    acc += k[std::size_t(t + radius)] * src[std::size_t(y) * d.nx + xs];
                }
                tmp[std::size_t(y) * d.nx + x] = acc;
            }
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    const int ys = std::clamp(y + t, 0, d.ny - 1);
                    acc += k[std::size_t(t + radius)] * tmp[std::size_t(ys) * d.nx + x];
                }
                dst[std::size_t(y) * d.nx + x] = acc;
            }
    }
    return out;
}

} // namespace t1rho
