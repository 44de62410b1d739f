#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "t1rho/error.hpp"
#include "t1rho/volume.hpp"

namespace t1rho::fitters {

/// out = vol * roi, voxel-wise.
inline Volume3D apply_roi_mask(const Volume3D& vol, const RoiMask& roi) {
    require(vol.dims() == roi.dims(), "dims mismatch between volume and ROI");
    Volume3D out = vol;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = roi[i] ? vol[i] : 0.0;
    return out;
}

/// ROI voxel values in storage order, i.e. row-major by (z, y, x).
inline std::vector<double> extract_voxels(const Volume3D& vol, const RoiMask& roi) {
    require(vol.dims() == roi.dims(), "dims mismatch between volume and ROI");
    std::vector<double> out;
    out.reserve(roi.count());
    for (std::size_t i = 0; i < vol.size(); ++i)
        if (roi[i]) out.push_back(vol[i]);
    return out;
}

/// Inverse of extract_voxels; voxels outside the ROI are 0.
inline Volume3D reassemble_voxels(std::span<const double> predictions, const RoiMask& roi, const Dims& dims,
                                  Spacing spacing = {}) {
    require(roi.dims() == dims, "dims mismatch between ROI and requested volume");
    require(predictions.size() == roi.count(), "prediction length " + std::to_string(predictions.size()) +
                                                   " does not match ROI voxel count " + std::to_string(roi.count()));
    Volume3D out(dims, spacing, 0.0);
    std::size_t k = 0;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (roi[i]) out[i] = predictions[k++];
    return out;
}

/// Intensity scale shared by both network inputs: the 99th percentile of the
/// I0-like image over the whole volume.
inline double input_scale(const Volume3D& i0_like) {
    std::vector<double> v(i0_like.data().begin(), i0_like.data().end());
    const std::size_t k = std::min(v.size() - 1, std::size_t(std::floor(0.99 * double(v.size() - 1))));
    std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(k), v.end());
    return v[k] > 0.0 ? v[k] : 1.0;
}

struct PreparedInputs {
    Volume3D i0;
    Volume3D ik;
    double scale = 1.0;
};

/// Normalizes the two input images and, for masked fitters, zeroes non-ROI voxels.
inline PreparedInputs prepare_inputs(const Volume3D& i0_like, const Volume3D& ik_like, const RoiMask* mask = nullptr) {
    require(i0_like.dims() == ik_like.dims(), "dims mismatch between I0 and Ik images");
    PreparedInputs p{i0_like, ik_like, input_scale(i0_like)};
    for (std::size_t i = 0; i < p.i0.size(); ++i) {
        p.i0[i] /= p.scale;
        p.ik[i] /= p.scale;
    }
    if (mask) {
        p.i0 = apply_roi_mask(p.i0, *mask);
        p.ik = apply_roi_mask(p.ik, *mask);
    }
    return p;
}

} // namespace t1rho::fitters
