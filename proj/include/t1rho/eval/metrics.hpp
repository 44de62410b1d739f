#pragma once

#include <cmath>

#include "t1rho/error.hpp"
#include "t1rho/volume.hpp"

namespace t1rho::eval {

namespace detail {

inline void check_inputs(const Volume3D& pred, const Volume3D& truth, const RoiMask& roi) {
    require(pred.dims() == truth.dims() && pred.dims() == roi.dims(), "dims mismatch between prediction, truth and ROI");
    require(roi.count() > 0, "empty ROI");
}

struct RoiMeans {
    double pred = 0.0, truth = 0.0;
};

inline RoiMeans roi_means(const Volume3D& pred, const Volume3D& truth, const RoiMask& roi) {
    check_inputs(pred, truth, roi);
    RoiMeans m;
    std::size_t n = 0;
    for (std::size_t i = 0; i < roi.size(); ++i)
        if (roi[i]) {
            m.pred += pred[i];
            m.truth += truth[i];
            ++n;
        }
    m.pred /= double(n);
    m.truth /= double(n);
    return m;
}

} // namespace detail

/// Mean absolute error over the ROI (ms).
inline double mae(const Volume3D& pred, const Volume3D& truth, const RoiMask& roi) {
    detail::check_inputs(pred, truth, roi);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < roi.size(); ++i)
        if (roi[i]) {
            s += std::abs(truth[i] - pred[i]);
            ++n;
        }
    return s / double(n);
}

/// Mean absolute percentage error over the ROI (%).
inline double mape(const Volume3D& pred, const Volume3D& truth, const RoiMask& roi) {
    detail::check_inputs(pred, truth, roi);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < roi.size(); ++i)
        if (roi[i]) {
            require(truth[i] != 0.0, "zero reference value inside ROI");
            s += std::abs(truth[i] - pred[i]) / std::abs(truth[i]);
            ++n;
        }
    return 100.0 * s / double(n);
}

/// Regional error: |mean truth - mean prediction| over the ROI (ms).
inline double re(const Volume3D& pred, const Volume3D& truth, const RoiMask& roi) {
    const auto m = detail::roi_means(pred, truth, roi);
    return std::abs(m.truth - m.pred);
}

/// Regional error relative to the mean reference value (%).
inline double rpe(const Volume3D& pred, const Volume3D& truth, const RoiMask& roi) {
    const auto m = detail::roi_means(pred, truth, roi);
    require(m.truth != 0.0, "zero mean reference value inside ROI");
    return 100.0 * std::abs(m.truth - m.pred) / std::abs(m.truth);
}

struct Metrics {
    double mae_ms = 0.0, mape_pct = 0.0, re_ms = 0.0, rpe_pct = 0.0;
};

inline Metrics all_metrics(const Volume3D& pred, const Volume3D& truth, const RoiMask& roi) {
    return {mae(pred, truth, roi), mape(pred, truth, roi), re(pred, truth, roi), rpe(pred, truth, roi)};
}

} // namespace t1rho::eval
