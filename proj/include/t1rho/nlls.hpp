#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "t1rho/error.hpp"
#include "t1rho/volume.hpp"

namespace t1rho {

struct FitBounds {
    double t1rho_min_ms = 1.0;
    double t1rho_max_ms = 200.0;
    double i0_min = 0.0;
    // Unset means 4x the largest input intensity.
    std::optional<double> i0_max;

    void validate() const {
        require(t1rho_min_ms < t1rho_max_ms, "T1rho bounds must satisfy min < max");
        require(!i0_max || i0_min < *i0_max, "I0 bounds must satisfy min < max");
    }
};

struct FitResult {
    Volume3D t1rho_map;
    Volume3D i0_map;
    RoiMask valid;
    std::vector<int> iterations;
    std::vector<double> residual;
};

struct LmOptions {
    double tol = 1e-8;
    int max_iter = 100;
    double lambda0 = 1e-3;
};

/// Per-voxel outcome of the 2-parameter Levenberg-Marquardt solve.
struct VoxelFit {
    double i0 = 0.0;
    double t1rho = 0.0;
    double sse = 0.0;
    int iterations = 0;
    bool valid = false;
    // SSE after every accepted step, starting with the initial guess. Only
    // filled when requested.
    std::vector<double> sse_trace;
};

/// Closed-form inverse of the decay model from two images.
inline FitResult fit_two_point(const Volume3D& i0_img, const Volume3D& ik_img, double tsl0_ms, double tslk_ms,
                               const FitBounds& bounds = {}) {
    bounds.validate();
    require(i0_img.dims() == ik_img.dims(), "dims mismatch between I0 and Ik images");
    require(tslk_ms > tsl0_ms && tsl0_ms >= 0.0, "two-point fit needs tslk > tsl0 >= 0");
    const double i0_max = bounds.i0_max.value_or(4.0 * std::max({i0_img.max(), ik_img.max(), 1e-12}));
    const double dt = tslk_ms - tsl0_ms;

    FitResult r{Volume3D(i0_img.dims(), i0_img.spacing(), bounds.t1rho_max_ms),
                Volume3D(i0_img.dims(), i0_img.spacing(), 0.0), RoiMask(i0_img.dims()), {}, {}};
    for (std::size_t i = 0; i < i0_img.size(); ++i) {
        const double a = i0_img[i], b = ik_img[i];
        if (!(a > b && b > 0.0)) {
            r.t1rho_map[i] = bounds.t1rho_max_ms;
            r.i0_map[i] = std::clamp(a, bounds.i0_min, i0_max);
            continue;
        }
        const double t = dt / std::log(a / b);
        const double tc = std::clamp(t, bounds.t1rho_min_ms, bounds.t1rho_max_ms);
        const double i0 = a * std::exp(tsl0_ms / tc);
        const double i0c = std::clamp(i0, bounds.i0_min, i0_max);
        r.t1rho_map[i] = tc;
        r.i0_map[i] = i0c;
        r.valid.set(i, tc == t && i0c == i0);
    }
    return r;
}

namespace detail {

inline double decay_sse(std::span<const double> tsl, std::span<const double> y, double i0, double t1) {
    double s = 0.0;
    for (std::size_t k = 0; k < tsl.size(); ++k) {
        const double r = y[k] - i0 * std::exp(-tsl[k] / t1);
        s += r * r;
    }
    return s;
}

} // namespace detail

/// Bounded LM for min_{I0,T} sum_k (y_k - I0 exp(-tsl_k / T))^2. Marquardt
/// scaling (damping proportional to diag(J^T J)) keeps the path invariant to
/// intensity scaling.
inline VoxelFit fit_voxel_lm(std::span<const double> tsl, std::span<const double> y, const FitBounds& bounds,
                             double i0_max, const LmOptions& opt = {}, bool trace = false) {
    const std::size_t n = tsl.size();
    VoxelFit f;
    bool init_ok = std::all_of(y.begin(), y.end(), [](double v) { return v > 0.0; });

    double i0 = 0.5 * (bounds.i0_min + i0_max);
    double t1 = 0.5 * (bounds.t1rho_min_ms + bounds.t1rho_max_ms);
    if (init_ok) {
        double mt = 0.0, ml = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            mt += tsl[k];
            ml += std::log(y[k]);
        }
        mt /= double(n);
        ml /= double(n);
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            sxy += (tsl[k] - mt) * (std::log(y[k]) - ml);
            sxx += (tsl[k] - mt) * (tsl[k] - mt);
        }
        const double slope = sxy / sxx;
        i0 = std::exp(ml - slope * mt);
        t1 = slope < 0.0 ? -1.0 / slope : bounds.t1rho_max_ms;
    }
    i0 = std::clamp(i0, bounds.i0_min, i0_max);
    t1 = std::clamp(t1, bounds.t1rho_min_ms, bounds.t1rho_max_ms);

    double sse = detail::decay_sse(tsl, y, i0, t1);
    if (trace) f.sse_trace.push_back(sse);
    double lambda = opt.lambda0;
    bool converged = false;
    int it = 0;
    while (it < opt.max_iter && !converged) {
        ++it;
        // Normal equations for the residual r_k = y_k - m_k.
        double a00 = 0.0, a01 = 0.0, a11 = 0.0, g0 = 0.0, g1 = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double e = std::exp(-tsl[k] / t1);
            const double j0 = e;
            const double j1 = i0 * e * tsl[k] / (t1 * t1);
            const double r = y[k] - i0 * e;
            a00 += j0 * j0;
            a01 += j0 * j1;
            a11 += j1 * j1;
            g0 += j0 * r;
            g1 += j1 * r;
        }
        const double d00 = a00 * (1.0 + lambda) + 1e-300;
        const double d11 = a11 * (1.0 + lambda) + 1e-300;
        const double det = d00 * d11 - a01 * a01;
        if (!(det > 0.0) || !std::isfinite(det)) {
            lambda *= 10.0;
            if (lambda > 1e16) break;
            continue;
        }
        const double s0 = (d11 * g0 - a01 * g1) / det;
        const double s1 = (d00 * g1 - a01 * g0) / det;
        const double rel = std::max(std::abs(s0) / std::max(std::abs(i0), 1e-300), std::abs(s1) / t1);
        if (rel < opt.tol) {
            converged = true;
            break;
        }
        const double ni0 = std::clamp(i0 + s0, bounds.i0_min, i0_max);
        const double nt1 = std::clamp(t1 + s1, bounds.t1rho_min_ms, bounds.t1rho_max_ms);
        const double nsse = detail::decay_sse(tsl, y, ni0, nt1);
        if (nsse < sse) {
            const double moved = std::max(std::abs(ni0 - i0) / std::max(std::abs(i0), 1e-300), std::abs(nt1 - t1) / t1);
            i0 = ni0;
            t1 = nt1;
            sse = nsse;
            if (trace) f.sse_trace.push_back(sse);
            lambda = std::max(lambda / 10.0, 1e-12);
            if (moved < opt.tol) converged = true;
        } else {
            lambda *= 10.0;
            // No descent direction left at machine precision.
            if (lambda > 1e16) converged = true;
        }
    }
    if (sse == 0.0) converged = true;

    f.i0 = i0;
    f.t1rho = t1;
    f.sse = sse;
    f.iterations = it;
    f.valid = init_ok && converged && t1 > bounds.t1rho_min_ms && t1 < bounds.t1rho_max_ms && i0 < i0_max;
    return f;
}

/// Voxel-wise multi-TSL fit. `images` must hold a volume for every schedule entry.
inline FitResult fit_lm(const std::map<double, Volume3D>& images, const TslSchedule& schedule,
                        const FitBounds& bounds = {}, const LmOptions& opt = {}) {
    bounds.validate();
    require(schedule.size() >= 2, "LM fit needs at least 2 distinct TSLs");
    std::vector<const Volume3D*> vols;
    for (double t : schedule.tsl_ms()) {
        auto it = images.find(t);
        require(it != images.end(), "no image for TSL " + std::to_string(t));
        vols.push_back(&it->second);
    }
    const Volume3D& first = *vols.front();
    double data_max = 1e-12;
    for (const auto* v : vols) {
        require(v->dims() == first.dims(), "dims mismatch between TSL images");
        data_max = std::max(data_max, v->max());
    }
    const double i0_max = bounds.i0_max.value_or(4.0 * data_max);

    FitResult r{Volume3D(first.dims(), first.spacing(), 0.0), Volume3D(first.dims(), first.spacing(), 0.0),
                RoiMask(first.dims()), std::vector<int>(first.size()), std::vector<double>(first.size())};
    std::vector<double> y(vols.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        for (std::size_t k = 0; k < vols.size(); ++k) y[k] = (*vols[k])[i];
        const auto f = fit_voxel_lm(schedule.tsl_ms(), y, bounds, i0_max, opt);
        r.t1rho_map[i] = f.t1rho;
        r.i0_map[i] = f.i0;
        r.valid.set(i, f.valid);
        r.iterations[i] = f.iterations;
        r.residual[i] = f.sse;
    }
    return r;
}

} // namespace t1rho
