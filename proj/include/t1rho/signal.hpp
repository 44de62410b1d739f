#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "t1rho/error.hpp"
#include "t1rho/volume.hpp"

namespace t1rho {

/// Mono-exponential spin-lock decay: I(TSL) = I0 * exp(-TSL / T1rho).
inline double signal(double i0, double t1rho_ms, double tsl_ms) {
    require(t1rho_ms > 0.0, "non-positive T1rho");
    return i0 * std::exp(-tsl_ms / t1rho_ms);
}

enum class NoiseModel { Rician, Gaussian };

/// Magnitude noise: sqrt((s + g1*sigma)^2 + (g2*sigma)^2). Gaussian mode adds
/// g1*sigma only and clips at zero (debugging aid).
inline Volume3D rician_noise(const Volume3D& vol, double sigma_abs, std::uint64_t seed,
                             NoiseModel model = NoiseModel::Rician) {
    require(sigma_abs >= 0.0 && std::isfinite(sigma_abs), "negative noise sigma");
    if (sigma_abs == 0.0) return vol;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Volume3D out = vol;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double re = vol[i] + sigma_abs * normal(rng);
        if (model == NoiseModel::Rician) {
            const double im = sigma_abs * normal(rng);
            out[i] = std::sqrt(re * re + im * im);
        } else {
            out[i] = std::max(re, 0.0);
        }
    }
    return out;
}

} // namespace t1rho
