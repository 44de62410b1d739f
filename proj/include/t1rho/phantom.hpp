#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "t1rho/error.hpp"
#include "t1rho/signal.hpp"
#include "t1rho/volume.hpp"

namespace t1rho {

enum class Tissue : std::uint8_t { Background = 0, SoftTissue = 1, Bone = 2, Cartilage = 3 };
inline constexpr std::size_t kTissueClasses = 4;

struct Range {
    double low = 0.0, high = 0.0;
};

struct PhantomSpec {
    Dims dims{96, 96, 6};
    Spacing spacing{0.8, 1.0, 3.0};
    int n_subjects = 10;
    std::uint64_t seed = 1234;
    Range t1rho_range_ms{30.0, 70.0};
    Range soft_tissue_t1rho_ms{35.0, 45.0};
    Range bone_t1rho_ms{40.0, 60.0};
    Range i0_range{800.0, 1200.0};
    // Rician sigma as a fraction of the mean cartilage I0 (0.02 <=> SNR 50).
    double noise_sigma = 0.02;
    // Peak |bias field| of the PD surrogate.
    double bias_amplitude = 0.3;
    // Multiplicative PD contrast per tissue class, indexed by Tissue.
    std::array<double, kTissueClasses> pd_contrast_gain{1.0, 0.9, 1.3, 1.1};
    std::vector<double> tsl_ms{0.0, 10.0, 30.0, 50.0};
    double fsl_hz = 300.0;
    NoiseModel noise_model = NoiseModel::Rician;

    void validate() const {
        require(t1rho_range_ms.low > 0.0 && t1rho_range_ms.high <= 200.0 && t1rho_range_ms.low < t1rho_range_ms.high,
                "cartilage T1rho range must satisfy 0 < low < high <= 200");
        require(noise_sigma >= 0.0, "negative noise_sigma");
        require(bias_amplitude >= 0.0, "negative bias_amplitude");
        require(n_subjects > 0, "n_subjects must be positive");
        require(i0_range.low > 0.0 && i0_range.low <= i0_range.high, "invalid i0_range");
        require(dims.nx >= 32 && dims.ny >= 32 && dims.nz >= 1,
                "dims too small for the phantom geometry (need >= 32 voxels in-plane)");
        for (double g : pd_contrast_gain) require(g > 0.0, "pd_contrast_gain must be positive");
        TslSchedule(tsl_ms, fsl_hz);
    }

    TslSchedule schedule() const { return TslSchedule(tsl_ms, fsl_hz); }
};

struct PhantomBundle {
    std::string subject_id;
    Volume3D truth_t1rho;
    Volume3D i0_truth;
    std::map<double, Volume3D> weighted;
    Volume3D pd_surrogate;
    RoiMask roi;
    std::vector<std::uint8_t> tissue;
    double sigma_abs = 0.0;

    const Volume3D& at_tsl(double tsl) const {
        auto it = weighted.find(tsl);
        require(it != weighted.end(), "no weighted image at TSL " + std::to_string(tsl));
        return it->second;
    }
};

inline std::string subject_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sub-%03d", index);
    return buf;
}

namespace detail {

struct SubjectGeometry {
    double joint_line, curvature, thickness_vox, half_extent, gap_vox;
    double t1rho_mean, t1rho_amp, k1, k2, phi1, phi2, phi3;
    double soft_t1rho, bone_t1rho, i0_scale, i0_phase;
    std::array<double, 4> bias_coeff;
};

inline double normalized_coord(int i, int n) { return (double(i) + 0.5) / double(n) * 2.0 - 1.0; }
inline double slice_coord(int z, int nz) { return nz > 1 ? double(z) / double(nz - 1) * 2.0 - 1.0 : 0.0; }

inline double bias_basis(const std::array<double, 4>& c, double u, double v, double w) {
    return c[0] * u + c[1] * v + c[2] * u * v + c[3] * w;
}

} // namespace detail

/// Deterministic synthetic knee-like subject: femur above a curved cartilage band
/// (the ROI), a soft-tissue joint gap, and a tibial plateau, inside a body ellipse.
inline PhantomBundle generate_phantom(const PhantomSpec& spec, int subject_index) {
    spec.validate();
    require(subject_index >= 0 && subject_index < spec.n_subjects, "subject_index out of range");
    constexpr double pi = std::numbers::pi;

    std::seed_seq seq{std::uint64_t(spec.seed), std::uint64_t(subject_index), std::uint64_t(0x7e1a)};
    std::mt19937_64 rng(seq);
    auto uni = [&rng](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    std::normal_distribution<double> normal(0.0, 1.0);

    const double w = spec.t1rho_range_ms.high - spec.t1rho_range_ms.low;
    detail::SubjectGeometry g{};
    g.joint_line = uni(-0.08, 0.08);
    g.curvature = uni(0.2, 0.4);
    g.thickness_vox = uni(5.0, 8.0);
    g.half_extent = uni(0.6, 0.75);
    g.gap_vox = uni(3.0, 5.0);
    g.t1rho_mean = uni(spec.t1rho_range_ms.low + 0.3 * w, spec.t1rho_range_ms.high - 0.3 * w);
    g.t1rho_amp = 0.25 * w;
    g.k1 = uni(0.8, 2.0);
    g.k2 = uni(0.5, 1.0);
    g.phi1 = uni(0.0, 2 * pi);
    g.phi2 = uni(0.0, 2 * pi);
    g.phi3 = uni(0.0, 2 * pi);
    g.soft_t1rho = uni(spec.soft_tissue_t1rho_ms.low, spec.soft_tissue_t1rho_ms.high);
    g.bone_t1rho = uni(spec.bone_t1rho_ms.low, spec.bone_t1rho_ms.high);
    g.i0_scale = uni(spec.i0_range.low, spec.i0_range.high);
    g.i0_phase = uni(0.0, 2 * pi);
    for (double& c : g.bias_coeff) c = normal(rng);
    const std::uint64_t noise_seed = rng();

    const Dims d = spec.dims;
    PhantomBundle b;
    b.subject_id = subject_name(subject_index);
    b.truth_t1rho = Volume3D(d, spec.spacing, 50.0);
    b.i0_truth = Volume3D(d, spec.spacing, 0.0);
    b.roi = RoiMask(d);
    b.tissue.assign(d.count(), std::uint8_t(Tissue::Background));

    const double px = 2.0 / double(d.ny);
    double bias_norm = 0.0;
    for (int z = 0; z < d.nz; ++z) {
        const double zc = detail::slice_coord(z, d.nz);
        const double joint = g.joint_line + 0.04 * zc * zc;
        const double extent = g.half_extent * (1.0 - 0.15 * zc * zc);
        const double th = g.thickness_vox * px;
        for (int y = 0; y < d.ny; ++y) {
            const double v = detail::normalized_coord(y, d.ny);
            for (int x = 0; x < d.nx; ++x) {
                const double u = detail::normalized_coord(x, d.nx);
                const std::size_t i = b.i0_truth.index(x, y, z);
                bias_norm = std::max(bias_norm, std::abs(detail::bias_basis(g.bias_coeff, u, v, zc)));

                if (u * u + v * v > 0.92 * 0.92) continue;
                const double femur = joint - g.curvature * u * u;
                const double tibia = joint + th + g.gap_vox * px + 0.08 * u * u;
                Tissue t = Tissue::SoftTissue;
                if (v < femur) t = Tissue::Bone;
                else if (v < femur + th && std::abs(u) < extent) t = Tissue::Cartilage;
                else if (v > tibia) t = Tissue::Bone;
                b.tissue[i] = std::uint8_t(t);

                double t1 = 50.0, i0 = 0.0;
                switch (t) {
                case Tissue::Cartilage: {
                    const double depth = (v - femur) / th;
                    const double f = 0.55 * std::sin(pi * g.k1 * u + g.phi1) +
                                     0.30 * std::cos(pi * g.k2 * depth + g.phi2) + 0.15 * std::sin(pi * zc + g.phi3);
                    t1 = g.t1rho_mean + g.t1rho_amp * f;
                    i0 = g.i0_scale * (1.0 + 0.08 * std::sin(2.0 * u + g.i0_phase));
                    b.roi.set(i, true);
                    break;
                }
                case Tissue::SoftTissue:
                    t1 = g.soft_t1rho + 2.0 * std::sin(3.0 * v + g.phi2);
                    i0 = 0.45 * g.i0_scale;
                    break;
                case Tissue::Bone:
                    t1 = g.bone_t1rho + 3.0 * std::cos(2.0 * u + g.phi1);
                    i0 = 0.25 * g.i0_scale;
                    break;
                case Tissue::Background: break;
                }
                b.truth_t1rho[i] = t1;
                b.i0_truth[i] = i0;
            }
        }
    }
    require(b.roi.count() > 0, "phantom geometry produced an empty ROI");

    double roi_i0 = 0.0;
    for (std::size_t i = 0; i < b.roi.size(); ++i)
        if (b.roi[i]) roi_i0 += b.i0_truth[i];
    roi_i0 /= double(b.roi.count());
    b.sigma_abs = spec.noise_sigma * roi_i0;

    std::mt19937_64 seeds(noise_seed);
    const TslSchedule schedule = spec.schedule();
    for (double tsl : schedule.tsl_ms()) {
        Volume3D clean(d, spec.spacing, 0.0);
        for (std::size_t i = 0; i < clean.size(); ++i) clean[i] = signal(b.i0_truth[i], b.truth_t1rho[i], tsl);
        b.weighted.emplace(tsl, rician_noise(clean, b.sigma_abs, seeds(), spec.noise_model));
    }

    Volume3D pd(d, spec.spacing, 0.0);
    for (int z = 0; z < d.nz; ++z) {
        const double zc = detail::slice_coord(z, d.nz);
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = pd.index(x, y, z);
                const double u = detail::normalized_coord(x, d.nx), v = detail::normalized_coord(y, d.ny);
                const double bias =
                    bias_norm > 0.0 ? spec.bias_amplitude * detail::bias_basis(g.bias_coeff, u, v, zc) / bias_norm : 0.0;
                pd[i] = b.i0_truth[i] * spec.pd_contrast_gain[b.tissue[i]] * (1.0 + bias);
            }
    }
    b.pd_surrogate = rician_noise(pd, b.sigma_abs, seeds(), spec.noise_model);
    return b;
}

} // namespace t1rho
