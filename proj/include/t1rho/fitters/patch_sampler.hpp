#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "t1rho/error.hpp"
#include "t1rho/volume.hpp"

namespace t1rho::fitters {

enum class LossMaskMode { Unmasked, RoiMasked };

/// One training subject after preprocessing. Inputs are already normalized
/// (and zeroed outside the ROI for masked fitters).
struct TrainingSubject {
    Volume3D i0;
    Volume3D ik;
    Volume3D target;
    RoiMask roi;
    RoiMask target_valid;
};

struct PatchConfig {
    int patch = 64;
    double roi_bias = 0.8;
    bool flips = true;
    double max_rotation_deg = 15.0;
    int max_translation = 8;
    // Upper bound of the additive noise sigma, as a fraction of the patch maximum.
    double max_noise_frac = 0.02;
    bool augment = true;
};

struct Patch {
    int subject = 0, z = 0, cx = 0, cy = 0;
    double angle_rad = 0.0;
    bool flip_x = false, flip_y = false;
    std::vector<double> input;  // 2 x P x P, channel 0 = I0-like, 1 = Ik-like
    std::vector<double> target; // P x P
    std::vector<double> mask;   // P x P loss weights (0/1)
};

/// Draws 2D training patches, preferring windows centred near the ROI.
class PatchSampler {
public:
    PatchSampler(const std::vector<TrainingSubject>& subjects, PatchConfig cfg, LossMaskMode mode, std::uint64_t seed)
        : subjects_(&subjects), cfg_(cfg), mode_(mode), rng_(seed) {
        require(!subjects.empty(), "empty dataset");
        require(cfg.patch > 0 && cfg.roi_bias >= 0.0 && cfg.roi_bias <= 1.0, "invalid patch configuration");
        for (const auto& s : subjects) {
            const Dims d = s.i0.dims();
            require(cfg.patch <= d.nx && cfg.patch <= d.ny, "patch larger than slice");
            require(s.ik.dims() == d && s.target.dims() == d && s.roi.dims() == d && s.target_valid.dims() == d,
                    "dims mismatch inside a training subject");
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < s.roi.size(); ++i)
                if (s.roi[i]) idx.push_back(i);
            if (mode == LossMaskMode::RoiMasked) require(!idx.empty(), "empty mask");
            roi_voxels_.push_back(std::move(idx));
        }
    }

    const PatchConfig& config() const { return cfg_; }

    Patch draw() {
        auto& rng = rng_;
        const int n_sub = int(subjects_->size());
        Patch p;
        p.subject = std::uniform_int_distribution<int>(0, n_sub - 1)(rng);
        const auto& s = (*subjects_)[std::size_t(p.subject)];
        const Dims d = s.i0.dims();
        const auto& roi_idx = roi_voxels_[std::size_t(p.subject)];

        const bool near_roi = !roi_idx.empty() && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg_.roi_bias;
        if (near_roi) {
            const std::size_t v = roi_idx[std::uniform_int_distribution<std::size_t>(0, roi_idx.size() - 1)(rng)];
            p.cx = int(v % std::size_t(d.nx));
            p.cy = int((v / std::size_t(d.nx)) % std::size_t(d.ny));
            p.z = int(v / d.slice_count());
        } else {
            p.z = std::uniform_int_distribution<int>(0, d.nz - 1)(rng);
            p.cx = std::uniform_int_distribution<int>(0, d.nx - 1)(rng);
            p.cy = std::uniform_int_distribution<int>(0, d.ny - 1)(rng);
        }
        if (cfg_.augment) {
            std::uniform_int_distribution<int> shift(-cfg_.max_translation, cfg_.max_translation);
            p.cx = std::clamp(p.cx + shift(rng), 0, d.nx - 1);
            p.cy = std::clamp(p.cy + shift(rng), 0, d.ny - 1);
            const double max_rad = cfg_.max_rotation_deg * std::numbers::pi / 180.0;
            p.angle_rad = std::uniform_real_distribution<double>(-max_rad, max_rad)(rng);
            if (cfg_.flips) {
                p.flip_x = std::bernoulli_distribution(0.5)(rng);
                p.flip_y = std::bernoulli_distribution(0.5)(rng);
            }
        }
        render(p);
        if (cfg_.augment && cfg_.max_noise_frac > 0.0) {
            double peak = 0.0;
            for (double v : p.input) peak = std::max(peak, std::abs(v));
            const double sigma = std::uniform_real_distribution<double>(0.0, cfg_.max_noise_frac * peak)(rng);
            std::normal_distribution<double> noise(0.0, 1.0);
            for (double& v : p.input) v += sigma * noise(rng);
        }
        if (mode_ == LossMaskMode::RoiMasked) {
            const std::size_t plane = std::size_t(cfg_.patch) * std::size_t(cfg_.patch);
            for (std::size_t j = 0; j < plane; ++j)
                if (roi_patch_[j] == 0) p.input[j] = p.input[plane + j] = 0.0;
        }
        return p;
    }

    /// Deterministic un-augmented patch centred on (cx, cy) in slice z.
    Patch centered(int subject, int z, int cx, int cy) {
        Patch p;
        p.subject = subject;
        p.z = z;
        p.cx = cx;
        p.cy = cy;
        render(p);
        return p;
    }

    const std::vector<std::size_t>& roi_voxels(int subject) const { return roi_voxels_.at(std::size_t(subject)); }

private:
    // Nearest-neighbour resampling with edge replication.
    void render(Patch& p) {
        const auto& s = (*subjects_)[std::size_t(p.subject)];
        const Dims d = s.i0.dims();
        const int P = cfg_.patch;
        const std::size_t plane = std::size_t(P) * std::size_t(P);
        p.input.assign(2 * plane, 0.0);
        p.target.assign(plane, 0.0);
        p.mask.assign(plane, 0.0);
        roi_patch_.assign(plane, 0);
        const double c = std::cos(p.angle_rad), sn = std::sin(p.angle_rad);
        for (int i = 0; i < P; ++i)
            for (int j = 0; j < P; ++j) {
                double dx = double(j - P / 2), dy = double(i - P / 2);
                if (p.flip_x) dx = -dx;
                if (p.flip_y) dy = -dy;
                const double sx = double(p.cx) + c * dx - sn * dy;
                const double sy = double(p.cy) + sn * dx + c * dy;
                const int xs = std::clamp(int(std::lround(sx)), 0, d.nx - 1);
                const int ys = std::clamp(int(std::lround(sy)), 0, d.ny - 1);
                const std::size_t v = s.i0.index(xs, ys, p.z);
                const std::size_t o = std::size_t(i) * std::size_t(P) + std::size_t(j);
                p.input[o] = s.i0[v];
                p.input[plane + o] = s.ik[v];
                p.target[o] = s.target[v];
                const bool in_roi = s.roi[v];
                roi_patch_[o] = in_roi ? 1 : 0;
                const bool use = s.target_valid[v] && (mode_ == LossMaskMode::Unmasked || in_roi);
                p.mask[o] = use ? 1.0 : 0.0;
            }
    }

    const std::vector<TrainingSubject>* subjects_;
    PatchConfig cfg_;
    LossMaskMode mode_;
    std::mt19937_64 rng_;
    std::vector<std::vector<std::size_t>> roi_voxels_;
    std::vector<std::uint8_t> roi_patch_;
};

} // namespace t1rho::fitters
