#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "t1rho/error.hpp"
#include "t1rho/fitters/patch_sampler.hpp"
#include "t1rho/fitters/training.hpp"
#include "t1rho/fitters/voxels.hpp"
#include "t1rho/nn/loss.hpp"
#include "t1rho/nn/network.hpp"
#include "t1rho/nn/optimizer.hpp"
#include "t1rho/volume.hpp"

namespace t1rho::fitters {

struct UNetConfig {
    int in_channels = 2;
    int depth = 4;
    int base_channels = 16;
    double y_min = 10.0, y_max = 100.0;
    int patch = 64;
    LossMaskMode loss_mask_mode = LossMaskMode::Unmasked;

    int epochs = 1000;
    int patches_per_epoch = 64;
    int batch_size = 4;
    double lr = 1e-3;
    double decay_gamma = 0.9;
    double val_fraction = 0.1;
    int val_patches = 8;
    // Stop when validation loss has not improved for this many epochs (0 = never).
    int patience = 20;
    PatchConfig sampling{};

    void validate() const {
        require(depth >= 1 && base_channels > 0 && in_channels == 2, "invalid U-Net shape parameters");
        require(patch % (1 << (depth - 1)) == 0, "patch must be divisible by 2^(depth-1)");
        require(y_min < y_max, "limiter needs y_min < y_max");
        require(epochs >= 1 && batch_size >= 1 && patches_per_epoch >= batch_size, "invalid U-Net training schedule");
    }
};

/// Encoder/decoder with skip concatenation, a 1x1 regressor, a fixed affine
/// output scaling and the range limiter. Each level is two conv3-BN-ReLU units.
inline nn::Network build_unet(const UNetConfig& cfg, double out_scale, double out_shift) {
    cfg.validate();
    nn::Network net(cfg.in_channels, cfg.patch, cfg.patch);
    auto unit = [&net](int from, int ch) {
        const int a = net.relu(net.batch_norm(net.conv2d(from, ch, 3)));
        return net.relu(net.batch_norm(net.conv2d(a, ch, 3)));
    };
    int x = 0;
    std::vector<int> skips;
    for (int level = 0; level < cfg.depth; ++level) {
        x = unit(x, cfg.base_channels << level);
        if (level + 1 < cfg.depth) {
            skips.push_back(x);
            x = net.max_pool(x);
        }
    }
    for (int level = cfg.depth - 2; level >= 0; --level) {
        x = net.upsample(x);
        x = net.concat(x, skips[std::size_t(level)]);
        x = unit(x, cfg.base_channels << level);
    }
    x = net.conv2d(x, 1, 1);
    x = net.scale_shift(x, out_scale, out_shift);
    net.limiter(x, cfg.y_min, cfg.y_max);
    return net;
}

namespace detail {

struct PatchBatch {
    nn::Tensor input, target, mask;
    std::size_t active = 0;
};

inline PatchBatch make_batch(const std::vector<Patch>& patches, int P) {
    const int n = int(patches.size());
    PatchBatch b{nn::Tensor({n, 2, P, P}), nn::Tensor({n, 1, P, P}), nn::Tensor({n, 1, P, P}), 0};
    const std::size_t plane = std::size_t(P) * std::size_t(P);
    for (int s = 0; s < n; ++s) {
        const auto& p = patches[std::size_t(s)];
        std::copy(p.input.begin(), p.input.end(), b.input.data().begin() + std::ptrdiff_t(std::size_t(s) * 2 * plane));
        std::copy(p.target.begin(), p.target.end(), b.target.data().begin() + std::ptrdiff_t(std::size_t(s) * plane));
        std::copy(p.mask.begin(), p.mask.end(), b.mask.data().begin() + std::ptrdiff_t(std::size_t(s) * plane));
        for (double m : p.mask) b.active += m != 0.0;
    }
    return b;
}

} // namespace detail

/// Patch-based training with masked L1, Adam and per-epoch exponential LR
/// decay. The last 10% of `subjects` (by order) form the validation split; the
/// returned network carries the weights of the best validation epoch.
inline TrainedModel train_unet(const std::vector<TrainingSubject>& subjects, const UNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    require(!subjects.empty(), "empty dataset");
    for (const auto& s : subjects) {
        require(s.target.all_finite(), "non-finite training target");
        if (cfg.loss_mask_mode == LossMaskMode::RoiMasked) require(s.roi.count() > 0, "empty mask");
    }
    const std::size_t n_val = validation_count(subjects.size(), cfg.val_fraction);
    const std::vector<TrainingSubject> train(subjects.begin(), subjects.end() - std::ptrdiff_t(n_val));
    const std::vector<TrainingSubject> val(subjects.end() - std::ptrdiff_t(n_val), subjects.end());

    // Output affine from target statistics on fit-valid ROI voxels.
    double sum = 0.0, sq = 0.0;
    std::size_t cnt = 0;
    for (const auto& s : train)
        for (std::size_t i = 0; i < s.target.size(); ++i)
            if (s.roi[i] && s.target_valid[i]) {
                sum += s.target[i];
                sq += s.target[i] * s.target[i];
                ++cnt;
            }
    const double mean = cnt ? sum / double(cnt) : 0.5 * (cfg.y_min + cfg.y_max);
    const double sd = cnt > 1 ? std::sqrt(std::max(sq / double(cnt) - mean * mean, 1.0)) : 10.0;

    TrainedModel model{build_unet(cfg, sd, mean - cfg.y_min), {}, 0, false};
    model.net.init_parameters(seed);

    PatchSampler sampler(train, cfg.sampling, cfg.loss_mask_mode, seed + 1);
    std::vector<Patch> val_patches;
    if (!val.empty()) {
        PatchConfig vcfg = cfg.sampling;
        vcfg.augment = false;
        PatchSampler vs(val, vcfg, cfg.loss_mask_mode, seed + 2);
        std::mt19937_64 vrng(seed + 3);
        for (int k = 0; k < cfg.val_patches; ++k) {
            const int si = k % int(val.size());
            const auto& idx = vs.roi_voxels(si);
            const Dims d = val[std::size_t(si)].i0.dims();
            std::size_t v = idx.empty() ? std::uniform_int_distribution<std::size_t>(0, d.count() - 1)(vrng)
                                        : idx[std::uniform_int_distribution<std::size_t>(0, idx.size() - 1)(vrng)];
            val_patches.push_back(vs.centered(si, int(v / d.slice_count()), int(v % std::size_t(d.nx)),
                                              int((v / std::size_t(d.nx)) % std::size_t(d.ny))));
        }
    }
    const auto val_batch = detail::make_batch(val_patches, cfg.patch);

    nn::OptimizerConfig oc;
    oc.kind = nn::OptimizerKind::Adam;
    oc.lr = cfg.lr;
    oc.decay_gamma = cfg.decay_gamma;
    nn::Optimizer opt(oc);
    auto params = model.net.parameters();

    double best = std::numeric_limits<double>::infinity();
    WeightSnapshot best_weights;
    const int steps = cfg.patches_per_epoch / cfg.batch_size;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochLog e;
        e.epoch = epoch;
        e.lr = opt.lr();
        double total = 0.0;
        int used = 0;
        for (int s = 0; s < steps; ++s) {
            std::vector<Patch> patches;
            for (int b = 0; b < cfg.batch_size; ++b) patches.push_back(sampler.draw());
            const auto batch = detail::make_batch(patches, cfg.patch);
            if (batch.active == 0) continue;
            const auto& pred = model.net.forward(batch.input, nn::Mode::Train);
            const auto loss = nn::l1_loss(pred, batch.target, &batch.mask);
            model.net.zero_grad();
            model.net.backward(loss.grad);
            opt.step(params);
            total += loss.value;
            ++used;
        }
        e.train_loss = used ? total / used : std::numeric_limits<double>::quiet_NaN();
        opt.end_epoch();
        if (!std::isfinite(e.train_loss)) {
            model.diverged = true;
            model.log.push_back(e);
            break;
        }
        if (val_batch.active > 0) {
            const auto& pred = model.net.forward(val_batch.input, nn::Mode::Eval);
            e.val_loss = nn::l1_loss(pred, val_batch.target, &val_batch.mask).value;
        }
        model.log.push_back(e);
        const double score = std::isnan(e.val_loss) ? e.train_loss : e.val_loss;
        if (score < best) {
            best = score;
            model.best_epoch = epoch;
            best_weights = WeightSnapshot::take(model.net);
        } else if (cfg.patience > 0 && epoch - model.best_epoch >= cfg.patience) {
            break;
        }
    }
    if (!best_weights.params.empty()) best_weights.restore(model.net);
    return model;
}

/// Window start positions covering [0, extent): regular steps plus a final
/// window flush with the far edge.
inline std::vector<int> window_starts(int extent, int window, int stride) {
    std::vector<int> out{0};
    if (extent <= window) return out;
    for (int p = stride; p + window < extent; p += stride) out.push_back(p);
    if (out.back() + window < extent) out.push_back(extent - window);
    return out;
}

/// Per-voxel number of windows covering each position in a slice.
inline std::vector<int> coverage_counts(int nx, int ny, int window, int stride) {
    std::vector<int> cov(std::size_t(nx) * std::size_t(ny), 0);
    for (int y0 : window_starts(ny, window, stride))
        for (int x0 : window_starts(nx, window, stride))
            for (int y = y0; y < std::min(ny, y0 + window); ++y)
                for (int x = x0; x < std::min(nx, x0 + window); ++x) ++cov[std::size_t(y) * nx + x];
    return cov;
}

/// Sliding-window inference over every slice. Overlapping predictions are
/// averaged with uniform weights; slices smaller than the window are padded by
/// edge replication.
inline Volume3D infer_unet_sliding(nn::Network& net, const Volume3D& i0, const Volume3D& ik, int window = 64,
                                   int stride = 32) {
    require(i0.dims() == ik.dims(), "dims mismatch between I0 and Ik images");
    const Dims d = i0.dims();
    require(d.nx >= 8 && d.ny >= 8, "volume smaller than 8 px in-plane");
    const auto in_shape = net.input_shape();
    require(in_shape.c == 2 && in_shape.h == window && in_shape.w == window, "network input does not match window");
    require(stride >= 1, "stride must be positive");

    const auto xs = window_starts(d.nx, window, stride);
    const auto ys = window_starts(d.ny, window, stride);
    const int n_win = int(xs.size() * ys.size());
    const std::size_t plane = std::size_t(window) * std::size_t(window);
    Volume3D out(d, i0.spacing(), 0.0);
    std::vector<double> acc(d.slice_count()), cnt(d.slice_count());
    for (int z = 0; z < d.nz; ++z) {
        nn::Tensor batch({n_win, 2, window, window});
        int w = 0;
        for (int y0 : ys)
            for (int x0 : xs) {
                for (int y = 0; y < window; ++y)
                    for (int x = 0; x < window; ++x) {
                        const std::size_t v = i0.index(std::min(x0 + x, d.nx - 1), std::min(y0 + y, d.ny - 1), z);
                        const std::size_t o = std::size_t(y) * window + std::size_t(x);
                        batch[std::size_t(w) * 2 * plane + o] = i0[v];
                        batch[std::size_t(w) * 2 * plane + plane + o] = ik[v];
                    }
                ++w;
            }
        const auto& pred = net.forward(batch, nn::Mode::Eval);
        std::fill(acc.begin(), acc.end(), 0.0);
        std::fill(cnt.begin(), cnt.end(), 0.0);
        w = 0;
        for (int y0 : ys)
            for (int x0 : xs) {
                for (int y = y0; y < std::min(d.ny, y0 + window); ++y)
                    for (int x = x0; x < std::min(d.nx, x0 + window); ++x) {
                        const std::size_t o = std::size_t(y - y0) * window + std::size_t(x - x0);
                        acc[std::size_t(y) * d.nx + x] += pred[std::size_t(w) * plane + o];
                        cnt[std::size_t(y) * d.nx + x] += 1.0;
                    }
                ++w;
            }
        auto dst = out.slice(z);
        for (std::size_t j = 0; j < acc.size(); ++j) dst[j] = acc[j] / cnt[j];
    }
    return out;
}

} // namespace t1rho::fitters
