#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
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

struct MlpConfig {
    int in_features = 2;
    int width = 64;
    int blocks = 4;
    double y_min = 10.0, y_max = 100.0;

    int epochs = 1000;
    int batch_size = 512;
    double lr = 1e-3;
    double weight_decay = 3e-4;
    double decay_gamma = 0.9;
    double val_fraction = 0.1;
    int patience = 20;

    void validate() const {
        require(in_features == 2 && width > 0 && blocks >= 1, "invalid MLP shape parameters");
        require(y_min < y_max, "limiter needs y_min < y_max");
        require(epochs >= 1 && batch_size >= 2, "invalid MLP training schedule");
    }
};

/// FC-ReLU-BN blocks; blocks after the first add their input back (identity
/// skip). Head: FC to one output, fixed affine scaling, limiter.
inline nn::Network build_mlp(const MlpConfig& cfg, double out_scale, double out_shift) {
    cfg.validate();
    nn::Network net(cfg.in_features);
    int x = net.batch_norm(net.relu(net.fully_connected(0, cfg.width)));
    for (int b = 1; b < cfg.blocks; ++b) {
        const int h = net.batch_norm(net.relu(net.fully_connected(x, cfg.width)));
        x = net.add(h, x);
    }
    x = net.fully_connected(x, 1);
    x = net.scale_shift(x, out_scale, out_shift);
    net.limiter(x, cfg.y_min, cfg.y_max);
    return net;
}

/// Voxel samples: features interleaved as (i0, ik) per voxel.
struct VoxelSet {
    std::vector<double> features;
    std::vector<double> targets;
    std::size_t size() const { return targets.size(); }
};

/// ROI voxels with a valid target, in storage order.
inline VoxelSet collect_voxels(const std::vector<TrainingSubject>& subjects) {
    VoxelSet out;
    for (const auto& s : subjects) {
        for (std::size_t i = 0; i < s.roi.size(); ++i)
            if (s.roi[i] && s.target_valid[i]) {
                out.features.push_back(s.i0[i]);
                out.features.push_back(s.ik[i]);
                out.targets.push_back(s.target[i]);
            }
    }
    return out;
}

namespace detail {

inline double mlp_eval_loss(nn::Network& net, const VoxelSet& set, int batch) {
    double total = 0.0;
    for (std::size_t start = 0; start < set.size(); start += std::size_t(batch)) {
        const int n = int(std::min(set.size() - start, std::size_t(batch)));
        nn::Tensor x({n, 2, 1, 1},
                     std::vector<double>(set.features.begin() + std::ptrdiff_t(2 * start),
                                         set.features.begin() + std::ptrdiff_t(2 * (start + std::size_t(n)))));
        const auto& pred = net.forward(x, nn::Mode::Eval);
        for (int k = 0; k < n; ++k) total += std::abs(pred[std::size_t(k)] - set.targets[start + std::size_t(k)]);
    }
    return total / double(set.size());
}

} // namespace detail

/// Trains on ROI voxel vectors with L1 loss and RMSProp. Every training
/// subject must contribute at least one ROI voxel.
inline TrainedModel train_mlp(const std::vector<TrainingSubject>& subjects, const MlpConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    require(!subjects.empty(), "empty dataset");
    for (const auto& s : subjects) require(s.roi.count() > 0, "empty ROI");
    const std::size_t n_val = validation_count(subjects.size(), cfg.val_fraction);
    const VoxelSet train = collect_voxels({subjects.begin(), subjects.end() - std::ptrdiff_t(n_val)});
    const VoxelSet val = collect_voxels({subjects.end() - std::ptrdiff_t(n_val), subjects.end()});
    require(train.size() >= 2, "too few valid ROI voxels to train");

    const double mean = std::accumulate(train.targets.begin(), train.targets.end(), 0.0) / double(train.size());
    double var = 0.0;
    for (double t : train.targets) var += (t - mean) * (t - mean);
    const double sd = std::max(std::sqrt(var / double(train.size())), 1.0);

    TrainedModel model{build_mlp(cfg, sd, mean - cfg.y_min), {}, 0, false};
    model.net.init_parameters(seed);

    nn::OptimizerConfig oc;
    oc.kind = nn::OptimizerKind::RMSProp;
    oc.lr = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    oc.decay_gamma = cfg.decay_gamma;
    nn::Optimizer opt(oc);
    auto params = model.net.parameters();

    std::mt19937_64 rng(seed + 1);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    WeightSnapshot best_weights;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog e;
        e.epoch = epoch;
        e.lr = opt.lr();
        double total = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start + 2 <= order.size(); start += std::size_t(cfg.batch_size)) {
            const int n = int(std::min(order.size() - start, std::size_t(cfg.batch_size)));
            if (n < 2) break; // batch norm needs two samples
            nn::Tensor x({n, 2, 1, 1}), y({n, 1, 1, 1});
            for (int k = 0; k < n; ++k) {
                const std::size_t v = order[start + std::size_t(k)];
                x[2 * std::size_t(k)] = train.features[2 * v];
                x[2 * std::size_t(k) + 1] = train.features[2 * v + 1];
                y[std::size_t(k)] = train.targets[v];
            }
            const auto& pred = model.net.forward(x, nn::Mode::Train);
            const auto loss = nn::l1_loss(pred, y);
            model.net.zero_grad();
            model.net.backward(loss.grad);
            opt.step(params);
            total += loss.value * double(n);
            seen += std::size_t(n);
        }
        e.train_loss = total / double(seen);
        opt.end_epoch();
        if (!std::isfinite(e.train_loss)) {
            model.diverged = true;
            model.log.push_back(e);
            break;
        }
        if (val.size() > 0) e.val_loss = detail::mlp_eval_loss(model.net, val, cfg.batch_size);
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

/// Predicts every ROI voxel and reassembles the map; non-ROI voxels are 0.
inline Volume3D predict_mlp(nn::Network& net, const Volume3D& i0, const Volume3D& ik, const RoiMask& roi,
                            int batch = 4096) {
    require(i0.dims() == ik.dims() && i0.dims() == roi.dims(), "dims mismatch between inputs and ROI");
    require(roi.count() > 0, "empty ROI");
    const auto a = extract_voxels(i0, roi);
    const auto b = extract_voxels(ik, roi);
    std::vector<double> preds(a.size());
    for (std::size_t start = 0; start < a.size(); start += std::size_t(batch)) {
        const int n = int(std::min(a.size() - start, std::size_t(batch)));
        nn::Tensor x({n, 2, 1, 1});
        for (int k = 0; k < n; ++k) {
            x[2 * std::size_t(k)] = a[start + std::size_t(k)];
            x[2 * std::size_t(k) + 1] = b[start + std::size_t(k)];
        }
        const auto& pred = net.forward(x, nn::Mode::Eval);
        for (int k = 0; k < n; ++k) preds[start + std::size_t(k)] = pred[std::size_t(k)];
    }
    return reassemble_voxels(preds, roi, i0.dims(), i0.spacing());
}

} // namespace t1rho::fitters
