#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "t1rho/error.hpp"
#include "t1rho/nn/network.hpp"

namespace t1rho::fitters {

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainedModel {
    nn::Network net;
    std::vector<EpochLog> log;
    int best_epoch = 0;
    bool diverged = false;
};

/// Snapshot of everything that defines a network's eval-mode function.
struct WeightSnapshot {
    std::vector<std::vector<double>> params, buffers;

    static WeightSnapshot take(nn::Network& net) {
        WeightSnapshot s;
        for (auto* p : net.parameters()) s.params.push_back(p->value);
        for (auto* b : net.buffers()) s.buffers.push_back(*b);
        return s;
    }
    void restore(nn::Network& net) const {
        auto ps = net.parameters();
        auto bs = net.buffers();
        require(ps.size() == params.size() && bs.size() == buffers.size(), "snapshot does not match network");
        for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = params[i];
        for (std::size_t i = 0; i < bs.size(); ++i) *bs[i] = buffers[i];
    }
};

/// Number of subjects held out for early stopping: 10% of the training set,
/// at least one when there are two or more subjects.
inline std::size_t validation_count(std::size_t n_subjects, double fraction) {
    if (fraction <= 0.0 || n_subjects < 2) return 0;
    return std::max<std::size_t>(1, std::size_t(std::lround(fraction * double(n_subjects))));
}

/// Writes `epoch,lr,train_loss,val_loss`; an empty val_loss means no validation split.
inline void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    require(bool(out), "cannot write " + path.string());
    out << "epoch,lr,train_loss,val_loss\n";
    char buf[160];
    for (const auto& e : log) {
        if (std::isnan(e.val_loss)) std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,\n", e.epoch, e.lr, e.train_loss);
        else std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", e.epoch, e.lr, e.train_loss, e.val_loss);
        out << buf;
    }
}

} // namespace t1rho::fitters
