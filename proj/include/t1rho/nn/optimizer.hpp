#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "t1rho/error.hpp"
#include "t1rho/nn/network.hpp"

namespace t1rho::nn {

enum class OptimizerKind { Adam, RMSProp };

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "rmsprop"; }

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-3;
    double weight_decay = 0.0;
    // Multiplicative LR decay applied at every epoch boundary.
    double decay_gamma = 0.9;
    double beta1 = 0.9, beta2 = 0.999;
    double alpha = 0.99;
    double eps = 1e-8;
};

/// Adam (bias-corrected) or RMSProp with decoupled weight decay.
class Optimizer {
public:
    Optimizer() = default;
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg), lr_(cfg.lr) { require(cfg.lr > 0.0, "learning rate must be positive"); }

    const OptimizerConfig& config() const { return cfg_; }
    double lr() const { return lr_; }
    long step_count() const { return t_; }
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    void restore_scalars(double lr, long steps) {
        lr_ = lr;
        t_ = steps;
    }

    void step(const std::vector<Param*>& params) {
        if (v_.empty()) {
            for (const auto* p : params) {
                if (cfg_.kind == OptimizerKind::Adam) m_.emplace_back(p->value.size(), 0.0);
                v_.emplace_back(p->value.size(), 0.0);
            }
        }
        require(v_.size() == params.size(), "optimizer state does not match parameter list");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i]->value;
            const auto& g = params[i]->grad;
            require(p.size() == g.size() && v_[i].size() == p.size(), "optimizer shape mismatch for " + params[i]->name);
            auto& v = v_[i];
            if (cfg_.kind == OptimizerKind::Adam) {
                auto& m = m_[i];
                for (std::size_t j = 0; j < p.size(); ++j) {
                    const double gj = g[j] + cfg_.weight_decay * p[j];
                    m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                    v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                    p[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
                }
            } else {
                for (std::size_t j = 0; j < p.size(); ++j) {
                    v[j] = cfg_.alpha * v[j] + (1.0 - cfg_.alpha) * g[j] * g[j];
                    p[j] -= lr_ * (g[j] / (std::sqrt(v[j]) + cfg_.eps) + cfg_.weight_decay * p[j]);
                }
            }
        }
    }

    void end_epoch() { lr_ *= cfg_.decay_gamma; }

private:
    OptimizerConfig cfg_;
    double lr_ = 1e-3;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace t1rho::nn
