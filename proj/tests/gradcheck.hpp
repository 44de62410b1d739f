#pragma once

// Central finite-difference verification of Network::backward.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "t1rho/nn/network.hpp"

namespace gradcheck {

using t1rho::nn::Mode;
using t1rho::nn::Network;
using t1rho::nn::Tensor;

struct Result {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Relative error with a floor so that entries whose true gradient is ~0 are
// judged on absolute terms. The floor follows the largest gradient in the
// check because finite-difference roundoff scales with the output magnitude.
inline double rel_error(double a, double n, double floor = 1e-6) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Smallest |pre-activation| over every ReLU and limiter input, measured
/// from the limiter's two kinks. Whole-network checks need this away from 0.
inline double kink_distance(Network& net, const Tensor& x, Mode mode) {
    net.forward(x, mode);
    double d = std::numeric_limits<double>::infinity();
    for (int i = 1; i < int(net.size()); ++i) {
        const auto& s = net.spec(i);
        if (s.kind != t1rho::nn::LayerKind::Relu && s.kind != t1rho::nn::LayerKind::Limiter) continue;
        for (double v : net.activation(s.inputs[0]).data()) {
            d = std::min(d, std::abs(v));
            if (s.kind == t1rho::nn::LayerKind::Limiter) d = std::min(d, std::abs(v - (s.y_max - s.y_min)));
        }
    }
    return d;
}

/// Loss = sum(w .* forward(x)). Compares analytic gradients for every
/// parameter entry and every input entry against central differences.
inline Result check(Network& net, Tensor x, Mode mode, std::mt19937_64& rng, double h = 1e-5) {
    const Tensor& probe = net.forward(x, mode);
    Tensor w(probe.shape());
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : w.data()) v = u(rng);
    auto loss = [&]() {
        const Tensor& y = net.forward(x, mode);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
        return s;
    };

    loss();
    net.zero_grad();
    const Tensor dx = net.backward(w);
    std::vector<std::vector<double>> dparams;
    for (auto* p : net.parameters()) dparams.push_back(p->grad);

    double scale = 0.0;
    for (const auto& g : dparams)
        for (double v : g) scale = std::max(scale, std::abs(v));
    for (double v : dx.data()) scale = std::max(scale, std::abs(v));
    const double floor = std::max(1e-6, 1e-4 * scale);

    Result r;
    auto params = net.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& val = params[k]->value;
        for (std::size_t j = 0; j < val.size(); ++j) {
            const double keep = val[j];
            val[j] = keep + h;
            const double lp = loss();
            val[j] = keep - h;
            const double lm = loss();
            val[j] = keep;
            r.max_rel_error = std::max(r.max_rel_error, rel_error(dparams[k][j], (lp - lm) / (2 * h), floor));
            ++r.checked;
        }
    }
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double keep = x[j];
        x[j] = keep + h;
        const double lp = loss();
        x[j] = keep - h;
        const double lm = loss();
        x[j] = keep;
        r.max_rel_error = std::max(r.max_rel_error, rel_error(dx[j], (lp - lm) / (2 * h), floor));
        ++r.checked;
    }
    return r;
}

/// Random tensor whose entries keep at least `gap` away from each kink in
/// `kinks` and from each other inside a row (so ReLU, limiter and max-pool
/// stay differentiable under the probe step).
inline Tensor random_input(t1rho::nn::Shape s, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0,
                           std::vector<double> kinks = {}, double gap = 1e-3) {
    Tensor t(s);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data()) {
        for (;;) {
            v = u(rng);
            bool ok = true;
            for (double k : kinks) ok &= std::abs(v - k) > gap;
            if (ok) break;
        }
    }
    return t;
}

/// Randomizes every parameter (including BN scale and shift).
inline void randomize(Network& net, std::mt19937_64& rng, double scale = 0.5) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto* p : net.parameters())
        for (auto& v : p->value) v = u(rng);
}

/// A named layer harness: builds a fresh randomized network around one layer
/// kind and returns its input.
struct Case {
    std::string name;
    std::function<Result(std::mt19937_64&)> run;
};

inline std::vector<Case> layer_cases() {
    using t1rho::nn::Shape;
    std::vector<Case> cases;
    auto dims = [](std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    cases.push_back({"conv2d_3x3", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = dims(rng, 3, 6), w = dims(rng, 3, 6);
                         Network net(c, h, w);
                         net.conv2d(0, dims(rng, 1, 3), 3);
                         randomize(net, rng);
                         return check(net, random_input({dims(rng, 1, 2), c, h, w}, rng), Mode::Train, rng);
                     }});
    cases.push_back({"conv2d_1x1", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 4), h = dims(rng, 1, 5), w = dims(rng, 1, 5);
                         Network net(c, h, w);
                         net.conv2d(0, dims(rng, 1, 3), 1);
                         randomize(net, rng);
                         return check(net, random_input({dims(rng, 1, 2), c, h, w}, rng), Mode::Train, rng);
                     }});
    cases.push_back({"max_pool", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = 2 * dims(rng, 1, 3), w = 2 * dims(rng, 1, 3);
                         Network net(c, h, w);
                         net.max_pool(0);
                         // Distinct values within every window: a shuffled ladder with spacing 0.01.
                         Tensor x({dims(rng, 1, 2), c, h, w});
                         std::vector<double> ladder(x.size());
                         for (std::size_t i = 0; i < ladder.size(); ++i) ladder[i] = 0.01 * double(i) - 1.0;
                         std::shuffle(ladder.begin(), ladder.end(), rng);
                         std::copy(ladder.begin(), ladder.end(), x.data().begin());
                         return check(net, x, Mode::Train, rng);
                     }});
    cases.push_back({"nearest_upsample", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = dims(rng, 1, 4), w = dims(rng, 1, 4);
                         Network net(c, h, w);
                         net.upsample(0);
                         return check(net, random_input({dims(rng, 1, 2), c, h, w}, rng), Mode::Train, rng);
                     }});
    cases.push_back({"concat_skip", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = dims(rng, 2, 4), w = dims(rng, 2, 4);
                         Network net(c, h, w);
                         const int a = net.conv2d(0, dims(rng, 1, 2), 1);
                         const int b = net.scale_shift(0, 1.7, -0.2);
                         net.concat(a, b);
                         randomize(net, rng);
                         return check(net, random_input({dims(rng, 1, 2), c, h, w}, rng), Mode::Train, rng);
                     }});
    cases.push_back({"fully_connected", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = dims(rng, 1, 3), w = dims(rng, 1, 3);
                         Network net(c, h, w);
                         net.fully_connected(0, dims(rng, 1, 5));
                         randomize(net, rng);
                         return check(net, random_input({dims(rng, 1, 3), c, h, w}, rng), Mode::Train, rng);
                     }});
    cases.push_back({"batch_norm_train", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = dims(rng, 1, 3), w = dims(rng, 1, 3);
                         Network net(c, h, w);
                         net.batch_norm(0);
                         randomize(net, rng, 1.5);
                         const int n = h * w == 1 ? dims(rng, 2, 5) : dims(rng, 1, 3);
                         return check(net, random_input({n, c, h, w}, rng), Mode::Train, rng);
                     }});
    cases.push_back({"batch_norm_eval", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = dims(rng, 1, 3), w = dims(rng, 1, 3);
                         Network net(c, h, w);
                         net.batch_norm(0);
                         randomize(net, rng, 1.5);
                         for (auto* b : net.buffers())
                             for (auto& v : *b) v = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
                         return check(net, random_input({dims(rng, 1, 3), c, h, w}, rng), Mode::Eval, rng);
                     }});
    cases.push_back({"relu", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = dims(rng, 1, 4), w = dims(rng, 1, 4);
                         Network net(c, h, w);
                         net.relu(0);
                         return check(net, random_input({dims(rng, 1, 2), c, h, w}, rng, -2, 2, {0.0}), Mode::Train, rng);
                     }});
    cases.push_back({"add_skip", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = dims(rng, 1, 4), w = dims(rng, 1, 4);
                         Network net(c, h, w);
                         const int a = net.conv2d(0, c, 1);
                         net.add(a, 0);
                         randomize(net, rng);
                         return check(net, random_input({dims(rng, 1, 2), c, h, w}, rng), Mode::Train, rng);
                     }});
    cases.push_back({"limiter", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = dims(rng, 1, 4), w = dims(rng, 1, 4);
                         Network net(c, h, w);
                         net.limiter(0, 10.0, 100.0);
                         return check(net, random_input({dims(rng, 1, 2), c, h, w}, rng, -30, 120, {0.0, 90.0}),
                                      Mode::Train, rng);
                     }});
    cases.push_back({"scale_shift", [=](std::mt19937_64& rng) {
                         const int c = dims(rng, 1, 3), h = dims(rng, 1, 4), w = dims(rng, 1, 4);
                         Network net(c, h, w);
                         net.scale_shift(0, std::uniform_real_distribution<double>(-3, 3)(rng), 0.4);
                         return check(net, random_input({dims(rng, 1, 2), c, h, w}, rng), Mode::Train, rng);
                     }});
    return cases;
}

} // namespace gradcheck
