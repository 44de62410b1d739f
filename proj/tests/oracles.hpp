#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace oracle {

struct GridFit {
    double i0 = 0.0, t1 = 0.0, sse = std::numeric_limits<double>::infinity();
};

// For fixed T the optimal I0 is linear least squares: sum(y e) / sum(e e).
inline GridFit best_i0(std::span<const double> tsl, std::span<const double> y, double t1, double i0_max) {
    double ye = 0.0, ee = 0.0;
    for (std::size_t k = 0; k < tsl.size(); ++k) {
        const double e = std::exp(-tsl[k] / t1);
        ye += y[k] * e;
        ee += e * e;
    }
    GridFit g;
    g.t1 = t1;
    g.i0 = std::clamp(ye / ee, 0.0, i0_max);
    g.sse = 0.0;
    for (std::size_t k = 0; k < tsl.size(); ++k) {
        const double r = y[k] - g.i0 * std::exp(-tsl[k] / t1);
        g.sse += r * r;
    }
    return g;
}

/// Brute-force decay fit: T on a 0.01 ms grid over [t_lo, t_hi], refined
/// twice by 10x around the best node; I0 solved exactly at every node.
inline GridFit grid_search(std::span<const double> tsl, std::span<const double> y, double t_lo, double t_hi,
                           double i0_max) {
    GridFit best;
    double step = 0.01, lo = t_lo, hi = t_hi;
    for (int pass = 0; pass < 3; ++pass) {
        const long n = long(std::floor((hi - lo) / step + 1e-9));
        for (long i = 0; i <= n; ++i) {
            const auto g = best_i0(tsl, y, lo + double(i) * step, i0_max);
            if (g.sse < best.sse) best = g;
        }
        lo = std::max(t_lo, best.t1 - step);
        hi = std::min(t_hi, best.t1 + step);
        step /= 10.0;
    }
    return best;
}

struct DirectMetrics {
    double mae = 0.0, mape = 0.0, re = 0.0, rpe = 0.0;
};

/// Straight summation over flagged voxels, written independently of the library.
inline DirectMetrics direct_metrics(const std::vector<double>& pred, const std::vector<double>& truth,
                                    const std::vector<int>& roi) {
    long double abs_sum = 0, pct_sum = 0, sp = 0, st = 0;
    long n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!roi[i]) continue;
        const long double d = (long double)truth[i] - pred[i];
        abs_sum += d < 0 ? -d : d;
        pct_sum += (d < 0 ? -d : d) / std::abs((long double)truth[i]);
        sp += pred[i];
        st += truth[i];
        ++n;
    }
    DirectMetrics m;
    m.mae = double(abs_sum / n);
    m.mape = double(100 * pct_sum / n);
    const long double mt = st / n, mp = sp / n;
    m.re = double(mt > mp ? mt - mp : mp - mt);
    m.rpe = double(100 * (mt > mp ? mt - mp : mp - mt) / (mt < 0 ? -mt : mt));
    return m;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

} // namespace oracle
