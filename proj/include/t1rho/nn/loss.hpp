#pragma once

#include <cmath>
#include <optional>

#include "t1rho/error.hpp"
#include "t1rho/nn/tensor.hpp"

namespace t1rho::nn {

struct LossValue {
    double value = 0.0;
    Tensor grad; // dLoss/dpred
    std::size_t count = 0;
};

/// Mean |pred - target| over all elements, or over mask != 0 when a mask is
/// given. The subgradient at pred == target is 0.
inline LossValue l1_loss(const Tensor& pred, const Tensor& target, const Tensor* mask = nullptr) {
    require(pred.shape() == target.shape(), "l1_loss shape mismatch");
    if (mask) require(mask->shape() == pred.shape(), "l1_loss mask shape mismatch");
    std::size_t count = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (!mask || (*mask)[i] != 0.0) ++count;
    require(count > 0, "empty mask");

    LossValue out{0.0, Tensor(pred.shape()), count};
    const double inv = 1.0 / double(count);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask && (*mask)[i] == 0.0) continue;
        const double d = pred[i] - target[i];
        out.value += std::abs(d);
        out.grad[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    out.value *= inv;
    return out;
}

} // namespace t1rho::nn
