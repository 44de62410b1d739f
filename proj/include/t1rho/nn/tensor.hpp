#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "t1rho/error.hpp"

namespace t1rho::nn {

/// NCHW extents. Fully connected activations use h = w = 1.
struct Shape {
    int n = 1, c = 1, h = 1, w = 1;

    std::size_t count() const { return std::size_t(n) * std::size_t(c) * std::size_t(h) * std::size_t(w); }
    std::size_t sample_count() const { return std::size_t(c) * std::size_t(h) * std::size_t(w); }
    std::size_t plane() const { return std::size_t(h) * std::size_t(w); }
    bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
    return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
           std::to_string(s.w) + "]";
}

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.count(), fill) {
        require(shape.n > 0 && shape.c > 0 && shape.h > 0 && shape.w > 0, "non-positive tensor extent");
    }
    Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
        require(data_.size() == shape_.count(), "tensor data length does not match shape " + to_string(shape_));
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
    double at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

    bool has_grad() const { return !grad_.empty(); }
    std::span<double> grad() {
        if (grad_.empty()) grad_.assign(data_.size(), 0.0);
        return grad_;
    }
    std::span<const double> grad() const { return grad_; }

    std::vector<double>& storage() { return data_; }

private:
    std::size_t offset(int n, int c, int y, int x) const {
        return ((std::size_t(n) * shape_.c + std::size_t(c)) * shape_.h + std::size_t(y)) * shape_.w + std::size_t(x);
    }

    Shape shape_{0, 0, 0, 0};
    std::vector<double> data_;
    std::vector<double> grad_;
};

} // namespace t1rho::nn
