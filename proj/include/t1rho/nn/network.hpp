#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "t1rho/error.hpp"
#include "t1rho/nn/tensor.hpp"

namespace t1rho::nn {

enum class LayerKind {
    Input,
    Conv2d,
    MaxPool2,
    Upsample2,
    Concat,
    FullyConnected,
    BatchNorm,
    Relu,
    Add,
    Limiter,
    ScaleShift,
};

inline const char* kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool2: return "max_pool";
    case LayerKind::Upsample2: return "nearest_upsample";
    case LayerKind::Concat: return "concat_skip";
    case LayerKind::FullyConnected: return "fully_connected";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::Relu: return "relu";
    case LayerKind::Add: return "add_skip";
    case LayerKind::Limiter: return "limiter";
    case LayerKind::ScaleShift: return "scale_shift";
    }
    return "?";
}

inline LayerKind parse_kind(const std::string& s) {
    for (int k = 0; k <= int(LayerKind::ScaleShift); ++k)
        if (s == kind_name(LayerKind(k))) return LayerKind(k);
    throw Error("unknown layer kind '" + s + "'");
}

/// Layer descriptor. Unused fields keep their defaults.
struct LayerSpec {
    LayerKind kind = LayerKind::Input;
    std::vector<int> inputs;
    int out_channels = 0;
    int kernel = 0;
    double y_min = 0.0, y_max = 0.0;
    double scale = 1.0, shift = 0.0;
    double momentum = 0.1, eps = 1e-5;
};

struct Param {
    std::string name;
    std::vector<double> value;
    std::vector<double> grad;
};

enum class Mode { Train, Eval };

/// Limiter: clamp(ReLU(x) + y_min, y_min, y_max).
inline double limiter(double x, double y_min, double y_max) { return std::min(std::max(x, 0.0) + y_min, y_max); }
inline double limiter_grad(double x, double y_min, double y_max) { return (x > 0.0 && x < y_max - y_min) ? 1.0 : 0.0; }

/// Directed acyclic network over a fixed layer vocabulary. Node 0 is the input;
/// every other node consumes earlier nodes, and the last node is the output.
class Network {
public:
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapMat = Eigen::Map<RowMat>;
    using CMapMat = Eigen::Map<const RowMat>;

    Network() = default;

    /// Starts a network whose samples are (channels, height, width).
    explicit Network(int channels, int height = 1, int width = 1) {
        require(channels > 0 && height > 0 && width > 0, "non-positive input extent");
        LayerSpec s;
        s.kind = LayerKind::Input;
        push(s, Shape{1, channels, height, width});
    }

    int conv2d(int from, int out_channels, int kernel) {
        require(kernel == 1 || kernel == 3, "conv2d supports kernel 1 or 3");
        require(out_channels > 0, "conv2d needs out_channels > 0");
        LayerSpec s{LayerKind::Conv2d, {from}};
        s.out_channels = out_channels;
        s.kernel = kernel;
        auto in = node_shape(from);
        return push(s, Shape{1, out_channels, in.h, in.w});
    }
    int max_pool(int from) {
        auto in = node_shape(from);
        check(in.h % 2 == 0 && in.w % 2 == 0, next_index(), "max_pool needs even spatial extent");
        return push(LayerSpec{LayerKind::MaxPool2, {from}}, Shape{1, in.c, in.h / 2, in.w / 2});
    }
    int upsample(int from) {
        auto in = node_shape(from);
        return push(LayerSpec{LayerKind::Upsample2, {from}}, Shape{1, in.c, in.h * 2, in.w * 2});
    }
    int concat(int a, int b) {
        auto sa = node_shape(a), sb = node_shape(b);
        check(sa.h == sb.h && sa.w == sb.w, next_index(), "concat_skip spatial mismatch");
        return push(LayerSpec{LayerKind::Concat, {a, b}}, Shape{1, sa.c + sb.c, sa.h, sa.w});
    }
    int add(int a, int b) {
        check(node_shape(a) == node_shape(b), next_index(), "add_skip shape mismatch");
        return push(LayerSpec{LayerKind::Add, {a, b}}, node_shape(a));
    }
    int fully_connected(int from, int out_features) {
        require(out_features > 0, "fully_connected needs out_features > 0");
        LayerSpec s{LayerKind::FullyConnected, {from}};
        s.out_channels = out_features;
        return push(s, Shape{1, out_features, 1, 1});
    }
    int batch_norm(int from) { return push(LayerSpec{LayerKind::BatchNorm, {from}}, node_shape(from)); }
    int relu(int from) { return push(LayerSpec{LayerKind::Relu, {from}}, node_shape(from)); }
    int limiter(int from, double y_min, double y_max) {
        check(y_min < y_max, next_index(), "limiter needs y_min < y_max");
        LayerSpec s{LayerKind::Limiter, {from}};
        s.y_min = y_min;
        s.y_max = y_max;
        return push(s, node_shape(from));
    }
    int scale_shift(int from, double scale, double shift) {
        LayerSpec s{LayerKind::ScaleShift, {from}};
        s.scale = scale;
        s.shift = shift;
        return push(s, node_shape(from));
    }

    /// Appends a layer from its descriptor (used when loading checkpoints).
    int append(const LayerSpec& s) {
        require(!s.inputs.empty(), "layer without inputs");
        switch (s.kind) {
        case LayerKind::Conv2d: return conv2d(s.inputs[0], s.out_channels, s.kernel);
        case LayerKind::MaxPool2: return max_pool(s.inputs[0]);
        case LayerKind::Upsample2: return upsample(s.inputs[0]);
        case LayerKind::Concat: return concat(s.inputs.at(0), s.inputs.at(1));
        case LayerKind::Add: return add(s.inputs.at(0), s.inputs.at(1));
        case LayerKind::FullyConnected: return fully_connected(s.inputs[0], s.out_channels);
        case LayerKind::BatchNorm: {
            int id = batch_norm(s.inputs[0]);
            layers_[std::size_t(id)].spec.momentum = s.momentum;
            layers_[std::size_t(id)].spec.eps = s.eps;
            return id;
        }
        case LayerKind::Relu: return relu(s.inputs[0]);
        case LayerKind::Limiter: return limiter(s.inputs[0], s.y_min, s.y_max);
        case LayerKind::ScaleShift: return scale_shift(s.inputs[0], s.scale, s.shift);
        case LayerKind::Input: break;
        }
        throw Error("cannot append an input layer");
    }

    std::size_t size() const { return layers_.size(); }
    int output() const { return int(layers_.size()) - 1; }
    const LayerSpec& spec(int i) const { return layers_.at(std::size_t(i)).spec; }
    Shape node_shape(int i) const {
        require(i >= 0 && std::size_t(i) < layers_.size(), "layer index " + std::to_string(i) + " out of range");
        return layers_[std::size_t(i)].shape;
    }
    Shape input_shape() const { return node_shape(0); }

    /// He-uniform weights for conv/FC, zero biases, unit BN scale.
    void init_parameters(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (auto& l : layers_) {
            if (l.spec.kind == LayerKind::Conv2d || l.spec.kind == LayerKind::FullyConnected) {
                const double fan_in = double(l.params[0].value.size()) / double(l.spec.out_channels);
                std::uniform_real_distribution<double> u(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
                for (double& w : l.params[0].value) w = u(rng);
                std::fill(l.params[1].value.begin(), l.params[1].value.end(), 0.0);
            } else if (l.spec.kind == LayerKind::BatchNorm) {
                std::fill(l.params[0].value.begin(), l.params[0].value.end(), 1.0);
                std::fill(l.params[1].value.begin(), l.params[1].value.end(), 0.0);
                std::fill(l.running_mean.begin(), l.running_mean.end(), 0.0);
                std::fill(l.running_var.begin(), l.running_var.end(), 1.0);
            }
        }
    }

    /// Trainable parameters in a stable order (layer index, then weight before bias).
    std::vector<Param*> parameters() {
        std::vector<Param*> out;
        for (auto& l : layers_)
            for (auto& p : l.params) out.push_back(&p);
        return out;
    }
    std::vector<const Param*> parameters() const {
        std::vector<const Param*> out;
        for (const auto& l : layers_)
            for (const auto& p : l.params) out.push_back(&p);
        return out;
    }
    /// Non-trainable state (BN running statistics) in a stable order.
    std::vector<std::vector<double>*> buffers() {
        std::vector<std::vector<double>*> out;
        for (auto& l : layers_)
            if (l.spec.kind == LayerKind::BatchNorm) {
                out.push_back(&l.running_mean);
                out.push_back(&l.running_var);
            }
        return out;
    }

    void zero_grad() {
        for (auto* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    }

    const Tensor& forward(const Tensor& input, Mode mode) {
        require(!layers_.empty(), "empty network");
        const Shape in = input.shape();
        const Shape decl = input_shape();
        check(in.c == decl.c && in.h == decl.h && in.w == decl.w, 0,
              "input shape " + to_string(in) + " does not match declared " + to_string(decl));
        const int n = in.n;
        batch_ = n;
        mode_ = mode;
        outputs_.resize(layers_.size());
        outputs_[0] = input;
        for (std::size_t i = 1; i < layers_.size(); ++i) {
            auto s = layers_[i].shape;
            s.n = n;
            if (outputs_[i].shape() != s) outputs_[i] = Tensor(s);
            forward_layer(int(i));
        }
        has_forward_ = true;
        return outputs_.back();
    }

    const Tensor& activation(int i) const { return outputs_.at(std::size_t(i)); }

    /// Back-propagates dLoss/dOutput; parameter gradients accumulate into Param::grad.
    /// Returns dLoss/dInput.
    const Tensor& backward(const Tensor& loss_grad) {
        require(has_forward_, "backward called without a preceding forward");
        require(loss_grad.shape() == outputs_.back().shape(),
                "loss gradient shape " + to_string(loss_grad.shape()) + " does not match output " +
                    to_string(outputs_.back().shape()));
        grads_.resize(layers_.size());
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (grads_[i].shape() != outputs_[i].shape()) grads_[i] = Tensor(outputs_[i].shape());
            else std::fill(grads_[i].data().begin(), grads_[i].data().end(), 0.0);
        }
        std::copy(loss_grad.data().begin(), loss_grad.data().end(), grads_.back().data().begin());
        for (int i = int(layers_.size()) - 1; i >= 1; --i) backward_layer(i);
        return grads_[0];
    }

private:
    struct Layer {
        LayerSpec spec;
        Shape shape; // per-sample, n = 1
        std::vector<Param> params;
        std::vector<double> running_mean, running_var;
        // Forward caches.
        std::vector<std::uint32_t> argmax;
        std::vector<double> xhat, inv_std;
    };

    static void check(bool cond, int layer, const std::string& msg) {
        if (!cond) throw Error("layer " + std::to_string(layer) + ": " + msg);
    }

    int next_index() const { return int(layers_.size()); }

    int push(LayerSpec s, Shape shape) {
        const int id = next_index();
        for (int in : s.inputs) check(in >= 0 && in < id, id, "input index out of range");
        Layer l{s, shape, {}, {}, {}, {}, {}, {}};
        auto make = [&](const char* what, std::size_t count, double fill) {
            l.params.push_back(Param{std::to_string(id) + "." + what, std::vector<double>(count, fill),
                                     std::vector<double>(count, 0.0)});
        };
        if (s.kind == LayerKind::Conv2d) {
            const Shape in = layers_[std::size_t(s.inputs[0])].shape;
            make("weight", std::size_t(s.out_channels) * std::size_t(in.c) * std::size_t(s.kernel * s.kernel), 0.0);
            make("bias", std::size_t(s.out_channels), 0.0);
        } else if (s.kind == LayerKind::FullyConnected) {
            const Shape in = layers_[std::size_t(s.inputs[0])].shape;
            make("weight", std::size_t(s.out_channels) * in.sample_count(), 0.0);
            make("bias", std::size_t(s.out_channels), 0.0);
        } else if (s.kind == LayerKind::BatchNorm) {
            make("gamma", std::size_t(shape.c), 1.0);
            make("beta", std::size_t(shape.c), 0.0);
            l.running_mean.assign(std::size_t(shape.c), 0.0);
            l.running_var.assign(std::size_t(shape.c), 1.0);
        }
        layers_.push_back(std::move(l));
        has_forward_ = false;
        return id;
    }

    // im2col for a 3x3, pad-1 convolution of one sample: col is (C*9) x (H*W).
    static void im2col3(const double* in, int c, int h, int w, double* col) {
        const std::size_t hw = std::size_t(h) * std::size_t(w);
        for (int ch = 0; ch < c; ++ch)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    double* row = col + (std::size_t(ch) * 9 + std::size_t(ky * 3 + kx)) * hw;
                    const double* plane = in + std::size_t(ch) * hw;
                    for (int y = 0; y < h; ++y) {
                        const int ys = y + ky - 1;
                        double* dst = row + std::size_t(y) * w;
                        if (ys < 0 || ys >= h) {
                            std::fill(dst, dst + w, 0.0);
                            continue;
                        }
                        const double* src = plane + std::size_t(ys) * w;
                        for (int x = 0; x < w; ++x) {
                            const int xs = x + kx - 1;
                            dst[x] = (xs >= 0 && xs < w) ? src[xs] : 0.0;
                        }
                    }
                }
    }

    static void col2im3(const double* col, int c, int h, int w, double* out) {
        const std::size_t hw = std::size_t(h) * std::size_t(w);
        for (int ch = 0; ch < c; ++ch)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const double* row = col + (std::size_t(ch) * 9 + std::size_t(ky * 3 + kx)) * hw;
                    double* plane = out + std::size_t(ch) * hw;
                    for (int y = 0; y < h; ++y) {
                        const int ys = y + ky - 1;
                        if (ys < 0 || ys >= h) continue;
                        const double* src = row + std::size_t(y) * w;
                        double* dst = plane + std::size_t(ys) * w;
                        for (int x = 0; x < w; ++x) {
                            const int xs = x + kx - 1;
                            if (xs >= 0 && xs < w) dst[xs] += src[x];
                        }
                    }
                }
    }

    // C (m x n) = or += op(A) * op(B), all row-major. Degenerate and tiny
    // shapes use fixed-order loops: Eigen's GEMV and coefficient-based paths
    // vary their summation order with pointer alignment, which would break
    // bit-reproducibility across runs.
    static void matmul(const double* a, bool ta, const double* b, bool tb, double* c, int m, int k, int n,
                       bool accumulate) {
        if (m == 1 || n == 1 || m + n + k < 64) {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int q = 0; q < k; ++q) {
                        const double av = ta ? a[std::size_t(q) * m + i] : a[std::size_t(i) * k + q];
                        const double bv = tb ? b[std::size_t(j) * k + q] : b[std::size_t(q) * n + j];
                        acc += av * bv;
                    }
                    double& dst = c[std::size_t(i) * n + j];
                    dst = accumulate ? dst + acc : acc;
                }
            return;
        }
        MapMat cm(c, m, n);
        const auto run = [&](const auto& lhs, const auto& rhs) {
            if (accumulate) cm.noalias() += lhs * rhs;
            else cm.noalias() = lhs * rhs;
        };
        if (!ta && !tb) run(CMapMat(a, m, k), CMapMat(b, k, n));
        else if (!ta && tb) run(CMapMat(a, m, k), CMapMat(b, n, k).transpose());
        else if (ta && !tb) run(CMapMat(a, k, m).transpose(), CMapMat(b, k, n));
        else run(CMapMat(a, k, m).transpose(), CMapMat(b, n, k).transpose());
    }

    void forward_layer(int i) {
        Layer& l = layers_[std::size_t(i)];
        Tensor& out = outputs_[std::size_t(i)];
        const Tensor& in = outputs_[std::size_t(l.spec.inputs[0])];
        const Shape is = in.shape(), os = out.shape();
        const int n = os.n;
        switch (l.spec.kind) {
        case LayerKind::Conv2d: {
            const int k = l.spec.kernel;
            const int kk = is.c * k * k;
            const int hw = int(os.plane());
            const double* wm = l.params[0].value.data();
            const double* bias = l.params[1].value.data();
            if (k == 3) col_.resize(std::size_t(kk) * std::size_t(hw));
            for (int s = 0; s < n; ++s) {
                const double* src = in.data().data() + std::size_t(s) * is.sample_count();
                if (k == 3) im2col3(src, is.c, is.h, is.w, col_.data());
                double* om = out.data().data() + std::size_t(s) * os.sample_count();
                matmul(wm, false, k == 3 ? col_.data() : src, false, om, os.c, kk, hw, false);
                for (int c = 0; c < os.c; ++c)
                    for (int j = 0; j < hw; ++j) om[std::size_t(c) * hw + j] += bias[c];
            }
            break;
        }
        case LayerKind::FullyConnected: {
            const int f = int(is.sample_count());
            double* y = out.data().data();
            matmul(in.data().data(), false, l.params[0].value.data(), true, y, n, f, os.c, false);
            const double* bias = l.params[1].value.data();
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < os.c; ++c) y[std::size_t(r) * os.c + c] += bias[c];
            break;
        }
        case LayerKind::MaxPool2: {
            l.argmax.resize(out.size());
            std::size_t o = 0;
            for (int s = 0; s < n; ++s)
                for (int c = 0; c < os.c; ++c) {
                    const std::size_t base = (std::size_t(s) * is.c + std::size_t(c)) * is.plane();
                    for (int y = 0; y < os.h; ++y)
                        for (int x = 0; x < os.w; ++x, ++o) {
                            std::size_t best = base + std::size_t(2 * y) * is.w + std::size_t(2 * x);
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx) {
                                    const std::size_t j = base + std::size_t(2 * y + dy) * is.w + std::size_t(2 * x + dx);
                                    if (in[j] > in[best]) best = j;
                                }
                            out[o] = in[best];
                            l.argmax[o] = std::uint32_t(best);
                        }
                }
            break;
        }
        case LayerKind::Upsample2: {
            std::size_t o = 0;
            for (int s = 0; s < n; ++s)
                for (int c = 0; c < os.c; ++c) {
                    const std::size_t base = (std::size_t(s) * is.c + std::size_t(c)) * is.plane();
                    for (int y = 0; y < os.h; ++y)
                        for (int x = 0; x < os.w; ++x, ++o) out[o] = in[base + std::size_t(y / 2) * is.w + std::size_t(x / 2)];
                }
            break;
        }
        case LayerKind::Concat: {
            const Tensor& b = outputs_[std::size_t(l.spec.inputs[1])];
            const std::size_t na = is.sample_count(), nb = b.shape().sample_count();
            for (int s = 0; s < n; ++s) {
                double* dst = out.data().data() + std::size_t(s) * os.sample_count();
                std::copy_n(in.data().data() + std::size_t(s) * na, na, dst);
                std::copy_n(b.data().data() + std::size_t(s) * nb, nb, dst + na);
            }
            break;
        }
        case LayerKind::Add: {
            const Tensor& b = outputs_[std::size_t(l.spec.inputs[1])];
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = in[j] + b[j];
            break;
        }
        case LayerKind::BatchNorm: forward_batch_norm(l, in, out); break;
        case LayerKind::Relu:
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = in[j] > 0.0 ? in[j] : 0.0;
            break;
        case LayerKind::Limiter:
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = nn::limiter(in[j], l.spec.y_min, l.spec.y_max);
            break;
        case LayerKind::ScaleShift:
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = l.spec.scale * in[j] + l.spec.shift;
            break;
        case LayerKind::Input: break;
        }
    }

    void forward_batch_norm(Layer& l, const Tensor& in, Tensor& out) {
        const Shape s = in.shape();
        const std::size_t plane = s.plane();
        const double m = double(s.n) * double(plane);
        const auto& gamma = l.params[0].value;
        const auto& beta = l.params[1].value;
        if (mode_ == Mode::Train) {
            l.xhat.resize(in.size());
            l.inv_std.resize(std::size_t(s.c));
        }
        for (int c = 0; c < s.c; ++c) {
            double mean, inv;
            if (mode_ == Mode::Train) {
                double sum = 0.0;
                for (int b = 0; b < s.n; ++b) {
                    const double* p = in.data().data() + (std::size_t(b) * s.c + std::size_t(c)) * plane;
                    for (std::size_t j = 0; j < plane; ++j) sum += p[j];
                }
                mean = sum / m;
                double sq = 0.0;
                for (int b = 0; b < s.n; ++b) {
                    const double* p = in.data().data() + (std::size_t(b) * s.c + std::size_t(c)) * plane;
                    for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - mean) * (p[j] - mean);
                }
                const double var = sq / m;
                inv = 1.0 / std::sqrt(var + l.spec.eps);
                l.inv_std[std::size_t(c)] = inv;
                const double unbiased = m > 1.0 ? sq / (m - 1.0) : var;
                l.running_mean[std::size_t(c)] = (1.0 - l.spec.momentum) * l.running_mean[std::size_t(c)] + l.spec.momentum * mean;
                l.running_var[std::size_t(c)] = (1.0 - l.spec.momentum) * l.running_var[std::size_t(c)] + l.spec.momentum * unbiased;
            } else {
                mean = l.running_mean[std::size_t(c)];
                inv = 1.0 / std::sqrt(l.running_var[std::size_t(c)] + l.spec.eps);
            }
            for (int b = 0; b < s.n; ++b) {
                const std::size_t off = (std::size_t(b) * s.c + std::size_t(c)) * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                    const double xh = (in[off + j] - mean) * inv;
                    if (mode_ == Mode::Train) l.xhat[off + j] = xh;
                    out[off + j] = gamma[std::size_t(c)] * xh + beta[std::size_t(c)];
                }
            }
        }
    }

    void backward_layer(int i) {
        Layer& l = layers_[std::size_t(i)];
        const Tensor& gout = grads_[std::size_t(i)];
        const int src = l.spec.inputs[0];
        const Tensor& in = outputs_[std::size_t(src)];
        Tensor& gin = grads_[std::size_t(src)];
        const Shape is = in.shape(), os = gout.shape();
        const int n = os.n;
        switch (l.spec.kind) {
        case LayerKind::Conv2d: {
            const int k = l.spec.kernel;
            const int kk = is.c * k * k;
            const int hw = int(os.plane());
            const double* wm = l.params[0].value.data();
            double* gw = l.params[0].grad.data();
            double* gb = l.params[1].grad.data();
            if (k == 3) {
                col_.resize(std::size_t(kk) * std::size_t(hw));
                dcol_.resize(col_.size());
            }
            for (int s = 0; s < n; ++s) {
                const double* x = in.data().data() + std::size_t(s) * is.sample_count();
                double* gx = gin.data().data() + std::size_t(s) * is.sample_count();
                const double* go = gout.data().data() + std::size_t(s) * os.sample_count();
                if (k == 3) im2col3(x, is.c, is.h, is.w, col_.data());
                matmul(go, false, k == 3 ? col_.data() : x, true, gw, os.c, hw, kk, true);
                for (int c = 0; c < os.c; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < hw; ++j) acc += go[std::size_t(c) * hw + j];
                    gb[c] += acc;
                }
                if (k == 3) {
                    matmul(wm, true, go, false, dcol_.data(), kk, os.c, hw, false);
                    col2im3(dcol_.data(), is.c, is.h, is.w, gx);
                } else {
                    matmul(wm, true, go, false, gx, kk, os.c, hw, true);
                }
            }
            break;
        }
        case LayerKind::FullyConnected: {
            const int f = int(is.sample_count());
            const double* x = in.data().data();
            const double* go = gout.data().data();
            matmul(go, true, x, false, l.params[0].grad.data(), os.c, n, f, true);
            double* gb = l.params[1].grad.data();
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < os.c; ++c) gb[c] += go[std::size_t(r) * os.c + c];
            matmul(go, false, l.params[0].value.data(), false, gin.data().data(), n, os.c, f, true);
            break;
        }
        case LayerKind::MaxPool2:
            for (std::size_t o = 0; o < gout.size(); ++o) gin.data()[l.argmax[o]] += gout[o];
            break;
        case LayerKind::Upsample2: {
            std::size_t o = 0;
            for (int s = 0; s < n; ++s)
                for (int c = 0; c < os.c; ++c) {
                    const std::size_t base = (std::size_t(s) * is.c + std::size_t(c)) * is.plane();
                    for (int y = 0; y < os.h; ++y)
                        for (int x = 0; x < os.w; ++x, ++o)
                            gin.data()[base + std::size_t(y / 2) * is.w + std::size_t(x / 2)] += gout[o];
                }
            break;
        }
        case LayerKind::Concat: {
            Tensor& gb = grads_[std::size_t(l.spec.inputs[1])];
            const std::size_t na = is.sample_count(), nb = gb.shape().sample_count();
            for (int s = 0; s < n; ++s) {
                const double* g = gout.data().data() + std::size_t(s) * os.sample_count();
                double* ga = gin.data().data() + std::size_t(s) * na;
                double* gbp = gb.data().data() + std::size_t(s) * nb;
                for (std::size_t j = 0; j < na; ++j) ga[j] += g[j];
                for (std::size_t j = 0; j < nb; ++j) gbp[j] += g[na + j];
            }
            break;
        }
        case LayerKind::Add: {
            Tensor& gb = grads_[std::size_t(l.spec.inputs[1])];
            for (std::size_t j = 0; j < gout.size(); ++j) {
                gin.data()[j] += gout[j];
                gb.data()[j] += gout[j];
            }
            break;
        }
        case LayerKind::BatchNorm: backward_batch_norm(l, in, gout, gin); break;
        case LayerKind::Relu:
            for (std::size_t j = 0; j < gout.size(); ++j)
                if (in[j] > 0.0) gin.data()[j] += gout[j];
            break;
        case LayerKind::Limiter:
            for (std::size_t j = 0; j < gout.size(); ++j)
                gin.data()[j] += gout[j] * limiter_grad(in[j], l.spec.y_min, l.spec.y_max);
            break;
        case LayerKind::ScaleShift:
            for (std::size_t j = 0; j < gout.size(); ++j) gin.data()[j] += l.spec.scale * gout[j];
            break;
        case LayerKind::Input: break;
        }
    }

    void backward_batch_norm(Layer& l, const Tensor& in, const Tensor& gout, Tensor& gin) {
        const Shape s = in.shape();
        const std::size_t plane = s.plane();
        const double m = double(s.n) * double(plane);
        const auto& gamma = l.params[0].value;
        auto& ggamma = l.params[0].grad;
        auto& gbeta = l.params[1].grad;
        for (int c = 0; c < s.c; ++c) {
            const std::size_t cc = std::size_t(c);
            if (mode_ == Mode::Train) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int b = 0; b < s.n; ++b) {
                    const std::size_t off = (std::size_t(b) * s.c + cc) * plane;
                    for (std::size_t j = 0; j < plane; ++j) {
                        sum_g += gout[off + j];
                        sum_gx += gout[off + j] * l.xhat[off + j];
                    }
                }
                ggamma[cc] += sum_gx;
                gbeta[cc] += sum_g;
                const double k = gamma[cc] * l.inv_std[cc] / m;
                for (int b = 0; b < s.n; ++b) {
                    const std::size_t off = (std::size_t(b) * s.c + cc) * plane;
                    for (std::size_t j = 0; j < plane; ++j)
                        gin.data()[off + j] += k * (m * gout[off + j] - sum_g - l.xhat[off + j] * sum_gx);
                }
            } else {
                const double inv = 1.0 / std::sqrt(l.running_var[cc] + l.spec.eps);
                for (int b = 0; b < s.n; ++b) {
                    const std::size_t off = (std::size_t(b) * s.c + cc) * plane;
                    for (std::size_t j = 0; j < plane; ++j) {
                        const double xh = (in[off + j] - l.running_mean[cc]) * inv;
                        ggamma[cc] += gout[off + j] * xh;
                        gbeta[cc] += gout[off + j];
                        gin.data()[off + j] += gamma[cc] * inv * gout[off + j];
                    }
                }
            }
        }
    }

    std::vector<Layer> layers_;
    std::vector<Tensor> outputs_;
    std::vector<Tensor> grads_;
    std::vector<double> col_, dcol_;
    int batch_ = 0;
    Mode mode_ = Mode::Eval;
    bool has_forward_ = false;
};

} // namespace t1rho::nn
