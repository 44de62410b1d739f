#pragma once

// Checkpoint = JSON manifest (`<name>.json`) + little-endian float64 payload
// (`<name>.bin`). Payload order: trainable parameters in Network::parameters()
// order, then BN running statistics, then optimizer moments (if present).

#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "t1rho/error.hpp"
#include "t1rho/nn/network.hpp"
#include "t1rho/nn/optimizer.hpp"
#include "t1rho/volume_io.hpp"

namespace t1rho::nn {

struct Checkpoint {
    Network net;
    std::optional<Optimizer> optimizer;
    nlohmann::json extra = nlohmann::json::object();
};

inline nlohmann::ordered_json layer_to_json(const LayerSpec& s) {
    nlohmann::ordered_json j;
    j["kind"] = kind_name(s.kind);
    j["inputs"] = s.inputs;
    switch (s.kind) {
    case LayerKind::Conv2d:
        j["out_channels"] = s.out_channels;
        j["kernel"] = s.kernel;
        break;
    case LayerKind::FullyConnected: j["out_features"] = s.out_channels; break;
    case LayerKind::Limiter:
        j["y_min"] = s.y_min;
        j["y_max"] = s.y_max;
        break;
    case LayerKind::ScaleShift:
        j["scale"] = s.scale;
        j["shift"] = s.shift;
        break;
    case LayerKind::BatchNorm:
        j["momentum"] = s.momentum;
        j["eps"] = s.eps;
        break;
    default: break;
    }
    return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
    LayerSpec s;
    s.kind = parse_kind(j.at("kind").get<std::string>());
    s.inputs = j.at("inputs").get<std::vector<int>>();
    s.out_channels = j.value("out_channels", j.value("out_features", 0));
    s.kernel = j.value("kernel", 0);
    s.y_min = j.value("y_min", 0.0);
    s.y_max = j.value("y_max", 0.0);
    s.scale = j.value("scale", 1.0);
    s.shift = j.value("shift", 0.0);
    s.momentum = j.value("momentum", 0.1);
    s.eps = j.value("eps", 1e-5);
    return s;
}

inline void save_checkpoint(Network& net, const std::filesystem::path& path, Optimizer* opt = nullptr,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    auto manifest = path;
    manifest.replace_extension(".json");
    auto payload = path;
    payload.replace_extension(".bin");

    std::vector<char> buf;
    auto put = [&buf](const std::vector<double>& v) {
        for (double x : v) detail::put_le(buf, x);
    };

    nlohmann::ordered_json j;
    j["format"] = "t1rho-checkpoint";
    j["version"] = 1;
    const Shape in = net.input_shape();
    j["input"] = {in.c, in.h, in.w};
    auto layers = nlohmann::ordered_json::array();
    for (std::size_t i = 1; i < net.size(); ++i) layers.push_back(layer_to_json(net.spec(int(i))));
    j["layers"] = layers;

    auto params = nlohmann::ordered_json::array();
    for (auto* p : net.parameters()) {
        params.push_back({{"name", p->name}, {"count", p->value.size()}});
        put(p->value);
    }
    j["parameters"] = params;
    std::size_t nbuf = 0;
    for (auto* b : net.buffers()) {
        put(*b);
        ++nbuf;
    }
    j["buffers"] = nbuf;

    if (opt) {
        const auto& c = opt->config();
        j["optimizer"] = {{"kind", optimizer_name(c.kind)}, {"lr", opt->lr()},        {"initial_lr", c.lr},
                          {"weight_decay", c.weight_decay}, {"decay_gamma", c.decay_gamma}, {"beta1", c.beta1},
                          {"beta2", c.beta2}, {"alpha", c.alpha}, {"eps", c.eps}, {"step", opt->step_count()},
                          {"has_moments", !opt->second_moments().empty()}};
        for (auto& m : opt->first_moments()) put(m);
        for (auto& v : opt->second_moments()) put(v);
    }
    j["extra"] = extra;
    j["payload"] = payload.filename().string();
    j["payload_bytes"] = buf.size();

    if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());
    {
        std::ofstream out(manifest);
        require(bool(out), "cannot write " + manifest.string());
        out << j.dump(2) << '\n';
    }
    std::ofstream out(payload, std::ios::binary);
    require(bool(out), "cannot write " + payload.string());
    out.write(buf.data(), std::streamsize(buf.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto manifest = path;
    manifest.replace_extension(".json");
    const auto text = detail::read_all(manifest);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed checkpoint manifest: " + std::string(e.what()));
    }
    require(j.value("format", "") == "t1rho-checkpoint", "not a checkpoint manifest: " + manifest.string());

    Checkpoint ck;
    const auto in = j.at("input");
    ck.net = Network(in[0].get<int>(), in[1].get<int>(), in[2].get<int>());
    for (const auto& l : j.at("layers")) ck.net.append(layer_from_json(l));

    const auto bytes = detail::read_all(manifest.parent_path() / j.at("payload").get<std::string>());
    require(bytes.size() == j.at("payload_bytes").get<std::size_t>(), "checkpoint payload size mismatch");
    std::size_t pos = 0;
    auto take = [&](std::vector<double>& v) {
        require(pos + v.size() * 8 <= bytes.size(), "checkpoint payload truncated");
        for (double& x : v) {
            x = detail::get_le<double>(bytes.data() + pos);
            pos += 8;
        }
    };

    auto params = ck.net.parameters();
    const auto& pj = j.at("parameters");
    require(pj.size() == params.size(), "checkpoint parameter count does not match layers");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(pj[i].at("count").get<std::size_t>() == params[i]->value.size(),
                "checkpoint shape mismatch for " + params[i]->name);
        take(params[i]->value);
    }
    for (auto* b : ck.net.buffers()) take(*b);

    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        OptimizerConfig c;
        c.kind = o.at("kind").get<std::string>() == "adam" ? OptimizerKind::Adam : OptimizerKind::RMSProp;
        c.lr = o.at("initial_lr").get<double>();
        c.weight_decay = o.at("weight_decay").get<double>();
        c.decay_gamma = o.at("decay_gamma").get<double>();
        c.beta1 = o.at("beta1").get<double>();
        c.beta2 = o.at("beta2").get<double>();
        c.alpha = o.at("alpha").get<double>();
        c.eps = o.at("eps").get<double>();
        Optimizer opt(c);
        opt.restore_scalars(o.at("lr").get<double>(), o.at("step").get<long>());
        if (o.at("has_moments").get<bool>()) {
            if (c.kind == OptimizerKind::Adam)
                for (auto* p : params) opt.first_moments().emplace_back(p->value.size());
            for (auto* p : params) opt.second_moments().emplace_back(p->value.size());
            for (auto& m : opt.first_moments()) take(m);
            for (auto& v : opt.second_moments()) take(v);
        }
        ck.optimizer = std::move(opt);
    }
    require(pos == bytes.size(), "checkpoint payload has trailing bytes");
    ck.extra = j.value("extra", nlohmann::json::object());
    return ck;
}

} // namespace t1rho::nn
