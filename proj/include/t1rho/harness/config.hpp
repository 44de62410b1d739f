#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "t1rho/error.hpp"
#include "t1rho/fitters/mlp.hpp"
#include "t1rho/fitters/unet.hpp"
#include "t1rho/phantom.hpp"

namespace t1rho::harness {

using json = nlohmann::ordered_json;

enum class I0Source { PdSurrogate, Tsl0 };

/// One baseline/weighted input pairing.
struct Combo {
    I0Source source = I0Source::Tsl0;
    double tslk_ms = 50.0;

    std::string id() const {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%s_tsl%g", source == I0Source::PdSurrogate ? "pd" : "tsl0", tslk_ms);
        return buf;
    }
    bool operator==(const Combo&) const = default;
};

inline Combo parse_combo(const std::string& s) {
    const auto us = s.find('_');
    require(us != std::string::npos && s.compare(us + 1, 3, "tsl") == 0, "malformed combo id '" + s + "'");
    const std::string src = s.substr(0, us);
    Combo c;
    if (src == "pd") c.source = I0Source::PdSurrogate;
    else if (src == "tsl0") c.source = I0Source::Tsl0;
    else throw Error("unknown I0 source in combo '" + s + "'");
    try {
        c.tslk_ms = std::stod(s.substr(us + 4));
    } catch (const std::exception&) {
        throw Error("malformed combo id '" + s + "'");
    }
    return c;
}

inline const std::vector<std::string>& known_models() {
    static const std::vector<std::string> m{"unet_unmasked", "unet_masked", "mlp", "nlls_2pt"};
    return m;
}

inline bool is_dl_model(const std::string& m) { return m != "nlls_2pt"; }

struct ExperimentConfig {
    std::string profile = "default";
    std::uint64_t seed = 1234;
    PhantomSpec phantom{};
    std::vector<Combo> combos{{I0Source::PdSurrogate, 10.0},
                              {I0Source::PdSurrogate, 50.0},
                              {I0Source::Tsl0, 10.0},
                              {I0Source::Tsl0, 50.0}};
    std::vector<std::string> models{"unet_unmasked", "unet_masked", "mlp", "nlls_2pt"};
    int n_folds = 5;
    int smooth_radius = 3;
    double smooth_sigma = 1.0;
    int window_stride = 32;
    fitters::UNetConfig unet{};
    fitters::MlpConfig mlp{};
    std::filesystem::path output_dir = "out";

    void validate() const {
        phantom.validate();
        const auto sched = phantom.schedule();
        auto has = [&sched](double t) {
            for (double v : sched.tsl_ms())
                if (v == t) return true;
            return false;
        };
        require(!combos.empty(), "no combos configured");
        for (const auto& c : combos) {
            require(has(c.tslk_ms), "combo " + c.id() + " uses a TSL missing from the schedule");
            require(c.tslk_ms > 0.0, "combo " + c.id() + " needs a positive weighted TSL");
            if (c.source == I0Source::Tsl0) require(has(0.0), "combo " + c.id() + " needs TSL 0 in the schedule");
        }
        require(!models.empty(), "nothing to report");
        for (const auto& m : models)
            require(std::find(known_models().begin(), known_models().end(), m) != known_models().end(),
                    "unknown model '" + m + "'");
        require(n_folds >= 2 && phantom.n_subjects >= n_folds, "need at least as many subjects as folds");
        require(window_stride >= 1, "window stride must be positive");
        unet.validate();
        mlp.validate();
        require(unet.patch <= phantom.dims.nx && unet.patch <= phantom.dims.ny, "patch larger than slice");
    }
};

/// Profile presets. "default": 40 subjects, 150 epochs with early stopping.
/// "paper": 40 subjects, 1000 epochs, no early stopping. "fast": 10 subjects
/// and a reduced training schedule sized for a single CPU core.
inline void apply_profile(ExperimentConfig& c, const std::string& profile) {
    c.profile = profile;
    if (profile == "default") {
        c.phantom.n_subjects = 40;
        c.unet.epochs = 150;
        c.unet.patience = 20;
        c.mlp.epochs = 150;
        c.mlp.patience = 20;
    } else if (profile == "paper") {
        c.phantom.n_subjects = 40;
        c.unet.epochs = 1000;
        c.unet.patience = 0;
        c.mlp.epochs = 1000;
        c.mlp.patience = 0;
    } else if (profile == "fast") {
        c.phantom.n_subjects = 10;
        c.unet.base_channels = 8;
        c.unet.epochs = 12;
        c.unet.patches_per_epoch = 160;
        c.unet.val_patches = 8;
        c.unet.patience = 0;
        c.mlp.epochs = 25;
        c.mlp.patience = 0;
    } else {
        throw Error("unknown profile '" + profile + "' (expected default, fast or paper)");
    }
}

namespace detail {

inline json range_json(const Range& r) { return json::array({r.low, r.high}); }
inline Range range_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

template <class T> void read_opt(const json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

} // namespace detail

inline json to_json(const ExperimentConfig& c) {
    const auto& p = c.phantom;
    json ph{{"dims", {p.dims.nx, p.dims.ny, p.dims.nz}},
            {"spacing", {p.spacing.sx, p.spacing.sy, p.spacing.sz}},
            {"n_subjects", p.n_subjects},
            {"seed", p.seed},
            {"t1rho_range_ms", detail::range_json(p.t1rho_range_ms)},
            {"soft_tissue_t1rho_ms", detail::range_json(p.soft_tissue_t1rho_ms)},
            {"bone_t1rho_ms", detail::range_json(p.bone_t1rho_ms)},
            {"i0_range", detail::range_json(p.i0_range)},
            {"noise_sigma", p.noise_sigma},
            {"bias_amplitude", p.bias_amplitude},
            {"pd_contrast_gain", p.pd_contrast_gain},
            {"tsl_ms", p.tsl_ms},
            {"fsl_hz", p.fsl_hz},
            {"noise_model", p.noise_model == NoiseModel::Rician ? "rician" : "gaussian"}};
    json combos = json::array();
    for (const auto& k : c.combos) combos.push_back(k.id());
    const auto& u = c.unet;
    json unet{{"base_channels", u.base_channels},
              {"depth", u.depth},
              {"patch", u.patch},
              {"y_min", u.y_min},
              {"y_max", u.y_max},
              {"epochs", u.epochs},
              {"patches_per_epoch", u.patches_per_epoch},
              {"batch_size", u.batch_size},
              {"lr", u.lr},
              {"decay_gamma", u.decay_gamma},
              {"val_fraction", u.val_fraction},
              {"val_patches", u.val_patches},
              {"patience", u.patience},
              {"roi_bias", u.sampling.roi_bias},
              {"flips", u.sampling.flips},
              {"max_rotation_deg", u.sampling.max_rotation_deg},
              {"max_translation", u.sampling.max_translation},
              {"max_noise_frac", u.sampling.max_noise_frac},
              {"augment", u.sampling.augment}};
    const auto& m = c.mlp;
    json mlp{{"width", m.width},
             {"blocks", m.blocks},
             {"y_min", m.y_min},
             {"y_max", m.y_max},
             {"epochs", m.epochs},
             {"batch_size", m.batch_size},
             {"lr", m.lr},
             {"weight_decay", m.weight_decay},
             {"decay_gamma", m.decay_gamma},
             {"val_fraction", m.val_fraction},
             {"patience", m.patience}};
    return json{{"profile", c.profile},
                {"seed", c.seed},
                {"phantom", ph},
                {"combos", combos},
                {"models", c.models},
                {"n_folds", c.n_folds},
                {"smooth_radius", c.smooth_radius},
                {"smooth_sigma", c.smooth_sigma},
                {"window_stride", c.window_stride},
                {"unet", unet},
                {"mlp", mlp},
                {"output_dir", c.output_dir.generic_string()}};
}

/// Builds a config: built-in defaults, then the profile (argument, else the
/// file's "profile", else "default"), then every field present in `j`.
inline ExperimentConfig config_from_json(const json& j, const std::string& profile_override = "") {
    ExperimentConfig c;
    std::string profile = profile_override;
    if (profile.empty()) profile = j.value("profile", std::string("default"));
    apply_profile(c, profile);
    try {
        detail::read_opt(j, "seed", c.seed);
        if (j.contains("phantom")) {
            const auto& pj = j.at("phantom");
            auto& p = c.phantom;
            if (pj.contains("dims")) p.dims = {pj["dims"].at(0), pj["dims"].at(1), pj["dims"].at(2)};
            if (pj.contains("spacing")) p.spacing = {pj["spacing"].at(0), pj["spacing"].at(1), pj["spacing"].at(2)};
            detail::read_opt(pj, "n_subjects", p.n_subjects);
            detail::read_opt(pj, "seed", p.seed);
            if (pj.contains("t1rho_range_ms")) p.t1rho_range_ms = detail::range_from(pj["t1rho_range_ms"]);
            if (pj.contains("soft_tissue_t1rho_ms")) p.soft_tissue_t1rho_ms = detail::range_from(pj["soft_tissue_t1rho_ms"]);
            if (pj.contains("bone_t1rho_ms")) p.bone_t1rho_ms = detail::range_from(pj["bone_t1rho_ms"]);
            if (pj.contains("i0_range")) p.i0_range = detail::range_from(pj["i0_range"]);
            detail::read_opt(pj, "noise_sigma", p.noise_sigma);
            detail::read_opt(pj, "bias_amplitude", p.bias_amplitude);
            detail::read_opt(pj, "pd_contrast_gain", p.pd_contrast_gain);
            detail::read_opt(pj, "tsl_ms", p.tsl_ms);
            detail::read_opt(pj, "fsl_hz", p.fsl_hz);
            if (pj.contains("noise_model")) {
                const auto nm = pj["noise_model"].get<std::string>();
                require(nm == "rician" || nm == "gaussian", "unknown noise_model '" + nm + "'");
                p.noise_model = nm == "rician" ? NoiseModel::Rician : NoiseModel::Gaussian;
            }
        }
        if (j.contains("combos")) {
            c.combos.clear();
            for (const auto& s : j["combos"]) c.combos.push_back(parse_combo(s.get<std::string>()));
        }
        detail::read_opt(j, "models", c.models);
        detail::read_opt(j, "n_folds", c.n_folds);
        detail::read_opt(j, "smooth_radius", c.smooth_radius);
        detail::read_opt(j, "smooth_sigma", c.smooth_sigma);
        detail::read_opt(j, "window_stride", c.window_stride);
        if (j.contains("unet")) {
            const auto& uj = j["unet"];
            auto& u = c.unet;
            detail::read_opt(uj, "base_channels", u.base_channels);
            detail::read_opt(uj, "depth", u.depth);
            detail::read_opt(uj, "patch", u.patch);
            detail::read_opt(uj, "y_min", u.y_min);
            detail::read_opt(uj, "y_max", u.y_max);
            detail::read_opt(uj, "epochs", u.epochs);
            detail::read_opt(uj, "patches_per_epoch", u.patches_per_epoch);
            detail::read_opt(uj, "batch_size", u.batch_size);
            detail::read_opt(uj, "lr", u.lr);
            detail::read_opt(uj, "decay_gamma", u.decay_gamma);
            detail::read_opt(uj, "val_fraction", u.val_fraction);
            detail::read_opt(uj, "val_patches", u.val_patches);
            detail::read_opt(uj, "patience", u.patience);
            detail::read_opt(uj, "roi_bias", u.sampling.roi_bias);
            detail::read_opt(uj, "flips", u.sampling.flips);
            detail::read_opt(uj, "max_rotation_deg", u.sampling.max_rotation_deg);
            detail::read_opt(uj, "max_translation", u.sampling.max_translation);
            detail::read_opt(uj, "max_noise_frac", u.sampling.max_noise_frac);
            detail::read_opt(uj, "augment", u.sampling.augment);
        }
        if (j.contains("mlp")) {
            const auto& mj = j["mlp"];
            auto& m = c.mlp;
            detail::read_opt(mj, "width", m.width);
            detail::read_opt(mj, "blocks", m.blocks);
            detail::read_opt(mj, "y_min", m.y_min);
            detail::read_opt(mj, "y_max", m.y_max);
            detail::read_opt(mj, "epochs", m.epochs);
            detail::read_opt(mj, "batch_size", m.batch_size);
            detail::read_opt(mj, "lr", m.lr);
            detail::read_opt(mj, "weight_decay", m.weight_decay);
            detail::read_opt(mj, "decay_gamma", m.decay_gamma);
            detail::read_opt(mj, "val_fraction", m.val_fraction);
            detail::read_opt(mj, "patience", m.patience);
        }
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed config: ") + e.what());
    }
    c.unet.sampling.patch = c.unet.patch;
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::string& profile_override = "") {
    std::ifstream in(path);
    require(bool(in), "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed config " + path.string() + ": " + e.what());
    }
    return config_from_json(j, profile_override);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Hash of the resolved configuration, excluding the output location.
inline std::string config_hash(const ExperimentConfig& c) {
    auto j = to_json(c);
    j.erase("output_dir");
    return hex64(fnv1a(j.dump()));
}

/// Independent stream seed for a (stage, combo, fold, model) tuple.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(mix(base) ^ a) ^ b) ^ c);
}

} // namespace t1rho::harness
