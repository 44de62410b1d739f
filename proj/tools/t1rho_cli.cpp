// Command-line front end: phantom generation, classical and learned fitting,
// evaluation and the three cross-validated experiments.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "t1rho/eval/metrics.hpp"
#include "t1rho/eval/report.hpp"
#include "t1rho/fitters/mlp.hpp"
#include "t1rho/fitters/training.hpp"
#include "t1rho/fitters/unet.hpp"
#include "t1rho/harness/config.hpp"
#include "t1rho/harness/experiment.hpp"
#include "t1rho/nlls.hpp"
#include "t1rho/nn/checkpoint.hpp"
#include "t1rho/phantom.hpp"
#include "t1rho/volume_io.hpp"

namespace fs = std::filesystem;
using namespace t1rho;

namespace {

struct Common {
    std::string config;
    std::string profile;
    std::string out;
    long long seed = -1;
};

harness::ExperimentConfig resolve(const Common& c) {
    harness::ExperimentConfig cfg = c.config.empty() ? harness::config_from_json(harness::json::object(), c.profile)
                                                     : harness::load_config(c.config, c.profile);
    if (c.seed >= 0) cfg.seed = std::uint64_t(c.seed);
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--profile", c.profile, "default | fast | paper");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--seed", c.seed, "experiment seed (folds and training)");
}

void write_phantom(const PhantomBundle& b, const fs::path& dir) {
    fs::create_directories(dir);
    save_volume(b.truth_t1rho, dir / "truth_t1rho.qvh", DType::Float64);
    save_volume(b.i0_truth, dir / "i0_truth.qvh", DType::Float64);
    save_volume(b.pd_surrogate, dir / "pd.qvh");
    for (const auto& [tsl, img] : b.weighted) {
        char name[32];
        std::snprintf(name, sizeof name, "tsl%g.qvh", tsl);
        save_volume(img, dir / name);
    }
    save_mask(b.roi, dir / "roi.qvh", b.truth_t1rho.spacing());
}

std::string tsl_file(double tsl) {
    char name[32];
    std::snprintf(name, sizeof name, "tsl%g.qvh", tsl);
    return name;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"T1rho mapping from two images: synthetic phantoms, NLLS and learned fitters"};
    app.set_version_flag("--version", T1RHO_VERSION);
    app.require_subcommand(1);

    Common common;

    auto* phantom = app.add_subcommand("phantom", "generate a synthetic cohort");
    add_common(phantom, common);

    auto* fit = app.add_subcommand("fit-nlls", "classical fit of one phantom subject directory");
    add_common(fit, common);
    std::string fit_subject, fit_method = "lm", fit_source = "tsl0";
    double fit_tslk = 50.0;
    fit->add_option("--subject", fit_subject, "subject directory written by `phantom`")->required();
    fit->add_option("--method", fit_method, "lm | two-point")->check(CLI::IsMember({"lm", "two-point"}));
    fit->add_option("--i0", fit_source, "baseline image for two-point: tsl0 | pd")->check(CLI::IsMember({"tsl0", "pd"}));
    fit->add_option("--tslk", fit_tslk, "weighted TSL (ms) for two-point");

    auto* train = app.add_subcommand("train", "train one learned fitter on the configured cohort");
    add_common(train, common);
    std::string train_model = "mlp", train_combo = "tsl0_tsl50";
    int train_fold = -1;
    train->add_option("--model", train_model, "unet_unmasked | unet_masked | mlp")
        ->check(CLI::IsMember({"unet_unmasked", "unet_masked", "mlp"}));
    train->add_option("--combo", train_combo, "input combination, e.g. pd_tsl10");
    train->add_option("--fold", train_fold, "hold out this fold (default: train on all subjects)");

    auto* infer = app.add_subcommand("infer", "apply a trained checkpoint to an image pair");
    std::string inf_ckpt, inf_i0, inf_ik, inf_roi, inf_out;
    int inf_stride = 32;
    infer->add_option("--checkpoint", inf_ckpt, "checkpoint manifest (.json)")->required();
    infer->add_option("--i0", inf_i0, "I0-like volume")->required();
    infer->add_option("--ik", inf_ik, "Ik-like volume")->required();
    infer->add_option("--roi", inf_roi, "ROI mask (required for mlp and unet_masked)");
    infer->add_option("--stride", inf_stride, "sliding-window stride");
    infer->add_option("--out", inf_out, "output map (.qvh)")->required();

    auto* evaluate = app.add_subcommand("evaluate", "MAE, MAPE, RE and RPE of a map against a reference");
    std::string ev_pred, ev_truth, ev_roi;
    evaluate->add_option("--pred", ev_pred, "predicted map")->required();
    evaluate->add_option("--truth", ev_truth, "reference map")->required();
    evaluate->add_option("--roi", ev_roi, "ROI mask")->required();

    auto* exp1 = app.add_subcommand("exp1", "best learned fitter vs two-point NLLS per combination");
    add_common(exp1, common);
    auto* exp2 = app.add_subcommand("exp2", "U-Net vs MLP per combination");
    add_common(exp2, common);
    auto* exp3 = app.add_subcommand("exp3", "masked vs unmasked U-Net per combination");
    add_common(exp3, common);

    auto* report = app.add_subcommand("report", "rebuild summary tables from a rows.csv");
    std::string rep_rows, rep_out;
    report->add_option("--rows", rep_rows, "per-subject rows CSV")->required()->check(CLI::ExistingFile);
    report->add_option("--out", rep_out, "directory for summary.csv and summary.txt");

    CLI11_PARSE(app, argc, argv);

    try {
        if (phantom->parsed()) {
            const auto cfg = resolve(common);
            const fs::path dir = cfg.output_dir / "phantom";
            for (int i = 0; i < cfg.phantom.n_subjects; ++i) {
                const auto b = generate_phantom(cfg.phantom, i);
                write_phantom(b, dir / b.subject_id);
                std::cout << b.subject_id << ": " << b.roi.count() << " ROI voxels, sigma " << b.sigma_abs << "\n";
            }
            std::ofstream(dir / "config.json") << harness::to_json(cfg).dump(2) << "\n";
        } else if (fit->parsed()) {
            const auto cfg = resolve(common);
            const fs::path sd = fit_subject;
            auto smooth = [&cfg](const Volume3D& v) { return gaussian_smooth(v, cfg.smooth_radius, cfg.smooth_sigma); };
            FitResult r;
            std::string name;
            if (fit_method == "lm") {
                std::map<double, Volume3D> imgs;
                for (double t : cfg.phantom.tsl_ms) imgs.emplace(t, smooth(load_volume(sd / tsl_file(t))));
                r = fit_lm(imgs, cfg.phantom.schedule());
                name = "t1rho_lm";
            } else {
                const auto i0 = smooth(load_volume(sd / (fit_source == "pd" ? std::string("pd.qvh") : tsl_file(0.0))));
                const auto ik = smooth(load_volume(sd / tsl_file(fit_tslk)));
                r = fit_two_point(i0, ik, 0.0, fit_tslk);
                char buf[48];
                std::snprintf(buf, sizeof buf, "t1rho_2pt_%s_tsl%g", fit_source.c_str(), fit_tslk);
                name = buf;
            }
            const fs::path out = common.out.empty() ? sd : fs::path(common.out);
            fs::create_directories(out);
            save_volume(r.t1rho_map, out / (name + ".qvh"), DType::Float64);
            save_mask(r.valid, out / (name + "_valid.qvh"), r.t1rho_map.spacing());
            std::cout << "wrote " << (out / (name + ".qvh")).string() << " (" << r.valid.count() << " valid voxels)\n";
        } else if (train->parsed()) {
            const auto cfg = resolve(common);
            const auto combo = harness::parse_combo(train_combo);
            const auto cohort = harness::prepare_cohort(cfg);
            std::vector<std::string> ids;
            for (const auto& s : cohort) ids.push_back(s.id);
            const auto plan = eval::make_folds(ids, harness::derive_seed(cfg.seed, 0xf01d), cfg.n_folds);
            const bool masked = train_model == "unet_masked";
            std::vector<fitters::TrainingSubject> subjects;
            for (std::size_t i = 0; i < cohort.size(); ++i)
                if (train_fold < 0 || plan.fold_of[i] != train_fold)
                    subjects.push_back(harness::training_subject(cohort[i], combo, masked));
            const std::uint64_t seed = harness::derive_seed(cfg.seed, 0x7a1, std::uint64_t(train_fold + 1));
            fitters::TrainedModel tm;
            if (train_model == "mlp") {
                tm = fitters::train_mlp(subjects, cfg.mlp, seed);
            } else {
                auto u = cfg.unet;
                u.loss_mask_mode = masked ? fitters::LossMaskMode::RoiMasked : fitters::LossMaskMode::Unmasked;
                tm = fitters::train_unet(subjects, u, seed);
            }
            const fs::path dir = cfg.output_dir / "train";
            const std::string stem = combo.id() + "_" + train_model + (train_fold >= 0 ? "_fold" + std::to_string(train_fold) : "");
            fs::create_directories(dir);
            nn::save_checkpoint(tm.net, dir / (stem + ".json"), nullptr,
                                {{"model", train_model}, {"combo", combo.id()}, {"fold", train_fold},
                                 {"best_epoch", tm.best_epoch}, {"diverged", tm.diverged}});
            fitters::write_training_log(tm.log, dir / (stem + "_log.csv"));
            std::cout << "wrote " << (dir / (stem + ".json")).string() << " (best epoch " << tm.best_epoch << " of "
                      << tm.log.size() << ")\n";
            if (tm.diverged) std::cout << "WARN: training diverged\n";
        } else if (infer->parsed()) {
            auto ck = nn::load_checkpoint(inf_ckpt);
            const std::string model = ck.extra.value("model", std::string());
            const auto i0 = load_volume(inf_i0);
            const auto ik = load_volume(inf_ik);
            std::optional<RoiMask> roi;
            if (!inf_roi.empty()) roi = load_mask(inf_roi);
            require((model != "mlp" && model != "unet_masked") || roi.has_value(), model + " needs --roi");
            const auto p = fitters::prepare_inputs(i0, ik, model == "unet_masked" ? &*roi : nullptr);
            Volume3D out;
            if (model == "mlp") {
                out = fitters::predict_mlp(ck.net, p.i0, p.ik, *roi);
            } else {
                const int window = ck.net.input_shape().h;
                out = fitters::infer_unet_sliding(ck.net, p.i0, p.ik, window, inf_stride);
            }
            save_volume(out, inf_out, DType::Float64);
            std::cout << "wrote " << inf_out << "\n";
        } else if (evaluate->parsed()) {
            const auto pred = load_volume(ev_pred);
            const auto truth = load_volume(ev_truth);
            const auto roi = load_mask(ev_roi);
            const auto m = eval::all_metrics(pred, truth, roi);
            std::printf("mae_ms,mape_pct,re_ms,rpe_pct\n%.6f,%.6f,%.6f,%.6f\n", m.mae_ms, m.mape_pct, m.re_ms, m.rpe_pct);
        } else if (exp1->parsed() || exp2->parsed() || exp3->parsed()) {
            const auto cfg = resolve(common);
            harness::ExperimentOutcome o;
            if (exp1->parsed()) o = harness::run_experiment1(cfg, &std::cout);
            else if (exp2->parsed()) o = harness::run_experiment2(cfg, &std::cout);
            else o = harness::run_experiment3(cfg, &std::cout);
            std::cout << "wrote " << o.dir.string() << "\n";
        } else if (report->parsed()) {
            std::ifstream in(rep_rows, std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            const auto rows = eval::parse_rows_csv(ss.str());
            const auto summary = eval::aggregate(rows);
            const fs::path out = rep_out.empty() ? fs::path(rep_rows).parent_path() : fs::path(rep_out);
            eval::detail::write_text(out / "summary.csv", eval::summary_csv(summary));
            eval::detail::write_text(out / "summary.txt", eval::summary_table(summary));
            std::cout << eval::summary_table(summary);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
