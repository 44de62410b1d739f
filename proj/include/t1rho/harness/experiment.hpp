#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "t1rho/error.hpp"
#include "t1rho/eval/folds.hpp"
#include "t1rho/eval/metrics.hpp"
#include "t1rho/eval/report.hpp"
#include "t1rho/fitters/mlp.hpp"
#include "t1rho/fitters/training.hpp"
#include "t1rho/fitters/unet.hpp"
#include "t1rho/fitters/voxels.hpp"
#include "t1rho/harness/config.hpp"
#include "t1rho/nlls.hpp"
#include "t1rho/phantom.hpp"
#include "t1rho/volume.hpp"

#ifndef T1RHO_VERSION
#define T1RHO_VERSION "unknown"
#endif

namespace t1rho::harness {

/// One simulated subject after smoothing, with its four-TSL reference fit.
struct SubjectData {
    std::string id;
    Volume3D truth;
    RoiMask roi;
    std::map<double, Volume3D> weighted; // smoothed
    Volume3D pd;                         // smoothed
    FitResult reference;
};

inline SubjectData preprocess_subject(const PhantomBundle& b, const ExperimentConfig& cfg) {
    SubjectData s{b.subject_id, b.truth_t1rho, b.roi, {}, gaussian_smooth(b.pd_surrogate, cfg.smooth_radius, cfg.smooth_sigma), {}};
    for (const auto& [tsl, img] : b.weighted) s.weighted.emplace(tsl, gaussian_smooth(img, cfg.smooth_radius, cfg.smooth_sigma));
    s.reference = fit_lm(s.weighted, cfg.phantom.schedule());
    return s;
}

inline std::vector<SubjectData> prepare_cohort(const ExperimentConfig& cfg) {
    std::vector<SubjectData> out;
    for (int i = 0; i < cfg.phantom.n_subjects; ++i) out.push_back(preprocess_subject(generate_phantom(cfg.phantom, i), cfg));
    return out;
}

inline const Volume3D& baseline_image(const SubjectData& s, const Combo& c) {
    if (c.source == I0Source::PdSurrogate) return s.pd;
    auto it = s.weighted.find(0.0);
    require(it != s.weighted.end(), "missing phantom data: no TSL 0 image for " + s.id);
    return it->second;
}

inline const Volume3D& weighted_image(const SubjectData& s, const Combo& c) {
    auto it = s.weighted.find(c.tslk_ms);
    require(it != s.weighted.end(), "missing phantom data: no TSL " + std::to_string(c.tslk_ms) + " image for " + s.id);
    return it->second;
}

inline fitters::TrainingSubject training_subject(const SubjectData& s, const Combo& c, bool masked) {
    auto p = fitters::prepare_inputs(baseline_image(s, c), weighted_image(s, c), masked ? &s.roi : nullptr);
    return {std::move(p.i0), std::move(p.ik), s.reference.t1rho_map, s.roi, s.reference.valid};
}

/// True when every voxel outside the ROI is exactly zero in both inputs.
inline bool non_roi_inputs_zero(const fitters::TrainingSubject& t) {
    for (std::size_t i = 0; i < t.roi.size(); ++i)
        if (!t.roi[i] && (t.i0[i] != 0.0 || t.ik[i] != 0.0)) return false;
    return true;
}

struct StageTiming {
    std::string name;
    double seconds = 0.0;
};

struct RunRecord {
    std::string combo_id, model_id;
    int fold = 0;
    std::uint64_t seed = 0;
    int epochs_run = 0, best_epoch = 0;
    bool diverged = false;
    std::vector<fitters::EpochLog> log;
};

struct StudyResult {
    eval::FoldPlan plan;
    std::vector<eval::ReportRow> rows;       // against the four-TSL reference
    std::vector<eval::ReportRow> truth_rows; // against the analytic phantom map
    std::vector<RunRecord> runs;
    std::size_t masked_subjects_checked = 0;
    bool masked_inputs_zero = true;
    bool predictions_in_bounds = true;
    std::vector<StageTiming> timings;
};

namespace detail {

using clock = std::chrono::steady_clock;

inline double seconds_since(clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
}

inline std::size_t model_index(const std::string& m) {
    const auto& k = known_models();
    return std::size_t(std::find(k.begin(), k.end(), m) - k.begin());
}

inline bool within(const Volume3D& v, const RoiMask& roi, double lo, double hi) {
    for (std::size_t i = 0; i < roi.size(); ++i)
        if (roi[i] && !(v[i] >= lo && v[i] <= hi)) return false;
    return true;
}

} // namespace detail

/// Cross-validated evaluation of `models` on every configured combo. The same
/// fold plan is used for every combo and model.
inline StudyResult run_study(const ExperimentConfig& cfg, const std::vector<std::string>& models,
                             std::ostream* progress = nullptr) {
    cfg.validate();
    require(!models.empty(), "nothing to report");
    StudyResult res;
    auto t0 = detail::clock::now();
    const auto cohort = prepare_cohort(cfg);
    res.timings.push_back({"phantom_and_reference_fit", detail::seconds_since(t0)});

    std::vector<std::string> ids;
    for (const auto& s : cohort) ids.push_back(s.id);
    res.plan = eval::make_folds(ids, derive_seed(cfg.seed, 0xf01d), cfg.n_folds);
    for (const auto& s : cohort)
        res.truth_rows.push_back({s.id, res.plan.fold(s.id), "all", "reference_lm4",
                                  eval::all_metrics(s.reference.t1rho_map, s.truth, s.roi)});

    for (std::size_t ci = 0; ci < cfg.combos.size(); ++ci) {
        const Combo& combo = cfg.combos[ci];
        for (int fold = 0; fold < cfg.n_folds; ++fold) {
            std::vector<std::size_t> train_idx, test_idx;
            for (std::size_t i = 0; i < cohort.size(); ++i)
                (res.plan.fold_of[i] == fold ? test_idx : train_idx).push_back(i);
            std::set<std::string> train_ids;
            for (auto i : train_idx) train_ids.insert(cohort[i].id);
            for (auto i : test_idx) require(!train_ids.count(cohort[i].id), "fold hygiene violated for " + cohort[i].id);

            for (const auto& model : models) {
                auto ts = detail::clock::now();
                std::vector<Volume3D> preds;
                if (model == "nlls_2pt") {
                    for (auto i : test_idx) {
                        auto fit = fit_two_point(baseline_image(cohort[i], combo), weighted_image(cohort[i], combo), 0.0,
                                                 combo.tslk_ms);
                        res.predictions_in_bounds &= detail::within(fit.t1rho_map, cohort[i].roi, 1.0, 200.0);
                        preds.push_back(std::move(fit.t1rho_map));
                    }
                } else {
                    const bool masked = model == "unet_masked";
                    std::vector<fitters::TrainingSubject> train;
                    for (auto i : train_idx) train.push_back(training_subject(cohort[i], combo, masked));
                    std::vector<fitters::TrainingSubject> test;
                    for (auto i : test_idx) test.push_back(training_subject(cohort[i], combo, masked));
                    if (masked) {
                        for (const auto* group : {&train, &test})
                            for (const auto& t : *group) {
                                res.masked_inputs_zero &= non_roi_inputs_zero(t);
                                ++res.masked_subjects_checked;
                            }
                    }
                    RunRecord rec;
                    rec.combo_id = combo.id();
                    rec.model_id = model;
                    rec.fold = fold;
                    rec.seed = derive_seed(cfg.seed, ci + 1, std::uint64_t(fold) + 1, detail::model_index(model) + 1);
                    fitters::TrainedModel tm;
                    double lo, hi;
                    if (model == "mlp") {
                        tm = fitters::train_mlp(train, cfg.mlp, rec.seed);
                        lo = cfg.mlp.y_min, hi = cfg.mlp.y_max;
                    } else {
                        fitters::UNetConfig ucfg = cfg.unet;
                        ucfg.loss_mask_mode = masked ? fitters::LossMaskMode::RoiMasked : fitters::LossMaskMode::Unmasked;
                        tm = fitters::train_unet(train, ucfg, rec.seed);
                        lo = ucfg.y_min, hi = ucfg.y_max;
                    }
                    for (const auto& t : test) {
                        Volume3D p = model == "mlp" ? fitters::predict_mlp(tm.net, t.i0, t.ik, t.roi)
                                                    : fitters::infer_unet_sliding(tm.net, t.i0, t.ik, cfg.unet.patch,
                                                                                  cfg.window_stride);
                        if (!tm.diverged) res.predictions_in_bounds &= detail::within(p, t.roi, lo, hi);
                        preds.push_back(std::move(p));
                    }
                    rec.epochs_run = int(tm.log.size());
                    rec.best_epoch = tm.best_epoch;
                    rec.diverged = tm.diverged;
                    rec.log = std::move(tm.log);
                    if (progress && rec.diverged)
                        *progress << "WARN: training diverged for " << rec.model_id << " on " << rec.combo_id
                                  << " fold " << fold << "\n";
                    res.runs.push_back(std::move(rec));
                }
                for (std::size_t k = 0; k < test_idx.size(); ++k) {
                    const auto& s = cohort[test_idx[k]];
                    res.rows.push_back({s.id, fold, combo.id(), model,
                                        eval::all_metrics(preds[k], s.reference.t1rho_map, s.roi)});
                    res.truth_rows.push_back({s.id, fold, combo.id(), model, eval::all_metrics(preds[k], s.truth, s.roi)});
                }
                const double dt = detail::seconds_since(ts);
                res.timings.push_back({combo.id() + "/fold" + std::to_string(fold) + "/" + model, dt});
                if (progress) {
                    char buf[160];
                    std::snprintf(buf, sizeof buf, "  %-10s fold %d  %-14s %7.1f s\n", combo.id().c_str(), fold,
                                  model.c_str(), dt);
                    *progress << buf << std::flush;
                }
            }
        }
    }
    return res;
}

/// Expected-direction check recorded alongside a report; never fatal.
struct Comparison {
    std::string claim;
    std::string lhs;
    double lhs_value = 0.0;
    std::string relation; // "<", "<=", ">"
    std::string rhs;
    double rhs_value = 0.0;

    bool holds() const {
        if (relation == "<") return lhs_value < rhs_value;
        if (relation == "<=") return lhs_value <= rhs_value;
        return lhs_value > rhs_value;
    }
};

struct BestModel {
    std::string combo_id, model_id;
    double rpe_pct = 0.0;
};

/// Best learned model per combo, ranked by mean RPE (ties broken by name).
inline std::vector<BestModel> best_dl_models(const std::vector<eval::SummaryRow>& summary,
                                             const std::vector<Combo>& combos) {
    std::vector<BestModel> out;
    for (const auto& c : combos) {
        const eval::SummaryRow* best = nullptr;
        for (const auto& r : summary)
            if (r.combo_id == c.id() && is_dl_model(r.model_id) && (!best || r.rpe_pct.mean < best->rpe_pct.mean))
                best = &r;
        if (best) out.push_back({c.id(), best->model_id, best->rpe_pct.mean});
    }
    return out;
}

struct RunManifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::uint64_t phantom_seed = 0;
    std::string version = T1RHO_VERSION;
    std::vector<StageTiming> timings;
    std::vector<std::pair<std::string, std::string>> files; // relative path, content hash
};

struct ExperimentOutcome {
    std::string name;
    StudyResult study;
    std::vector<eval::SummaryRow> summary;
    std::vector<Comparison> comparisons;
    std::vector<BestModel> best;
    RunManifest manifest;
    std::filesystem::path dir;
};

namespace detail {

inline std::string comparisons_csv(const std::vector<Comparison>& cs) {
    std::string s = "claim,lhs,lhs_rpe_pct,relation,rhs,rhs_rpe_pct,holds\n";
    for (const auto& c : cs)
        s += c.claim + "," + c.lhs + "," + eval::detail::fmt("%.6f", c.lhs_value) + "," + c.relation + "," + c.rhs +
             "," + eval::detail::fmt("%.6f", c.rhs_value) + "," + (c.holds() ? "yes" : "no") + "\n";
    return s;
}

inline std::string best_csv(const std::vector<BestModel>& bs, const std::vector<eval::SummaryRow>& summary) {
    std::string s = "combo_id,best_dl_model,rpe_pct_mean,rpe_below_5pct,nlls_2pt_rpe_pct_mean\n";
    for (const auto& b : bs) {
        const auto* n = eval::find_summary(summary, b.combo_id, "nlls_2pt");
        s += b.combo_id + "," + b.model_id + "," + eval::detail::fmt("%.6f", b.rpe_pct) + "," +
             (b.rpe_pct < 5.0 ? "yes" : "no") + "," + (n ? eval::detail::fmt("%.6f", n->rpe_pct.mean) : "") + "\n";
    }
    return s;
}

inline std::string runs_csv(const std::vector<RunRecord>& runs) {
    std::string s = "combo_id,model_id,fold,seed,epochs_run,best_epoch,diverged,final_train_loss\n";
    for (const auto& r : runs) {
        s += r.combo_id + "," + r.model_id + "," + std::to_string(r.fold) + "," + std::to_string(r.seed) + "," +
             std::to_string(r.epochs_run) + "," + std::to_string(r.best_epoch) + "," + (r.diverged ? "yes" : "no") +
             "," + (r.log.empty() ? std::string() : eval::detail::fmt("%.9g", r.log.back().train_loss)) + "\n";
    }
    return s;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(bool(in), "cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace detail

/// Writes every artifact of an experiment under `dir` plus manifest.json.
/// All CSV and text files are functions of (config, seed) only; timings live
/// in the manifest.
inline void write_outcome(ExperimentOutcome& o, const ExperimentConfig& cfg, std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    const fs::path dir = o.dir;
    fs::create_directories(dir);
    eval::emit_report({o.study.rows}, dir);
    eval::detail::write_text(dir / "truth_rows.csv", eval::rows_csv(o.study.truth_rows));
    eval::detail::write_text(dir / "comparisons.csv", detail::comparisons_csv(o.comparisons));
    if (!o.best.empty()) eval::detail::write_text(dir / "best_dl.csv", detail::best_csv(o.best, o.summary));
    if (!o.study.runs.empty()) eval::detail::write_text(dir / "runs.csv", detail::runs_csv(o.study.runs));
    std::string folds = "subject_id,fold\n";
    for (std::size_t i = 0; i < o.study.plan.subjects.size(); ++i)
        folds += o.study.plan.subjects[i] + "," + std::to_string(o.study.plan.fold_of[i]) + "\n";
    eval::detail::write_text(dir / "folds.csv", folds);
    for (const auto& r : o.study.runs)
        fitters::write_training_log(r.log, dir / "logs" / (r.combo_id + "_" + r.model_id + "_fold" + std::to_string(r.fold) + ".csv"));

    o.manifest.config_hash = config_hash(cfg);
    o.manifest.seed = cfg.seed;
    o.manifest.phantom_seed = cfg.phantom.seed;
    o.manifest.timings = o.study.timings;
    o.manifest.files.clear();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
        o.manifest.files.emplace_back(fs::relative(f, dir).generic_string(), hex64(fnv1a(detail::read_file(f))));

    json m{{"experiment", o.name},
           {"config_hash", o.manifest.config_hash},
           {"seed", o.manifest.seed},
           {"phantom_seed", o.manifest.phantom_seed},
           {"fold_seed", o.study.plan.seed},
           {"version", o.manifest.version},
           {"config", to_json(cfg)},
           {"masked_inputs_zero", o.study.masked_inputs_zero},
           {"masked_subjects_checked", o.study.masked_subjects_checked},
           {"predictions_in_bounds", o.study.predictions_in_bounds}};
    json t = json::array();
    for (const auto& s : o.manifest.timings) t.push_back({{"stage", s.name}, {"seconds", s.seconds}});
    m["timings"] = t;
    json inv = json::array();
    for (const auto& [path, hash] : o.manifest.files) inv.push_back({{"path", path}, {"fnv1a64", hash}});
    m["files"] = inv;
    eval::detail::write_text(dir / "manifest.json", m.dump(2) + "\n");

    if (progress) {
        *progress << eval::summary_table(o.summary);
        for (const auto& c : o.comparisons)
            if (!c.holds())
                *progress << "WARN: expected " << c.claim << " (" << c.lhs << " " << c.relation << " " << c.rhs
                          << ") but observed " << c.lhs_value << " vs " << c.rhs_value << "\n";
    }
}

namespace detail {

inline double rpe_of(const std::vector<eval::SummaryRow>& s, const std::string& combo, const std::string& model) {
    const auto* r = eval::find_summary(s, combo, model);
    return r ? r->rpe_pct.mean : std::numeric_limits<double>::quiet_NaN();
}

inline void compare_if_present(std::vector<Comparison>& out, const std::vector<eval::SummaryRow>& s,
                               const std::string& claim, const std::string& lc, const std::string& lm,
                               const std::string& rel, const std::string& rc, const std::string& rm) {
    if (!eval::find_summary(s, lc, lm) || !eval::find_summary(s, rc, rm)) return;
    out.push_back({claim, lm + "@" + lc, rpe_of(s, lc, lm), rel, rm + "@" + rc, rpe_of(s, rc, rm)});
}

inline ExperimentOutcome run_named(const std::string& name, const ExperimentConfig& cfg,
                                   const std::vector<std::string>& models, std::ostream* progress) {
    ExperimentOutcome o;
    o.name = name;
    o.dir = cfg.output_dir / name;
    if (progress) *progress << name << ": " << cfg.combos.size() << " combos, " << models.size() << " models, "
                            << cfg.phantom.n_subjects << " subjects, profile " << cfg.profile << "\n";
    o.study = run_study(cfg, models, progress);
    o.summary = eval::aggregate(o.study.rows);
    return o;
}

} // namespace detail

/// Best learned fitter and the two-point reference for every combo.
inline ExperimentOutcome run_experiment1(const ExperimentConfig& cfg, std::ostream* progress = nullptr) {
    auto o = detail::run_named("exp1", cfg, cfg.models, progress);
    o.best = best_dl_models(o.summary, cfg.combos);
    const std::string n = "nlls_2pt";
    detail::compare_if_present(o.comparisons, o.summary, "nlls_degrades_with_short_tsl", "pd_tsl10", n, ">", "pd_tsl50", n);
    detail::compare_if_present(o.comparisons, o.summary, "nlls_pd_worse_than_tsl0", "pd_tsl50", n, ">", "tsl0_tsl10", n);
    detail::compare_if_present(o.comparisons, o.summary, "nlls_degrades_with_short_tsl", "tsl0_tsl10", n, ">", "tsl0_tsl50", n);
    for (const auto& b : o.best) {
        if (eval::find_summary(o.summary, b.combo_id, n))
            o.comparisons.push_back({"best_dl_beats_nlls", b.model_id + "@" + b.combo_id, b.rpe_pct, "<",
                                     n + "@" + b.combo_id, detail::rpe_of(o.summary, b.combo_id, n)});
        o.comparisons.push_back({"best_dl_rpe_below_5pct", b.model_id + "@" + b.combo_id, b.rpe_pct, "<", "threshold", 5.0});
    }
    write_outcome(o, cfg, progress);
    return o;
}

/// U-Net (unmasked) and MLP side by side on every combo.
inline ExperimentOutcome run_experiment2(const ExperimentConfig& cfg, std::ostream* progress = nullptr) {
    auto o = detail::run_named("exp2", cfg, {"unet_unmasked", "mlp"}, progress);
    o.best = best_dl_models(o.summary, cfg.combos);
    detail::compare_if_present(o.comparisons, o.summary, "mlp_best_on_tsl0_tsl50", "tsl0_tsl50", "mlp", "<=",
                               "tsl0_tsl50", "unet_unmasked");
    detail::compare_if_present(o.comparisons, o.summary, "unet_best_on_pd_tsl10", "pd_tsl10", "unet_unmasked", "<=",
                               "pd_tsl10", "mlp");
    write_outcome(o, cfg, progress);
    return o;
}

/// Masked versus unmasked U-Net on every combo.
inline ExperimentOutcome run_experiment3(const ExperimentConfig& cfg, std::ostream* progress = nullptr) {
    auto o = detail::run_named("exp3", cfg, {"unet_unmasked", "unet_masked"}, progress);
    for (const auto& c : cfg.combos)
        detail::compare_if_present(o.comparisons, o.summary, "masking_degrades", c.id(), "unet_unmasked", "<=", c.id(),
                                   "unet_masked");
    write_outcome(o, cfg, progress);
    return o;
}

} // namespace t1rho::harness
