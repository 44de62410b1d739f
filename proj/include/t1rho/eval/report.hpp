#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "t1rho/error.hpp"
#include "t1rho/eval/metrics.hpp"

namespace t1rho::eval {

struct ReportRow {
    std::string subject_id;
    int fold = 0;
    std::string combo_id;
    std::string model_id;
    Metrics m;
};

struct Stat {
    double mean = 0.0;
    std::optional<double> std; // absent for a single row
};

struct SummaryRow {
    std::string combo_id;
    std::string model_id;
    std::size_t n = 0;
    Stat mae_ms, mape_pct, re_ms, rpe_pct;
    bool rpe_below_threshold() const { return rpe_pct.mean < 5.0; }
};

struct MetricsReport {
    std::vector<ReportRow> rows;
};

inline Stat describe(const std::vector<double>& v) {
    require(!v.empty(), "nothing to report");
    Stat s;
    for (double x : v) s.mean += x;
    s.mean /= double(v.size());
    if (v.size() >= 2) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / double(v.size() - 1));
    }
    return s;
}

/// Mean and sample std per (combo, model), sorted by key.
inline std::vector<SummaryRow> aggregate(const std::vector<ReportRow>& rows) {
    require(!rows.empty(), "nothing to report");
    std::map<std::pair<std::string, std::string>, std::vector<const ReportRow*>> groups;
    for (const auto& r : rows) groups[{r.combo_id, r.model_id}].push_back(&r);
    std::vector<SummaryRow> out;
    for (const auto& [key, members] : groups) {
        std::vector<double> a, b, c, d;
        for (const auto* r : members) {
            a.push_back(r->m.mae_ms);
            b.push_back(r->m.mape_pct);
            c.push_back(r->m.re_ms);
            d.push_back(r->m.rpe_pct);
        }
        out.push_back({key.first, key.second, members.size(), describe(a), describe(b), describe(c), describe(d)});
    }
    return out;
}

inline const SummaryRow* find_summary(const std::vector<SummaryRow>& s, const std::string& combo,
                                      const std::string& model) {
    for (const auto& r : s)
        if (r.combo_id == combo && r.model_id == model) return &r;
    return nullptr;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    require(bool(out), "cannot write " + path.string());
    out << text;
}

} // namespace detail

inline constexpr const char* kRowHeader = "subject_id,fold,combo_id,model_id,mae_ms,mape_pct,re_ms,rpe_pct";

/// Per-subject rows; values use round-trip precision.
inline std::string rows_csv(const std::vector<ReportRow>& rows) {
    require(!rows.empty(), "nothing to report");
    std::string s = std::string(kRowHeader) + "\n";
    for (const auto& r : rows) {
        s += r.subject_id + "," + std::to_string(r.fold) + "," + r.combo_id + "," + r.model_id;
        for (double v : {r.m.mae_ms, r.m.mape_pct, r.m.re_ms, r.m.rpe_pct}) s += "," + detail::fmt("%.17g", v);
        s += "\n";
    }
    return s;
}

inline std::vector<ReportRow> parse_rows_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(bool(std::getline(in, line)) && line == kRowHeader, "unexpected report header");
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        require(f.size() == 8, "malformed report row: " + line);
        rows.push_back({f[0], std::stoi(f[1]), f[2], f[3],
                        {std::stod(f[4]), std::stod(f[5]), std::stod(f[6]), std::stod(f[7])}});
    }
    return rows;
}

inline std::string summary_csv(const std::vector<SummaryRow>& summary) {
    require(!summary.empty(), "nothing to report");
    std::string s = "combo_id,model_id,n,mae_ms_mean,mae_ms_std,mape_pct_mean,mape_pct_std,re_ms_mean,re_ms_std,"
                    "rpe_pct_mean,rpe_pct_std,rpe_below_5pct\n";
    for (const auto& r : summary) {
        s += r.combo_id + "," + r.model_id + "," + std::to_string(r.n);
        for (const Stat* st : {&r.mae_ms, &r.mape_pct, &r.re_ms, &r.rpe_pct}) {
            s += "," + detail::fmt("%.6f", st->mean) + ",";
            if (st->std) s += detail::fmt("%.6f", *st->std);
        }
        s += std::string(",") + (r.rpe_below_threshold() ? "yes" : "no") + "\n";
    }
    return s;
}

/// Model x combo grid of mean +- std, one block per metric.
inline std::string summary_table(const std::vector<SummaryRow>& summary) {
    require(!summary.empty(), "nothing to report");
    std::vector<std::string> combos, models;
    for (const auto& r : summary) {
        if (std::find(combos.begin(), combos.end(), r.combo_id) == combos.end()) combos.push_back(r.combo_id);
        if (std::find(models.begin(), models.end(), r.model_id) == models.end()) models.push_back(r.model_id);
    }
    auto cell = [](const Stat& s) {
        char buf[64];
        if (s.std) std::snprintf(buf, sizeof buf, "%.2f +- %.2f", s.mean, *s.std);
        else std::snprintf(buf, sizeof buf, "%.2f", s.mean);
        return std::string(buf);
    };
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s.append(w - s.size(), ' ');
        return s;
    };
    const std::size_t w0 = 16, w = 22;
    std::string out;
    const std::pair<const char*, Stat SummaryRow::*> metrics[] = {
        {"MAE (ms)", &SummaryRow::mae_ms},
        {"MAPE (%)", &SummaryRow::mape_pct},
        {"RE (ms)", &SummaryRow::re_ms},
        {"RPE (%)", &SummaryRow::rpe_pct},
    };
    for (const auto& [title, member] : metrics) {
        out += std::string(title) + "\n" + pad("model", w0);
        for (const auto& c : combos) out += pad(c, w);
        out += "\n";
        for (const auto& m : models) {
            out += pad(m, w0);
            for (const auto& c : combos) {
                const auto* r = find_summary(summary, c, m);
                std::string txt = r ? cell(r->*member) : "-";
                if (r && member == &SummaryRow::rpe_pct && r->rpe_below_threshold()) txt += " *";
                out += pad(txt, w);
            }
            out += "\n";
        }
        out += "\n";
    }
    out += "* mean RPE below 5%\n";
    return out;
}

/// Writes rows.csv, summary.csv and summary.txt under `dir`.
inline void emit_report(const MetricsReport& report, const std::filesystem::path& dir) {
    require(!report.rows.empty(), "nothing to report");
    const auto summary = aggregate(report.rows);
    detail::write_text(dir / "rows.csv", rows_csv(report.rows));
    detail::write_text(dir / "summary.csv", summary_csv(summary));
    detail::write_text(dir / "summary.txt", summary_table(summary));
}

} // namespace t1rho::eval
