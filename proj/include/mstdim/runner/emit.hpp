#pragma once

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstdim/runner/runner.hpp"

namespace mstdim {

inline constexpr const char* kCellsCsvHeader = "condition,seed,variable,category,accuracy,f1";

/// One row per (cell, variable): condition,seed,variable,category,accuracy,f1.
inline std::string cells_csv(const std::vector<ConditionReport>& reports) {
    std::string out = std::string(kCellsCsvHeader) + "\n";
    for (const auto& r : reports) {
        for (const auto& v : r.variables) {
            out += r.condition + "," + std::to_string(r.seed) + "," + v.name + "," + std::string(category_name(v.category)) + "," +
                   format_g17(v.accuracy) + "," + format_g17(v.f1) + "\n";
        }
    }
    return out;
}

inline std::vector<ConditionReport> successful_reports(const ExperimentMatrixResult& m) {
    std::vector<ConditionReport> out;
    for (const auto& c : m.cells)
        if (c.ok()) out.push_back(*c.report);
    return out;
}

/// Inverse of cells_csv. Consecutive rows with the same (condition, seed)
/// form one report; aggregates are recomputed.
inline std::vector<ConditionReport> parse_cells_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCellsCsvHeader) {
        throw IngestionError("cells.csv", "header", "expected '" + std::string(kCellsCsvHeader) + "'");
    }
    std::vector<ConditionReport> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                f.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        f.push_back(cur);
        const std::string where = "line " + std::to_string(lineno);
        if (f.size() != 6) throw IngestionError("cells.csv", where, "expected 6 fields");
        std::uint64_t seed = 0;
        double acc = 0.0, f1 = 0.0;
        try {
            seed = std::stoull(f[1]);
            acc = detail::to_double("accuracy", f[4]);
            f1 = detail::to_double("f1", f[5]);
        } catch (const std::exception& e) {
            throw IngestionError("cells.csv", where, e.what());
        }
        if (out.empty() || out.back().condition != f[0] || out.back().seed != seed) {
            out.emplace_back();
            out.back().condition = f[0];
            out.back().seed = seed;
        }
        out.back().variables.push_back({f[2], parse_category(f[3]), acc, f1});
    }
    for (auto& r : out) r.aggregate();
    return out;
}

inline nlohmann::ordered_json stat_json(const Stat& s) {
    return {{"mean", s.mean}, {"stddev", s.stddev}, {"n", s.n}};
}

inline Stat stat_from_json(const nlohmann::json& j) {
    return {j.at("mean").get<double>(), j.at("stddev").get<double>(), j.at("n").get<std::size_t>()};
}

inline nlohmann::ordered_json to_json(const ExperimentMatrixResult& m) {
    nlohmann::ordered_json j;
    j["format"] = "mstdim-results-1";
    j["config_fingerprint"] = m.config_fingerprint;
    j["environment"] = m.environment;
    j["mask_fill"] = m.mask_fill;
    j["encoder_layers"] = m.encoder_layers;
    j["encoder_layers_assumed"] = true;
    j["f1_averaging"] = kF1Averaging;
    j["aggregation"] = kAggregation;
    j["seeds"] = m.seeds;
    j["conditions"] = m.conditions;
    j["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : m.cells) {
        nlohmann::ordered_json cj;
        cj["condition"] = c.condition;
        cj["seed_index"] = c.seed_index;
        cj["seed"] = c.seed;
        if (c.ok()) {
            cj["status"] = "ok";
            cj["report"] = to_json(*c.report);
        } else {
            cj["status"] = "failed";
            cj["error"] = c.error;
        }
        j["cells"].push_back(cj);
    }
    j["summary"] = nlohmann::ordered_json::array();
    for (const auto& s : m.summary) {
        nlohmann::ordered_json sj;
        sj["condition"] = s.condition;
        sj["accuracy"] = stat_json(s.accuracy);
        sj["f1"] = stat_json(s.f1);
        for (const auto& [cat, st] : s.category_accuracy) sj["category_accuracy"][std::string(category_name(cat))] = stat_json(st);
        for (const auto& [cat, st] : s.category_f1) sj["category_f1"][std::string(category_name(cat))] = stat_json(st);
        for (const auto& [v, st] : s.variable_accuracy) sj["variable_accuracy"][v] = stat_json(st);
        for (const auto& [v, st] : s.variable_f1) sj["variable_f1"][v] = stat_json(st);
        j["summary"].push_back(sj);
    }
    return j;
}

/// Loads a results file; the summary is recomputed from the cells.
inline ExperimentMatrixResult matrix_from_json(const nlohmann::json& j) {
    ExperimentMatrixResult m;
    m.config_fingerprint = j.value("config_fingerprint", "");
    m.environment = j.value("environment", "");
    m.mask_fill = j.value("mask_fill", "");
    m.encoder_layers = j.value("encoder_layers", "");
    m.seeds = j.at("seeds").get<std::size_t>();
    m.conditions = j.at("conditions").get<std::vector<std::string>>();
    for (const auto& cj : j.at("cells")) {
        CellResult c;
        c.condition = cj.at("condition").get<std::string>();
        c.seed_index = cj.at("seed_index").get<std::size_t>();
        c.seed = cj.at("seed").get<std::uint64_t>();
        if (cj.at("status").get<std::string>() == "ok") {
            c.report = report_from_json(cj.at("report"));
        } else {
            c.error = cj.value("error", "");
        }
        m.cells.push_back(std::move(c));
    }
    m.summarize_cells();
    return m;
}

inline nlohmann::ordered_json reports_json(const std::vector<ConditionReport>& reports) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : reports) j.push_back(to_json(r));
    return j;
}

inline std::vector<ConditionReport> reports_from_json(const nlohmann::json& j) {
    std::vector<ConditionReport> out;
    for (const auto& r : j) out.push_back(report_from_json(r));
    return out;
}

namespace detail {

inline std::string fixed3(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", x);
    return buf;
}

inline std::string cell_text(const std::map<Category, Stat>& m, Category c) {
    const auto it = m.find(c);
    if (it == m.end() || it->second.n == 0) return "n/a";
    return fixed3(it->second.mean) + " ± " + fixed3(it->second.stddev);
}

inline std::string stat_text(const Stat& s) {
    if (s.n == 0) return "n/a";
    return fixed3(s.mean) + " ± " + fixed3(s.stddev);
}

inline std::vector<Category> categories_present(const ExperimentMatrixResult& m) {
    std::set<Category> seen;
    for (const auto& s : m.summary)
        for (const auto& [c, st] : s.category_accuracy) seen.insert(c);
    std::vector<Category> out;
    for (Category c : kAllCategories)
        if (seen.count(c)) out.push_back(c);
    return out;
}

}  // namespace detail

/// Tables with conditions as columns and categories as rows, one table per metric.
inline std::string markdown_report(const ExperimentMatrixResult& m) {
    using detail::cell_text;
    std::ostringstream os;
    const auto present = detail::categories_present(m);
    os << "# Probe results\n\n";
    os << "Environment: `" << m.environment << "`\n\n";
    os << "Config fingerprint `" << m.config_fingerprint << "`, " << m.seeds << " seed(s), mask fill "
       << m.mask_fill << ". Values are mean ± standard deviation over seeds.\n";
    if (!m.encoder_layers.empty())
        os << "\nEncoder layers `" << m.encoder_layers << "` (out:kernel:stride:pad); channel widths are assumed.\n";

    auto header = [&](const std::string& first) {
        os << "| " << first << " |";
        for (const auto& c : m.conditions) os << ' ' << c << " |";
        os << "\n|---|";
        for (std::size_t i = 0; i < m.conditions.size(); ++i) os << "---|";
        os << '\n';
    };
    auto metric_table = [&](const std::string& title, bool f1) {
        os << "\n## " << title << "\n\n";
        header("Category");
        for (Category cat : present) {
            os << "| " << std::string(category_title(cat)) << " |";
            for (const auto& s : m.summary) os << ' ' << cell_text(f1 ? s.category_f1 : s.category_accuracy, cat) << " |";
            os << '\n';
        }
        os << "| Mean |";
        for (const auto& s : m.summary) os << ' ' << detail::stat_text(f1 ? s.f1 : s.accuracy) << " |";
        os << '\n';
        os << "| " << m.environment.substr(0, m.environment.find(':')) << " |";
        for (const auto& s : m.summary) os << ' ' << detail::stat_text(f1 ? s.f1 : s.accuracy) << " |";
        os << '\n';
    };
    metric_table("Probe accuracy", false);
    metric_table("Probe F1", true);

    std::vector<std::string> variables;
    for (const auto& s : m.summary)
        for (const auto& [v, st] : s.variable_accuracy)
            if (std::find(variables.begin(), variables.end(), v) == variables.end()) variables.push_back(v);
    if (!variables.empty()) {
        os << "\n## Per-variable accuracy\n\n";
        header("Variable");
        for (const auto& v : variables) {
            os << "| " << v << " |";
            for (const auto& s : m.summary) {
                const auto it = s.variable_accuracy.find(v);
                os << ' ' << (it == s.variable_accuracy.end() ? "n/a" : detail::stat_text(it->second)) << " |";
            }
            os << '\n';
        }
    }

    os << "\nF1: " << kF1Averaging << ". Mean: " << kAggregation << ".\n";
    std::vector<std::string> omitted;
    for (Category c : kAllCategories)
        if (std::find(present.begin(), present.end(), c) == present.end()) omitted.push_back(std::string(category_title(c)));
    if (!omitted.empty()) {
        os << "\nNot all categories are available; omitted (no retained variables):";
        for (std::size_t i = 0; i < omitted.size(); ++i) os << (i ? ", " : " ") << omitted[i];
        os << ".\n";
    }
    bool header_done = false;
    for (const auto& c : m.cells) {
        if (c.ok()) continue;
        if (!header_done) os << "\nFailed cells:\n\n";
        header_done = true;
        os << "- " << c.condition << " seed " << c.seed_index << ": " << c.error << '\n';
    }
    return os.str();
}

/// Bar chart of mean accuracy per condition for one category (or the overall
/// mean when `category` is empty), with ±1 standard deviation whiskers.
inline std::string svg_bars(const ExperimentMatrixResult& m, std::optional<Category> category) {
    const int bar = 48, gap = 16, left = 48, top = 36, plot_h = 200;
    const int width = left + static_cast<int>(m.summary.size()) * (bar + gap) + gap;
    const int height = top + plot_h + 110;
    const std::string title = category ? std::string(category_title(*category)) : std::string("Mean");
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << title << ": probe accuracy</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width << "\" y2=\"" << top + plot_h
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = t * 0.25;
        const int y = top + plot_h - static_cast<int>(v * plot_h);
        os << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << detail::fixed3(v).substr(0, 4)
           << "</text>\n";
    }
    int x = left + gap;
    for (const auto& s : m.summary) {
        Stat st = s.accuracy;
        if (category) {
            const auto it = s.category_accuracy.find(*category);
            st = it == s.category_accuracy.end() ? Stat{} : it->second;
        }
        if (st.n > 0) {
            const double h = st.mean * plot_h;
            os << "<rect x=\"" << x << "\" y=\"" << detail::fixed3(top + plot_h - h) << "\" width=\"" << bar
               << "\" height=\"" << detail::fixed3(h) << "\" fill=\"#4c72b0\"/>\n";
            const double lo = std::max(0.0, st.mean - st.stddev) * plot_h;
            const double hi = std::min(1.0, st.mean + st.stddev) * plot_h;
            os << "<line x1=\"" << x + bar / 2 << "\" y1=\"" << detail::fixed3(top + plot_h - lo) << "\" x2=\""
               << x + bar / 2 << "\" y2=\"" << detail::fixed3(top + plot_h - hi) << "\" stroke=\"black\"/>\n";
            os << "<text x=\"" << x + bar / 2 << "\" y=\"" << detail::fixed3(top + plot_h - h - 4)
               << "\" text-anchor=\"middle\">" << detail::fixed3(st.mean) << "</text>\n";
        }
        os << "<text transform=\"translate(" << x + bar / 2 << "," << top + plot_h + 12
           << ") rotate(40)\" text-anchor=\"start\">" << s.condition << "</text>\n";
        x += bar + gap;
    }
    os << "</svg>\n";
    return os.str();
}

inline std::string summary_csv(const ExperimentMatrixResult& m) {
    std::string out = "condition,scope,name,metric,mean,stddev,n\n";
    auto row = [&](const std::string& cond, const std::string& scope, const std::string& name, const char* metric,
                   const Stat& s) {
        out += cond + "," + scope + "," + name + "," + metric + "," + format_g17(s.mean) + "," + format_g17(s.stddev) +
               "," + std::to_string(s.n) + "\n";
    };
    for (const auto& s : m.summary) {
        row(s.condition, "overall", "mean", "accuracy", s.accuracy);
        row(s.condition, "overall", "mean", "f1", s.f1);
        for (const auto& [c, st] : s.category_accuracy) row(s.condition, "category", std::string(category_name(c)), "accuracy", st);
        for (const auto& [c, st] : s.category_f1) row(s.condition, "category", std::string(category_name(c)), "f1", st);
        for (const auto& [v, st] : s.variable_accuracy) row(s.condition, "variable", v, "accuracy", st);
        for (const auto& [v, st] : s.variable_f1) row(s.condition, "variable", v, "f1", st);
    }
    return out;
}

enum class ReportFormat { csv, json, markdown, svg_bars };

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw Error("failed writing " + path.string());
}

/// Writes the requested formats into `dir`; returns the files written.
inline std::vector<std::filesystem::path> emit_report(const ExperimentMatrixResult& m, ReportFormat format,
                                                      const std::filesystem::path& dir) {
    if (m.cells.empty()) throw ConfigError("emit_report: empty result");
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    auto put = [&](const std::string& name, const std::string& text) {
        write_text(dir / name, text);
        written.push_back(dir / name);
    };
    switch (format) {
        case ReportFormat::csv:
            put("cells.csv", cells_csv(successful_reports(m)));
            put("summary.csv", summary_csv(m));
            break;
        case ReportFormat::json: put("results.json", to_json(m).dump(2) + "\n"); break;
        case ReportFormat::markdown: put("tables.md", markdown_report(m)); break;
        case ReportFormat::svg_bars:
            put("bars_mean.svg", svg_bars(m, std::nullopt));
            for (Category c : detail::categories_present(m)) put("bars_" + std::string(category_name(c)) + ".svg", svg_bars(m, c));
            break;
    }
    return written;
}

inline std::vector<std::filesystem::path> emit_all(const ExperimentMatrixResult& m, const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> all;
    for (ReportFormat f : {ReportFormat::csv, ReportFormat::json, ReportFormat::markdown, ReportFormat::svg_bars}) {
        for (auto& p : emit_report(m, f, dir)) all.push_back(std::move(p));
    }
    return all;
}

}  // namespace mstdim
