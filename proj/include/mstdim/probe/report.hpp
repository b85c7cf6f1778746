#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstdim/envsim/variables.hpp"

namespace mstdim {

inline constexpr const char* kF1Averaging = "macro over classes present in test labels";
inline constexpr const char* kAggregation = "variables -> category mean -> mean over categories present";

struct VariableScore {
    std::string name;
    Category category = Category::misc;
    double accuracy = 0.0;
    double f1 = 0.0;

    friend bool operator==(const VariableScore&, const VariableScore&) = default;
};

struct CategoryScore {
    Category category = Category::misc;
    double accuracy = 0.0;
    double f1 = 0.0;
    std::size_t variables = 0;

    friend bool operator==(const CategoryScore&, const CategoryScore&) = default;
};

/// Probe results of one experimental condition for one seed.
struct ConditionReport {
    std::string condition;
    std::uint64_t seed = 0;
    std::string config_fingerprint;
    std::string environment;
    std::string mask_fill;
    std::string f1_averaging = kF1Averaging;
    std::vector<VariableScore> variables;
    std::vector<std::string> filtered_out;
    std::vector<CategoryScore> categories;
    double mean_accuracy = 0.0;
    double mean_f1 = 0.0;

    friend bool operator==(const ConditionReport&, const ConditionReport&) = default;

    const VariableScore* variable(const std::string& name) const {
        for (const auto& v : variables)
            if (v.name == name) return &v;
        return nullptr;
    }
    const CategoryScore* category(Category c) const {
        for (const auto& s : categories)
            if (s.category == c) return &s;
        return nullptr;
    }

    /// Recomputes category means (over retained variables) and overall means
    /// (over categories present, not over variables).
    void aggregate() {
        categories.clear();
        for (Category c : kAllCategories) {
            CategoryScore s{c, 0.0, 0.0, 0};
            for (const auto& v : variables) {
                if (v.category != c) continue;
                s.accuracy += v.accuracy;
                s.f1 += v.f1;
                ++s.variables;
            }
            if (s.variables == 0) continue;
            s.accuracy /= static_cast<double>(s.variables);
            s.f1 /= static_cast<double>(s.variables);
            categories.push_back(s);
        }
        mean_accuracy = mean_f1 = 0.0;
        for (const auto& s : categories) {
            mean_accuracy += s.accuracy;
            mean_f1 += s.f1;
        }
        if (!categories.empty()) {
            mean_accuracy /= static_cast<double>(categories.size());
            mean_f1 /= static_cast<double>(categories.size());
        }
    }
};

inline nlohmann::ordered_json to_json(const ConditionReport& r) {
    nlohmann::ordered_json j;
    j["condition"] = r.condition;
    j["seed"] = r.seed;
    j["config_fingerprint"] = r.config_fingerprint;
    j["environment"] = r.environment;
    j["mask_fill"] = r.mask_fill;
    j["f1_averaging"] = r.f1_averaging;
    j["aggregation"] = kAggregation;
    j["variables"] = nlohmann::ordered_json::array();
    for (const auto& v : r.variables) {
        j["variables"].push_back({{"name", v.name},
                                  {"category", std::string(category_name(v.category))},
                                  {"accuracy", v.accuracy},
                                  {"f1", v.f1}});
    }
    j["filtered_out"] = r.filtered_out;
    j["categories"] = nlohmann::ordered_json::array();
    for (const auto& c : r.categories) {
        j["categories"].push_back({{"category", std::string(category_name(c.category))},
                                   {"accuracy", c.accuracy},
                                   {"f1", c.f1},
                                   {"variables", c.variables}});
    }
    j["mean_accuracy"] = r.mean_accuracy;
    j["mean_f1"] = r.mean_f1;
    return j;
}

inline ConditionReport report_from_json(const nlohmann::json& j) {
    ConditionReport r;
    r.condition = j.at("condition").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_fingerprint = j.value("config_fingerprint", "");
    r.environment = j.value("environment", "");
    r.mask_fill = j.value("mask_fill", "");
    r.f1_averaging = j.value("f1_averaging", std::string(kF1Averaging));
    for (const auto& v : j.at("variables")) {
        r.variables.push_back({v.at("name").get<std::string>(), parse_category(v.at("category").get<std::string>()),
                               v.at("accuracy").get<double>(), v.at("f1").get<double>()});
    }
    if (j.contains("filtered_out")) r.filtered_out = j.at("filtered_out").get<std::vector<std::string>>();
    r.aggregate();
    return r;
}

}  // namespace mstdim
