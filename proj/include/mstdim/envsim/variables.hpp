#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mstdim/error.hpp"

namespace mstdim {

/// Ground-truth variable categories, following the annotated-RAM convention.
enum class Category : std::uint8_t { agent_loc, small_loc, other_loc, score_clock_lives_display, misc };

inline constexpr std::array<Category, 5> kAllCategories = {Category::agent_loc, Category::small_loc,
                                                           Category::other_loc,
                                                           Category::score_clock_lives_display, Category::misc};

inline std::string_view category_name(Category c) {
    switch (c) {
        case Category::agent_loc: return "agent_loc";
        case Category::small_loc: return "small_loc";
        case Category::other_loc: return "other_loc";
        case Category::score_clock_lives_display: return "score_clock_lives_display";
        case Category::misc: return "misc";
    }
    return "?";
}

/// Row labels used in rendered tables.
inline std::string_view category_title(Category c) {
    switch (c) {
        case Category::agent_loc: return "Agent Loc.";
        case Category::small_loc: return "Small Loc.";
        case Category::other_loc: return "Other Loc.";
        case Category::score_clock_lives_display: return "Score/Clock/Lives/Display";
        case Category::misc: return "Misc.";
    }
    return "?";
}

inline Category parse_category(std::string_view s) {
    for (Category c : kAllCategories)
        if (category_name(c) == s) return c;
    throw ConfigError("unknown category '" + std::string(s) + "'");
}

struct VariableInfo {
    std::string name;
    Category category;

    friend bool operator==(const VariableInfo&, const VariableInfo&) = default;
};

/// One frame's worth of byte-valued state variables, in the order of the
/// environment's variable table.
struct StateVariables {
    std::vector<std::uint8_t> values;

    friend bool operator==(const StateVariables&, const StateVariables&) = default;
};

}  // namespace mstdim
