#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mstdim/envsim/dataset.hpp"

namespace mstdim {

inline double accuracy(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> predictions) {
    if (labels.size() != predictions.size()) throw ConfigError("accuracy: label/prediction length mismatch");
    if (labels.empty()) throw ConfigError("accuracy: no samples");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += labels[i] == predictions[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Macro-averaged F1 over the classes that occur in `labels`. A class that is
/// predicted but never true is left out of the average; the miss still lowers
/// recall of the true class. A class with no true positives scores 0.
inline double macro_f1(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> predictions) {
    if (labels.size() != predictions.size()) throw ConfigError("macro_f1: label/prediction length mismatch");
    if (labels.empty()) throw ConfigError("macro_f1: no samples");
    std::size_t tp[256] = {}, fp[256] = {}, fn[256] = {};
    bool present[256] = {};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        present[labels[i]] = true;
        if (labels[i] == predictions[i]) {
            ++tp[labels[i]];
        } else {
            ++fp[predictions[i]];
            ++fn[labels[i]];
        }
    }
    double sum = 0.0;
    std::size_t classes = 0;
    for (std::size_t c = 0; c < 256; ++c) {
        if (!present[c]) continue;
        ++classes;
        if (tp[c] == 0) continue;
        // Harmonic mean of precision and recall, in closed form.
        sum += static_cast<double>(2 * tp[c]) / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    }
    return sum / static_cast<double>(classes);
}

/// Indices of variables whose label entropy (nats) on `ds` is at least `threshold`.
inline std::vector<std::size_t> filter_variables(const TrajectoryDataset& ds, double threshold) {
    if (!(threshold >= 0.0)) throw ConfigError("filter_variables: threshold must be >= 0");
    std::vector<std::size_t> kept;
    for (std::size_t v = 0; v < ds.variables.size(); ++v) {
        if (label_entropy(ds, ds.variables[v].name) >= threshold) kept.push_back(v);
    }
    if (kept.empty()) {
        throw ConfigError("filter_variables: no variable reaches entropy " + std::to_string(threshold) +
                          " nats; environment too degenerate to probe");
    }
    return kept;
}

}  // namespace mstdim
