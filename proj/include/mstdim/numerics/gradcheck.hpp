#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mstdim/numerics/tensor.hpp"
#include "mstdim/rng.hpp"

namespace mstdim {

struct GradCheckOptions {
    double epsilon = 1e-6;
    /// Total coordinates probed; every coordinate is probed when the model is smaller.
    std::size_t min_coords = 64;
    /// Denominator floor for the relative error, so exactly-zero gradients
    /// (dead ReLUs) compare by absolute error instead.
    double abs_floor = 1e-7;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares analytic gradients with central finite differences.
///
/// `loss` is called as `loss(bool with_grad)` and returns the scalar objective;
/// when `with_grad` is true it must accumulate dL/dθ into the gradient buffers of
/// `params` (they are zeroed beforehand). The function must be deterministic.
template <class T, class F>
GradCheckResult grad_check(F&& loss, const ParamList<T>& params, const GradCheckOptions& opts = {}) {
    if (!(opts.epsilon >= 1e-6 && opts.epsilon <= 1e-3)) {
        throw ConfigError("grad_check: epsilon must lie in [1e-6, 1e-3]");
    }
    zero_grads(params);
    const double base = loss(true);
    if (!std::isfinite(base)) throw NumericError("grad_check: objective is non-finite at the base point");

    std::vector<std::vector<T>> analytic;
    for (const auto& [name, t] : params) analytic.emplace_back(t->grad().begin(), t->grad().end());

    const std::size_t total = param_count(params);
    Rng rng(opts.seed);
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const std::size_t n = params[p].second->size();
        if (total <= opts.min_coords) {
            for (std::size_t i = 0; i < n; ++i) coords.emplace_back(p, i);
            continue;
        }
        const std::size_t share = std::max<std::size_t>(
            2, (opts.min_coords * n + total - 1) / total);
        if (share >= n) {
            for (std::size_t i = 0; i < n; ++i) coords.emplace_back(p, i);
        } else {
            for (std::size_t k = 0; k < share; ++k) coords.emplace_back(p, rng.below(n));
        }
    }

    GradCheckResult result;
    for (const auto& [p, i] : coords) {
        Tensor<T>& t = *params[p].second;
        const T saved = t[i];
        t[i] = static_cast<T>(static_cast<double>(saved) + opts.epsilon);
        const double up = loss(false);
        t[i] = static_cast<T>(static_cast<double>(saved) - opts.epsilon);
        const double down = loss(false);
        // Use the step actually representable in T.
        const double h = (static_cast<double>(static_cast<T>(static_cast<double>(saved) + opts.epsilon)) -
                          static_cast<double>(static_cast<T>(static_cast<double>(saved) - opts.epsilon)));
        t[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("grad_check: non-finite objective while perturbing '" + params[p].first + "'[" +
                               std::to_string(i) + "]");
        }
        const double numeric = (up - down) / h;
        const double a = static_cast<double>(analytic[p][i]);
        const double denom = std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
        const double rel = std::abs(a - numeric) / denom;
        ++result.coords_checked;
        if (result.coords_checked == 1 || rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_param = params[p].first;
            result.worst_index = i;
            result.worst_analytic = a;
            result.worst_numeric = numeric;
        }
    }
    return result;
}

}  // namespace mstdim
