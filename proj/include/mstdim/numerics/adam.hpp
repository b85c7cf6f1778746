#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mstdim/numerics/tensor.hpp"

namespace mstdim {

struct AdamOptions {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    AdamOptions options;
    std::size_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    AdamState() = default;
    explicit AdamState(const ParamList<T>& params, AdamOptions opts = {}) : options(opts) {
        for (const auto& [name, t] : params) {
            m.emplace_back(t->size(), T{0});
            v.emplace_back(t->size(), T{0});
        }
    }
};

/// One bias-corrected Adam update using the gradient buffers of `params`.
/// Throws TrainingError (with the step about to be taken) on a non-finite gradient;
/// parameters are left untouched in that case.
template <class T>
void adam_step(const ParamList<T>& params, AdamState<T>& state) {
    if (state.m.size() != params.size()) throw ConfigError("adam_step: state/parameter count mismatch");
    const std::size_t next = state.step + 1;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = params[i];
        if (!t->has_grad() || state.m[i].size() != t->size()) {
            throw ConfigError("adam_step: missing or mis-shaped gradient for '" + name + "'");
        }
        for (T g : t->grad()) {
            if (!std::isfinite(g)) throw TrainingError(next, "non-finite gradient in '" + name + "'");
        }
    }
    state.step = next;
    const AdamOptions& o = state.options;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(next));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(next));
    const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
    const T step_size = static_cast<T>(o.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(o.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i].second;
        auto g = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = b1 * m[j] + (T{1} - b1) * g[j];
            v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
            p[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
        }
    }
}

}  // namespace mstdim
