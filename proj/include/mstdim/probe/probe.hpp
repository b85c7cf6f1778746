#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mstdim/encoder/encoder.hpp"
#include "mstdim/envsim/dataset.hpp"
#include "mstdim/masking/mask.hpp"
#include "mstdim/numerics/adam.hpp"
#include "mstdim/probe/metrics.hpp"
#include "mstdim/probe/report.hpp"

namespace mstdim {

inline constexpr std::size_t kProbeClasses = 256;

/// One linear 256-way classifier per retained state variable.
template <class T>
struct ProbeHeads {
    std::vector<std::size_t> variables;  // indices into the dataset's variable table
    std::vector<Tensor<T>> weights;      // [256, D_g]
    std::vector<Tensor<T>> biases;       // [256]

    ParamList<T> params() {
        ParamList<T> out;
        for (std::size_t h = 0; h < weights.size(); ++h) {
            out.emplace_back("probe" + std::to_string(variables[h]) + ".weight", &weights[h]);
            out.emplace_back("probe" + std::to_string(variables[h]) + ".bias", &biases[h]);
        }
        return out;
    }
};

template <class T>
ProbeHeads<T> init_probe_heads(const std::vector<std::size_t>& variables, std::size_t global_width, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "probe-heads"));
    ProbeHeads<T> heads;
    heads.variables = variables;
    for (std::size_t v = 0; v < variables.size(); ++v) {
        Tensor<T> w({kProbeClasses, global_width});
        kaiming_uniform(w, global_width, rng);
        heads.weights.push_back(std::move(w));
        heads.biases.emplace_back(Shape{kProbeClasses});
    }
    return heads;
}

struct ProbeConfig {
    std::size_t steps = 3000;
    std::size_t batch_size = 64;
    double lr = 3e-4;
};

/// Loads frames `idx` into a [B, C, H, W] tensor, masking each per `mask`.
template <class T>
Tensor<T> load_masked_frames(const TrajectoryDataset& ds, std::span<const std::size_t> idx, const MaskSpec& mask,
                             std::uint64_t mask_base_seed, std::uint64_t visit) {
    const std::size_t per = ds.frame_bytes();
    Tensor<T> x({idx.size(), ds.channels, ds.height, ds.width});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        T* dst = x.data() + i * per;
        ds.write_image(idx[i], dst);
        mask_observation(std::span<T>(dst, per), ds.height, ds.width, mask, mask_base_seed, idx[i], visit);
    }
    return x;
}

/// Trains the probe heads on (masked) observations. With `frozen` the encoder
/// is read-only; otherwise encoder and heads are optimized jointly.
template <class T>
ProbeHeads<T> train_probes(EncoderParams<T>& encoder, const EncoderConfig& enc_config, const TrajectoryDataset& ds,
                           const std::vector<std::size_t>& variables, const MaskSpec& mask, bool frozen,
                           const ProbeConfig& config, std::uint64_t seed) {
    if (ds.split != Split::probe_train) throw ConfigError("train_probes: dataset split must be 'probe_train'");
    if (ds.size() == 0) throw ConfigError("train_probes: empty dataset");
    mask.validate(ds.height, ds.width);
    ProbeHeads<T> heads = init_probe_heads<T>(variables, enc_config.global_width, seed);
    if (config.steps == 0) return heads;

    ParamList<T> params = heads.params();
    if (!frozen)
        for (auto& p : encoder.params()) params.push_back(p);
    AdamState<T> adam(params, AdamOptions{config.lr});

    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "probe-order"));
    rng.shuffle(order.begin(), order.end());
    std::size_t cursor = 0;
    const std::size_t b = std::min(config.batch_size, ds.size());
    const std::uint64_t mask_base = derive_seed(seed, "probe-train-mask");
    const std::size_t dg = enc_config.global_width;
    const auto bi = static_cast<Eigen::Index>(b);
    const auto di = static_cast<Eigen::Index>(dg);
    const auto ki = static_cast<Eigen::Index>(kProbeClasses);
    const T scale = static_cast<T>(1.0 / static_cast<double>(b));

    std::vector<std::size_t> idx(b);
    std::vector<T> grad_row(kProbeClasses);
    for (std::size_t step = 1; step <= config.steps; ++step) {
        for (std::size_t i = 0; i < b; ++i) {
            if (cursor == order.size()) {
                rng.shuffle(order.begin(), order.end());
                cursor = 0;
            }
            idx[i] = order[cursor++];
        }
        try {
            const Tensor<T> x = load_masked_frames<T>(ds, idx, mask, mask_base, step);
            EncoderTape<T> tape;
            const EncoderOutput<T> out = encode(x, encoder, enc_config, frozen ? nullptr : &tape);
            zero_grads(params);
            Tensor<T> d_global(out.global.shape());
            ConstMatrixMap<T> g(out.global.data(), bi, di);
            for (std::size_t h = 0; h < heads.weights.size(); ++h) {
                RowMatrix<T> logits = g * ConstMatrixMap<T>(heads.weights[h].data(), ki, di).transpose();
                logits.rowwise() += ConstVectorMap<T>(heads.biases[h].data(), ki).transpose();
                RowMatrix<T> d_logits(bi, ki);
                for (std::size_t i = 0; i < b; ++i) {
                    softmax_cross_entropy(std::span<const T>(logits.data() + i * kProbeClasses, kProbeClasses),
                                          ds.label(idx[i], variables[h]), std::span<T>(grad_row), scale);
                    std::copy(grad_row.begin(), grad_row.end(), d_logits.data() + i * kProbeClasses);
                }
                MatrixMap<T>(heads.weights[h].grad().data(), ki, di).noalias() += d_logits.transpose() * g;
                VectorMap<T>(heads.biases[h].grad().data(), ki).noalias() += d_logits.colwise().sum().transpose();
                if (!frozen) {
                    MatrixMap<T>(d_global.data(), bi, di).noalias() +=
                        d_logits * ConstMatrixMap<T>(heads.weights[h].data(), ki, di);
                }
            }
            if (!frozen) encode_backward(tape, encoder, enc_config, Tensor<T>{}, d_global);
            adam_step(params, adam);
        } catch (const NumericError& e) {
            throw TrainingError(step, std::string("probe training: ") + e.what());
        }
    }
    return heads;
}

/// Argmax predictions of every head for every frame of `ds`, masked per
/// `mask` with fixed per-observation masks derived from `mask_seed_base`.
template <class T>
std::vector<std::vector<std::uint8_t>> predict(const EncoderParams<T>& encoder, const EncoderConfig& enc_config,
                                               const ProbeHeads<T>& heads, const TrajectoryDataset& ds,
                                               const MaskSpec& mask, std::uint64_t mask_seed_base,
                                               std::size_t chunk = 256) {
    MaskSpec fixed = mask;
    fixed.policy = MaskPolicy::fixed_per_observation;
    fixed.validate(ds.height, ds.width);
    const std::size_t dg = enc_config.global_width;
    const auto di = static_cast<Eigen::Index>(dg);
    const auto ki = static_cast<Eigen::Index>(kProbeClasses);
    std::vector<std::vector<std::uint8_t>> preds(heads.weights.size(), std::vector<std::uint8_t>(ds.size()));
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        const std::size_t n = std::min(chunk, ds.size() - start);
        idx.resize(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
        const Tensor<T> x = load_masked_frames<T>(ds, idx, fixed, mask_seed_base, 0);
        const EncoderOutput<T> out = encode(x, encoder, enc_config);
        ConstMatrixMap<T> g(out.global.data(), static_cast<Eigen::Index>(n), di);
        for (std::size_t h = 0; h < heads.weights.size(); ++h) {
            RowMatrix<T> logits = g * ConstMatrixMap<T>(heads.weights[h].data(), ki, di).transpose();
            logits.rowwise() += ConstVectorMap<T>(heads.biases[h].data(), ki).transpose();
            for (std::size_t i = 0; i < n; ++i) {
                const T* row = logits.data() + i * kProbeClasses;
                preds[h][start + i] = static_cast<std::uint8_t>(std::max_element(row, row + kProbeClasses) - row);
            }
        }
    }
    return preds;
}

/// Per-variable accuracy and macro-F1 on any split (no split check).
template <class T>
ConditionReport score_heads(const EncoderParams<T>& encoder, const EncoderConfig& enc_config,
                            const ProbeHeads<T>& heads, const TrajectoryDataset& ds, const MaskSpec& mask,
                            std::uint64_t mask_seed_base) {
    const auto preds = predict(encoder, enc_config, heads, ds, mask, mask_seed_base);
    ConditionReport r;
    r.environment = ds.env_descriptor;
    r.mask_fill = to_string(mask.fill);
    std::vector<std::uint8_t> labels(ds.size());
    for (std::size_t h = 0; h < heads.variables.size(); ++h) {
        const std::size_t v = heads.variables[h];
        for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = ds.label(i, v);
        r.variables.push_back({ds.variables[v].name, ds.variables[v].category, accuracy(labels, preds[h]),
                               macro_f1(labels, preds[h])});
    }
    for (std::size_t v = 0; v < ds.variables.size(); ++v) {
        if (std::find(heads.variables.begin(), heads.variables.end(), v) == heads.variables.end()) {
            r.filtered_out.push_back(ds.variables[v].name);
        }
    }
    r.aggregate();
    return r;
}

/// Test-split evaluation with fixed per-observation masks.
template <class T>
ConditionReport evaluate(const EncoderParams<T>& encoder, const EncoderConfig& enc_config, const ProbeHeads<T>& heads,
                         const TrajectoryDataset& ds, const MaskSpec& mask, std::uint64_t mask_seed_base) {
    if (ds.split != Split::probe_test) throw ConfigError("evaluate: dataset split must be 'probe_test'");
    for (std::size_t v : heads.variables) {
        if (v >= ds.variables.size()) throw ConfigError("evaluate: head refers to unknown variable " + std::to_string(v));
    }
    if (heads.weights.size() != heads.variables.size() || heads.biases.size() != heads.variables.size()) {
        throw ConfigError("evaluate: head/variable count mismatch");
    }
    return score_heads(encoder, enc_config, heads, ds, mask, mask_seed_base);
}

}  // namespace mstdim
