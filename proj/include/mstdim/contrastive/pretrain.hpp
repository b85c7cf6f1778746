#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mstdim/contrastive/losses.hpp"
#include "mstdim/envsim/dataset.hpp"
#include "mstdim/numerics/adam.hpp"
#include "mstdim/numerics/checkpoint.hpp"

namespace mstdim {

struct PretrainConfig {
    std::size_t steps = 5000;
    std::size_t batch_size = 64;
    double lr = 3e-4;
    std::size_t log_every = 100;
    /// Anchor masks; ratio 0 gives the unmasked objectives.
    MaskSpec mask{0.0, MaskGranularity::pixel, 4, MaskFill::uniform_noise, MaskPolicy::fresh_per_visit};
    /// Also mask positives (ablation; off by default).
    bool mask_positives = false;
    ObjectiveWeights weights{};
    /// Periodic checkpoint written during training, if set.
    std::optional<std::filesystem::path> checkpoint_path;
    std::size_t checkpoint_every = 1000;
};

struct TrainingLogRow {
    std::size_t step = 0;
    double loss_gl = 0.0;
    double loss_ll = 0.0;
    double loss_total = 0.0;
    double wall_ms = 0.0;
};

template <class T>
struct PretrainResult {
    EncoderParams<T> encoder;
    ScorerParams<T> scorers;
    std::vector<TrainingLogRow> log;
};

inline void write_training_log(std::ostream& os, const std::vector<TrainingLogRow>& rows) {
    os << "step,loss_gl,loss_ll,loss_total,wall_ms\n";
    for (const auto& r : rows) {
        os << r.step << ',' << std::setprecision(9) << r.loss_gl << ',' << r.loss_ll << ',' << r.loss_total << ','
           << std::fixed << std::setprecision(1) << r.wall_ms << std::defaultfloat << '\n';
    }
}

/// All (t, t+1) index pairs that lie inside one episode.
inline std::vector<std::size_t> consecutive_pair_starts(const TrajectoryDataset& ds) {
    std::vector<std::size_t> out;
    for (const auto& e : ds.episodes)
        for (std::size_t k = 0; k + 1 < e.length; ++k) out.push_back(e.start + k);
    return out;
}

/// Epoch-shuffled sampler over consecutive pairs; drops the ragged tail of each epoch.
class PairSampler {
public:
    PairSampler(std::vector<std::size_t> starts, std::size_t batch, std::uint64_t seed)
        : starts_(std::move(starts)), batch_(batch), rng_(seed) {
        if (batch_ < 2) throw ConfigError("pretrain: batch size must be >= 2");
        if (starts_.size() < batch_) {
            throw ConfigError("pretrain: dataset has " + std::to_string(starts_.size()) +
                              " consecutive pairs, fewer than one batch of " + std::to_string(batch_));
        }
        reshuffle();
    }

    std::vector<std::size_t> next() {
        if (cursor_ + batch_ > starts_.size()) reshuffle();
        std::vector<std::size_t> out(starts_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                     starts_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
        cursor_ += batch_;
        return out;
    }

private:
    void reshuffle() {
        rng_.shuffle(starts_.begin(), starts_.end());
        cursor_ = 0;
    }

    std::vector<std::size_t> starts_;
    std::size_t batch_;
    Rng rng_;
    std::size_t cursor_ = 0;
};

/// Builds the image tensors (and anchor masks) for a batch of pair starts.
template <class T>
PairBatch<T> make_pair_batch(const TrajectoryDataset& ds, const std::vector<std::size_t>& starts, const MaskSpec& mask,
                             std::uint64_t mask_base_seed, std::uint64_t visit, bool mask_positives) {
    const std::size_t b = starts.size(), per = ds.frame_bytes();
    PairBatch<T> batch;
    batch.anchors = Tensor<T>({b, ds.channels, ds.height, ds.width});
    batch.positives = Tensor<T>({b, ds.channels, ds.height, ds.width});
    batch.fill = mask.fill;
    for (std::size_t i = 0; i < b; ++i) {
        ds.write_image(starts[i], batch.anchors.data() + i * per);
        ds.write_image(starts[i] + 1, batch.positives.data() + i * per);
        if (mask.ratio > 0.0) {
            batch.anchor_masks.push_back(
                sample_mask_seeded(ds.height, ds.width, mask, mask_seed(mask, mask_base_seed, starts[i], visit)));
            if (mask_positives) {
                mask_observation(std::span<T>(batch.positives.data() + i * per, per), ds.height, ds.width, mask,
                                 derive_seed(mask_base_seed, "positives"), starts[i] + 1, visit);
            }
        }
    }
    return batch;
}

/// Minimizes w_gl·L_GL + w_ll·L_LL (masked anchors when mask.ratio > 0) with Adam.
template <class T>
PretrainResult<T> pretrain(const TrajectoryDataset& ds, const EncoderConfig& enc_config, const PretrainConfig& config,
                           std::uint64_t seed,
                           const std::function<void(const TrainingLogRow&)>& on_log = {}) {
    if (ds.split != Split::pretrain) throw ConfigError("pretrain: dataset split must be 'pretrain'");
    if (ds.channels != enc_config.in_channels || ds.height != enc_config.in_height || ds.width != enc_config.in_width) {
        throw ConfigError("pretrain: dataset frames do not match the encoder input size");
    }
    config.mask.validate(ds.height, ds.width);

    PretrainResult<T> result{init_encoder<T>(enc_config, seed), init_scorers<T>(enc_config, seed), {}};
    if (config.steps == 0) return result;

    ParamList<T> params = result.encoder.params();
    for (auto& p : result.scorers.params()) params.push_back(p);
    AdamState<T> adam(params, AdamOptions{config.lr});

    PairSampler sampler(consecutive_pair_starts(ds), config.batch_size, derive_seed(seed, "pairs"));
    const std::uint64_t mask_base = derive_seed(seed, "pretrain-mask");
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<std::filesystem::path> last_checkpoint;

    double acc_gl = 0.0, acc_ll = 0.0;
    std::size_t acc_n = 0;
    for (std::size_t step = 1; step <= config.steps; ++step) {
        const PairBatch<T> batch =
            make_pair_batch<T>(ds, sampler.next(), config.mask, mask_base, step, config.mask_positives);
        zero_grads(params);
        ContrastiveLoss loss;
        try {
            loss = contrastive_loss(batch, result.encoder, result.scorers, enc_config, config.weights, true);
            adam_step(params, adam);
        } catch (const NumericError& e) {
            throw TrainingError(step, std::string(e.what()) + (last_checkpoint ? "; last checkpoint " +
                                                                                    last_checkpoint->string()
                                                                              : "; no checkpoint written yet"));
        } catch (const TrainingError& e) {
            throw TrainingError(step, std::string(e.what()) + (last_checkpoint ? "; last checkpoint " +
                                                                                    last_checkpoint->string()
                                                                              : "; no checkpoint written yet"));
        }
        acc_gl += loss.gl_mean;
        acc_ll += loss.ll_mean;
        ++acc_n;

        if (step % config.log_every == 0 || step == config.steps || step == 1) {
            TrainingLogRow row;
            row.step = step;
            row.loss_gl = acc_gl / static_cast<double>(acc_n);
            row.loss_ll = acc_ll / static_cast<double>(acc_n);
            row.loss_total = config.weights.global_local * row.loss_gl + config.weights.local_local * row.loss_ll;
            row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            result.log.push_back(row);
            if (on_log) on_log(row);
            acc_gl = acc_ll = 0.0;
            acc_n = 0;
        }
        if (config.checkpoint_path && (step % config.checkpoint_every == 0 || step == config.steps)) {
            save_checkpoint(*config.checkpoint_path, params, {{"step", std::to_string(step)}});
            last_checkpoint = config.checkpoint_path;
        }
    }
    return result;
}

}  // namespace mstdim
