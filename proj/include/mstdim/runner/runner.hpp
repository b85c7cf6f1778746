#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mstdim/contrastive/pretrain.hpp"
#include "mstdim/numerics/checkpoint.hpp"
#include "mstdim/probe/probe.hpp"
#include "mstdim/runner/config.hpp"

namespace mstdim {

/// Seed of cell `index`. Conditions share it, so every condition of one seed
/// sees the same datasets, initialization and probe-test masks.
inline std::uint64_t cell_seed(std::uint64_t master, std::size_t index) {
    return derive_seed(derive_seed(master, "cell"), static_cast<std::uint64_t>(index));
}

struct CellDatasets {
    TrajectoryDataset pretrain, probe_train, probe_test;
};

inline CellDatasets collect_cell_datasets(const ExperimentConfig& c, std::uint64_t seed) {
    const std::uint64_t data_seed = derive_seed(seed, "data");
    return {collect_trajectories(c.env, data_seed, c.data.pretrain, Split::pretrain),
            collect_trajectories(c.env, data_seed, c.data.probe_train, Split::probe_train),
            collect_trajectories(c.env, data_seed, c.data.probe_test, Split::probe_test)};
}

/// Where checkpoints and finished cell reports are cached.
inline std::filesystem::path default_cache_dir(const std::filesystem::path& out) {
    if (const char* env = std::getenv("MSTDIM_CACHE_DIR"); env && *env) return env;
    return out / "cache";
}

struct RunContext {
    std::filesystem::path cache_dir = "cache";
    bool reuse_reports = true;
    std::function<void(const std::string&)> log;

    std::size_t pretrain_runs = 0;
    std::size_t checkpoint_hits = 0;
    std::size_t probe_runs = 0;
    std::size_t report_hits = 0;

    void say(const std::string& msg) const {
        if (log) log(msg);
    }
};

template <class T>
struct Pretrained {
    EncoderParams<T> encoder;
    ScorerParams<T> scorers;
};

/// Pretrained weights for (config, ratio, seed), from cache when available.
inline Pretrained<float> pretrained_encoder(const ExperimentConfig& c, double ratio, std::uint64_t seed,
                                            const TrajectoryDataset& data, RunContext& ctx) {
    const std::string key = pretrain_key(c, ratio, seed);
    const auto path = ctx.cache_dir / ("pretrain-" + key + ".ckpt");
    const std::uint64_t init_seed = derive_seed(seed, "pretrain");
    Pretrained<float> out{init_encoder<float>(c.encoder, init_seed), init_scorers<float>(c.encoder, init_seed)};
    ParamList<float> params = out.encoder.params();
    for (auto& p : out.scorers.params()) params.push_back(p);
    if (std::filesystem::exists(path)) {
        load_checkpoint(path, params);
        ++ctx.checkpoint_hits;
        ctx.say("checkpoint hit " + path.filename().string());
        return out;
    }
    ctx.say("pretraining ratio " + format_double(ratio) + " -> " + path.filename().string());
    PretrainConfig pc = c.pretrain_config(ratio);
    auto result = pretrain<float>(data, c.encoder, pc, init_seed, [&](const TrainingLogRow& r) {
        ctx.say("  step " + std::to_string(r.step) + " loss " + format_double(r.loss_total));
    });
    ++ctx.pretrain_runs;
    out.encoder = std::move(result.encoder);
    out.scorers = std::move(result.scorers);
    ParamList<float> trained = out.encoder.params();
    for (auto& p : out.scorers.params()) trained.push_back(p);
    std::filesystem::create_directories(ctx.cache_dir);
    {
        std::ofstream log(ctx.cache_dir / ("pretrain-" + key + ".log.csv"));
        write_training_log(log, result.log);
    }
    save_checkpoint(path, trained,
                    {{"key", key}, {"ratio", format_double(ratio)}, {"seed", std::to_string(seed)},
                     {"steps", std::to_string(pc.steps)}, {"env", c.env.descriptor()}});
    return out;
}

/// collect -> (pretrain) -> train_probes -> evaluate for one condition and cell seed.
inline ConditionReport run_condition(const Condition& condition, const ExperimentConfig& c, std::uint64_t seed,
                                     const CellDatasets& data, RunContext& ctx) {
    const std::vector<std::size_t> retained = filter_variables(data.probe_train, c.entropy_threshold);
    EncoderParams<float> encoder;
    if (condition.pretrains()) {
        encoder = pretrained_encoder(c, condition.pretrain_mask_ratio(), seed, data.pretrain, ctx).encoder;
    } else {
        encoder = init_encoder<float>(c.encoder, derive_seed(seed, "pretrain"));
    }
    const MaskSpec probe_mask = c.probe_mask(condition);
    ctx.say("probing " + condition.name());
    ProbeHeads<float> heads = train_probes<float>(encoder, c.encoder, data.probe_train, retained, probe_mask,
                                                  condition.frozen(), c.probe, derive_seed(seed, "probe"));
    ++ctx.probe_runs;
    ConditionReport r = evaluate<float>(encoder, c.encoder, heads, data.probe_test, probe_mask,
                                        derive_seed(seed, "probe-test-mask"));
    r.condition = condition.name();
    r.seed = seed;
    r.config_fingerprint = config_fingerprint(c);
    return r;
}

inline ConditionReport run_condition(const Condition& condition, const ExperimentConfig& c, std::uint64_t seed,
                                     RunContext& ctx) {
    c.validate();
    return run_condition(condition, c, seed, collect_cell_datasets(c, seed), ctx);
}

struct Stat {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation; 0 for a single value
    std::size_t n = 0;

    friend bool operator==(const Stat&, const Stat&) = default;
};

inline Stat summarize(const std::vector<double>& xs) {
    Stat s;
    s.n = xs.size();
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
}

struct CellResult {
    std::string condition;
    std::size_t seed_index = 0;
    std::uint64_t seed = 0;
    std::optional<ConditionReport> report;
    std::string error;  // set when the cell failed

    bool ok() const { return report.has_value(); }
    friend bool operator==(const CellResult&, const CellResult&) = default;
};

struct ConditionSummary {
    std::string condition;
    Stat accuracy, f1;
    std::map<Category, Stat> category_accuracy, category_f1;
    std::map<std::string, Stat> variable_accuracy, variable_f1;

    friend bool operator==(const ConditionSummary&, const ConditionSummary&) = default;
};

struct ExperimentMatrixResult {
    std::string config_fingerprint;
    std::string environment;
    std::string mask_fill;
    std::string encoder_layers;  // channel widths are an assumption, reported as such
    std::vector<std::string> conditions;
    std::size_t seeds = 0;
    std::vector<CellResult> cells;  // condition-major, seed-minor
    std::vector<ConditionSummary> summary;

    friend bool operator==(const ExperimentMatrixResult&, const ExperimentMatrixResult&) = default;

    bool any_failed() const {
        for (const auto& c : cells)
            if (!c.ok()) return true;
        return false;
    }
    const ConditionSummary* find(const std::string& condition) const {
        for (const auto& s : summary)
            if (s.condition == condition) return &s;
        return nullptr;
    }

    /// Recomputes `summary` from the successful cells.
    void summarize_cells() {
        summary.clear();
        for (const auto& name : conditions) {
            ConditionSummary s;
            s.condition = name;
            std::vector<double> acc, f1;
            std::map<Category, std::vector<double>> cat_acc, cat_f1;
            std::map<std::string, std::vector<double>> var_acc, var_f1;
            for (const auto& cell : cells) {
                if (cell.condition != name || !cell.ok()) continue;
                const auto& r = *cell.report;
                acc.push_back(r.mean_accuracy);
                f1.push_back(r.mean_f1);
                for (const auto& cs : r.categories) {
                    cat_acc[cs.category].push_back(cs.accuracy);
                    cat_f1[cs.category].push_back(cs.f1);
                }
                for (const auto& v : r.variables) {
                    var_acc[v.name].push_back(v.accuracy);
                    var_f1[v.name].push_back(v.f1);
                }
            }
            s.accuracy = mstdim::summarize(acc);
            s.f1 = mstdim::summarize(f1);
            for (const auto& [k, xs] : cat_acc) s.category_accuracy[k] = mstdim::summarize(xs);
            for (const auto& [k, xs] : cat_f1) s.category_f1[k] = mstdim::summarize(xs);
            for (const auto& [k, xs] : var_acc) s.variable_accuracy[k] = mstdim::summarize(xs);
            for (const auto& [k, xs] : var_f1) s.variable_f1[k] = mstdim::summarize(xs);
            summary.push_back(std::move(s));
        }
    }
};

inline std::filesystem::path report_cache_path(const RunContext& ctx, const std::string& fingerprint,
                                               const std::string& condition, std::uint64_t seed) {
    return ctx.cache_dir /
           ("report-" + hex64(fnv1a(fingerprint + "|" + condition + "|" + std::to_string(seed))) + ".json");
}

/// Runs every (condition, seed) cell. Failures are recorded per cell and do
/// not stop the remaining cells.
inline ExperimentMatrixResult run_matrix(const ExperimentConfig& c, RunContext& ctx) {
    c.validate();
    ExperimentMatrixResult result;
    result.config_fingerprint = config_fingerprint(c);
    result.environment = c.env.descriptor();
    result.mask_fill = to_string(c.mask.fill);
    result.encoder_layers = c.encoder.layers_string();
    result.seeds = c.seeds;
    for (const auto& cond : c.conditions) result.conditions.push_back(cond.name());

    std::vector<std::vector<CellResult>> grid(c.conditions.size(), std::vector<CellResult>(c.seeds));
    for (std::size_t i = 0; i < c.seeds; ++i) {
        const std::uint64_t seed = cell_seed(c.master_seed, i);
        std::optional<CellDatasets> data;
        for (std::size_t k = 0; k < c.conditions.size(); ++k) {
            CellResult& cell = grid[k][i];
            cell.condition = c.conditions[k].name();
            cell.seed_index = i;
            cell.seed = seed;
            const auto cached = report_cache_path(ctx, result.config_fingerprint, cell.condition, seed);
            if (ctx.reuse_reports && std::filesystem::exists(cached)) {
                cell.report = report_from_json(detail::read_json(cached));
                cell.report->config_fingerprint = result.config_fingerprint;
                ++ctx.report_hits;
                ctx.say("report hit " + cell.condition + " seed " + std::to_string(i));
                continue;
            }
            try {
                if (!data) data = collect_cell_datasets(c, seed);
                cell.report = run_condition(c.conditions[k], c, seed, *data, ctx);
                std::filesystem::create_directories(ctx.cache_dir);
                std::ofstream os(cached);
                os << to_json(*cell.report).dump(2) << '\n';
                if (!os) throw Error("cannot write " + cached.string());
            } catch (const std::exception& e) {
                cell.report.reset();
                cell.error = e.what();
                ctx.say("cell failed: " + cell.condition + " seed " + std::to_string(i) + ": " + e.what());
            }
        }
    }
    for (auto& row : grid)
        for (auto& cell : row) result.cells.push_back(std::move(cell));
    result.summarize_cells();
    return result;
}

}  // namespace mstdim
