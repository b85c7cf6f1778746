// Command-line driver: collect, pretrain, probe, matrix, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mstdim/mstdim.hpp"

namespace fs = std::filesystem;
using namespace mstdim;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool paper_scale = false;
    std::optional<double> mask_ratio;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "flat key = value config file");
    cmd->add_option("--seed", c.seed, "master seed (overrides run.master_seed)");
    cmd->add_option("--out", c.out, "output directory (overrides run.out)");
    cmd->add_flag("--paper-scale", c.paper_scale, "start from the 160x210, 80000/35000/10000-step preset");
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.paper_scale ? ExperimentConfig::paper_scale() : ExperimentConfig{};
    if (!c.config_path.empty()) cfg = load_config(c.config_path, cfg);
    if (c.seed) cfg.master_seed = *c.seed;
    if (!c.out.empty()) cfg.out = c.out;
    return cfg;
}

RunContext context(const ExperimentConfig& cfg) {
    RunContext ctx;
    ctx.cache_dir = default_cache_dir(cfg.out);
    ctx.log = [](const std::string& msg) { std::cerr << msg << '\n'; };
    return ctx;
}

int cmd_collect(const Common& c) {
    ExperimentConfig cfg = resolve(c);
    cfg.validate();
    const auto data = collect_cell_datasets(cfg, cell_seed(cfg.master_seed, 0));
    for (const auto* ds : {&data.pretrain, &data.probe_train, &data.probe_test}) {
        const fs::path dir = fs::path(cfg.out) / "data" / split_name(ds->split);
        persist_dataset(*ds, dir);
        std::cout << dir.string() << ": " << ds->size() << " frames, " << ds->episodes.size() << " episodes\n";
    }
    return 0;
}

int cmd_pretrain(const Common& c) {
    ExperimentConfig cfg = resolve(c);
    if (c.mask_ratio) cfg.mask.ratio = *c.mask_ratio;
    cfg.validate();
    RunContext ctx = context(cfg);
    const std::uint64_t seed = cell_seed(cfg.master_seed, 0);
    const auto data = collect_trajectories(cfg.env, derive_seed(seed, "data"), cfg.data.pretrain, Split::pretrain);
    auto trained = pretrained_encoder(cfg, cfg.mask.ratio, seed, data, ctx);
    ParamList<float> params = trained.encoder.params();
    for (auto& p : trained.scorers.params()) params.push_back(p);
    const fs::path out = fs::path(cfg.out) / "pretrain.ckpt";
    save_checkpoint(out, params, {{"ratio", format_double(cfg.mask.ratio)}, {"fingerprint", config_fingerprint(cfg)}});
    std::cout << out.string() << '\n';
    return 0;
}

int cmd_probe(const Common& c, const std::string& condition) {
    ExperimentConfig cfg = resolve(c);
    if (c.mask_ratio) cfg.probe_mask_ratio = *c.mask_ratio;
    const Condition cond = Condition::parse(condition.empty() ? "pretrain_masked(0.4)" : condition);
    cfg.validate();
    RunContext ctx = context(cfg);
    const ConditionReport r = run_condition(cond, cfg, cell_seed(cfg.master_seed, 0), ctx);
    fs::create_directories(cfg.out);
    const fs::path json_path = fs::path(cfg.out) / "report.json";
    write_text(json_path, to_json(r).dump(2) + "\n");
    write_text(fs::path(cfg.out) / "report.csv", cells_csv({r}));
    std::printf("%s: mean accuracy %.4f, mean F1 %.4f\n", r.condition.c_str(), r.mean_accuracy, r.mean_f1);
    return 0;
}

int cmd_matrix(const Common& c, const std::vector<std::string>& conditions) {
    ExperimentConfig cfg = resolve(c);
    if (c.mask_ratio) cfg.probe_mask_ratio = *c.mask_ratio;
    if (!conditions.empty()) {
        cfg.conditions.clear();
        for (const auto& s : conditions) cfg.conditions.push_back(Condition::parse(s));
    }
    cfg.validate();
    RunContext ctx = context(cfg);
    const ExperimentMatrixResult m = run_matrix(cfg, ctx);
    fs::create_directories(cfg.out);
    write_text(fs::path(cfg.out) / "config.txt", canonical_config(cfg));
    for (const auto& p : emit_all(m, cfg.out)) std::cout << p.string() << '\n';
    std::cerr << "pretraining runs " << ctx.pretrain_runs << ", checkpoint hits " << ctx.checkpoint_hits
              << ", probe runs " << ctx.probe_runs << ", report hits " << ctx.report_hits << '\n';
    for (const auto& s : m.summary) {
        std::printf("%-24s accuracy %.4f ± %.4f  F1 %.4f ± %.4f\n", s.condition.c_str(), s.accuracy.mean,
                    s.accuracy.stddev, s.f1.mean, s.f1.stddev);
    }
    return m.any_failed() ? 1 : 0;
}

int cmd_report(const std::string& result, const std::string& out) {
    const auto m = matrix_from_json(detail::read_json(result));
    for (const auto& p : emit_all(m, out)) std::cout << p.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked spatiotemporal contrastive pretraining and probing"};
    app.require_subcommand(1);

    Common collect_opts, pretrain_opts, probe_opts, matrix_opts;
    std::string probe_condition;
    std::vector<std::string> matrix_conditions;
    std::string report_result, report_out = "report";

    auto* collect = app.add_subcommand("collect", "collect the three dataset splits for seed 0");
    add_common(collect, collect_opts);

    auto* pre = app.add_subcommand("pretrain", "pretrain an encoder");
    add_common(pre, pretrain_opts);
    pre->add_option("--mask-ratio", pretrain_opts.mask_ratio, "pretraining masking ratio");

    auto* probe = app.add_subcommand("probe", "run one condition for seed 0");
    add_common(probe, probe_opts);
    probe->add_option("--condition", probe_condition, "observable | non_observable | supervised | random_cnn | pretrain_masked(p)");
    probe->add_option("--mask-ratio", probe_opts.mask_ratio, "probing masking ratio");

    auto* matrix = app.add_subcommand("matrix", "run the condition x seed matrix and write reports");
    add_common(matrix, matrix_opts);
    matrix->add_option("--condition", matrix_conditions, "restrict to these conditions (repeatable)");
    matrix->add_option("--mask-ratio", matrix_opts.mask_ratio, "probing masking ratio");

    auto* report = app.add_subcommand("report", "re-emit tables and charts from results.json");
    report->add_option("--result", report_result, "results.json written by matrix")->required();
    report->add_option("--out", report_out, "output directory");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*collect) return cmd_collect(collect_opts);
        if (*pre) return cmd_pretrain(pretrain_opts);
        if (*probe) return cmd_probe(probe_opts, probe_condition);
        if (*matrix) return cmd_matrix(matrix_opts, matrix_conditions);
        if (*report) return cmd_report(report_result, report_out);
    } catch (const TrainingError& e) {
        std::cerr << "training error at step " << e.step() << ": " << e.what() << '\n';
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
