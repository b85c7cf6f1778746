#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "mstdim/runner/config.hpp"
#include "mstdim/runner/emit.hpp"
#include "mstdim/runner/runner.hpp"

using namespace mstdim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mstdim-test-runner-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig tiny_config() {
    return parse_config(R"(
        pretrain.steps = 12
        pretrain.batch_size = 8
        pretrain.log_every = 4
        probe.steps = 6
        probe.batch_size = 16
        data.pretrain_steps = 160
        data.probe_train_steps = 120
        data.probe_test_steps = 60
        run.seeds = 2
        run.conditions = observable, non_observable, supervised, pretrain_masked(0.4)
    )");
}

ConditionReport hand_report(const std::string& cond, std::uint64_t seed, double a_acc, double a_f1, double m_acc,
                            double m_f1) {
    ConditionReport r;
    r.condition = cond;
    r.seed = seed;
    r.config_fingerprint = "0123456789abcdef";
    r.environment = "toy:8x8";
    r.mask_fill = "zero";
    r.variables = {{"a", Category::agent_loc, a_acc, a_f1}, {"m", Category::misc, m_acc, m_f1}};
    r.aggregate();
    return r;
}

ExperimentMatrixResult hand_matrix() {
    ExperimentMatrixResult m;
    m.config_fingerprint = "0123456789abcdef";
    m.environment = "toy:8x8";
    m.mask_fill = "zero";
    m.encoder_layers = "4:3:1:1";
    m.conditions = {"observable", "supervised"};
    m.seeds = 2;
    m.cells = {{"observable", 0, 11, hand_report("observable", 11, 0.5, 0.2, 1.0, 1.0), ""},
               {"observable", 1, 12, hand_report("observable", 12, 0.7, 0.4, 0.8, 0.6), ""},
               {"supervised", 0, 11, hand_report("supervised", 11, 0.25, 0.125, 0.5, 0.625), ""},
               {"supervised", 1, 12, std::nullopt, "step 3: non-finite loss"}};
    m.summarize_cells();
    return m;
}

const char* kGoldenMarkdown = R"(# Probe results

Environment: `toy:8x8`

Config fingerprint `0123456789abcdef`, 2 seed(s), mask fill zero. Values are mean ± standard deviation over seeds.

Encoder layers `4:3:1:1` (out:kernel:stride:pad); channel widths are assumed.

## Probe accuracy

| Category | observable | supervised |
|---|---|---|
| Agent Loc. | 0.600 ± 0.141 | 0.250 ± 0.000 |
| Misc. | 0.900 ± 0.141 | 0.500 ± 0.000 |
| Mean | 0.750 ± 0.000 | 0.375 ± 0.000 |
| toy | 0.750 ± 0.000 | 0.375 ± 0.000 |

## Probe F1

| Category | observable | supervised |
|---|---|---|
| Agent Loc. | 0.300 ± 0.141 | 0.125 ± 0.000 |
| Misc. | 0.800 ± 0.283 | 0.625 ± 0.000 |
| Mean | 0.550 ± 0.071 | 0.375 ± 0.000 |
| toy | 0.550 ± 0.071 | 0.375 ± 0.000 |

## Per-variable accuracy

| Variable | observable | supervised |
|---|---|---|
| a | 0.600 ± 0.141 | 0.250 ± 0.000 |
| m | 0.900 ± 0.141 | 0.500 ± 0.000 |

F1: macro over classes present in test labels. Mean: variables -> category mean -> mean over categories present.

Not all categories are available; omitted (no retained variables): Small Loc., Other Loc., Score/Clock/Lives/Display.

Failed cells:

- supervised seed 1: step 3: non-finite loss
)";

}  // namespace

TEST(Condition, ParseAndNameRoundTrip) {
    for (const auto& c : default_conditions()) EXPECT_EQ(Condition::parse(c.name()), c);
    EXPECT_EQ(Condition::parse("random_cnn").name(), "random_cnn");
    EXPECT_EQ(Condition::parse("pretrain_masked(0.25)").pretrain_ratio, 0.25);
    EXPECT_EQ(default_conditions().size(), 7u);
}

TEST(Condition, RejectsMalformedNames) {
    for (const char* bad : {"", "observed", "pretrain_masked()", "pretrain_masked(x)", "pretrain_masked(0)",
                            "pretrain_masked(1)", "pretrain_masked(0.4", "pretrain_masked(0.4x)"})
        EXPECT_THROW(Condition::parse(bad), ConfigError) << bad;
}

TEST(Condition, MaskRatiosPerKind) {
    EXPECT_EQ(Condition::parse("observable").probe_mask_ratio(0.4), 0.0);
    EXPECT_EQ(Condition::parse("non_observable").probe_mask_ratio(0.4), 0.4);
    EXPECT_EQ(Condition::parse("supervised").probe_mask_ratio(0.4), 0.4);
    EXPECT_EQ(Condition::parse("non_observable").pretrain_mask_ratio(), 0.0);
    EXPECT_EQ(Condition::parse("pretrain_masked(0.6)").pretrain_mask_ratio(), 0.6);
    EXPECT_FALSE(Condition::parse("supervised").frozen());
    EXPECT_FALSE(Condition::parse("supervised").pretrains());
    EXPECT_FALSE(Condition::parse("random_cnn").pretrains());
    EXPECT_TRUE(Condition::parse("random_cnn").frozen());
}

TEST(Config, ParsesKeysAndComments) {
    const auto c = parse_config("# comment\nprobe.steps = 17  # trailing\n\nmask.fill = zero\nenv.height = 80\n");
    EXPECT_EQ(c.probe.steps, 17u);
    EXPECT_EQ(c.mask.fill, MaskFill::zero);
    EXPECT_EQ(c.env.height, 80u);
    EXPECT_EQ(c.encoder.in_height, 80u);
}

TEST(Config, ErrorsNameTheLine) {
    try {
        parse_config("probe.steps = 1\nbogus.key = 3\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("bogus.key"), std::string::npos);
    }
    EXPECT_THROW(parse_config("probe.steps 3"), ConfigError);
    EXPECT_THROW(parse_config("probe.steps = -3"), ConfigError);
    EXPECT_THROW(parse_config("probe.lr = fast"), ConfigError);
    EXPECT_THROW(parse_config("mask.positives = maybe"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/mstdim.cfg"), ConfigError);
}

TEST(Config, CanonicalFormRoundTrips) {
    auto c = tiny_config();
    c.mask.fill = MaskFill::zero;
    c.probe.lr = 1e-3;
    const std::string text = canonical_config(c);
    EXPECT_EQ(canonical_config(parse_config(text)), text);
    EXPECT_EQ(canonical_config(parse_config(canonical_config(ExperimentConfig{}))), canonical_config(ExperimentConfig{}));
}

TEST(Config, FingerprintIgnoresOrchestrationKeys) {
    auto a = tiny_config(), b = tiny_config();
    b.seeds = 7;
    b.out = "elsewhere";
    b.conditions = {Condition::parse("observable")};
    EXPECT_EQ(config_fingerprint(a), config_fingerprint(b));
    b.probe.steps += 1;
    EXPECT_NE(config_fingerprint(a), config_fingerprint(b));
    EXPECT_EQ(config_fingerprint(a), config_fingerprint(tiny_config()));
    EXPECT_EQ(config_fingerprint(a).size(), 16u);
}

TEST(Config, PretrainKeyDependsOnlyOnPretrainInputs) {
    auto a = tiny_config(), b = tiny_config();
    b.probe.steps = 999;
    b.probe_mask_ratio = 0.2;
    b.data.probe_test = 5;
    EXPECT_EQ(pretrain_key(a, 0.4, 1), pretrain_key(b, 0.4, 1));
    EXPECT_NE(pretrain_key(a, 0.4, 1), pretrain_key(a, 0.6, 1));
    EXPECT_NE(pretrain_key(a, 0.4, 1), pretrain_key(a, 0.4, 2));
    b.pretrain_steps = 13;
    EXPECT_NE(pretrain_key(a, 0.4, 1), pretrain_key(b, 0.4, 1));
}

TEST(Config, ValidateRejectsInconsistentShapes) {
    auto c = tiny_config();
    c.encoder.in_height = 32;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.conditions.clear();
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.probe_mask_ratio = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_NO_THROW(ExperimentConfig{}.validate());
    EXPECT_NO_THROW(ExperimentConfig::paper_scale().validate());
}

TEST(Seeds, CellSeedsAreDistinctAndStable) {
    std::set<std::uint64_t> seen;
    for (std::size_t i = 0; i < 100; ++i) seen.insert(cell_seed(1, i));
    EXPECT_EQ(seen.size(), 100u);
    EXPECT_EQ(cell_seed(1, 3), cell_seed(1, 3));
    EXPECT_NE(cell_seed(1, 3), cell_seed(2, 3));
}

TEST(Summarize, MeanAndSampleStddev) {
    const Stat s = summarize({1.0, 2.0, 3.0, 4.0});
    EXPECT_EQ(s.mean, 2.5);
    EXPECT_DOUBLE_EQ(s.stddev, std::sqrt(5.0 / 3.0));
    EXPECT_EQ(s.n, 4u);
    EXPECT_EQ(summarize({0.7}).stddev, 0.0);
    EXPECT_EQ(summarize({}).n, 0u);
}

TEST(Emit, GoldenMarkdown) { EXPECT_EQ(markdown_report(hand_matrix()), kGoldenMarkdown); }

TEST(Emit, AllCategoriesPresentHasNoFooter) {
    auto m = hand_matrix();
    for (auto& cell : m.cells) {
        if (!cell.ok()) continue;
        std::size_t k = 0;
        for (Category c : kAllCategories) cell.report->variables.push_back({"v" + std::to_string(k++), c, 0.5, 0.5});
        cell.report->aggregate();
    }
    m.cells.pop_back();
    m.summarize_cells();
    const std::string md = markdown_report(m);
    EXPECT_EQ(md.find("Not all categories are available"), std::string::npos);
    EXPECT_EQ(md.find("Failed cells"), std::string::npos);
    EXPECT_NE(md.find("| Small Loc. |"), std::string::npos);
}

TEST(Emit, CsvJsonCsvIsExact) {
    const auto reports = successful_reports(hand_matrix());
    const std::string csv = cells_csv(reports);
    const auto parsed = parse_cells_csv(csv);
    const auto via_json = reports_from_json(nlohmann::json::parse(reports_json(parsed).dump()));
    EXPECT_EQ(cells_csv(via_json), csv);
    ASSERT_EQ(parsed.size(), reports.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        EXPECT_EQ(parsed[i].variables, reports[i].variables);
        EXPECT_EQ(parsed[i].mean_accuracy, reports[i].mean_accuracy);
    }
}

TEST(Emit, CsvKeepsFullPrecision) {
    ConditionReport r;
    r.condition = "observable";
    r.seed = 1;
    r.variables = {{"x", Category::misc, 1.0 / 3.0, 0.1 + 0.2}};
    r.aggregate();
    const auto back = parse_cells_csv(cells_csv({r}));
    EXPECT_EQ(back[0].variables[0].accuracy, 1.0 / 3.0);
    EXPECT_EQ(back[0].variables[0].f1, 0.1 + 0.2);
}

TEST(Emit, MalformedCsvIsIngestionError) {
    EXPECT_THROW(parse_cells_csv("wrong,header\n"), IngestionError);
    EXPECT_THROW(parse_cells_csv(std::string(kCellsCsvHeader) + "\nobservable,1,x,misc,0.5\n"), IngestionError);
    EXPECT_THROW(parse_cells_csv(std::string(kCellsCsvHeader) + "\nobservable,1,x,misc,half,0.5\n"), IngestionError);
}

TEST(Emit, MatrixJsonRoundTripKeepsFailures) {
    const auto m = hand_matrix();
    const auto back = matrix_from_json(nlohmann::json::parse(to_json(m).dump()));
    EXPECT_EQ(back, m);
    EXPECT_TRUE(back.any_failed());
    EXPECT_EQ(back.cells[3].error, "step 3: non-finite loss");
}

TEST(Emit, WritesEveryFormat) {
    const auto dir = scratch("emit");
    const auto files = emit_all(hand_matrix(), dir);
    std::set<std::string> names;
    for (const auto& f : files) {
        names.insert(f.filename().string());
        EXPECT_GT(fs::file_size(f), 0u) << f;
    }
    for (const char* n : {"cells.csv", "summary.csv", "results.json", "tables.md", "bars_mean.svg", "bars_agent_loc.svg",
                          "bars_misc.svg"})
        EXPECT_TRUE(names.count(n)) << n;
    EXPECT_EQ(slurp(dir / "tables.md"), kGoldenMarkdown);
    EXPECT_THROW(emit_report(ExperimentMatrixResult{}, ReportFormat::csv, dir), ConfigError);
}

class MatrixRun : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new fs::path(scratch("matrix"));
        RunContext ctx;
        ctx.cache_dir = *dir_ / "cache";
        first_ = new ExperimentMatrixResult(run_matrix(tiny_config(), ctx));
        first_ctx_ = new RunContext(ctx);
    }
    static void TearDownTestSuite() {
        fs::remove_all(*dir_);
        delete dir_;
        delete first_;
        delete first_ctx_;
    }
    static fs::path* dir_;
    static ExperimentMatrixResult* first_;
    static RunContext* first_ctx_;
};
fs::path* MatrixRun::dir_ = nullptr;
ExperimentMatrixResult* MatrixRun::first_ = nullptr;
RunContext* MatrixRun::first_ctx_ = nullptr;

TEST_F(MatrixRun, ObservableAndNonObservableShareOneCheckpoint) {
    ASSERT_FALSE(first_->any_failed());
    EXPECT_EQ(first_->cells.size(), 8u);
    // Ratios 0 and 0.4 for each of two seeds; non_observable reuses the ratio-0 weights.
    EXPECT_EQ(first_ctx_->pretrain_runs, 4u);
    EXPECT_EQ(first_ctx_->checkpoint_hits, 2u);
    EXPECT_EQ(first_ctx_->probe_runs, 8u);
}

TEST_F(MatrixRun, CellsCarryConditionSeedAndFingerprint) {
    const auto fp = config_fingerprint(tiny_config());
    for (const auto& cell : first_->cells) {
        ASSERT_TRUE(cell.ok());
        EXPECT_EQ(cell.report->condition, cell.condition);
        EXPECT_EQ(cell.report->seed, cell_seed(1, cell.seed_index));
        EXPECT_EQ(cell.report->config_fingerprint, fp);
        EXPECT_EQ(cell.report->mask_fill, "uniform_noise");
    }
    EXPECT_EQ(first_->cells[0].condition, "observable");
    EXPECT_EQ(first_->cells[1].seed_index, 1u);
}

TEST_F(MatrixRun, RerunTrainsNothing) {
    RunContext ctx;
    ctx.cache_dir = *dir_ / "cache";
    const auto again = run_matrix(tiny_config(), ctx);
    EXPECT_EQ(ctx.pretrain_runs, 0u);
    EXPECT_EQ(ctx.probe_runs, 0u);
    EXPECT_EQ(ctx.report_hits, 8u);
    EXPECT_EQ(again, *first_);
}

TEST_F(MatrixRun, CachedCheckpointsGiveFreshNumbers) {
    RunContext ctx;
    ctx.cache_dir = *dir_ / "cache";
    ctx.reuse_reports = false;
    const auto again = run_matrix(tiny_config(), ctx);
    EXPECT_EQ(ctx.pretrain_runs, 0u);
    EXPECT_EQ(ctx.checkpoint_hits, 6u);
    EXPECT_EQ(ctx.probe_runs, 8u);
    EXPECT_EQ(again, *first_);
}

TEST_F(MatrixRun, FreshCacheReproducesBitwise) {
    RunContext ctx;
    ctx.cache_dir = *dir_ / "cache2";
    const auto again = run_matrix(tiny_config(), ctx);
    EXPECT_EQ(ctx.pretrain_runs, 4u);
    EXPECT_EQ(to_json(again).dump(), to_json(*first_).dump());
    EXPECT_EQ(markdown_report(again), markdown_report(*first_));
}

TEST_F(MatrixRun, SubsetOfConditionsReusesCells) {
    auto c = tiny_config();
    c.conditions = {Condition::parse("pretrain_masked(0.4)")};
    RunContext ctx;
    ctx.cache_dir = *dir_ / "cache";
    const auto sub = run_matrix(c, ctx);
    EXPECT_EQ(ctx.report_hits, 2u);
    EXPECT_EQ(sub.cells[0].report, first_->cells[6].report);
}

TEST(Matrix, FailedCellsAreMarkedAndOthersFinish) {
    auto c = tiny_config();
    c.seeds = 1;
    c.pretrain_lr = 1e30;
    c.conditions = {Condition::parse("pretrain_masked(0.4)"), Condition::parse("supervised")};
    RunContext ctx;
    ctx.cache_dir = scratch("failed");
    const auto m = run_matrix(c, ctx);
    ASSERT_EQ(m.cells.size(), 2u);
    EXPECT_FALSE(m.cells[0].ok());
    EXPECT_NE(m.cells[0].error.find("step"), std::string::npos);
    EXPECT_TRUE(m.cells[1].ok());
    EXPECT_NE(markdown_report(m).find("- pretrain_masked(0.4) seed 0: "), std::string::npos);
    EXPECT_EQ(m.find("pretrain_masked(0.4)")->accuracy.n, 0u);
    // A failed cell is not cached, so it is retried next time.
    RunContext again;
    again.cache_dir = ctx.cache_dir;
    run_matrix(c, again);
    EXPECT_EQ(again.report_hits, 1u);
    fs::remove_all(ctx.cache_dir);
}

TEST(Matrix, DegenerateEnvironmentFailsEveryCell) {
    auto c = tiny_config();
    c.seeds = 1;
    c.entropy_threshold = 50.0;
    c.conditions = {Condition::parse("supervised")};
    RunContext ctx;
    ctx.cache_dir = scratch("degenerate");
    const auto m = run_matrix(c, ctx);
    EXPECT_FALSE(m.cells[0].ok());
    EXPECT_NE(m.cells[0].error.find("entropy"), std::string::npos);
    fs::remove_all(ctx.cache_dir);
}
