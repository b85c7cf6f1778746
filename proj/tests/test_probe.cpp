#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "mstdim/envsim/dataset.hpp"
#include "mstdim/probe/metrics.hpp"
#include "mstdim/probe/probe.hpp"
#include "mstdim/probe/report.hpp"

using namespace mstdim;

namespace {

struct MetricFixture {
    std::vector<std::uint8_t> labels, preds;
    double accuracy, f1;
};

// Expected F1 values are per-class 2TP/(2TP+FP+FN), averaged in ascending class order.
const std::vector<MetricFixture>& metric_fixtures() {
    static const std::vector<MetricFixture> f = {
        {{1, 1, 0}, {1, 0, 0}, 2.0 / 3, (2.0 / 3 + 2.0 / 3) / 2},
        {{3, 3, 3}, {3, 3, 3}, 1.0, 1.0},
        {{0, 1, 2, 3}, {0, 1, 2, 3}, 1.0, 1.0},
        {{0, 0, 0, 0}, {1, 1, 1, 1}, 0.0, 0.0},
        {{0, 0, 1, 1}, {0, 1, 0, 1}, 0.5, (0.5 + 0.5) / 2},
        {{0, 0, 0, 1}, {0, 0, 0, 0}, 0.75, (6.0 / 7 + 0.0) / 2},
        {{5, 5, 7}, {5, 7, 7}, 2.0 / 3, (2.0 / 3 + 2.0 / 3) / 2},
        {{1, 2, 3}, {2, 3, 1}, 0.0, 0.0},
        {{0, 1}, {0, 9}, 0.5, (1.0 + 0.0) / 2},
        {{2, 2, 2, 2, 2}, {2, 2, 2, 2, 4}, 0.8, 8.0 / 9},
        {{0, 1, 2}, {0, 0, 0}, 1.0 / 3, (2.0 / 4 + 0.0 + 0.0) / 3},
        {{255, 0}, {255, 0}, 1.0, 1.0},
        {{255, 255, 0, 0}, {0, 255, 255, 0}, 0.5, (0.5 + 0.5) / 2},
        {{1, 1, 1, 2, 2, 3}, {1, 1, 2, 2, 2, 3}, 5.0 / 6, (4.0 / 5 + 4.0 / 5 + 1.0) / 3},
        {{0, 0, 1, 1, 2, 2}, {0, 1, 1, 2, 2, 0}, 0.5, (0.5 + 0.5 + 0.5) / 3},
        {{4}, {4}, 1.0, 1.0},
        {{4}, {3}, 0.0, 0.0},
        {{0, 0, 0, 0, 1, 1, 1, 1}, {0, 0, 0, 1, 1, 1, 1, 1}, 7.0 / 8, (6.0 / 7 + 8.0 / 9) / 2},
        {{1, 2, 3, 4}, {1, 1, 1, 1}, 0.25, (2.0 / 5 + 0.0 + 0.0 + 0.0) / 4},
        {{3, 3, 9, 9, 9}, {9, 9, 9, 9, 9}, 0.6, (0.0 + 6.0 / 8) / 2},
        {{7, 8, 7, 8}, {8, 7, 8, 7}, 0.0, 0.0},
        {{10, 20, 30, 10}, {10, 20, 10, 30}, 0.5, (2.0 / 4 + 1.0 + 0.0) / 3},
    };
    return f;
}

TrajectoryDataset dataset_from(std::size_t h, std::size_t w, std::vector<VariableInfo> vars, Split split) {
    TrajectoryDataset ds;
    ds.env_descriptor = "fixture";
    ds.split = split;
    ds.height = h;
    ds.width = w;
    ds.variables = std::move(vars);
    return ds;
}

// 8x8 frames with one lit pixel; label = column of the lit pixel, so the raw
// pixels are linearly separable.
TrajectoryDataset lit_pixel_dataset(Split split) {
    auto ds = dataset_from(8, 8, {{"column", Category::agent_loc}, {"row", Category::small_loc}}, split);
    for (int rep = 0; rep < 4; ++rep)
        for (std::uint8_t k = 0; k < 64; ++k) {
            std::vector<std::uint8_t> f(64, 0);
            f[k] = 255;
            ds.frames.insert(ds.frames.end(), f.begin(), f.end());
            ds.labels.push_back(k % 8);
            ds.labels.push_back(k / 8);
        }
    ds.episodes.push_back({0, ds.size()});
    return ds;
}

// A 1x1 conv with unit weight and an identity head, so global features are the pixels.
EncoderConfig identity_config() {
    EncoderConfig c;
    c.in_height = c.in_width = 8;
    c.convs = {{1, 1, 1, 0}};
    c.local_layer = 0;
    c.global_width = 64;
    return c;
}

EncoderParams<double> identity_encoder(const EncoderConfig& c) {
    auto p = init_encoder<double>(c, 1);
    p.kernels[0].fill(1.0);
    p.biases[0].fill(0.0);
    p.head_weight.fill(0.0);
    for (std::size_t i = 0; i < 64; ++i) p.head_weight[i * 64 + i] = 1.0;
    p.head_bias.fill(0.0);
    return p;
}

MaskSpec no_mask() { return MaskSpec{}; }

std::vector<std::size_t> all_variables(const TrajectoryDataset& ds) {
    std::vector<std::size_t> v(ds.variables.size());
    std::iota(v.begin(), v.end(), 0);
    return v;
}

double majority_fraction(const TrajectoryDataset& ds, std::size_t v) {
    std::size_t counts[256] = {};
    for (std::size_t i = 0; i < ds.size(); ++i) ++counts[ds.label(i, v)];
    return static_cast<double>(*std::max_element(counts, counts + 256)) / static_cast<double>(ds.size());
}

}  // namespace

TEST(Metrics, HandFixturesExact) {
    ASSERT_GE(metric_fixtures().size(), 20u);
    for (std::size_t i = 0; i < metric_fixtures().size(); ++i) {
        const auto& f = metric_fixtures()[i];
        EXPECT_EQ(accuracy(f.labels, f.preds), f.accuracy) << "fixture " << i;
        EXPECT_EQ(macro_f1(f.labels, f.preds), f.f1) << "fixture " << i;
    }
}

TEST(Metrics, SpecExampleRoundsToFourDecimals) {
    const std::vector<std::uint8_t> labels{1, 1, 0}, preds{1, 0, 0};
    EXPECT_NEAR(accuracy(labels, preds), 0.6667, 5e-5);
    EXPECT_NEAR(macro_f1(labels, preds), 0.6667, 5e-5);
}

TEST(Metrics, LengthMismatchAndEmptyAreErrors) {
    const std::vector<std::uint8_t> a{1, 2}, b{1};
    EXPECT_THROW(accuracy(a, b), ConfigError);
    EXPECT_THROW(macro_f1(a, b), ConfigError);
    EXPECT_THROW(accuracy({}, {}), ConfigError);
    EXPECT_THROW(macro_f1({}, {}), ConfigError);
}

TEST(Metrics, ClassPermutationEquivariance) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::uint8_t> labels(200), preds(200);
        const std::size_t k = 2 + rng.below(30);
        for (std::size_t i = 0; i < 200; ++i) {
            labels[i] = static_cast<std::uint8_t>(rng.below(k));
            preds[i] = rng.uniform() < 0.5 ? labels[i] : static_cast<std::uint8_t>(rng.below(k + 3));
        }
        std::vector<std::uint8_t> perm(256);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm.begin(), perm.end());
        auto pl = labels, pp = preds;
        for (auto& v : pl) v = perm[v];
        for (auto& v : pp) v = perm[v];
        EXPECT_EQ(accuracy(pl, pp), accuracy(labels, preds));
        EXPECT_NEAR(macro_f1(pl, pp), macro_f1(labels, preds), 1e-12);
    }
}

TEST(Metrics, PerfectPredictionsScoreOne) {
    Rng rng(4);
    std::vector<std::uint8_t> labels(500);
    for (auto& v : labels) v = static_cast<std::uint8_t>(rng.below(256));
    EXPECT_EQ(accuracy(labels, labels), 1.0);
    EXPECT_EQ(macro_f1(labels, labels), 1.0);
}

TEST(EntropyFilter, KeepsOnlyVariablesAboveThreshold) {
    auto ds = dataset_from(1, 1,
                           {{"constant", Category::misc},
                            {"uniform4", Category::agent_loc},
                            {"skewed", Category::misc},
                            {"binary", Category::misc}},
                           Split::probe_train);
    for (std::uint8_t i = 0; i < 8; ++i) {
        ds.frames.push_back(0);
        ds.labels.insert(ds.labels.end(), {7, static_cast<std::uint8_t>(i % 4), static_cast<std::uint8_t>(i < 6 ? 0 : 1),
                                           static_cast<std::uint8_t>(i % 2)});
    }
    // Entropies: 0, ln 4, H(3/4, 1/4) = 0.5623, ln 2 = 0.6931.
    EXPECT_EQ(filter_variables(ds, 0.6), (std::vector<std::size_t>{1, 3}));
    EXPECT_EQ(filter_variables(ds, 0.5), (std::vector<std::size_t>{1, 2, 3}));
    EXPECT_EQ(filter_variables(ds, 0.0), (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_EQ(filter_variables(ds, 1.0), (std::vector<std::size_t>{1}));
    EXPECT_THROW(filter_variables(ds, 1.5), ConfigError);
    EXPECT_THROW(filter_variables(ds, -1.0), ConfigError);
}

TEST(Report, AggregatesOverCategoriesNotVariables) {
    ConditionReport r;
    r.variables = {{"a", Category::agent_loc, 1.0, 0.5},
                   {"b", Category::agent_loc, 0.5, 0.25},
                   {"c", Category::agent_loc, 0.0, 0.0},
                   {"d", Category::score_clock_lives_display, 0.25, 1.0}};
    r.aggregate();
    ASSERT_EQ(r.categories.size(), 2u);
    EXPECT_EQ(r.category(Category::agent_loc)->accuracy, 0.5);
    EXPECT_EQ(r.category(Category::agent_loc)->f1, 0.25);
    EXPECT_EQ(r.category(Category::agent_loc)->variables, 3u);
    EXPECT_EQ(r.category(Category::small_loc), nullptr);
    EXPECT_EQ(r.mean_accuracy, (0.5 + 0.25) / 2);
    EXPECT_EQ(r.mean_f1, (0.25 + 1.0) / 2);
}

TEST(Report, JsonRoundTrip) {
    ConditionReport r;
    r.condition = "pretrain_masked(0.4)";
    r.seed = 123456789012345ull;
    r.config_fingerprint = "abc";
    r.environment = "env";
    r.mask_fill = "uniform_noise";
    r.variables = {{"a", Category::agent_loc, 0.1, 0.2}, {"b", Category::misc, 1.0 / 3, 2.0 / 7}};
    r.filtered_out = {"lives"};
    r.aggregate();
    EXPECT_EQ(report_from_json(nlohmann::json(to_json(r))), r);
    EXPECT_EQ(report_from_json(nlohmann::json::parse(to_json(r).dump())), r);
}

TEST(ProbeTraining, SeparableFixtureReachesNinetyNinePercent) {
    const auto ds = lit_pixel_dataset(Split::probe_train);
    const auto c = identity_config();
    auto enc = identity_encoder(c);
    ProbeConfig pc;
    pc.steps = 2000;
    const auto heads = train_probes(enc, c, ds, all_variables(ds), no_mask(), true, pc, 5);
    const auto r = score_heads(enc, c, heads, ds, no_mask(), 0);
    EXPECT_GE(r.variable("column")->accuracy, 0.99);
    EXPECT_GE(r.variable("row")->accuracy, 0.99);
}

TEST(ProbeTraining, FrozenEncoderIsNeverMutated) {
    const auto ds = lit_pixel_dataset(Split::probe_train);
    const auto c = identity_config();
    auto enc = identity_encoder(c);
    const auto before = param_checksum(enc.params());
    ProbeConfig pc;
    pc.steps = 50;
    train_probes(enc, c, ds, all_variables(ds), no_mask(), true, pc, 6);
    EXPECT_EQ(param_checksum(enc.params()), before);

    train_probes(enc, c, ds, all_variables(ds), no_mask(), false, pc, 6);
    EXPECT_NE(param_checksum(enc.params()), before);
}

TEST(ProbeTraining, FrozenDefaultEncoderUnchangedUnderMasking) {
    const auto ds = collect_trajectories({}, 7, 200, Split::probe_train);
    const EncoderConfig c;
    auto enc = init_encoder<float>(c, 8);
    const auto before = param_checksum(enc.params());
    MaskSpec m;
    m.ratio = 0.4;
    ProbeConfig pc;
    pc.steps = 5;
    pc.batch_size = 16;
    train_probes(enc, c, ds, all_variables(ds), m, true, pc, 9);
    EXPECT_EQ(param_checksum(enc.params()), before);
}

TEST(ProbeTraining, ZeroStepsRandomEncoderIsAtChance) {
    const auto test = collect_trajectories({}, 10, 400, Split::probe_test);
    const auto train = collect_trajectories({}, 10, 100, Split::probe_train);
    const EncoderConfig c;
    auto enc = init_encoder<float>(c, 11);
    ProbeConfig pc;
    pc.steps = 0;
    const auto vars = filter_variables(train, 0.0);
    const auto heads = train_probes(enc, c, train, vars, no_mask(), true, pc, 12);
    const auto r = evaluate(enc, c, heads, test, no_mask(), 13);
    for (std::size_t h = 0; h < vars.size(); ++h)
        EXPECT_LE(r.variables[h].accuracy, majority_fraction(test, vars[h]) + 0.02) << r.variables[h].name;
}

TEST(ProbeTraining, SupervisedBeatsFrozenRandomOnTrainAccuracy) {
    const auto ds = collect_trajectories({}, 14, 1000, Split::probe_train);
    const auto vars = filter_variables(ds, 0.6);
    const EncoderConfig c;
    ProbeConfig pc;
    pc.steps = 300;
    pc.batch_size = 32;
    for (std::uint64_t seed : {1, 2, 3}) {
        auto frozen = init_encoder<float>(c, seed);
        auto joint = init_encoder<float>(c, seed);
        const auto hf = train_probes(frozen, c, ds, vars, no_mask(), true, pc, seed);
        const auto hj = train_probes(joint, c, ds, vars, no_mask(), false, pc, seed);
        const double af = score_heads(frozen, c, hf, ds, no_mask(), 0).mean_accuracy;
        const double aj = score_heads(joint, c, hj, ds, no_mask(), 0).mean_accuracy;
        EXPECT_GT(aj, af) << "seed " << seed;
    }
}

TEST(ProbeTraining, SameSeedSameHeads) {
    const auto ds = lit_pixel_dataset(Split::probe_train);
    const auto c = identity_config();
    auto enc = identity_encoder(c);
    ProbeConfig pc;
    pc.steps = 20;
    const auto a = train_probes(enc, c, ds, all_variables(ds), no_mask(), true, pc, 15);
    const auto b = train_probes(enc, c, ds, all_variables(ds), no_mask(), true, pc, 15);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.biases, b.biases);
}

TEST(ProbeTraining, WrongSplitIsConfigError) {
    const auto ds = lit_pixel_dataset(Split::probe_test);
    const auto c = identity_config();
    auto enc = identity_encoder(c);
    EXPECT_THROW(train_probes(enc, c, ds, all_variables(ds), no_mask(), true, ProbeConfig{}, 1), ConfigError);
}

TEST(ProbeTraining, NonFiniteEncoderIsTrainingError) {
    const auto ds = lit_pixel_dataset(Split::probe_train);
    const auto c = identity_config();
    auto enc = identity_encoder(c);
    enc.head_weight[0] = std::nan("");
    ProbeConfig pc;
    pc.steps = 3;
    try {
        train_probes(enc, c, ds, all_variables(ds), no_mask(), true, pc, 1);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.step(), 1u);
    }
}

TEST(Evaluate, RequiresTestSplitAndMatchingHeads) {
    const auto train = lit_pixel_dataset(Split::probe_train);
    const auto test = lit_pixel_dataset(Split::probe_test);
    const auto c = identity_config();
    auto enc = identity_encoder(c);
    auto heads = init_probe_heads<double>({0, 1}, 64, 1);
    EXPECT_THROW(evaluate(enc, c, heads, train, no_mask(), 0), ConfigError);
    EXPECT_NO_THROW(evaluate(enc, c, heads, test, no_mask(), 0));
    heads.variables.push_back(5);
    EXPECT_THROW(evaluate(enc, c, heads, test, no_mask(), 0), ConfigError);
    heads.variables = {0};
    EXPECT_THROW(evaluate(enc, c, heads, test, no_mask(), 0), ConfigError);
}

TEST(Evaluate, FixedMasksMakeEvaluationRepeatable) {
    const auto test = collect_trajectories({}, 16, 120, Split::probe_test);
    const EncoderConfig c;
    auto enc = init_encoder<float>(c, 17);
    const auto heads = init_probe_heads<float>(all_variables(test), c.global_width, 18);
    MaskSpec m;
    m.ratio = 0.4;
    const auto a = evaluate(enc, c, heads, test, m, 19);
    const auto b = evaluate(enc, c, heads, test, m, 19);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.filtered_out.size(), 0u);
    EXPECT_EQ(a.mask_fill, "uniform_noise");
}

TEST(Evaluate, ReportsFilteredVariables) {
    const auto test = lit_pixel_dataset(Split::probe_test);
    const auto c = identity_config();
    auto enc = identity_encoder(c);
    const auto heads = init_probe_heads<double>({1}, 64, 1);
    const auto r = evaluate(enc, c, heads, test, no_mask(), 0);
    EXPECT_EQ(r.filtered_out, (std::vector<std::string>{"column"}));
    ASSERT_EQ(r.variables.size(), 1u);
    EXPECT_EQ(r.variables[0].name, "row");
}
