#include <cmath>

#include <gtest/gtest.h>

#include "mstdim/masking/mask.hpp"

using namespace mstdim;

namespace {

MaskSpec pixel_spec(double p) {
    MaskSpec s;
    s.ratio = p;
    return s;
}

Tensor<double> random_image(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform();
    return t;
}

}  // namespace

TEST(SampleMask, RatioZeroIsAllVisible) {
    Rng rng(1);
    const auto m = sample_mask(64, 64, pixel_spec(0.0), rng);
    EXPECT_EQ(m.hidden_count(), 0u);
    EXPECT_EQ(m.visible.size(), 4096u);
}

TEST(SampleMask, RatioOneIsAllHidden) {
    Rng rng(2);
    const auto m = sample_mask(64, 64, pixel_spec(1.0), rng);
    EXPECT_EQ(m.hidden_count(), 4096u);
}

TEST(SampleMask, EntriesAreBinary) {
    Rng rng(3);
    const auto m = sample_mask(32, 48, pixel_spec(0.5), rng);
    for (auto v : m.visible) ASSERT_TRUE(v == 0 || v == 1);
}

TEST(SampleMask, SingleMaskConcentrates) {
    Rng rng(4);
    const auto m = sample_mask(64, 64, pixel_spec(0.4), rng);
    EXPECT_NEAR(m.hidden_fraction(), 0.4, 3.0 * std::sqrt(0.4 * 0.6 / 4096.0));
}

class MaskFraction : public ::testing::TestWithParam<double> {};

TEST_P(MaskFraction, HundredMasksConcentrateAroundRatio) {
    const double p = GetParam();
    const double sigma = std::sqrt(p * (1 - p) / 4096.0);
    Rng rng(static_cast<std::uint64_t>(p * 1000));
    double total = 0;
    int outside = 0;
    for (int i = 0; i < 100; ++i) {
        const auto m = sample_mask(64, 64, pixel_spec(p), rng);
        outside += std::abs(m.hidden_fraction() - p) > 3.0 * sigma;
        total += m.hidden_fraction();
    }
    // Pooled over 409600 pixels the standard deviation shrinks tenfold.
    EXPECT_NEAR(total / 100.0, p, 3.0 * sigma / 10.0);
    EXPECT_LE(outside, 3);
}

INSTANTIATE_TEST_SUITE_P(Ratios, MaskFraction, ::testing::Values(0.2, 0.4, 0.6, 0.8));

TEST(SampleMask, PatchesAreWhollyVisibleOrHidden) {
    MaskSpec s = pixel_spec(0.5);
    s.granularity = MaskGranularity::patch;
    s.patch_side = 8;
    Rng rng(5);
    const auto m = sample_mask(64, 64, s, rng);
    for (std::size_t py = 0; py < 8; ++py)
        for (std::size_t px = 0; px < 8; ++px) {
            const auto first = m.visible[py * 8 * 64 + px * 8];
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x) ASSERT_EQ(m.visible[(py * 8 + y) * 64 + px * 8 + x], first);
        }
    EXPECT_EQ(m.hidden_count() % 64, 0u);
}

TEST(SampleMask, InvalidPatchSideIsConfigError) {
    MaskSpec s = pixel_spec(0.5);
    s.granularity = MaskGranularity::patch;
    s.patch_side = 5;
    Rng rng(6);
    EXPECT_THROW(sample_mask(64, 64, s, rng), ConfigError);
    s.patch_side = 0;
    EXPECT_THROW(sample_mask(64, 64, s, rng), ConfigError);
}

TEST(SampleMask, InvalidRatioIsConfigError) {
    Rng rng(7);
    EXPECT_THROW(sample_mask(8, 8, pixel_spec(1.5), rng), ConfigError);
    EXPECT_THROW(sample_mask(8, 8, pixel_spec(-0.1), rng), ConfigError);
    EXPECT_THROW(sample_mask(8, 8, pixel_spec(std::nan("")), rng), ConfigError);
}

TEST(MaskSeed, FixedPerObservationIgnoresVisit) {
    MaskSpec s = pixel_spec(0.4);
    s.policy = MaskPolicy::fixed_per_observation;
    const auto a = sample_mask_seeded(64, 64, s, mask_seed(s, 9, 17, 0));
    const auto b = sample_mask_seeded(64, 64, s, mask_seed(s, 9, 17, 5));
    EXPECT_EQ(a.visible, b.visible);
    const auto c = sample_mask_seeded(64, 64, s, mask_seed(s, 9, 18, 0));
    EXPECT_NE(a.visible, c.visible);
}

TEST(MaskSeed, FreshPerVisitResamples) {
    const MaskSpec s = pixel_spec(0.4);
    const auto a = sample_mask_seeded(64, 64, s, mask_seed(s, 9, 17, 0));
    const auto b = sample_mask_seeded(64, 64, s, mask_seed(s, 9, 17, 1));
    EXPECT_NE(a.visible, b.visible);
    const auto again = sample_mask_seeded(64, 64, s, mask_seed(s, 9, 17, 0));
    EXPECT_EQ(a.visible, again.visible);
}

TEST(ApplyMask, AllVisibleLeavesImageUnchanged) {
    const auto img = random_image({1, 16, 16}, 10);
    Rng rng(11);
    for (MaskFill f : {MaskFill::zero, MaskFill::uniform_noise})
        EXPECT_EQ(apply_mask(img, Mask::all_visible(16, 16), f, rng), img);
}

TEST(ApplyMask, AllHiddenZeroFillGivesZeros) {
    const auto img = random_image({2, 8, 8}, 12);
    Mask m{8, 8, std::vector<std::uint8_t>(64, 0), 0};
    Rng rng(13);
    const auto out = apply_mask(img, m, MaskFill::zero, rng);
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(ApplyMask, CheckerboardZeroFillIsElementwiseProduct) {
    const Tensor<double> img({1, 4, 4}, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.15,
                                                             0.25, 0.35, 0.45, 0.55, 0.65});
    Mask m{4, 4, std::vector<std::uint8_t>(16), 0};
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) m.visible[y * 4 + x] = (x + y) % 2 == 0;
    Rng rng(14);
    const auto out = apply_mask(img, m, MaskFill::zero, rng);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(out[i], img[i] * m.visible[i]);
}

TEST(ApplyMask, NoiseFillKeepsVisibleAndDrawsUnitInterval) {
    const auto img = random_image({3, 32, 32}, 15);
    Rng mr(16);
    const auto m = sample_mask(32, 32, pixel_spec(0.5), mr);
    Rng rng(17);
    const auto out = apply_mask(img, m, MaskFill::uniform_noise, rng);
    std::size_t changed = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 1024; ++i) {
            const std::size_t k = c * 1024 + i;
            if (m.visible[i]) {
                EXPECT_EQ(out[k], img[k]);
            } else {
                EXPECT_GE(out[k], 0.0);
                EXPECT_LT(out[k], 1.0);
                changed += out[k] != img[k];
            }
        }
    EXPECT_EQ(changed, 3 * m.hidden_count());
}

TEST(ApplyMask, ZeroFillIsIdempotent) {
    const auto img = random_image({1, 20, 20}, 18);
    Rng mr(19);
    const auto m = sample_mask(20, 20, pixel_spec(0.3), mr);
    Rng rng(20);
    const auto once = apply_mask(img, m, MaskFill::zero, rng);
    EXPECT_EQ(apply_mask(once, m, MaskFill::zero, rng), once);
}

TEST(ApplyMask, ShapeMismatchIsConfigError) {
    const auto img = random_image({1, 8, 8}, 21);
    Rng rng(22);
    EXPECT_THROW(apply_mask(img, Mask::all_visible(8, 9), MaskFill::zero, rng), ConfigError);
    std::vector<double> buf(65);
    EXPECT_THROW(apply_mask_inplace(std::span<double>(buf), Mask::all_visible(8, 8), MaskFill::zero, rng),
                 ConfigError);
}

TEST(MaskObservation, DeterministicUnderFixedPolicy) {
    MaskSpec s = pixel_spec(0.4);
    s.policy = MaskPolicy::fixed_per_observation;
    const auto img = random_image({1, 16, 16}, 23);
    auto a = img.storage(), b = img.storage();
    mask_observation(std::span<double>(a), 16, 16, s, 5, 3, 0);
    mask_observation(std::span<double>(b), 16, 16, s, 5, 3, 9);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, img.storage());
}

TEST(MaskObservation, RatioZeroIsNoop) {
    const auto img = random_image({1, 16, 16}, 24);
    auto a = img.storage();
    mask_observation(std::span<double>(a), 16, 16, pixel_spec(0.0), 5, 3, 0);
    EXPECT_EQ(a, img.storage());
}
