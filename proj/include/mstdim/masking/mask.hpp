#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mstdim/error.hpp"
#include "mstdim/numerics/tensor.hpp"
#include "mstdim/rng.hpp"

namespace mstdim {

enum class MaskGranularity : std::uint8_t { pixel, patch };
enum class MaskFill : std::uint8_t { zero, uniform_noise };
enum class MaskPolicy : std::uint8_t { fresh_per_visit, fixed_per_observation };

inline std::string to_string(MaskGranularity g) { return g == MaskGranularity::pixel ? "pixel" : "patch"; }
inline std::string to_string(MaskFill f) { return f == MaskFill::zero ? "zero" : "uniform_noise"; }
inline std::string to_string(MaskPolicy p) {
    return p == MaskPolicy::fresh_per_visit ? "fresh_per_visit" : "fixed_per_observation";
}

inline MaskGranularity parse_granularity(const std::string& s) {
    if (s == "pixel") return MaskGranularity::pixel;
    if (s == "patch") return MaskGranularity::patch;
    throw ConfigError("mask.granularity: expected pixel|patch, got '" + s + "'");
}
inline MaskFill parse_fill(const std::string& s) {
    if (s == "zero") return MaskFill::zero;
    if (s == "uniform_noise") return MaskFill::uniform_noise;
    throw ConfigError("mask.fill: expected zero|uniform_noise, got '" + s + "'");
}
inline MaskPolicy parse_policy(const std::string& s) {
    if (s == "fresh_per_visit") return MaskPolicy::fresh_per_visit;
    if (s == "fixed_per_observation") return MaskPolicy::fixed_per_observation;
    throw ConfigError("mask.policy: expected fresh_per_visit|fixed_per_observation, got '" + s + "'");
}

/// Parameters of the mask distribution. `ratio` is the fraction hidden.
struct MaskSpec {
    double ratio = 0.0;
    MaskGranularity granularity = MaskGranularity::pixel;
    std::size_t patch_side = 4;
    MaskFill fill = MaskFill::uniform_noise;
    MaskPolicy policy = MaskPolicy::fresh_per_visit;

    friend bool operator==(const MaskSpec&, const MaskSpec&) = default;

    void validate(std::size_t height, std::size_t width) const {
        if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask.ratio must lie in [0, 1]");
        if (granularity == MaskGranularity::patch) {
            if (patch_side == 0 || height % patch_side != 0 || width % patch_side != 0) {
                throw ConfigError("mask.patch_side " + std::to_string(patch_side) + " must divide the image side (" +
                                  std::to_string(height) + "x" + std::to_string(width) + ")");
            }
        }
    }
};

/// Binary visibility map (1 = visible, 0 = hidden), shared across channels.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> visible;
    std::uint64_t seed = 0;

    std::size_t hidden_count() const {
        std::size_t n = 0;
        for (auto v : visible) n += v == 0;
        return n;
    }
    double hidden_fraction() const {
        return visible.empty() ? 0.0 : static_cast<double>(hidden_count()) / static_cast<double>(visible.size());
    }

    static Mask all_visible(std::size_t h, std::size_t w) { return {h, w, std::vector<std::uint8_t>(h * w, 1), 0}; }
};

/// Each unit (pixel or patch) is hidden independently with probability spec.ratio.
inline Mask sample_mask(std::size_t height, std::size_t width, const MaskSpec& spec, Rng& rng) {
    spec.validate(height, width);
    Mask m{height, width, std::vector<std::uint8_t>(height * width, 1), 0};
    if (spec.ratio == 0.0) return m;
    if (spec.granularity == MaskGranularity::pixel) {
        for (auto& v : m.visible) v = rng.bernoulli(spec.ratio) ? 0 : 1;
        return m;
    }
    const std::size_t s = spec.patch_side;
    for (std::size_t py = 0; py < height / s; ++py) {
        for (std::size_t px = 0; px < width / s; ++px) {
            if (!rng.bernoulli(spec.ratio)) continue;
            for (std::size_t y = py * s; y < (py + 1) * s; ++y)
                for (std::size_t x = px * s; x < (px + 1) * s; ++x) m.visible[y * width + x] = 0;
        }
    }
    return m;
}

/// Seeds a mask draw. fixed_per_observation ignores `visit` so an observation
/// always receives the same mask for a given base seed.
inline std::uint64_t mask_seed(const MaskSpec& spec, std::uint64_t base_seed, std::uint64_t observation_id,
                               std::uint64_t visit) {
    const std::uint64_t s = derive_seed(base_seed, observation_id);
    return spec.policy == MaskPolicy::fixed_per_observation ? s : derive_seed(s, visit + 1);
}

inline Mask sample_mask_seeded(std::size_t height, std::size_t width, const MaskSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    Mask m = sample_mask(height, width, spec, rng);
    m.seed = seed;
    return m;
}

/// Replaces hidden pixels with 0 or i.i.d. U[0,1]; visible pixels are untouched.
/// `image` is [C, H, W] (or any buffer of C*H*W values).
template <class T>
void apply_mask_inplace(std::span<T> image, const Mask& mask, MaskFill fill, Rng& rng) {
    const std::size_t plane = mask.height * mask.width;
    if (plane == 0 || image.size() % plane != 0) {
        throw ConfigError("apply_mask: image of " + std::to_string(image.size()) + " values does not match a " +
                          std::to_string(mask.height) + "x" + std::to_string(mask.width) + " mask");
    }
    for (std::size_t c = 0; c < image.size() / plane; ++c) {
        T* px = image.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            if (mask.visible[i]) continue;
            px[i] = fill == MaskFill::zero ? T{0} : static_cast<T>(rng.uniform());
        }
    }
}

template <class T>
Tensor<T> apply_mask(const Tensor<T>& image, const Mask& mask, MaskFill fill, Rng& rng) {
    if (image.rank() < 2 || image.dim(image.rank() - 2) != mask.height || image.dim(image.rank() - 1) != mask.width) {
        throw ConfigError("apply_mask: image " + shape_str(image.shape()) + " does not match mask " +
                          std::to_string(mask.height) + "x" + std::to_string(mask.width));
    }
    Tensor<T> out = image;
    apply_mask_inplace(out.values(), mask, fill, rng);
    return out;
}

/// Samples a mask for one observation and applies it, drawing the mask and
/// the fill noise from one stream seeded by (spec policy, base seed, id, visit).
template <class T>
void mask_observation(std::span<T> image, std::size_t height, std::size_t width, const MaskSpec& spec,
                      std::uint64_t base_seed, std::uint64_t observation_id, std::uint64_t visit) {
    if (spec.ratio == 0.0) return;
    Rng rng(mask_seed(spec, base_seed, observation_id, visit));
    const Mask m = sample_mask(height, width, spec, rng);
    apply_mask_inplace(image, m, spec.fill, rng);
}

}  // namespace mstdim
