#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "mstdim/encoder/encoder.hpp"
#include "mstdim/masking/mask.hpp"
#include "mstdim/numerics/ops.hpp"

namespace mstdim {

/// Σ_i log( exp(s_ii) / Σ_j exp(s_ij) ). Always ≤ 0; 0 when B = 1.
template <class T>
T infonce(const Tensor<T>& scores) {
    if (scores.rank() != 2 || scores.dim(0) != scores.dim(1)) {
        throw ConfigError("infonce: expected a square score matrix, got " + shape_str(scores.shape()));
    }
    const std::size_t b = scores.dim(0);
    T total{0};
    for (std::size_t i = 0; i < b; ++i) {
        total -= softmax_cross_entropy(std::span<const T>(scores.data() + i * b, b), i);
    }
    return total;
}

/// Bilinear scorers: W_g pairs the anchor's global vector with positive local
/// features, W_l pairs anchor and positive local features at one location.
template <class T>
struct ScorerParams {
    Tensor<T> w_global;  // [D_g, C_l]
    Tensor<T> w_local;   // [C_l, C_l]

    ParamList<T> params() { return {{"scorer.w_global", &w_global}, {"scorer.w_local", &w_local}}; }

    template <class U>
    ScorerParams<U> cast() const {
        return {w_global.template cast<U>(), w_local.template cast<U>()};
    }

    friend bool operator==(const ScorerParams& a, const ScorerParams& b) {
        return a.w_global == b.w_global && a.w_local == b.w_local;
    }
};

/// Gaussian(0, 1/sqrt(D_a·D_b)) entries.
template <class T>
ScorerParams<T> init_scorers(const EncoderConfig& config, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "scorers"));
    const std::size_t dg = config.global_width, cl = config.local_channels();
    ScorerParams<T> s{Tensor<T>({dg, cl}), Tensor<T>({cl, cl})};
    const double sg = 1.0 / std::sqrt(static_cast<double>(dg * cl));
    const double sl = 1.0 / std::sqrt(static_cast<double>(cl * cl));
    for (auto& v : s.w_global.values()) v = static_cast<T>(rng.normal(0.0, sg));
    for (auto& v : s.w_local.values()) v = static_cast<T>(rng.normal(0.0, sl));
    return s;
}

/// B consecutive pairs (x_t, x_{t+1}); optional per-anchor masks.
template <class T>
struct PairBatch {
    Tensor<T> anchors;    // [B, C, H, W]
    Tensor<T> positives;  // [B, C, H, W]
    std::vector<Mask> anchor_masks;
    MaskFill fill = MaskFill::uniform_noise;

    std::size_t size() const { return anchors.empty() ? 0 : anchors.dim(0); }
};

/// Loss values for one batch. `*_mean` is averaged over locations and rows;
/// `*_sum` is the raw double sum Σ_{m,n} Σ_i −log softmax.
struct ContrastiveLoss {
    double gl_mean = 0.0, ll_mean = 0.0;
    double gl_sum = 0.0, ll_sum = 0.0;
    std::size_t locations = 0;
    std::size_t rows = 0;

    double total() const { return gl_mean + ll_mean; }
};

struct ObjectiveWeights {
    double global_local = 1.0;
    double local_local = 1.0;
};

namespace detail {

/// local [B, C, M, N] → per-location row-major [B, C] blocks.
template <class T>
std::vector<RowMatrix<T>> split_locations(const Tensor<T>& local) {
    const std::size_t b = local.dim(0), c = local.dim(1), loc = local.dim(2) * local.dim(3);
    std::vector<RowMatrix<T>> out(loc, RowMatrix<T>(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c)));
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < c; ++k) {
            const T* src = local.data() + (i * c + k) * loc;
            for (std::size_t l = 0; l < loc; ++l) out[l](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = src[l];
        }
    return out;
}

template <class T>
void merge_locations_add(const std::vector<RowMatrix<T>>& blocks, Tensor<T>& local) {
    const std::size_t b = local.dim(0), c = local.dim(1), loc = local.dim(2) * local.dim(3);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < c; ++k) {
            T* dst = local.data() + (i * c + k) * loc;
            for (std::size_t l = 0; l < loc; ++l) dst[l] += blocks[l](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        }
}

/// Row-wise cross-entropy with the diagonal as target. Returns the raw sum
/// and overwrites `scores` with scale·(softmax − I) when `want_grad`.
template <class T>
double diagonal_cross_entropy(RowMatrix<T>& scores, T scale, bool want_grad) {
    const std::size_t b = static_cast<std::size_t>(scores.rows());
    double sum = 0.0;
    std::vector<T> grad(want_grad ? b : 0);
    for (std::size_t i = 0; i < b; ++i) {
        T* row = scores.data() + i * b;
        sum += static_cast<double>(softmax_cross_entropy(std::span<const T>(row, b), i, std::span<T>(grad), scale));
        if (want_grad) std::copy(grad.begin(), grad.end(), row);
    }
    return sum;
}

}  // namespace detail

/// Gradients of the contrastive objective w.r.t. encoder outputs.
template <class T>
struct FeatureGrads {
    Tensor<T> anchor_local, anchor_global, positive_local;
};

/// Per-location score matrices for the global-local task:
/// entry (i, j) of location l is φ(x_t^i)ᵀ W_g φ_l(x_{t+1}^j).
template <class T>
std::vector<Tensor<T>> gl_scores(const EncoderOutput<T>& anchors, const EncoderOutput<T>& positives,
                                 const ScorerParams<T>& s) {
    const std::size_t b = anchors.global.dim(0), dg = anchors.global.dim(1), c = positives.local.dim(1);
    if (s.w_global.shape() != Shape{dg, c} || positives.local.dim(0) != b) {
        throw ConfigError("gl_scores: W_g " + shape_str(s.w_global.shape()) + " incompatible with features");
    }
    const auto bi = static_cast<Eigen::Index>(b);
    const RowMatrix<T> u = ConstMatrixMap<T>(anchors.global.data(), bi, static_cast<Eigen::Index>(dg)) *
                           ConstMatrixMap<T>(s.w_global.data(), static_cast<Eigen::Index>(dg), static_cast<Eigen::Index>(c));
    std::vector<Tensor<T>> out;
    for (const auto& lp : detail::split_locations(positives.local)) {
        Tensor<T> m({b, b});
        MatrixMap<T>(m.data(), bi, bi).noalias() = u * lp.transpose();
        out.push_back(std::move(m));
    }
    return out;
}

/// Local-local counterpart: entry (i, j) of location l is φ_l(x_t^i)ᵀ W_l φ_l(x_{t+1}^j).
template <class T>
std::vector<Tensor<T>> ll_scores(const EncoderOutput<T>& anchors, const EncoderOutput<T>& positives,
                                 const ScorerParams<T>& s) {
    const std::size_t b = anchors.local.dim(0), c = anchors.local.dim(1);
    if (s.w_local.shape() != Shape{c, c} || positives.local.shape() != anchors.local.shape()) {
        throw ConfigError("ll_scores: W_l " + shape_str(s.w_local.shape()) + " incompatible with features");
    }
    const auto bi = static_cast<Eigen::Index>(b);
    const auto ci = static_cast<Eigen::Index>(c);
    ConstMatrixMap<T> wl(s.w_local.data(), ci, ci);
    const auto la = detail::split_locations(anchors.local);
    const auto lp = detail::split_locations(positives.local);
    std::vector<Tensor<T>> out;
    for (std::size_t l = 0; l < la.size(); ++l) {
        Tensor<T> m({b, b});
        MatrixMap<T>(m.data(), bi, bi).noalias() = (la[l] * wl) * lp[l].transpose();
        out.push_back(std::move(m));
    }
    return out;
}

/// Evaluates the global-local and local-local objectives on precomputed
/// features. When `grads` is non-null, fills feature gradients of
/// w_gl·L_GL + w_ll·L_LL (means) and accumulates scorer gradients.
template <class T>
ContrastiveLoss contrastive_from_features(const EncoderOutput<T>& anchors, const EncoderOutput<T>& positives,
                                          ScorerParams<T>& scorers, const ObjectiveWeights& weights,
                                          FeatureGrads<T>* grads) {
    const std::size_t b = anchors.local.dim(0);
    if (b < 2) throw ConfigError("contrastive loss needs B >= 2 (no negatives otherwise)");
    const std::size_t c = anchors.local.dim(1);
    const std::size_t dg = anchors.global.dim(1);
    const std::size_t locs = anchors.local.dim(2) * anchors.local.dim(3);
    if (positives.local.shape() != anchors.local.shape()) throw ConfigError("contrastive: anchor/positive shape mismatch");
    if (scorers.w_global.shape() != Shape{dg, c} || scorers.w_local.shape() != Shape{c, c}) {
        throw ConfigError("contrastive: scorer shapes do not match encoder features");
    }
    const auto bi = static_cast<Eigen::Index>(b);
    const auto ci = static_cast<Eigen::Index>(c);
    const auto di = static_cast<Eigen::Index>(dg);
    const bool want = grads != nullptr;

    ContrastiveLoss out;
    out.locations = locs;
    out.rows = b;
    const T scale_gl = static_cast<T>(weights.global_local / static_cast<double>(locs * b));
    const T scale_ll = static_cast<T>(weights.local_local / static_cast<double>(locs * b));

    const auto la = detail::split_locations(anchors.local);
    const auto lp = detail::split_locations(positives.local);
    ConstMatrixMap<T> ga(anchors.global.data(), bi, di);
    ConstMatrixMap<T> wg(scorers.w_global.data(), di, ci);
    ConstMatrixMap<T> wl(scorers.w_local.data(), ci, ci);
    const RowMatrix<T> u = ga * wg;  // [B, C]

    std::vector<RowMatrix<T>> d_la, d_lp;
    RowMatrix<T> d_u, d_wl;
    if (want) {
        d_la.assign(locs, RowMatrix<T>::Zero(bi, ci));
        d_lp.assign(locs, RowMatrix<T>::Zero(bi, ci));
        d_u = RowMatrix<T>::Zero(bi, ci);
        d_wl = RowMatrix<T>::Zero(ci, ci);
    }

    for (std::size_t l = 0; l < locs; ++l) {
        RowMatrix<T> s = u * lp[l].transpose();
        out.gl_sum += detail::diagonal_cross_entropy(s, scale_gl, want);
        if (want) {
            d_u.noalias() += s * lp[l];
            d_lp[l].noalias() += s.transpose() * u;
        }

        const RowMatrix<T> v = la[l] * wl;
        RowMatrix<T> s2 = v * lp[l].transpose();
        out.ll_sum += detail::diagonal_cross_entropy(s2, scale_ll, want);
        if (want) {
            const RowMatrix<T> dv = s2 * lp[l];
            d_lp[l].noalias() += s2.transpose() * v;
            d_la[l].noalias() += dv * wl.transpose();
            d_wl.noalias() += la[l].transpose() * dv;
        }
    }
    out.gl_mean = out.gl_sum / static_cast<double>(locs * b);
    out.ll_mean = out.ll_sum / static_cast<double>(locs * b);
    if (!std::isfinite(out.gl_sum) || !std::isfinite(out.ll_sum)) throw NumericError("contrastive loss is non-finite");

    if (want) {
        grads->anchor_local = Tensor<T>(anchors.local.shape());
        grads->positive_local = Tensor<T>(positives.local.shape());
        detail::merge_locations_add(d_la, grads->anchor_local);
        detail::merge_locations_add(d_lp, grads->positive_local);
        grads->anchor_global = Tensor<T>(anchors.global.shape());
        MatrixMap<T>(grads->anchor_global.data(), bi, di).noalias() = d_u * wg.transpose();
        scorers.w_global.enable_grad();
        scorers.w_local.enable_grad();
        MatrixMap<T>(scorers.w_global.grad().data(), di, ci).noalias() += ga.transpose() * d_u;
        MatrixMap<T>(scorers.w_local.grad().data(), ci, ci).noalias() += d_wl;
    }
    return out;
}

/// Applies each anchor's mask (when present) in place. The fill noise stream
/// is derived from the mask's own seed so a batch is reproducible.
template <class T>
Tensor<T> masked_anchors(const PairBatch<T>& batch) {
    Tensor<T> a = batch.anchors;
    if (batch.anchor_masks.empty()) return a;
    const std::size_t b = batch.size();
    if (batch.anchor_masks.size() != b) throw ConfigError("masked loss: one mask per pair is required");
    const std::size_t per = a.size() / b;
    for (std::size_t i = 0; i < b; ++i) {
        Rng fill_rng(derive_seed(batch.anchor_masks[i].seed, "fill"));
        apply_mask_inplace(std::span<T>(a.data() + i * per, per), batch.anchor_masks[i], batch.fill, fill_rng);
    }
    return a;
}

/// Encodes anchors (masked if the batch carries masks) and positives in one
/// pass, evaluates the objective and, when `with_grad`, accumulates parameter
/// gradients into `encoder` and `scorers`.
template <class T>
ContrastiveLoss contrastive_loss(const PairBatch<T>& batch, EncoderParams<T>& encoder, ScorerParams<T>& scorers,
                                 const EncoderConfig& config, const ObjectiveWeights& weights, bool with_grad) {
    const std::size_t b = batch.size();
    if (b < 2) throw ConfigError("contrastive loss needs B >= 2 (no negatives otherwise)");
    if (batch.positives.shape() != batch.anchors.shape()) throw ConfigError("contrastive: anchors/positives shape mismatch");

    const Tensor<T> anchors = masked_anchors(batch);
    const std::size_t per = anchors.size() / b;
    Shape joint_shape = anchors.shape();
    joint_shape[0] = 2 * b;
    Tensor<T> joint(joint_shape);
    std::copy(anchors.data(), anchors.data() + b * per, joint.data());
    std::copy(batch.positives.data(), batch.positives.data() + b * per, joint.data() + b * per);

    EncoderTape<T> tape;
    const EncoderOutput<T> both = encode(joint, encoder, config, with_grad ? &tape : nullptr);

    auto slice = [&](const Tensor<T>& t, std::size_t first) {
        Shape s = t.shape();
        s[0] = b;
        const std::size_t n = t.size() / (2 * b);
        return Tensor<T>(s, std::vector<T>(t.data() + first * n, t.data() + (first + b) * n));
    };
    const EncoderOutput<T> fa{slice(both.local, 0), slice(both.global, 0)};
    const EncoderOutput<T> fp{slice(both.local, b), slice(both.global, b)};

    FeatureGrads<T> g;
    const ContrastiveLoss loss = contrastive_from_features(fa, fp, scorers, weights, with_grad ? &g : nullptr);
    if (with_grad) {
        Tensor<T> dl(both.local.shape());
        std::copy(g.anchor_local.values().begin(), g.anchor_local.values().end(), dl.data());
        std::copy(g.positive_local.values().begin(), g.positive_local.values().end(), dl.data() + g.anchor_local.size());
        Tensor<T> dg(both.global.shape());
        std::copy(g.anchor_global.values().begin(), g.anchor_global.values().end(), dg.data());
        encode_backward(tape, encoder, config, dl, dg);
    }
    return loss;
}

/// Mean global-local loss (the negated objective, averaged over locations and rows).
template <class T>
double loss_gl(const PairBatch<T>& batch, EncoderParams<T>& encoder, ScorerParams<T>& scorers,
               const EncoderConfig& config) {
    PairBatch<T> plain = batch;
    plain.anchor_masks.clear();
    return contrastive_loss(plain, encoder, scorers, config, {1.0, 0.0}, false).gl_mean;
}

template <class T>
double loss_ll(const PairBatch<T>& batch, EncoderParams<T>& encoder, ScorerParams<T>& scorers,
               const EncoderConfig& config) {
    PairBatch<T> plain = batch;
    plain.anchor_masks.clear();
    return contrastive_loss(plain, encoder, scorers, config, {0.0, 1.0}, false).ll_mean;
}

enum class MaskedVariant : std::uint8_t { mgl, mll };

/// Masked objectives: only the anchor x_t is masked; positives and the
/// negatives drawn from them stay clean.
template <class T>
double loss_masked(const PairBatch<T>& batch, EncoderParams<T>& encoder, ScorerParams<T>& scorers,
                   const EncoderConfig& config, MaskedVariant variant) {
    if (batch.anchor_masks.size() != batch.size()) {
        throw ConfigError("loss_masked: every pair must carry an anchor mask");
    }
    const ObjectiveWeights w = variant == MaskedVariant::mgl ? ObjectiveWeights{1.0, 0.0} : ObjectiveWeights{0.0, 1.0};
    const ContrastiveLoss l = contrastive_loss(batch, encoder, scorers, config, w, false);
    return variant == MaskedVariant::mgl ? l.gl_mean : l.ll_mean;
}

}  // namespace mstdim
