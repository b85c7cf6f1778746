#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mstdim/numerics/tensor.hpp"

namespace mstdim {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using VectorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Output extent of a strided, zero-padded window: floor((in + 2 pad - k) / stride) + 1.
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    if (in + 2 * pad < kernel) {
        throw ConfigError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                          std::to_string(in + 2 * pad));
    }
    return (in + 2 * pad - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct ConvGeometry {
    std::size_t batch = 1, in_c = 0, in_h = 0, in_w = 0;
    std::size_t out_c = 0, k_h = 0, k_w = 0;
    std::size_t stride = 1, pad = 0;
    std::size_t out_h = 0, out_w = 0;

    std::size_t patch() const { return in_c * k_h * k_w; }
    std::size_t positions() const { return out_h * out_w; }
};

template <class T>
ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t pad) {
    if (kernel.size() != 4) throw ConfigError("conv2d: kernel must be [C_out,C_in,kH,kW], got " + shape_str(kernel));
    ConvGeometry g;
    if (input.size() == 3) {
        g.in_c = input[0], g.in_h = input[1], g.in_w = input[2];
    } else if (input.size() == 4) {
        g.batch = input[0], g.in_c = input[1], g.in_h = input[2], g.in_w = input[3];
    } else {
        throw ConfigError("conv2d: input must be [C,H,W] or [B,C,H,W], got " + shape_str(input));
    }
    if (kernel[1] != g.in_c) {
        throw ConfigError("conv2d: kernel expects " + std::to_string(kernel[1]) + " input channels, input has " +
                          std::to_string(g.in_c));
    }
    g.out_c = kernel[0], g.k_h = kernel[2], g.k_w = kernel[3];
    g.stride = stride, g.pad = pad;
    g.out_h = conv_out_extent(g.in_h, g.k_h, stride, pad);
    g.out_w = conv_out_extent(g.in_w, g.k_w, stride, pad);
    return g;
}

/// Unfolds every receptive field into a column: result is [C*kH*kW, B*H'*W'].
template <class T>
RowMatrix<T> im2col(const T* input, const ConvGeometry& g) {
    const std::size_t cols = g.batch * g.positions();
    RowMatrix<T> out(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(cols));
    const long pad = static_cast<long>(g.pad);
    for (std::size_t c = 0; c < g.in_c; ++c) {
        for (std::size_t ki = 0; ki < g.k_h; ++ki) {
            for (std::size_t kj = 0; kj < g.k_w; ++kj) {
                T* row = out.data() + ((c * g.k_h + ki) * g.k_w + kj) * cols;
                for (std::size_t b = 0; b < g.batch; ++b) {
                    const T* img = input + (b * g.in_c + c) * g.in_h * g.in_w;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ki) - pad;
                        T* dst = row + b * g.positions() + oy * g.out_w;
                        if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
                            std::fill(dst, dst + g.out_w, T{0});
                            continue;
                        }
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const long ix = static_cast<long>(ox * g.stride + kj) - pad;
                            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? T{0} : img[iy * g.in_w + ix];
                        }
                    }
                }
            }
        }
    }
    return out;
}

/// Scatter-adds unfolded columns back onto an input-shaped buffer.
template <class T>
void col2im(const RowMatrix<T>& cols_grad, const ConvGeometry& g, T* grad_input) {
    const std::size_t cols = g.batch * g.positions();
    const long pad = static_cast<long>(g.pad);
    for (std::size_t c = 0; c < g.in_c; ++c) {
        for (std::size_t ki = 0; ki < g.k_h; ++ki) {
            for (std::size_t kj = 0; kj < g.k_w; ++kj) {
                const T* row = cols_grad.data() + ((c * g.k_h + ki) * g.k_w + kj) * cols;
                for (std::size_t b = 0; b < g.batch; ++b) {
                    T* img = grad_input + (b * g.in_c + c) * g.in_h * g.in_w;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ki) - pad;
                        if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
                        const T* src = row + b * g.positions() + oy * g.out_w;
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const long ix = static_cast<long>(ox * g.stride + kj) - pad;
                            if (ix >= 0 && ix < static_cast<long>(g.in_w)) img[iy * g.in_w + ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Saved state a conv layer needs for its backward pass.
template <class T>
struct ConvTape {
    ConvGeometry geometry;
    RowMatrix<T> columns;
};

/// Batched 2-D cross-correlation. `input` is [C,H,W] or [B,C,H,W]; the output
/// keeps the input's rank. `bias` may be empty.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad, ConvTape<T>* tape = nullptr) {
    const ConvGeometry g = conv_geometry<T>(input.shape(), kernel.shape(), stride, pad);
    if (!bias.empty() && bias.size() != g.out_c) {
        throw ConfigError("conv2d: bias has " + std::to_string(bias.size()) + " entries, expected " +
                          std::to_string(g.out_c));
    }
    RowMatrix<T> columns = im2col(input.data(), g);
    const auto o = static_cast<Eigen::Index>(g.out_c);
    const auto k = static_cast<Eigen::Index>(g.patch());
    const RowMatrix<T> y = ConstMatrixMap<T>(kernel.data(), o, k) * columns;

    Shape out_shape = input.rank() == 3 ? Shape{g.out_c, g.out_h, g.out_w}
                                        : Shape{g.batch, g.out_c, g.out_h, g.out_w};
    Tensor<T> out(std::move(out_shape));
    const std::size_t p = g.positions();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t oc = 0; oc < g.out_c; ++oc) {
            const T shift = bias.empty() ? T{0} : bias[oc];
            const T* src = y.data() + oc * g.batch * p + b * p;
            T* dst = out.data() + (b * g.out_c + oc) * p;
            for (std::size_t i = 0; i < p; ++i) dst[i] = src[i] + shift;
        }
    }
    require_finite(out, "conv2d");
    if (tape) {
        tape->geometry = g;
        tape->columns = std::move(columns);
    }
    return out;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, std::size_t pad) {
    return conv2d(input, kernel, Tensor<T>{}, stride, pad);
}

/// Accumulates kernel/bias gradients and, when `grad_input` is non-null,
/// writes (overwrites) the gradient w.r.t. the layer input.
template <class T>
void conv2d_backward(const ConvTape<T>& tape, const Tensor<T>& kernel, const Tensor<T>& grad_out,
                     std::span<T> grad_kernel, std::span<T> grad_bias, Tensor<T>* grad_input) {
    const ConvGeometry& g = tape.geometry;
    const std::size_t p = g.positions();
    const auto o = static_cast<Eigen::Index>(g.out_c);
    const auto k = static_cast<Eigen::Index>(g.patch());
    const auto n = static_cast<Eigen::Index>(g.batch * p);
    if (grad_out.size() != g.batch * g.out_c * p) throw ConfigError("conv2d_backward: grad_out shape mismatch");

    RowMatrix<T> dy(o, n);
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t oc = 0; oc < g.out_c; ++oc) {
            const T* src = grad_out.data() + (b * g.out_c + oc) * p;
            std::copy(src, src + p, dy.data() + oc * g.batch * p + b * p);
        }
    }
    if (!grad_kernel.empty()) {
        MatrixMap<T>(grad_kernel.data(), o, k).noalias() += dy * tape.columns.transpose();
    }
    if (!grad_bias.empty()) {
        VectorMap<T>(grad_bias.data(), o).noalias() += dy.rowwise().sum();
    }
    if (grad_input) {
        const RowMatrix<T> dcols = ConstMatrixMap<T>(kernel.data(), o, k).transpose() * dy;
        grad_input->fill(T{0});
        col2im(dcols, g, grad_input->data());
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
void relu_inplace(Tensor<T>& x) {
    for (auto& v : x.values()) v = v > T{0} ? v : T{0};
}

/// grad *= 1[activation > 0], where `activation` is the ReLU output.
template <class T>
void relu_backward_inplace(const Tensor<T>& activation, Tensor<T>& grad) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(activation[i] > T{0})) grad[i] = T{0};
    }
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

/// y = W x + b for x of shape [D_in] or a batch [B, D_in].
template <class T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (weight.rank() != 2) throw ConfigError("linear: weight must be [D_out,D_in], got " + shape_str(weight.shape()));
    const std::size_t d_out = weight.dim(0), d_in = weight.dim(1);
    const std::size_t batch = input.rank() == 1 ? 1 : input.dim(0);
    if (input.size() != batch * d_in) {
        throw ConfigError("linear: input " + shape_str(input.shape()) + " incompatible with weight " +
                          shape_str(weight.shape()));
    }
    if (bias.size() != d_out) throw ConfigError("linear: bias length mismatch");
    Tensor<T> out(input.rank() == 1 ? Shape{d_out} : Shape{batch, d_out});
    const auto bi = static_cast<Eigen::Index>(batch);
    MatrixMap<T> y(out.data(), bi, static_cast<Eigen::Index>(d_out));
    y.noalias() = ConstMatrixMap<T>(input.data(), bi, static_cast<Eigen::Index>(d_in)) *
                  ConstMatrixMap<T>(weight.data(), static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in))
                      .transpose();
    y.rowwise() += ConstVectorMap<T>(bias.data(), static_cast<Eigen::Index>(d_out)).transpose();
    require_finite(out, "linear");
    return out;
}

/// Accumulates weight/bias gradients; returns dL/dinput (same shape as input).
template <class T>
Tensor<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                          std::span<T> grad_weight, std::span<T> grad_bias, bool want_input_grad = true) {
    const std::size_t d_out = weight.dim(0), d_in = weight.dim(1);
    const std::size_t batch = input.size() / d_in;
    const auto bi = static_cast<Eigen::Index>(batch);
    const auto di = static_cast<Eigen::Index>(d_in);
    const auto dout = static_cast<Eigen::Index>(d_out);
    ConstMatrixMap<T> x(input.data(), bi, di);
    ConstMatrixMap<T> dy(grad_out.data(), bi, dout);
    if (!grad_weight.empty()) MatrixMap<T>(grad_weight.data(), dout, di).noalias() += dy.transpose() * x;
    if (!grad_bias.empty()) VectorMap<T>(grad_bias.data(), dout).noalias() += dy.colwise().sum().transpose();
    Tensor<T> grad_in;
    if (want_input_grad) {
        grad_in = Tensor<T>(input.shape());
        MatrixMap<T>(grad_in.data(), bi, di).noalias() = dy * ConstMatrixMap<T>(weight.data(), dout, di);
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// bilinear score
// ---------------------------------------------------------------------------

template <class T>
struct BilinearGrad {
    std::vector<T> a, w, b;
};

/// aᵀ W b.
template <class T>
T bilinear_score(std::span<const T> a, const Tensor<T>& w, std::span<const T> b, BilinearGrad<T>* grad = nullptr) {
    if (w.rank() != 2 || w.dim(0) != a.size() || w.dim(1) != b.size()) {
        throw ConfigError("bilinear_score: W " + shape_str(w.shape()) + " incompatible with a[" +
                          std::to_string(a.size()) + "], b[" + std::to_string(b.size()) + "]");
    }
    const auto da = static_cast<Eigen::Index>(a.size());
    const auto db = static_cast<Eigen::Index>(b.size());
    ConstVectorMap<T> av(a.data(), da), bv(b.data(), db);
    ConstMatrixMap<T> wm(w.data(), da, db);
    const Eigen::Matrix<T, Eigen::Dynamic, 1> wb = wm * bv;
    const T score = av.dot(wb);
    if (!std::isfinite(score)) throw NumericError("bilinear_score: non-finite score");
    if (grad) {
        grad->a.assign(wb.data(), wb.data() + da);
        const Eigen::Matrix<T, Eigen::Dynamic, 1> wta = wm.transpose() * av;
        grad->b.assign(wta.data(), wta.data() + db);
        grad->w.resize(static_cast<std::size_t>(da * db));
        MatrixMap<T>(grad->w.data(), da, db).noalias() = av * bv.transpose();
    }
    return score;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy
// ---------------------------------------------------------------------------

/// −logits[target] + log Σ exp(logits), with max subtraction. When
/// `grad` is non-empty it receives scale·(softmax − onehot).
template <class T>
T softmax_cross_entropy(std::span<const T> logits, std::size_t target, std::span<T> grad = {}, T scale = T{1}) {
    if (logits.empty() || target >= logits.size()) {
        throw ConfigError("softmax_cross_entropy: target " + std::to_string(target) + " out of range for " +
                          std::to_string(logits.size()) + " logits");
    }
    if (!grad.empty() && grad.size() != logits.size()) throw ConfigError("softmax_cross_entropy: grad size mismatch");
    const T mx = *std::max_element(logits.begin(), logits.end());
    if (!std::isfinite(mx)) throw NumericError("softmax_cross_entropy: non-finite logits");
    T sum{0};
    for (T z : logits) sum += std::exp(z - mx);
    const T log_norm = std::log(sum);
    const T loss = log_norm - (logits[target] - mx);
    if (!std::isfinite(loss)) throw NumericError("softmax_cross_entropy: non-finite loss");
    if (!grad.empty()) {
        for (std::size_t j = 0; j < logits.size(); ++j) {
            grad[j] = scale * (std::exp(logits[j] - mx - log_norm) - (j == target ? T{1} : T{0}));
        }
    }
    return loss;
}

}  // namespace mstdim
