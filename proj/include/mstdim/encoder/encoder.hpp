#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mstdim/numerics/ops.hpp"
#include "mstdim/numerics/tensor.hpp"
#include "mstdim/rng.hpp"

namespace mstdim {

struct ConvLayerSpec {
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;

    friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

/// Convolutional stack with ReLU after every conv, a flatten, and a linear
/// global head. The output of conv layer `local_layer` (post-ReLU) is the
/// local feature map.
struct EncoderConfig {
    std::size_t in_channels = 1;
    std::size_t in_height = 64;
    std::size_t in_width = 64;
    std::vector<ConvLayerSpec> convs = {{32, 8, 4, 1}, {64, 4, 2, 1}, {128, 4, 2, 1}, {64, 3, 1, 1}};
    std::size_t local_layer = 2;
    std::size_t global_width = 256;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;

    /// Spatial extents [C, H, W] after each conv layer.
    std::vector<Shape> layer_shapes() const {
        std::vector<Shape> shapes;
        std::size_t c = in_channels, h = in_height, w = in_width;
        for (const auto& l : convs) {
            if (l.out_channels == 0 || l.kernel == 0) throw ConfigError("encoder: conv layer with zero channels or kernel");
            h = conv_out_extent(h, l.kernel, l.stride, l.padding);
            w = conv_out_extent(w, l.kernel, l.stride, l.padding);
            c = l.out_channels;
            shapes.push_back({c, h, w});
        }
        return shapes;
    }

    void validate() const {
        if (convs.empty()) throw ConfigError("encoder: at least one conv layer is required");
        if (local_layer >= convs.size()) {
            throw ConfigError("encoder: local layer index " + std::to_string(local_layer) + " out of range");
        }
        if (global_width == 0) throw ConfigError("encoder: global width must be positive");
        if (in_channels == 0 || in_height == 0 || in_width == 0) throw ConfigError("encoder: empty input");
        layer_shapes();
    }

    Shape local_shape() const { return layer_shapes().at(local_layer); }
    std::size_t local_channels() const { return local_shape()[0]; }
    std::size_t flat_width() const { return shape_numel(layer_shapes().back()); }

    /// "32:8:4:1,64:4:2:1,...": out:kernel:stride:padding per layer.
    std::string layers_string() const {
        std::ostringstream os;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            const auto& l = convs[i];
            os << (i ? "," : "") << l.out_channels << ':' << l.kernel << ':' << l.stride << ':' << l.padding;
        }
        return os.str();
    }

    static std::vector<ConvLayerSpec> parse_layers(const std::string& text) {
        std::vector<ConvLayerSpec> out;
        std::istringstream is(text);
        std::string item;
        while (std::getline(is, item, ',')) {
            ConvLayerSpec l;
            char c1 = 0, c2 = 0, c3 = 0;
            std::istringstream ls(item);
            if (!(ls >> l.out_channels >> c1 >> l.kernel >> c2 >> l.stride >> c3 >> l.padding) || c1 != ':' ||
                c2 != ':' || c3 != ':') {
                throw ConfigError("encoder.layers: cannot parse '" + item + "' (expected out:kernel:stride:pad)");
            }
            out.push_back(l);
        }
        if (out.empty()) throw ConfigError("encoder.layers: empty layer list");
        return out;
    }
};

template <class T>
struct EncoderParams {
    std::vector<Tensor<T>> kernels;
    std::vector<Tensor<T>> biases;
    Tensor<T> head_weight;  // [global_width, flat_width]
    Tensor<T> head_bias;    // [global_width]

    ParamList<T> params() {
        ParamList<T> out;
        for (std::size_t i = 0; i < kernels.size(); ++i) {
            out.emplace_back("conv" + std::to_string(i) + ".kernel", &kernels[i]);
            out.emplace_back("conv" + std::to_string(i) + ".bias", &biases[i]);
        }
        out.emplace_back("head.weight", &head_weight);
        out.emplace_back("head.bias", &head_bias);
        return out;
    }

    template <class U>
    EncoderParams<U> cast() const {
        EncoderParams<U> out;
        for (const auto& k : kernels) out.kernels.push_back(k.template cast<U>());
        for (const auto& b : biases) out.biases.push_back(b.template cast<U>());
        out.head_weight = head_weight.template cast<U>();
        out.head_bias = head_bias.template cast<U>();
        return out;
    }

    friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
        return a.kernels == b.kernels && a.biases == b.biases && a.head_weight == b.head_weight &&
               a.head_bias == b.head_bias;
    }
};

/// Kaiming-uniform with fan-in: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <class T>
void kaiming_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
EncoderParams<T> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, "encoder"));
    EncoderParams<T> p;
    std::size_t c_in = config.in_channels;
    for (const auto& l : config.convs) {
        Tensor<T> k({l.out_channels, c_in, l.kernel, l.kernel});
        kaiming_uniform(k, c_in * l.kernel * l.kernel, rng);
        p.kernels.push_back(std::move(k));
        p.biases.emplace_back(Shape{l.out_channels});
        c_in = l.out_channels;
    }
    const std::size_t flat = config.flat_width();
    p.head_weight = Tensor<T>({config.global_width, flat});
    kaiming_uniform(p.head_weight, flat, rng);
    p.head_bias = Tensor<T>({config.global_width});
    return p;
}

template <class T>
struct EncoderOutput {
    Tensor<T> local;   // [B, C_l, M, N]
    Tensor<T> global;  // [B, D_g]
};

/// Activations retained for the backward pass.
template <class T>
struct EncoderTape {
    std::vector<ConvTape<T>> convs;
    std::vector<Tensor<T>> activations;  // post-ReLU output of every conv
    Tensor<T> flat;                      // [B, flat_width]
};

/// Encodes a batch [B, C, H, W] (or a single [C, H, W] image, treated as B=1).
template <class T>
EncoderOutput<T> encode(const Tensor<T>& images, const EncoderParams<T>& params, const EncoderConfig& config,
                        EncoderTape<T>* tape = nullptr) {
    const bool single = images.rank() == 3;
    const std::size_t batch = single ? 1 : images.dim(0);
    const Shape expect = {config.in_channels, config.in_height, config.in_width};
    const Shape got = single ? images.shape() : Shape(images.shape().begin() + 1, images.shape().end());
    if (images.rank() < 3 || images.rank() > 4 || got != expect) {
        throw ConfigError("encode: input " + shape_str(images.shape()) + " does not match configured " +
                          shape_str(expect));
    }
    if (params.kernels.size() != config.convs.size()) throw ConfigError("encode: params do not match config");

    EncoderTape<T> local_tape;
    EncoderTape<T>& tp = tape ? *tape : local_tape;
    tp.convs.assign(config.convs.size(), {});
    tp.activations.clear();

    Tensor<T> x = images;
    if (single) x.reshape({1, config.in_channels, config.in_height, config.in_width});
    for (std::size_t l = 0; l < config.convs.size(); ++l) {
        const auto& spec = config.convs[l];
        Tensor<T> y = conv2d(x, params.kernels[l], params.biases[l], spec.stride, spec.padding,
                             tape ? &tp.convs[l] : nullptr);
        relu_inplace(y);
        if (tape || l == config.local_layer) tp.activations.push_back(y);
        x = std::move(y);
    }
    const std::size_t flat = x.size() / batch;
    x.reshape({batch, flat});
    EncoderOutput<T> out;
    out.global = linear(x, params.head_weight, params.head_bias);
    out.local = tape ? tp.activations[config.local_layer] : tp.activations.back();
    if (tape) tp.flat = std::move(x);
    if (single) {
        Shape ls(out.local.shape().begin() + 1, out.local.shape().end());
        out.local.reshape(ls);
        out.global.reshape({config.global_width});
    }
    return out;
}

/// Backpropagates dL/dlocal and dL/dglobal (either may be empty) through a
/// taped forward pass, accumulating into the gradient buffers of `params`.
template <class T>
void encode_backward(const EncoderTape<T>& tape, EncoderParams<T>& params, const EncoderConfig& config,
                     const Tensor<T>& grad_local, const Tensor<T>& grad_global) {
    for (auto& [name, t] : params.params()) t->enable_grad();
    const std::size_t layers = config.convs.size();

    Tensor<T> g;  // gradient w.r.t. the current layer's post-ReLU output
    if (!grad_global.empty()) {
        g = linear_backward(tape.flat, params.head_weight, grad_global, params.head_weight.grad(),
                            params.head_bias.grad());
        g.reshape(tape.activations.back().shape());
    }
    for (std::size_t l = layers; l-- > 0;) {
        if (l == config.local_layer && !grad_local.empty()) {
            if (grad_local.size() != tape.activations[l].size()) throw ConfigError("encode_backward: local grad shape");
            if (g.empty()) {
                g = Tensor<T>(tape.activations[l].shape());
            }
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad_local[i];
        }
        if (g.empty()) continue;
        relu_backward_inplace(tape.activations[l], g);
        Tensor<T> gin;
        Tensor<T>* gin_ptr = nullptr;
        if (l > 0) {
            gin = Tensor<T>(tape.activations[l - 1].shape());
            gin_ptr = &gin;
        }
        conv2d_backward(tape.convs[l], params.kernels[l], g, params.kernels[l].grad(), params.biases[l].grad(), gin_ptr);
        g = std::move(gin);
    }
}

}  // namespace mstdim
