#ifndef MLLOO_NET_HPP
#define MLLOO_NET_HPP

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mlloo/rng.hpp"
#include "mlloo/tensor.hpp"

namespace mlloo {

enum class LayerKind { Conv, MaxPool2x2, Relu, Flatten, Dense, Softmax };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::MaxPool2x2: return "maxpool2x2";
        case LayerKind::Relu: return "relu";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Dense: return "dense";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

// Tagged layer descriptor; parameter tensors are empty for layers without
// parameters. Dense weights are (out, in) so logits = W x + b.
struct Layer {
    LayerKind kind;
    Tensor kernels;   // Conv: (kh, kw, cin, cout)
    Tensor weights;   // Dense: (out, in)
    Tensor bias;      // Conv / Dense
    std::size_t stride = 1;
    Padding padding = Padding::Same;

    static Layer conv(Tensor kernels, Tensor bias, std::size_t stride, Padding padding) {
        Layer l{LayerKind::Conv};
        l.kernels = std::move(kernels);
        l.bias = std::move(bias);
        l.stride = stride;
        l.padding = padding;
        return l;
    }
    static Layer maxpool() { return Layer{LayerKind::MaxPool2x2}; }
    static Layer relu() { return Layer{LayerKind::Relu}; }
    static Layer flatten() { return Layer{LayerKind::Flatten}; }
    static Layer dense(Tensor weights, Tensor bias) {
        Layer l{LayerKind::Dense};
        l.weights = std::move(weights);
        l.bias = std::move(bias);
        return l;
    }
    static Layer softmax() { return Layer{LayerKind::Softmax}; }

    bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
};

struct ModelCounters {
    std::atomic<long long> forward_passes{0};
    std::atomic<long long> gradient_calls{0};
};

// Immutable feed-forward classifier. Layer shapes are validated once at
// construction; the last two layers must be Dense(C) then Softmax.
class Model {
public:
    Model() = default;

    Model(std::vector<std::size_t> input_shape, std::vector<Layer> layers)
        : input_shape_(std::move(input_shape)),
          layers_(std::move(layers)),
          counters_(std::make_shared<ModelCounters>()) {
        validate_shapes();
    }

    const std::vector<std::size_t>& input_shape() const { return input_shape_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& mutable_layers() { return layers_; }  // training/loading only
    std::size_t num_classes() const { return num_classes_; }
    const std::vector<std::vector<std::size_t>>& layer_output_shapes() const { return output_shapes_; }

    ModelCounters& counters() const { return *counters_; }

    void revalidate() { validate_shapes(); }

private:
    void validate_shapes() {
        detail::check(!layers_.empty(), "Model: no layers");
        detail::check(!input_shape_.empty(), "Model: empty input shape");
        output_shapes_.clear();
        std::vector<std::size_t> cur = input_shape_;
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            const Layer& l = layers_[li];
            switch (l.kind) {
                case LayerKind::Conv: {
                    detail::check(cur.size() == 3, "Model: conv input must be HWC");
                    detail::check(l.kernels.rank() == 4, "Model: conv kernels must be rank-4");
                    detail::check(l.kernels.extent(2) == cur[2],
                                  "Model: conv kernel channels != input channels");
                    detail::check(l.bias.rank() == 1 && l.bias.extent(0) == l.kernels.extent(3),
                                  "Model: conv bias size mismatch");
                    detail::check(l.stride > 0, "Model: conv stride must be positive");
                    cur = {conv_out_extent(cur[0], l.kernels.extent(0), l.stride, l.padding),
                           conv_out_extent(cur[1], l.kernels.extent(1), l.stride, l.padding),
                           l.kernels.extent(3)};
                    break;
                }
                case LayerKind::MaxPool2x2:
                    detail::check(cur.size() == 3, "Model: maxpool input must be HWC");
                    detail::check(cur[0] % 2 == 0 && cur[1] % 2 == 0,
                                  "Model: maxpool needs even spatial extents");
                    cur = {cur[0] / 2, cur[1] / 2, cur[2]};
                    break;
                case LayerKind::Relu:
                    break;
                case LayerKind::Flatten:
                    cur = {Tensor::count(cur)};
                    break;
                case LayerKind::Dense:
                    detail::check(cur.size() == 1, "Model: dense input must be flat");
                    detail::check(l.weights.rank() == 2 && l.weights.extent(1) == cur[0],
                                  "Model: dense weight columns != input size");
                    detail::check(l.bias.rank() == 1 && l.bias.extent(0) == l.weights.extent(0),
                                  "Model: dense bias size mismatch");
                    cur = {l.weights.extent(0)};
                    break;
                case LayerKind::Softmax:
                    detail::check(cur.size() == 1, "Model: softmax input must be flat");
                    detail::check(li + 1 == layers_.size(), "Model: softmax must be the final layer");
                    detail::check(li >= 1 && layers_[li - 1].kind == LayerKind::Dense,
                                  "Model: softmax must follow a dense layer");
                    break;
            }
            output_shapes_.push_back(cur);
        }
        detail::check(layers_.back().kind == LayerKind::Softmax,
                      "Model: final layer must be softmax");
        num_classes_ = cur[0];
    }

    std::vector<std::size_t> input_shape_;
    std::vector<Layer> layers_;
    std::vector<std::vector<std::size_t>> output_shapes_;
    std::size_t num_classes_ = 0;
    std::shared_ptr<ModelCounters> counters_;
};

// Outputs of every layer for one forward pass.
struct LayerActivations {
    std::vector<Tensor> per_layer;
    std::vector<std::vector<std::size_t>> pool_argmax;  // parallel to per_layer; empty unless pool
    Tensor logits;
    Tensor probs;
    int predicted_class = -1;
};

namespace detail {

inline void matvec(const double* w, const double* x, const double* b, double* y,
                   std::size_t out, std::size_t in) {
    for (std::size_t i = 0; i < out; ++i) {
        const double* row = w + i * in;
        double s = b ? b[i] : 0.0;
        for (std::size_t j = 0; j < in; ++j) s += row[j] * x[j];
        y[i] = s;
    }
}

// y += W^T g, with W stored (out, in).
inline void matvec_transposed_accum(const double* w, const double* g, double* y,
                                    std::size_t out, std::size_t in) {
    for (std::size_t i = 0; i < out; ++i) {
        const double gv = g[i];
        if (gv == 0.0) continue;
        const double* row = w + i * in;
        for (std::size_t j = 0; j < in; ++j) y[j] += gv * row[j];
    }
}

} // namespace detail

inline LayerActivations forward(const Model& model, const Tensor& x) {
    detail::check(x.shape() == model.input_shape(), "forward: input shape mismatch");
    model.counters().forward_passes.fetch_add(1, std::memory_order_relaxed);

    LayerActivations acts;
    const auto& layers = model.layers();
    acts.per_layer.reserve(layers.size());
    acts.pool_argmax.resize(layers.size());

    const Tensor* cur = &x;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const Layer& l = layers[li];
        switch (l.kind) {
            case LayerKind::Conv:
                acts.per_layer.push_back(conv2d(*cur, l.kernels, l.bias, l.stride, l.padding));
                break;
            case LayerKind::MaxPool2x2: {
                PoolResult pr = maxpool2x2(*cur);
                acts.per_layer.push_back(std::move(pr.output));
                acts.pool_argmax[li] = std::move(pr.argmax);
                break;
            }
            case LayerKind::Relu: {
                Tensor t = *cur;
                for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
                acts.per_layer.push_back(std::move(t));
                break;
            }
            case LayerKind::Flatten:
                acts.per_layer.push_back(cur->reshaped({cur->size()}));
                break;
            case LayerKind::Dense: {
                Tensor y({l.weights.extent(0)});
                detail::matvec(l.weights.data(), cur->data(), l.bias.data(), y.data(),
                               l.weights.extent(0), l.weights.extent(1));
                acts.per_layer.push_back(std::move(y));
                break;
            }
            case LayerKind::Softmax:
                acts.per_layer.push_back(softmax(*cur));
                break;
        }
        cur = &acts.per_layer.back();
        detail::check(cur->all_finite(), std::string("forward: non-finite values after layer ") +
                                             layer_kind_name(l.kind));
    }
    acts.logits = acts.per_layer[layers.size() - 2];
    acts.probs = acts.per_layer.back();
    acts.predicted_class = static_cast<int>(argmax_index(acts.probs));
    return acts;
}

// Loss definitions used by training and the gradient-based attacks.
// Cross-entropy is evaluated from logits with log-sum-exp.
struct LossSpec {
    enum class Kind { CrossEntropy, LogitMargin };
    Kind kind = Kind::CrossEntropy;
    int label = -1;         // cross-entropy target
    int source_class = -1;  // margin: class whose logit should fall
    int target_class = -1;  // margin: -1 selects the best other class
    double offset = 0.0;    // margin: confidence offset

    static LossSpec cross_entropy(int y) {
        LossSpec s;
        s.kind = Kind::CrossEntropy;
        s.label = y;
        return s;
    }
    static LossSpec logit_margin(int source, int target, double offset) {
        LossSpec s;
        s.kind = Kind::LogitMargin;
        s.source_class = source;
        s.target_class = target;
        s.offset = offset;
        return s;
    }
};

struct LossEval {
    double value = 0.0;
    std::vector<double> dlogits;
};

inline LossEval evaluate_loss(const LayerActivations& acts, const LossSpec& loss) {
    const Tensor& z = acts.logits;
    const std::size_t c = z.size();
    LossEval ev;
    ev.dlogits.assign(c, 0.0);
    if (loss.kind == LossSpec::Kind::CrossEntropy) {
        detail::check(loss.label >= 0 && static_cast<std::size_t>(loss.label) < c,
                      "loss: label out of range");
        double mx = z[0];
        for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, z[i]);
        double sum = 0.0;
        for (std::size_t i = 0; i < c; ++i) sum += std::exp(z[i] - mx);
        ev.value = mx + std::log(sum) - z[static_cast<std::size_t>(loss.label)];
        for (std::size_t i = 0; i < c; ++i) ev.dlogits[i] = acts.probs[i];
        ev.dlogits[static_cast<std::size_t>(loss.label)] -= 1.0;
    } else {
        const std::size_t src = static_cast<std::size_t>(loss.source_class);
        detail::check(src < c, "loss: source class out of range");
        std::size_t other = 0;
        if (loss.target_class >= 0) {
            other = static_cast<std::size_t>(loss.target_class);
            detail::check(other < c && other != src, "loss: bad margin target");
        } else {
            bool seen = false;
            for (std::size_t j = 0; j < c; ++j) {
                if (j == src) continue;
                if (!seen || z[j] > z[other]) {
                    other = j;
                    seen = true;
                }
            }
            detail::check(seen, "loss: margin needs at least two classes");
        }
        const double v = z[src] - z[other] + loss.offset;
        if (v > 0.0) {
            ev.value = v;
            ev.dlogits[src] = 1.0;
            ev.dlogits[other] = -1.0;
        }
    }
    return ev;
}

// Per-layer parameter gradient buffers for training.
struct ParamGrads {
    std::vector<Tensor> weight_g;  // kernels or dense weights, per layer (empty otherwise)
    std::vector<Tensor> bias_g;
};

inline ParamGrads make_param_grads(const Model& model) {
    ParamGrads g;
    g.weight_g.resize(model.layers().size());
    g.bias_g.resize(model.layers().size());
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const Layer& l = model.layers()[i];
        if (l.kind == LayerKind::Conv) {
            g.weight_g[i] = Tensor(l.kernels.shape());
            g.bias_g[i] = Tensor(l.bias.shape());
        } else if (l.kind == LayerKind::Dense) {
            g.weight_g[i] = Tensor(l.weights.shape());
            g.bias_g[i] = Tensor(l.bias.shape());
        }
    }
    return g;
}

namespace detail {

inline Tensor conv2d_backward_input(const Tensor& gout, const Tensor& kernels,
                                    const std::vector<std::size_t>& in_shape,
                                    std::size_t stride, Padding pad) {
    const std::size_t h = in_shape[0], w = in_shape[1], cin = in_shape[2];
    const std::size_t kh = kernels.extent(0), kw = kernels.extent(1), cout = kernels.extent(3);
    const std::size_t oh = gout.extent(0), ow = gout.extent(1);
    std::ptrdiff_t pad_top = 0, pad_left = 0;
    if (pad == Padding::Same) {
        const std::size_t need_h = (oh - 1) * stride + kh;
        const std::size_t need_w = (ow - 1) * stride + kw;
        pad_top = static_cast<std::ptrdiff_t>(need_h > h ? (need_h - h) / 2 : 0);
        pad_left = static_cast<std::ptrdiff_t>(need_w > w ? (need_w - w) / 2 : 0);
    }
    Tensor gin({h, w, cin});
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const double* gpix = gout.data() + (oy * ow + ox) * cout;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_top;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad_left;
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                    double* ipix = gin.data() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
                    const double* kbase = kernels.data() + ((ky * kw + kx) * cin) * cout;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double* krow = kbase + ci * cout;
                        double s = 0.0;
                        for (std::size_t co = 0; co < cout; ++co) s += gpix[co] * krow[co];
                        ipix[ci] += s;
                    }
                }
            }
        }
    }
    return gin;
}

inline void conv2d_backward_params(const Tensor& gout, const Tensor& input,
                                   const Tensor& kernels, std::size_t stride, Padding pad,
                                   Tensor& gkernels, Tensor& gbias) {
    const std::size_t h = input.extent(0), w = input.extent(1), cin = input.extent(2);
    const std::size_t kh = kernels.extent(0), kw = kernels.extent(1), cout = kernels.extent(3);
    const std::size_t oh = gout.extent(0), ow = gout.extent(1);
    std::ptrdiff_t pad_top = 0, pad_left = 0;
    if (pad == Padding::Same) {
        const std::size_t need_h = (oh - 1) * stride + kh;
        const std::size_t need_w = (ow - 1) * stride + kw;
        pad_top = static_cast<std::ptrdiff_t>(need_h > h ? (need_h - h) / 2 : 0);
        pad_left = static_cast<std::ptrdiff_t>(need_w > w ? (need_w - w) / 2 : 0);
    }
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const double* gpix = gout.data() + (oy * ow + ox) * cout;
            for (std::size_t co = 0; co < cout; ++co) gbias[co] += gpix[co];
            for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_top;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad_left;
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                    const double* ipix = input.data() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
                    double* kbase = gkernels.data() + ((ky * kw + kx) * cin) * cout;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double iv = ipix[ci];
                        double* krow = kbase + ci * cout;
                        for (std::size_t co = 0; co < cout; ++co) krow[co] += iv * gpix[co];
                    }
                }
            }
        }
    }
}

} // namespace detail

// Backpropagate a gradient seeded at the logits down to the input.
// Pool gradients route through the recorded argmax; relu gates on strict
// positivity. When `param_grads` is given, parameter gradients accumulate
// into it (used by training).
inline Tensor backward_from_logits(const Model& model, const Tensor& x,
                                   const LayerActivations& acts,
                                   const std::vector<double>& dlogits,
                                   ParamGrads* param_grads = nullptr) {
    model.counters().gradient_calls.fetch_add(1, std::memory_order_relaxed);
    const auto& layers = model.layers();
    const std::size_t last = layers.size() - 1;  // softmax index
    detail::check(dlogits.size() == acts.logits.size(), "backward: dlogits size mismatch");

    Tensor grad({acts.logits.size()}, std::vector<double>(dlogits));
    // Walk from the dense layer that produced the logits down to the input.
    for (std::size_t li = last - 1; li != static_cast<std::size_t>(-1); --li) {
        const Layer& l = layers[li];
        const Tensor& layer_in = (li == 0) ? x : acts.per_layer[li - 1];
        switch (l.kind) {
            case LayerKind::Dense: {
                if (param_grads) {
                    Tensor& gw = param_grads->weight_g[li];
                    Tensor& gb = param_grads->bias_g[li];
                    const std::size_t out = l.weights.extent(0), in = l.weights.extent(1);
                    for (std::size_t i = 0; i < out; ++i) {
                        const double gv = grad[i];
                        gb[i] += gv;
                        if (gv == 0.0) continue;
                        double* grow = gw.data() + i * in;
                        const double* xv = layer_in.data();
                        for (std::size_t j = 0; j < in; ++j) grow[j] += gv * xv[j];
                    }
                }
                Tensor gin({l.weights.extent(1)});
                detail::matvec_transposed_accum(l.weights.data(), grad.data(), gin.data(),
                                                l.weights.extent(0), l.weights.extent(1));
                grad = std::move(gin);
                break;
            }
            case LayerKind::Relu: {
                const Tensor& out = acts.per_layer[li];
                for (std::size_t i = 0; i < grad.size(); ++i)
                    if (!(out[i] > 0.0)) grad[i] = 0.0;
                break;
            }
            case LayerKind::Flatten:
                grad = grad.reshaped(layer_in.shape());
                break;
            case LayerKind::MaxPool2x2: {
                Tensor gin(layer_in.shape());
                const auto& idx = acts.pool_argmax[li];
                for (std::size_t i = 0; i < grad.size(); ++i) gin[idx[i]] += grad[i];
                grad = std::move(gin);
                break;
            }
            case LayerKind::Conv: {
                if (param_grads)
                    detail::conv2d_backward_params(grad, layer_in, l.kernels, l.stride, l.padding,
                                                   param_grads->weight_g[li],
                                                   param_grads->bias_g[li]);
                grad = detail::conv2d_backward_input(grad, l.kernels, layer_in.shape(), l.stride,
                                                     l.padding);
                break;
            }
            case LayerKind::Softmax:
                detail::fail("backward: softmax below the logits");
        }
    }
    return grad;
}

// Gradient of the given loss with respect to the input, same shape as x.
inline Tensor input_gradient(const Model& model, const Tensor& x, const LossSpec& loss) {
    LayerActivations acts = forward(model, x);
    LossEval ev = evaluate_loss(acts, loss);
    return backward_from_logits(model, x, acts, ev.dlogits);
}

// Gradient of the softmax probability of `cls` with respect to the input.
inline Tensor probability_input_gradient(const Model& model, const Tensor& x, std::size_t cls) {
    LayerActivations acts = forward(model, x);
    const std::size_t c = acts.probs.size();
    detail::check(cls < c, "probability_input_gradient: class out of range");
    std::vector<double> seed(c, 0.0);
    const double pc = acts.probs[cls];
    for (std::size_t j = 0; j < c; ++j) seed[j] = pc * ((j == cls ? 1.0 : 0.0) - acts.probs[j]);
    return backward_from_logits(model, x, acts, seed);
}

// Row j is the gradient of logit j with respect to x: C backward passes
// sharing a single forward pass.
inline Tensor logit_jacobian(const Model& model, const Tensor& x) {
    LayerActivations acts = forward(model, x);
    const std::size_t c = acts.logits.size(), d = x.size();
    Tensor jac({c, d});
    std::vector<double> seed(c, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
        seed.assign(c, 0.0);
        seed[j] = 1.0;
        Tensor g = backward_from_logits(model, x, acts, seed);
        for (std::size_t i = 0; i < d; ++i) jac.at(j, i) = g[i];
    }
    return jac;
}

inline long long count_forward_passes(const Model& model) {
    return model.counters().forward_passes.load(std::memory_order_relaxed);
}

inline long long count_gradient_calls(const Model& model) {
    return model.counters().gradient_calls.load(std::memory_order_relaxed);
}

inline void reset_counters(const Model& model) {
    model.counters().forward_passes.store(0, std::memory_order_relaxed);
    model.counters().gradient_calls.store(0, std::memory_order_relaxed);
}

// ---------------------------------------------------------------------------
// Architecture registry and training.

struct ArchConfig {
    std::string name = "mnist_cnn";  // "mnist_cnn" or "tiny_mlp"
    std::size_t input_h = 28, input_w = 28, input_c = 1;
    std::size_t num_classes = 10;
    std::size_t conv_blocks = 2;
    std::size_t conv_filters = 32;
    std::size_t conv_kernel = 3;
    std::size_t dense_units = 1024;
    std::size_t hidden_units = 32;  // tiny_mlp only
};

inline Model build_model(const ArchConfig& arch, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x6d6f64656cull));
    auto he_uniform = [&rng](Tensor& t, std::size_t fan_in) {
        const double lim = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& v : t.values()) v = rng.uniform(-lim, lim);
    };

    std::vector<Layer> layers;
    std::vector<std::size_t> shape = {arch.input_h, arch.input_w, arch.input_c};
    if (arch.name == "mnist_cnn") {
        std::size_t cin = arch.input_c;
        for (std::size_t b = 0; b < arch.conv_blocks; ++b) {
            Tensor k({arch.conv_kernel, arch.conv_kernel, cin, arch.conv_filters});
            he_uniform(k, arch.conv_kernel * arch.conv_kernel * cin);
            layers.push_back(Layer::conv(std::move(k), Tensor({arch.conv_filters}), 1, Padding::Same));
            layers.push_back(Layer::relu());
            layers.push_back(Layer::maxpool());
            cin = arch.conv_filters;
            shape = {shape[0] / 2, shape[1] / 2, cin};
        }
        layers.push_back(Layer::flatten());
        const std::size_t flat = Tensor::count(shape);
        Tensor w1({arch.dense_units, flat});
        he_uniform(w1, flat);
        layers.push_back(Layer::dense(std::move(w1), Tensor({arch.dense_units})));
        layers.push_back(Layer::relu());
        Tensor w2({arch.num_classes, arch.dense_units});
        he_uniform(w2, arch.dense_units);
        layers.push_back(Layer::dense(std::move(w2), Tensor({arch.num_classes})));
        layers.push_back(Layer::softmax());
    } else if (arch.name == "tiny_mlp") {
        layers.push_back(Layer::flatten());
        const std::size_t flat = arch.input_h * arch.input_w * arch.input_c;
        if (arch.hidden_units > 0) {
            Tensor w1({arch.hidden_units, flat});
            he_uniform(w1, flat);
            layers.push_back(Layer::dense(std::move(w1), Tensor({arch.hidden_units})));
            layers.push_back(Layer::relu());
            Tensor w2({arch.num_classes, arch.hidden_units});
            he_uniform(w2, arch.hidden_units);
            layers.push_back(Layer::dense(std::move(w2), Tensor({arch.num_classes})));
        } else {
            Tensor w({arch.num_classes, flat});
            he_uniform(w, flat);
            layers.push_back(Layer::dense(std::move(w), Tensor({arch.num_classes})));
        }
        layers.push_back(Layer::softmax());
    } else {
        detail::fail("build_model: unknown architecture '" + arch.name + "'");
    }
    return Model({arch.input_h, arch.input_w, arch.input_c}, std::move(layers));
}

struct TrainHyperparams {
    double lr = 0.05;
    std::size_t batch = 32;
    std::size_t epochs = 5;
    std::uint64_t seed = 1;
};

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    Model model;
    std::vector<EpochStats> log;
};

// Plain mini-batch SGD with a constant learning rate. Single-threaded and
// fully determined by the seed.
inline TrainResult train_classifier(const std::vector<Tensor>& images,
                                    const std::vector<int>& labels, const ArchConfig& arch,
                                    const TrainHyperparams& hp) {
    detail::check(!images.empty(), "train_classifier: empty dataset");
    detail::check(images.size() == labels.size(), "train_classifier: image/label count mismatch");
    for (int y : labels)
        detail::check(y >= 0 && static_cast<std::size_t>(y) < arch.num_classes,
                      "train_classifier: label out of range");

    TrainResult result{build_model(arch, hp.seed), {}};
    Model& model = result.model;
    const std::size_t n = images.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(hp.seed, 0x65706f6368ull + epoch));
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i));
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0.0;
        std::size_t correct = 0;
        ParamGrads grads = make_param_grads(model);
        for (std::size_t start = 0; start < n; start += hp.batch) {
            const std::size_t end = std::min(n, start + hp.batch);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (Tensor& g : grads.weight_g)
                if (g.size()) std::fill(g.values().begin(), g.values().end(), 0.0);
            for (Tensor& g : grads.bias_g)
                if (g.size()) std::fill(g.values().begin(), g.values().end(), 0.0);

            for (std::size_t bi = start; bi < end; ++bi) {
                const std::size_t idx = order[bi];
                LayerActivations acts = forward(model, images[idx]);
                LossEval ev = evaluate_loss(acts, LossSpec::cross_entropy(labels[idx]));
                if (!std::isfinite(ev.value))
                    throw std::runtime_error("train_classifier: loss diverged at epoch " +
                                             std::to_string(epoch) + ", sample " +
                                             std::to_string(idx));
                loss_sum += ev.value;
                if (acts.predicted_class == labels[idx]) ++correct;
                for (double& g : ev.dlogits) g *= inv;
                backward_from_logits(model, images[idx], acts, ev.dlogits, &grads);
            }

            for (std::size_t li = 0; li < model.layers().size(); ++li) {
                Layer& l = model.mutable_layers()[li];
                if (l.kind == LayerKind::Conv) {
                    for (std::size_t i = 0; i < l.kernels.size(); ++i)
                        l.kernels[i] -= hp.lr * grads.weight_g[li][i];
                    for (std::size_t i = 0; i < l.bias.size(); ++i)
                        l.bias[i] -= hp.lr * grads.bias_g[li][i];
                } else if (l.kind == LayerKind::Dense) {
                    for (std::size_t i = 0; i < l.weights.size(); ++i)
                        l.weights[i] -= hp.lr * grads.weight_g[li][i];
                    for (std::size_t i = 0; i < l.bias.size(); ++i)
                        l.bias[i] -= hp.lr * grads.bias_g[li][i];
                }
            }
        }
        result.log.push_back({loss_sum / static_cast<double>(n),
                              static_cast<double>(correct) / static_cast<double>(n)});
    }
    return result;
}

inline double classification_accuracy(const Model& model, const std::vector<Tensor>& images,
                                      const std::vector<int>& labels) {
    detail::check(!images.empty() && images.size() == labels.size(),
                  "classification_accuracy: bad dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < images.size(); ++i)
        if (forward(model, images[i]).predicted_class == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(images.size());
}

} // namespace mlloo

#endif // MLLOO_NET_HPP
