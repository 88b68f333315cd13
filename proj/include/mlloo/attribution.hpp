#ifndef MLLOO_ATTRIBUTION_HPP
#define MLLOO_ATTRIBUTION_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mlloo/dispersion.hpp"
#include "mlloo/net.hpp"

namespace mlloo {

enum class MaskGranularity { PerScalar, PerPixelAllChannels };

// How features are erased: each masking position is reset to the reference
// value. PerPixelAllChannels treats one pixel (all channels) as one feature,
// so d = h*w; PerScalar masks single array entries. The two coincide for
// grayscale inputs.
struct MaskSpec {
    double reference_value = 0.0;
    MaskGranularity granularity = MaskGranularity::PerPixelAllChannels;

    void validate() const {
        detail::check(reference_value >= 0.0 && reference_value <= 1.0,
                      "MaskSpec: reference value outside [0,1]");
    }
};

inline std::size_t num_mask_positions(const std::vector<std::size_t>& shape,
                                      MaskGranularity gran) {
    if (gran == MaskGranularity::PerPixelAllChannels) {
        detail::check(shape.size() == 3, "mask: per-pixel granularity needs HWC input");
        return shape[0] * shape[1];
    }
    return Tensor::count(shape);
}

// Overwrite masking position `pos` of `x` (already a working copy) and return
// the values that were replaced so the caller can restore them.
inline void apply_mask(Tensor& x, std::size_t pos, const MaskSpec& spec,
                       std::vector<double>& saved) {
    if (spec.granularity == MaskGranularity::PerPixelAllChannels) {
        const std::size_t c = x.extent(2);
        saved.resize(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
            saved[ch] = x[pos * c + ch];
            x[pos * c + ch] = spec.reference_value;
        }
    } else {
        saved.resize(1);
        saved[0] = x[pos];
        x[pos] = spec.reference_value;
    }
}

inline void undo_mask(Tensor& x, std::size_t pos, const MaskSpec& spec,
                      const std::vector<double>& saved) {
    if (spec.granularity == MaskGranularity::PerPixelAllChannels) {
        const std::size_t c = x.extent(2);
        for (std::size_t ch = 0; ch < c; ++ch) x[pos * c + ch] = saved[ch];
    } else {
        x[pos] = saved[0];
    }
}

// Which neurons feed the multi-layer detector. Entries address flat indices
// into a layer's output tensor; the predicted-class probability is always
// included implicitly as row 0 and is not listed here.
struct LayerSelection {
    std::vector<std::pair<std::size_t, std::vector<std::size_t>>> entries;

    std::size_t total_neurons() const {
        std::size_t m = 1;  // predicted-class probability
        for (const auto& e : entries) m += e.second.size();
        return m;
    }

    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& e : entries) {
            std::uint64_t li = e.first;
            h = fnv1a64(&li, sizeof(li), h);
            for (std::size_t n : e.second) {
                std::uint64_t v = n;
                h = fnv1a64(&v, sizeof(v), h);
            }
        }
        return h;
    }
};

enum class AttributionMethod { LOO, IG };

inline const char* attribution_method_name(AttributionMethod m) {
    return m == AttributionMethod::LOO ? "loo" : "ig";
}

// Per-input-feature attribution for a set of target neurons. Row 0 is always
// the output-layer attribution (the predicted-class probability).
struct AttributionRecord {
    std::string input_id;
    std::size_t num_features = 0;   // d: number of masking positions
    Tensor per_neuron;              // (m, d)
    std::uint64_t selection_hash = 0;
    AttributionMethod method = AttributionMethod::LOO;
};

// Output-layer Leave-One-Out attribution: the drop of the predicted-class
// probability when each feature is masked. Exactly d+1 forward passes; the
// predicted class is fixed from the clean pass.
inline Tensor loo_attribution(const Model& model, const Tensor& x, const MaskSpec& mask) {
    mask.validate();
    LayerActivations clean = forward(model, x);
    const std::size_t cls = static_cast<std::size_t>(clean.predicted_class);
    const double pc = clean.probs[cls];
    const std::size_t d = num_mask_positions(x.shape(), mask.granularity);

    Tensor phi({d});
    Tensor work = x;
    std::vector<double> saved;
    for (std::size_t i = 0; i < d; ++i) {
        apply_mask(work, i, mask, saved);
        LayerActivations acts = forward(model, work);
        phi[i] = pc - acts.probs[cls];
        undo_mask(work, i, mask, saved);
    }
    return phi;
}

namespace detail {

inline void collect_selected(const LayerActivations& acts, const LayerSelection& sel,
                             std::size_t cls, std::vector<double>& out) {
    out.clear();
    out.push_back(acts.probs[cls]);
    for (const auto& e : sel.entries) {
        const Tensor& layer_out = acts.per_layer[e.first];
        for (std::size_t n : e.second) {
            check(n < layer_out.size(), "LayerSelection: neuron index out of range");
            out.push_back(layer_out[n]);
        }
    }
}

} // namespace detail

// Multi-layer LOO: every selected neuron's attribution is read off the same
// d+1 forward passes used for the output layer, so the query count does not
// grow with the number of neurons.
inline AttributionRecord ml_loo_attribution(const Model& model, const Tensor& x,
                                            const LayerSelection& selection,
                                            const MaskSpec& mask,
                                            const std::string& input_id = "") {
    mask.validate();
    for (const auto& e : selection.entries)
        detail::check(e.first < model.layers().size(), "LayerSelection: layer index out of range");

    LayerActivations clean = forward(model, x);
    const std::size_t cls = static_cast<std::size_t>(clean.predicted_class);
    const std::size_t d = num_mask_positions(x.shape(), mask.granularity);
    const std::size_t m = selection.total_neurons();

    std::vector<double> clean_vals, masked_vals;
    detail::collect_selected(clean, selection, cls, clean_vals);

    AttributionRecord rec;
    rec.input_id = input_id;
    rec.num_features = d;
    rec.per_neuron = Tensor({m, d});
    rec.selection_hash = selection.hash();
    rec.method = AttributionMethod::LOO;

    Tensor work = x;
    std::vector<double> saved;
    for (std::size_t i = 0; i < d; ++i) {
        apply_mask(work, i, mask, saved);
        LayerActivations acts = forward(model, work);
        detail::collect_selected(acts, selection, cls, masked_vals);
        for (std::size_t r = 0; r < m; ++r) rec.per_neuron.at(r, i) = clean_vals[r] - masked_vals[r];
        undo_mask(work, i, mask, saved);
    }
    return rec;
}

// Right-endpoint Riemann quadrature of the path integral; exact for any
// step count when grad_at is constant (linear score functions).
template <typename GradFn>
Tensor integrated_gradients_core(const Tensor& x, const Tensor& baseline, std::size_t steps,
                                 GradFn&& grad_at) {
    detail::check(baseline.same_shape(x), "integrated_gradients: baseline shape mismatch");
    detail::check(steps >= 1, "integrated_gradients: steps must be >= 1");
    const std::size_t n = x.size();
    std::vector<double> accum(n, 0.0);
    Tensor point(x.shape());
    for (std::size_t k = 1; k <= steps; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps);
        for (std::size_t i = 0; i < n; ++i) point[i] = baseline[i] + t * (x[i] - baseline[i]);
        Tensor g = grad_at(point);
        for (std::size_t i = 0; i < n; ++i) accum[i] += g[i];
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < n; ++i)
        out[i] = (x[i] - baseline[i]) * accum[i] / static_cast<double>(steps);
    return out;
}

// Integrated Gradients of the clean-pass class probability along the straight
// path from baseline to x. Returns one score per masking position (channels
// summed for per-pixel granularity).
inline Tensor integrated_gradients(const Model& model, const Tensor& x, const Tensor& baseline,
                                   std::size_t steps,
                                   MaskGranularity gran = MaskGranularity::PerScalar) {
    LayerActivations clean = forward(model, x);
    const std::size_t cls = static_cast<std::size_t>(clean.predicted_class);
    Tensor ig = integrated_gradients_core(x, baseline, steps, [&](const Tensor& point) {
        return probability_input_gradient(model, point, cls);
    });
    const std::vector<double>& scalar = ig.values();

    if (gran == MaskGranularity::PerPixelAllChannels) {
        detail::check(x.rank() == 3, "integrated_gradients: per-pixel granularity needs HWC");
        const std::size_t d = x.extent(0) * x.extent(1), c = x.extent(2);
        Tensor out({d});
        for (std::size_t p = 0; p < d; ++p) {
            double s = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) s += scalar[p * c + ch];
            out[p] = s;
        }
        return out;
    }
    return ig.reshaped({ig.size()});
}

// Deterministic neuron selection: every relu layer contributes either all of
// its neurons (width <= cap) or the `cap` neurons with the highest activation
// variance over the calibration set, ties toward the lower index.
inline LayerSelection select_layers(const Model& model, const std::vector<Tensor>& calibration,
                                    std::size_t per_layer_cap, std::uint64_t /*seed*/ = 0) {
    detail::check(!calibration.empty(), "select_layers: empty calibration set");

    std::vector<std::size_t> relu_layers;
    for (std::size_t li = 0; li < model.layers().size(); ++li)
        if (model.layers()[li].kind == LayerKind::Relu) relu_layers.push_back(li);

    // Accumulate activation moments per relu layer.
    std::vector<std::vector<double>> sum(relu_layers.size()), sumsq(relu_layers.size());
    for (std::size_t r = 0; r < relu_layers.size(); ++r) {
        const std::size_t width = Tensor::count(model.layer_output_shapes()[relu_layers[r]]);
        sum[r].assign(width, 0.0);
        sumsq[r].assign(width, 0.0);
    }
    for (const Tensor& x : calibration) {
        LayerActivations acts = forward(model, x);
        for (std::size_t r = 0; r < relu_layers.size(); ++r) {
            const Tensor& out = acts.per_layer[relu_layers[r]];
            for (std::size_t i = 0; i < out.size(); ++i) {
                sum[r][i] += out[i];
                sumsq[r][i] += out[i] * out[i];
            }
        }
    }

    const double n = static_cast<double>(calibration.size());
    LayerSelection sel;
    for (std::size_t r = 0; r < relu_layers.size(); ++r) {
        const std::size_t width = sum[r].size();
        std::vector<std::size_t> chosen;
        if (width <= per_layer_cap) {
            chosen.resize(width);
            for (std::size_t i = 0; i < width; ++i) chosen[i] = i;
        } else {
            std::vector<std::pair<double, std::size_t>> ranked(width);
            for (std::size_t i = 0; i < width; ++i) {
                const double mean = sum[r][i] / n;
                ranked[i] = {sumsq[r][i] / n - mean * mean, i};
            }
            std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            chosen.resize(per_layer_cap);
            for (std::size_t i = 0; i < per_layer_cap; ++i) chosen[i] = ranked[i].second;
            std::sort(chosen.begin(), chosen.end());
        }
        sel.entries.emplace_back(relu_layers[r], std::move(chosen));
    }
    return sel;
}

// Reduce an attribution record to one dispersion scalar per neuron row.
inline DispersionFeatures feature_vector(const AttributionRecord& rec, StatKind kind) {
    const std::size_t m = rec.per_neuron.extent(0), d = rec.per_neuron.extent(1);
    DispersionFeatures f;
    f.input_id = rec.input_id;
    f.stat_kind = kind;
    f.selection_hash = rec.selection_hash;
    f.values.resize(m);
    std::vector<double> row(d);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t i = 0; i < d; ++i) row[i] = rec.per_neuron.at(r, i);
        f.values[r] = dispersion(row, kind);
    }
    return f;
}

} // namespace mlloo

#endif // MLLOO_ATTRIBUTION_HPP
