#ifndef MLLOO_TENSOR_HPP
#define MLLOO_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlloo {

namespace detail {

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::invalid_argument(msg);
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

} // namespace detail

// Dense n-dimensional array of doubles, row-major. Images are stored HWC.
// All public numeric kernels in this header reject non-finite results
// rather than letting them propagate.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill) {
        detail::check(!shape_.empty(), "Tensor: empty shape");
        for (std::size_t e : shape_) detail::check(e > 0, "Tensor: zero extent");
    }

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        detail::check(!shape_.empty(), "Tensor: empty shape");
        for (std::size_t e : shape_) detail::check(e > 0, "Tensor: zero extent");
        detail::check(count(shape_) == data_.size(), "Tensor: shape/data size mismatch");
        for (double v : data_)
            detail::check(std::isfinite(v), "Tensor: non-finite value on construction");
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return n;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t i) const { return shape_.at(i); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Rank-2 accessors.
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    // Rank-3 (HWC) accessors.
    double& at(std::size_t y, std::size_t x, std::size_t ch) {
        return data_[(y * shape_[1] + x) * shape_[2] + ch];
    }
    double at(std::size_t y, std::size_t x, std::size_t ch) const {
        return data_[(y * shape_[1] + x) * shape_[2] + ch];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        detail::check(count(new_shape) == data_.size(), "reshape: element count changed");
        Tensor t;
        t.shape_ = std::move(new_shape);
        t.data_ = data_;
        return t;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

enum class Padding { Valid, Same };

// Standard matrix product of two rank-2 tensors.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
    detail::check(a.extent(1) == b.extent(0), "matmul: inner dimensions disagree");
    const std::size_t n = a.extent(0), k = a.extent(1), m = b.extent(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.data() + i * k;
        double* orow = out.data() + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b.data() + kk * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    detail::check(out.all_finite(), "matmul: non-finite result");
    return out;
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding pad) {
    if (pad == Padding::Same) return (in + stride - 1) / stride;
    detail::check(in >= k, "conv2d: kernel larger than input");
    return (in - k) / stride + 1;
}

// Cross-correlation (no kernel flip) of an HWC input with a (kh, kw, cin, cout)
// kernel stack plus per-channel bias. Padding::Same pads with zeros, split
// evenly with the extra row/column at the bottom/right.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                     std::size_t stride, Padding pad) {
    detail::check(stride > 0, "conv2d: stride must be positive");
    detail::check(input.rank() == 3, "conv2d: input must be HWC");
    detail::check(kernels.rank() == 4, "conv2d: kernels must be (kh,kw,cin,cout)");
    const std::size_t h = input.extent(0), w = input.extent(1), cin = input.extent(2);
    const std::size_t kh = kernels.extent(0), kw = kernels.extent(1);
    const std::size_t kcin = kernels.extent(2), cout = kernels.extent(3);
    detail::check(kcin == cin, "conv2d: kernel channel count != input channels");
    detail::check(bias.rank() == 1 && bias.extent(0) == cout, "conv2d: bias size != cout");

    const std::size_t oh = conv_out_extent(h, kh, stride, pad);
    const std::size_t ow = conv_out_extent(w, kw, stride, pad);
    std::ptrdiff_t pad_top = 0, pad_left = 0;
    if (pad == Padding::Same) {
        const std::size_t need_h = (oh - 1) * stride + kh;
        const std::size_t need_w = (ow - 1) * stride + kw;
        pad_top = static_cast<std::ptrdiff_t>(need_h > h ? (need_h - h) / 2 : 0);
        pad_left = static_cast<std::ptrdiff_t>(need_w > w ? (need_w - w) / 2 : 0);
    }

    Tensor out({oh, ow, cout});
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            double* opix = out.data() + (oy * ow + ox) * cout;
            for (std::size_t co = 0; co < cout; ++co) opix[co] = bias[co];
            for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_top;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad_left;
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                    const double* ipix = input.data() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
                    const double* kbase = kernels.data() + ((ky * kw + kx) * cin) * cout;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double iv = ipix[ci];
                        const double* krow = kbase + ci * cout;
                        for (std::size_t co = 0; co < cout; ++co) opix[co] += iv * krow[co];
                    }
                }
            }
        }
    }
    detail::check(out.all_finite(), "conv2d: non-finite result");
    return out;
}

struct PoolResult {
    Tensor output;
    // Flat input index of the winning element per output element, recorded so
    // backprop can route gradients to the argmax.
    std::vector<std::size_t> argmax;
};

// Channelwise 2x2 max pooling with stride 2. Ties go to the first element in
// row-major window order.
inline PoolResult maxpool2x2(const Tensor& input) {
    detail::check(input.rank() == 3, "maxpool2x2: input must be HWC");
    const std::size_t h = input.extent(0), w = input.extent(1), c = input.extent(2);
    detail::check(h % 2 == 0 && w % 2 == 0, "maxpool2x2: spatial extents must be even");
    const std::size_t oh = h / 2, ow = w / 2;
    PoolResult res{Tensor({oh, ow, c}), std::vector<std::size_t>(oh * ow * c)};
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = ((oy * 2 + dy) * w + (ox * 2 + dx)) * c + ch;
                        if (input[idx] > best) {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t o = (oy * ow + ox) * c + ch;
                res.output[o] = best;
                res.argmax[o] = best_idx;
            }
        }
    }
    return res;
}

// Numerically stable softmax of a rank-1 tensor.
inline Tensor softmax(const Tensor& logits) {
    detail::check(logits.rank() == 1 && logits.size() > 0, "softmax: need nonempty rank-1 input");
    detail::check(logits.all_finite(), "softmax: non-finite input");
    double mx = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
    Tensor out({logits.size()});
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= sum;
    return out;
}

// Elementwise clamp to [lo, hi]; idempotent.
inline Tensor clip(const Tensor& x, double lo, double hi) {
    detail::check(lo <= hi, "clip: lo > hi");
    Tensor out = x;
    for (double& v : out.values()) v = std::min(hi, std::max(lo, v));
    return out;
}

inline double l2_distance(const Tensor& a, const Tensor& b) {
    detail::check(a.same_shape(b), "l2_distance: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double linf_distance(const Tensor& a, const Tensor& b) {
    detail::check(a.same_shape(b), "linf_distance: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline std::size_t argmax_index(const Tensor& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;  // ties resolve to the lowest index
    return best;
}

} // namespace mlloo

#endif // MLLOO_TENSOR_HPP
