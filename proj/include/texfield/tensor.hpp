#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "texfield/geometry.hpp"

namespace texfield {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

class Tensor;

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;   // sized lazily; empty until backward touches it
    bool requires_grad = false;
    std::vector<Tensor> parents;
    // invoked with this node itself, so closures need not self-reference
    std::function<void(TensorNode*)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

// Disables tape recording in scope; forward values are unchanged.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Value handle over a shared tape node. Copies alias the same storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode>();
        t.node_->shape = std::move(shape);
        t.node_->data.assign(static_cast<std::size_t>(numel(t.node_->shape)), 0.0);
        return t;
    }

    static Tensor full(Shape shape, double v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.node_->data.begin(), t.node_->data.end(), v);
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<double> data) {
        if (static_cast<std::int64_t>(data.size()) != numel(shape))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        Tensor t;
        t.node_ = std::make_shared<TensorNode>();
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        return t;
    }

    static Tensor scalar(double v) { return from_data({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }
    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& grad() const { node_->ensure_grad(); return node_->grad; }
    const std::vector<double>& grad_view() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) { node_->requires_grad = v; return *this; }

    void zero_grad() { if (node_) node_->grad.assign(node_->data.size(), 0.0); }

    double item() const {
        if (size() != 1)
            throw std::invalid_argument("item() requires a scalar, got shape " + shape_str(shape()));
        return node_->data[0];
    }

    TensorNode* node() const { return node_.get(); }

    // true when gradients must flow through this tensor
    bool tracked() const {
        return node_ && (node_->requires_grad || static_cast<bool>(node_->backward_fn));
    }

private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor op_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                        std::function<void(TensorNode*)> backward) {
    Tensor t = Tensor::from_data(std::move(shape), std::move(data));
    bool track = false;
    if (grad_mode()) {
        for (const Tensor& in : inputs)
            if (in.tracked()) { track = true; break; }
    }
    if (track) {
        for (const Tensor& in : inputs)
            if (in.tracked()) t.node()->parents.push_back(in);
        t.node()->backward_fn = std::move(backward);
    }
    return t;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and reduction ops

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::op_result(a.shape(), std::move(out), {a, b}, [a, b](TensorNode* self) {
        if (a.tracked()) {
            auto& g = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
        }
        if (b.tracked()) {
            auto& g = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return detail::op_result(a.shape(), std::move(out), {a}, [a, c](TensorNode* self) {
        auto& g = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self->grad[i];
    });
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::op_result({1}, {s}, {a}, [a](TensorNode* self) {
        auto& g = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[0];
    });
}

// sum_i a_i * w_i
inline Tensor inner(const Tensor& a, const Tensor& w) {
    detail::check_same_shape(a, w, "inner");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * w.data()[i];
    return detail::op_result({1}, {s}, {a, w}, [a, w](TensorNode* self) {
        if (a.tracked()) {
            auto& g = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += w.data()[i] * self->grad[0];
        }
        if (w.tracked()) {
            auto& g = w.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += a.data()[i] * self->grad[0];
        }
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    return detail::op_result(a.shape(), std::move(out), {a}, [a](TensorNode* self) {
        auto& g = a.grad();
        // subgradient at 0 is 0
        for (std::size_t i = 0; i < g.size(); ++i)
            if (a.data()[i] > 0.0) g[i] += self->grad[i];
    });
}

inline double sigmoid_scalar(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(a.data()[i]);
    return detail::op_result(a.shape(), std::move(out), {a}, [a](TensorNode* self) {
        auto& g = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = self->data[i];
            g[i] += s * (1.0 - s) * self->grad[i];
        }
    });
}

// Joins row tensors (P, C_k) along the column axis into (P, sum C_k).
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    if (parts[0].shape().size() != 2)
        throw std::invalid_argument("concat_cols: inputs must be rank 2, got " +
                                    shape_str(parts[0].shape()));
    const int rows = parts[0].shape()[0];
    int total_cols = 0;
    for (const Tensor& p : parts) {
        if (p.shape().size() != 2 || p.shape()[0] != rows)
            throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.shape()));
        total_cols += p.shape()[1];
    }
    std::vector<double> out(static_cast<std::size_t>(rows) * total_cols);
    int col0 = 0;
    for (const Tensor& p : parts) {
        const int c = p.shape()[1];
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j)
                out[static_cast<std::size_t>(r) * total_cols + col0 + j] =
                    p.data()[static_cast<std::size_t>(r) * c + j];
        col0 += c;
    }
    return detail::op_result({rows, total_cols}, std::move(out), parts,
                             [parts, rows, total_cols](TensorNode* self) {
        int col0 = 0;
        for (const Tensor& p : parts) {
            const int c = p.shape()[1];
            if (p.tracked()) {
                auto& g = p.grad();
                for (int r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j)
                        g[static_cast<std::size_t>(r) * c + j] +=
                            self->grad[static_cast<std::size_t>(r) * total_cols + col0 + j];
            }
            col0 += c;
        }
    });
}

// ---------------------------------------------------------------------------
// neural layers

// Stride-1 3D cross-correlation. input (C_in,D,H,W), weight (C_out,C_in,k,k,k),
// bias (C_out) -> (C_out, D+2p-k+1, H+2p-k+1, W+2p-k+1).
inline Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (is.size() != 4)
        throw std::invalid_argument("conv3d: input must be rank 4, got " + shape_str(is));
    if (ws.size() != 5 || ws[2] != ws[3] || ws[3] != ws[4])
        throw std::invalid_argument("conv3d: weight must be (C_out,C_in,k,k,k), got " + shape_str(ws));
    const int cin = is[0], d0 = is[1], d1 = is[2], d2 = is[3];
    const int cout = ws[0], k = ws[2];
    if (ws[1] != cin)
        throw std::invalid_argument("conv3d: weight C_in " + std::to_string(ws[1]) +
                                    " does not match input C_in " + std::to_string(cin));
    if (bias.shape() != Shape{cout})
        throw std::invalid_argument("conv3d: bias shape " + shape_str(bias.shape()) +
                                    " must be [" + std::to_string(cout) + "]");
    if (k % 2 == 0) throw std::invalid_argument("conv3d: kernel size must be odd, got " + std::to_string(k));
    if (padding < 0) throw std::invalid_argument("conv3d: padding must be >= 0");
    const int o0 = d0 + 2 * padding - k + 1;
    const int o1 = d1 + 2 * padding - k + 1;
    const int o2 = d2 + 2 * padding - k + 1;
    if (o0 < 1 || o1 < 1 || o2 < 1)
        throw std::invalid_argument("conv3d: input " + shape_str(is) + " too small for kernel " +
                                    std::to_string(k) + " with padding " + std::to_string(padding));

    const auto& in = input.data();
    const auto& w = weight.data();
    std::vector<double> out(static_cast<std::size_t>(cout) * o0 * o1 * o2);

    auto tap_lo = [padding](int kt) { return std::max(0, padding - kt); };
    auto tap_hi = [padding](int kt, int od, int id) { return std::min(od - 1, id - 1 - kt + padding); };

    for (int co = 0; co < cout; ++co) {
        const double b = bias.data()[static_cast<std::size_t>(co)];
        std::fill(out.begin() + static_cast<std::size_t>(co) * o0 * o1 * o2,
                  out.begin() + static_cast<std::size_t>(co + 1) * o0 * o1 * o2, b);
        for (int ci = 0; ci < cin; ++ci)
            for (int k0 = 0; k0 < k; ++k0)
                for (int k1 = 0; k1 < k; ++k1)
                    for (int k2 = 0; k2 < k; ++k2) {
                        const double wv = w[(((static_cast<std::size_t>(co) * cin + ci) * k + k0) * k + k1) * k + k2];
                        for (int p0 = tap_lo(k0); p0 <= tap_hi(k0, o0, d0); ++p0) {
                            const int i0 = p0 + k0 - padding;
                            for (int p1 = tap_lo(k1); p1 <= tap_hi(k1, o1, d1); ++p1) {
                                const int i1 = p1 + k1 - padding;
                                double* orow = out.data() +
                                    ((static_cast<std::size_t>(co) * o0 + p0) * o1 + p1) * o2;
                                const double* irow = in.data() +
                                    ((static_cast<std::size_t>(ci) * d0 + i0) * d1 + i1) * d2 + (k2 - padding);
                                const int hi2 = tap_hi(k2, o2, d2);
                                for (int p2 = tap_lo(k2); p2 <= hi2; ++p2) orow[p2] += wv * irow[p2];
                            }
                        }
                    }
    }

    return detail::op_result({cout, o0, o1, o2}, std::move(out), {input, weight, bias},
                             [input, weight, bias, cin, cout, k, padding, d0, d1, d2, o0, o1, o2](TensorNode* self) {
        const auto& gout = self->grad;
        auto lo = [padding](int kt) { return std::max(0, padding - kt); };
        auto hi = [padding](int kt, int od, int id) { return std::min(od - 1, id - 1 - kt + padding); };
        if (input.tracked()) {
            auto& gin = input.grad();
            for (int co = 0; co < cout; ++co)
                for (int ci = 0; ci < cin; ++ci)
                    for (int k0 = 0; k0 < k; ++k0)
                        for (int k1 = 0; k1 < k; ++k1)
                            for (int k2 = 0; k2 < k; ++k2) {
                                const double wv = weight.data()[(((static_cast<std::size_t>(co) * cin + ci) * k + k0) * k + k1) * k + k2];
                                for (int p0 = lo(k0); p0 <= hi(k0, o0, d0); ++p0) {
                                    const int i0 = p0 + k0 - padding;
                                    for (int p1 = lo(k1); p1 <= hi(k1, o1, d1); ++p1) {
                                        const int i1 = p1 + k1 - padding;
                                        const double* grow = gout.data() +
                                            ((static_cast<std::size_t>(co) * o0 + p0) * o1 + p1) * o2;
                                        double* girow = gin.data() +
                                            ((static_cast<std::size_t>(ci) * d0 + i0) * d1 + i1) * d2 + (k2 - padding);
                                        const int h2 = hi(k2, o2, d2);
                                        for (int p2 = lo(k2); p2 <= h2; ++p2) girow[p2] += wv * grow[p2];
                                    }
                                }
                            }
        }
        if (weight.tracked()) {
            auto& gw = weight.grad();
            const auto& inv = input.data();
            for (int co = 0; co < cout; ++co)
                for (int ci = 0; ci < cin; ++ci)
                    for (int k0 = 0; k0 < k; ++k0)
                        for (int k1 = 0; k1 < k; ++k1)
                            for (int k2 = 0; k2 < k; ++k2) {
                                double acc = 0.0;
                                for (int p0 = lo(k0); p0 <= hi(k0, o0, d0); ++p0) {
                                    const int i0 = p0 + k0 - padding;
                                    for (int p1 = lo(k1); p1 <= hi(k1, o1, d1); ++p1) {
                                        const int i1 = p1 + k1 - padding;
                                        const double* grow = gout.data() +
                                            ((static_cast<std::size_t>(co) * o0 + p0) * o1 + p1) * o2;
                                        const double* irow = inv.data() +
                                            ((static_cast<std::size_t>(ci) * d0 + i0) * d1 + i1) * d2 + (k2 - padding);
                                        const int h2 = hi(k2, o2, d2);
                                        for (int p2 = lo(k2); p2 <= h2; ++p2) acc += grow[p2] * irow[p2];
                                    }
                                }
                                gw[(((static_cast<std::size_t>(co) * cin + ci) * k + k0) * k + k1) * k + k2] += acc;
                            }
        }
        if (bias.tracked()) {
            auto& gb = bias.grad();
            for (int co = 0; co < cout; ++co) {
                double acc = 0.0;
                const double* g = gout.data() + static_cast<std::size_t>(co) * o0 * o1 * o2;
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(o0) * o1 * o2; ++i) acc += g[i];
                gb[static_cast<std::size_t>(co)] += acc;
            }
        }
    });
}

// Max pooling over non-overlapping cubic windows. Gradient routes to the
// argmax cell, first index in scan order on ties.
inline Tensor maxpool3d(const Tensor& input, int window = 2) {
    const Shape& is = input.shape();
    if (is.size() != 4)
        throw std::invalid_argument("maxpool3d: input must be rank 4, got " + shape_str(is));
    if (window < 1) throw std::invalid_argument("maxpool3d: window must be >= 1");
    const int c = is[0], d0 = is[1], d1 = is[2], d2 = is[3];
    if (d0 % window || d1 % window || d2 % window)
        throw std::invalid_argument("maxpool3d: extents " + shape_str(is) +
                                    " not divisible by window " + std::to_string(window));
    const int o0 = d0 / window, o1 = d1 / window, o2 = d2 / window;
    const auto& in = input.data();
    std::vector<double> out(static_cast<std::size_t>(c) * o0 * o1 * o2);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());

    std::size_t oi = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int p0 = 0; p0 < o0; ++p0)
            for (int p1 = 0; p1 < o1; ++p1)
                for (int p2 = 0; p2 < o2; ++p2, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t best_i = -1;
                    for (int w0 = 0; w0 < window; ++w0)
                        for (int w1 = 0; w1 < window; ++w1)
                            for (int w2 = 0; w2 < window; ++w2) {
                                const std::int64_t idx =
                                    ((static_cast<std::int64_t>(ch) * d0 + p0 * window + w0) * d1 +
                                     p1 * window + w1) * d2 + p2 * window + w2;
                                if (in[static_cast<std::size_t>(idx)] > best) {
                                    best = in[static_cast<std::size_t>(idx)];
                                    best_i = idx;
                                }
                            }
                    out[oi] = best;
                    (*argmax)[oi] = best_i;
                }

    return detail::op_result({c, o0, o1, o2}, std::move(out), {input}, [input, argmax](TensorNode* self) {
        auto& g = input.grad();
        for (std::size_t i = 0; i < argmax->size(); ++i)
            g[static_cast<std::size_t>((*argmax)[i])] += self->grad[i];
    });
}

// input (B,F_in) x weight (F_out,F_in) + bias (F_out) -> (B,F_out)
inline Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (is.size() != 2 || ws.size() != 2)
        throw std::invalid_argument("linear: expected rank-2 input and weight, got " +
                                    shape_str(is) + " and " + shape_str(ws));
    const int b = is[0], fin = is[1], fout = ws[0];
    if (ws[1] != fin)
        throw std::invalid_argument("linear: weight F_in " + std::to_string(ws[1]) +
                                    " does not match input F_in " + std::to_string(fin));
    if (bias.shape() != Shape{fout})
        throw std::invalid_argument("linear: bias shape " + shape_str(bias.shape()) +
                                    " must be [" + std::to_string(fout) + "]");
    const auto& in = input.data();
    const auto& w = weight.data();
    std::vector<double> out(static_cast<std::size_t>(b) * fout);
    for (int r = 0; r < b; ++r) {
        const double* irow = in.data() + static_cast<std::size_t>(r) * fin;
        double* orow = out.data() + static_cast<std::size_t>(r) * fout;
        for (int o = 0; o < fout; ++o) {
            const double* wrow = w.data() + static_cast<std::size_t>(o) * fin;
            double acc = bias.data()[static_cast<std::size_t>(o)];
            for (int i = 0; i < fin; ++i) acc += irow[i] * wrow[i];
            orow[o] = acc;
        }
    }
    return detail::op_result({b, fout}, std::move(out), {input, weight, bias},
                             [input, weight, bias, b, fin, fout](TensorNode* self) {
        const auto& gout = self->grad;
        if (input.tracked()) {
            auto& gin = input.grad();
            for (int r = 0; r < b; ++r)
                for (int o = 0; o < fout; ++o) {
                    const double g = gout[static_cast<std::size_t>(r) * fout + o];
                    const double* wrow = weight.data().data() + static_cast<std::size_t>(o) * fin;
                    double* girow = gin.data() + static_cast<std::size_t>(r) * fin;
                    for (int i = 0; i < fin; ++i) girow[i] += g * wrow[i];
                }
        }
        if (weight.tracked()) {
            auto& gw = weight.grad();
            for (int r = 0; r < b; ++r) {
                const double* irow = input.data().data() + static_cast<std::size_t>(r) * fin;
                for (int o = 0; o < fout; ++o) {
                    const double g = gout[static_cast<std::size_t>(r) * fout + o];
                    double* gwrow = gw.data() + static_cast<std::size_t>(o) * fin;
                    for (int i = 0; i < fin; ++i) gwrow[i] += g * irow[i];
                }
            }
        }
        if (bias.tracked()) {
            auto& gb = bias.grad();
            for (int r = 0; r < b; ++r)
                for (int o = 0; o < fout; ++o)
                    gb[static_cast<std::size_t>(o)] += gout[static_cast<std::size_t>(r) * fout + o];
        }
    });
}

// ---------------------------------------------------------------------------
// losses

// Sum over all entries of |pred - target|.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    detail::check_same_shape(pred, target, "l1_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.data().size(); ++i)
        s += std::abs(pred.data()[i] - target.data()[i]);
    return detail::op_result({1}, {s}, {pred, target}, [pred, target](TensorNode* self) {
        const double g = self->grad[0];
        if (pred.tracked()) {
            auto& gp = pred.grad();
            for (std::size_t i = 0; i < gp.size(); ++i) {
                const double d = pred.data()[i] - target.data()[i];
                gp[i] += g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
            }
        }
        if (target.tracked()) {
            auto& gt = target.grad();
            for (std::size_t i = 0; i < gt.size(); ++i) {
                const double d = pred.data()[i] - target.data()[i];
                gt[i] -= g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
            }
        }
    });
}

// Mean binary cross-entropy on sigmoid(logits), log-sum-exp stabilized.
inline Tensor bce_loss(const Tensor& logits, const Tensor& labels) {
    detail::check_same_shape(logits, labels, "bce_loss");
    const std::size_t n = logits.data().size();
    for (std::size_t i = 0; i < n; ++i) {
        const double y = labels.data()[i];
        if (y != 0.0 && y != 1.0)
            throw std::invalid_argument("bce_loss: label at index " + std::to_string(i) +
                                        " is " + std::to_string(y) + ", expected 0 or 1");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits.data()[i];
        const double y = labels.data()[i];
        s += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    s /= static_cast<double>(n);
    return detail::op_result({1}, {s}, {logits, labels}, [logits, labels, n](TensorNode* self) {
        if (logits.tracked()) {
            auto& g = logits.grad();
            const double gs = self->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                g[i] += gs * (sigmoid_scalar(logits.data()[i]) - labels.data()[i]);
        }
    });
}

// ---------------------------------------------------------------------------
// grid sampling

// Trilinear read of a (C,D0,D1,D2) grid at world-space points. Nodes sit at
// cell centers; coordinates outside the box are border-clamped. Result (P,C),
// differentiable w.r.t. the grid values.
inline Tensor trilinear_gather(const Tensor& grid, const BBox& bbox, const std::vector<Vec3>& points) {
    const Shape& gs = grid.shape();
    if (gs.size() != 4)
        throw std::invalid_argument("trilinear_gather: grid must be rank 4, got " + shape_str(gs));
    if (!bbox.valid())
        throw std::invalid_argument("trilinear_gather: degenerate bounding box");
    const int c = gs[0];
    const int d[3] = {gs[1], gs[2], gs[3]};
    const Vec3 ext = bbox.extent();
    const double cell[3] = {ext.x / d[0], ext.y / d[1], ext.z / d[2]};
    const int npts = static_cast<int>(points.size());

    // cell-center node at index i lies at min + (i + 0.5) * cell
    auto locate = [&](double p, int axis, int& i0, double& f) {
        double u = (p - bbox.min[axis]) / cell[axis] - 0.5;
        u = std::clamp(u, 0.0, static_cast<double>(d[axis] - 1));
        i0 = std::min(static_cast<int>(std::floor(u)), std::max(d[axis] - 2, 0));
        f = u - i0;
    };

    const auto& g = grid.data();
    std::vector<double> out(static_cast<std::size_t>(npts) * c);
    auto pts = std::make_shared<std::vector<Vec3>>(points);

    for (int pi = 0; pi < npts; ++pi) {
        int i0[3]; double f[3];
        for (int a = 0; a < 3; ++a) locate(points[static_cast<std::size_t>(pi)][a], a, i0[a], f[a]);
        const int i1[3] = {std::min(i0[0] + 1, d[0] - 1), std::min(i0[1] + 1, d[1] - 1),
                           std::min(i0[2] + 1, d[2] - 1)};
        const double w[2][3] = {{1.0 - f[0], 1.0 - f[1], 1.0 - f[2]}, {f[0], f[1], f[2]}};
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t cb = static_cast<std::size_t>(ch) * d[0] * d[1] * d[2];
            double acc = 0.0;
            for (int a = 0; a < 2; ++a) {
                const int x = a ? i1[0] : i0[0];
                for (int b = 0; b < 2; ++b) {
                    const int y = b ? i1[1] : i0[1];
                    for (int e = 0; e < 2; ++e) {
                        const int z = e ? i1[2] : i0[2];
                        acc += w[a][0] * w[b][1] * w[e][2] *
                               g[cb + (static_cast<std::size_t>(x) * d[1] + y) * d[2] + z];
                    }
                }
            }
            out[static_cast<std::size_t>(pi) * c + ch] = acc;
        }
    }

    const BBox box = bbox;
    return detail::op_result({npts, c}, std::move(out), {grid}, [grid, box, pts, c, npts](TensorNode* self) {
        const Shape& gs2 = grid.shape();
        const int d2[3] = {gs2[1], gs2[2], gs2[3]};
        const Vec3 ext2 = box.extent();
        const double cell2[3] = {ext2.x / d2[0], ext2.y / d2[1], ext2.z / d2[2]};
        auto& gg = grid.grad();
        for (int pi = 0; pi < npts; ++pi) {
            int i0[3]; double f[3];
            for (int a = 0; a < 3; ++a) {
                double u = ((*pts)[static_cast<std::size_t>(pi)][a] - box.min[a]) / cell2[a] - 0.5;
                u = std::clamp(u, 0.0, static_cast<double>(d2[a] - 1));
                i0[a] = std::min(static_cast<int>(std::floor(u)), std::max(d2[a] - 2, 0));
                f[a] = u - i0[a];
            }
            const int i1[3] = {std::min(i0[0] + 1, d2[0] - 1), std::min(i0[1] + 1, d2[1] - 1),
                               std::min(i0[2] + 1, d2[2] - 1)};
            const double w[2][3] = {{1.0 - f[0], 1.0 - f[1], 1.0 - f[2]}, {f[0], f[1], f[2]}};
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t cb = static_cast<std::size_t>(ch) * d2[0] * d2[1] * d2[2];
                const double go = self->grad[static_cast<std::size_t>(pi) * c + ch];
                for (int a = 0; a < 2; ++a) {
                    const int x = a ? i1[0] : i0[0];
                    for (int b = 0; b < 2; ++b) {
                        const int y = b ? i1[1] : i0[1];
                        for (int e = 0; e < 2; ++e) {
                            const int z = e ? i1[2] : i0[2];
                            gg[cb + (static_cast<std::size_t>(x) * d2[1] + y) * d2[2] + z] +=
                                w[a][0] * w[b][1] * w[e][2] * go;
                        }
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// reverse pass

// Populates grads of every tape ancestor of a scalar loss. Repeated calls
// accumulate; zero grads explicitly between steps.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward: loss must be a scalar tensor");

    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].node();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (TensorNode* n : order) n->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(*it);
}

// ---------------------------------------------------------------------------
// optimizer

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step_count = 0;
    std::map<std::string, std::vector<double>> first_moment;
    std::map<std::string, std::vector<double>> second_moment;
};

// One bias-corrected Adam update over named parameters; missing grads count as zero.
inline void adam_step(std::map<std::string, Tensor>& params, AdamState& state) {
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (auto& [name, p] : params) {
        auto& m = state.first_moment[name];
        auto& v = state.second_moment[name];
        if (m.size() != p.data().size()) m.assign(p.data().size(), 0.0);
        if (v.size() != p.data().size()) v.assign(p.data().size(), 0.0);
        const bool has_g = p.has_grad();
        auto& w = p.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double g = has_g ? p.grad_view()[i] : 0.0;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace texfield
