#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace yofo {

using BinaryMask = std::vector<uint8_t>;
using Shape = std::vector<size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor: dense row-major value with a lazily allocated gradient of the same
// shape. Handles share storage; copying a TensorT aliases the data.
// ---------------------------------------------------------------------------

template <class S>
struct TensorDataT {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until touched by backward
    bool requires_grad = false;
};

template <class S>
class TensorT {
   public:
    using Scalar = S;

    TensorT() = default;

    explicit TensorT(Shape shape, S fill = S(0)) : d_(std::make_shared<TensorDataT<S>>()) {
        d_->shape = std::move(shape);
        d_->value.assign(count(d_->shape), fill);
    }

    static TensorT scalar(S v) {
        TensorT t(Shape{1});
        t.d_->value[0] = v;
        return t;
    }

    static TensorT from(Shape shape, std::vector<S> vals) {
        TensorT t;
        t.d_ = std::make_shared<TensorDataT<S>>();
        if (count(shape) != vals.size()) {
            throw ShapeError("tensor init: shape " + shape_str(shape) + " wants " +
                             std::to_string(count(shape)) + " elements, got " +
                             std::to_string(vals.size()));
        }
        t.d_->shape = std::move(shape);
        t.d_->value = std::move(vals);
        return t;
    }

    static TensorT param(Shape shape) {
        TensorT t(std::move(shape));
        t.d_->requires_grad = true;
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    size_t ndim() const { return d_->shape.size(); }
    size_t dim(size_t i) const { return d_->shape[i]; }
    size_t numel() const { return d_->value.size(); }

    std::vector<S>& value() { return d_->value; }
    const std::vector<S>& value() const { return d_->value; }

    bool requires_grad() const { return d_->requires_grad; }
    TensorT& set_requires_grad(bool b) {
        d_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !d_->grad.empty(); }
    void ensure_grad() {
        if (d_->grad.empty()) d_->grad.assign(d_->value.size(), S(0));
    }
    void zero_grad() {
        if (!d_->grad.empty()) d_->grad.assign(d_->value.size(), S(0));
    }
    std::vector<S>& grad() {
        ensure_grad();
        return d_->grad;
    }

    S item() const {
        if (numel() != 1) {
            throw ContractError("item(): tensor " + shape_str(d_->shape) + " is not scalar");
        }
        return d_->value[0];
    }

    std::shared_ptr<TensorDataT<S>> ptr() const { return d_; }

    static size_t count(const Shape& s) {
        size_t n = 1;
        for (size_t e : s) n *= e;
        return n;
    }

   private:
    std::shared_ptr<TensorDataT<S>> d_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

// ---------------------------------------------------------------------------
// Tape: the computation record. Ops append themselves in execution order;
// backward replays the record in reverse, accumulating gradients.
// ---------------------------------------------------------------------------

template <class S>
class TapeT {
   public:
    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

    size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

    void backward(TensorT<S> loss, S seed = S(1)) {
        if (loss.numel() != 1) {
            throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        }
        loss.grad()[0] += seed;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

   private:
    std::vector<std::function<void()>> steps_;
};

using Tape = TapeT<double>;

namespace detail {

template <class S>
bool track(const TapeT<S>* tape, std::initializer_list<const TensorT<S>*> inputs) {
    if (!tape) return false;
    for (const auto* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

template <class S>
void mark_out(TensorT<S>& out) {
    out.set_requires_grad(true);
}

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

namespace ops {

template <class S>
TensorT<S> add(TapeT<S>* tape, TensorT<S> a, TensorT<S> b) {
    detail::require(a.shape() == b.shape(),
                    "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    TensorT<S> out(a.shape());
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] + b.value()[i];
    if (detail::track(tape, {&a, &b})) {
        detail::mark_out(out);
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad();
            auto& gb = b.grad();
            for (size_t i = 0; i < go.size(); ++i) {
                ga[i] += go[i];
                gb[i] += go[i];
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> sub(TapeT<S>* tape, TensorT<S> a, TensorT<S> b) {
    detail::require(a.shape() == b.shape(),
                    "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    TensorT<S> out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
    if (detail::track(tape, {&a, &b})) {
        detail::mark_out(out);
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad();
            auto& gb = b.grad();
            for (size_t i = 0; i < go.size(); ++i) {
                ga[i] += go[i];
                gb[i] -= go[i];
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> mul(TapeT<S>* tape, TensorT<S> a, TensorT<S> b) {
    detail::require(a.shape() == b.shape(),
                    "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    TensorT<S> out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
    if (detail::track(tape, {&a, &b})) {
        detail::mark_out(out);
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad();
            auto& gb = b.grad();
            for (size_t i = 0; i < go.size(); ++i) {
                ga[i] += go[i] * b.value()[i];
                gb[i] += go[i] * a.value()[i];
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> scale(TapeT<S>* tape, TensorT<S> a, S c) {
    TensorT<S> out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out.value()[i] = a.value()[i] * c;
    if (detail::track(tape, {&a})) {
        detail::mark_out(out);
        tape->record([a, out, c]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad();
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
        });
    }
    return out;
}

template <class S>
TensorT<S> add_scalar(TapeT<S>* tape, TensorT<S> a, S c) {
    TensorT<S> out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out.value()[i] = a.value()[i] + c;
    if (detail::track(tape, {&a})) {
        detail::mark_out(out);
        tape->record([a, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad();
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        });
    }
    return out;
}

template <class S>
TensorT<S> abs_val(TapeT<S>* tape, TensorT<S> a) {
    TensorT<S> out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out.value()[i] = std::abs(a.value()[i]);
    if (detail::track(tape, {&a})) {
        detail::mark_out(out);
        tape->record([a, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad();
            for (size_t i = 0; i < go.size(); ++i) {
                S v = a.value()[i];
                // subgradient 0 at v == 0
                ga[i] += go[i] * (v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)));
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> sum_all(TapeT<S>* tape, TensorT<S> a) {
    S acc = S(0);
    for (size_t i = 0; i < a.numel(); ++i) acc += a.value()[i];
    TensorT<S> out = TensorT<S>::scalar(acc);
    if (detail::track(tape, {&a})) {
        detail::mark_out(out);
        tape->record([a, out]() mutable {
            if (!out.has_grad()) return;
            S g = out.grad()[0];
            auto& ga = a.grad();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

template <class S>
TensorT<S> mean_all(TapeT<S>* tape, TensorT<S> a) {
    return scale(tape, sum_all(tape, a), S(1) / static_cast<S>(a.numel()));
}

// out[j] = v[j+1] - v[j]
template <class S>
TensorT<S> adjacent_diff(TapeT<S>* tape, TensorT<S> v) {
    detail::require(v.ndim() == 1 && v.numel() >= 2,
                    "adjacent_diff: want 1-d tensor of length >= 2, got " + shape_str(v.shape()));
    const size_t n = v.numel();
    TensorT<S> out(Shape{n - 1});
    for (size_t j = 0; j + 1 < n; ++j) out.value()[j] = v.value()[j + 1] - v.value()[j];
    if (detail::track(tape, {&v})) {
        detail::mark_out(out);
        tape->record([v, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& gv = v.grad();
            for (size_t j = 0; j < go.size(); ++j) {
                gv[j + 1] += go[j];
                gv[j] -= go[j];
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> gelu(TapeT<S>* tape, TensorT<S> x) {
    TensorT<S> out(x.shape());
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < x.numel(); ++i) {
        double v = static_cast<double>(x.value()[i]);
        out.value()[i] = static_cast<S>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
    }
    if (detail::track(tape, {&x})) {
        detail::mark_out(out);
        tape->record([x, out]() mutable {
            if (!out.has_grad()) return;
            constexpr double kInvSqrt2Pi = 0.39894228040143267794;
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (size_t i = 0; i < go.size(); ++i) {
                double v = static_cast<double>(x.value()[i]);
                double cdf = 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
                double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                gx[i] += go[i] * static_cast<S>(cdf + v * pdf);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(TapeT<S>* tape, TensorT<S> a, TensorT<S> b) {
    detail::require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
                    "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<S> out(Shape{m, n});
    const S* pa = a.value().data();
    const S* pb = b.value().data();
    S* pc = out.value().data();
    for (size_t i = 0; i < m; ++i) {
        S* crow = pc + i * n;
        for (size_t p = 0; p < k; ++p) {
            const S av = pa[i * k + p];
            const S* brow = pb + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    if (detail::track(tape, {&a, &b})) {
        detail::mark_out(out);
        tape->record([a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const S* go = out.grad().data();
            const S* pa = a.value().data();
            const S* pb = b.value().data();
            S* ga = a.grad().data();
            S* gb = b.grad().data();
            // dA = dC @ B^T
            for (size_t i = 0; i < m; ++i) {
                const S* grow = go + i * n;
                for (size_t p = 0; p < k; ++p) {
                    const S* brow = pb + p * n;
                    S acc = S(0);
                    for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga[i * k + p] += acc;
                }
            }
            // dB = A^T @ dC
            for (size_t i = 0; i < m; ++i) {
                const S* grow = go + i * n;
                for (size_t p = 0; p < k; ++p) {
                    const S av = pa[i * k + p];
                    S* gbrow = gb + p * n;
                    for (size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> add_bias(TapeT<S>* tape, TensorT<S> x, TensorT<S> bias) {
    detail::require(x.ndim() == 2 && bias.ndim() == 1 && x.dim(1) == bias.dim(0),
                    "add_bias: shapes " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
    const size_t r = x.dim(0), c = x.dim(1);
    TensorT<S> out(x.shape());
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out.value()[i * c + j] = x.value()[i * c + j] + bias.value()[j];
    if (detail::track(tape, {&x, &bias})) {
        detail::mark_out(out);
        tape->record([x, bias, out, r, c]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.grad();
            auto& gb = bias.grad();
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) {
                    gx[i * c + j] += go[i * c + j];
                    gb[j] += go[i * c + j];
                }
        });
    }
    return out;
}

template <class S>
TensorT<S> linear(TapeT<S>* tape, TensorT<S> x, TensorT<S> w, TensorT<S> bias) {
    return add_bias(tape, matmul(tape, std::move(x), std::move(w)), std::move(bias));
}

template <class S>
TensorT<S> slice_rows(TapeT<S>* tape, TensorT<S> x, size_t r0, size_t r1) {
    detail::require(x.ndim() == 2 && r0 < r1 && r1 <= x.dim(0),
                    "slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                        ") for " + shape_str(x.shape()));
    const size_t c = x.dim(1);
    TensorT<S> out(Shape{r1 - r0, c});
    std::copy(x.value().begin() + r0 * c, x.value().begin() + r1 * c, out.value().begin());
    if (detail::track(tape, {&x})) {
        detail::mark_out(out);
        tape->record([x, out, r0, c]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (size_t i = 0; i < go.size(); ++i) gx[r0 * c + i] += go[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization and attention
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> layer_norm(TapeT<S>* tape, TensorT<S> x, TensorT<S> gain, TensorT<S> bias,
                      S eps = S(1e-5)) {
    detail::require(x.ndim() >= 1 && gain.ndim() == 1 && bias.ndim() == 1,
                    "layer_norm: want 1-d gain/bias");
    const size_t d = x.dim(x.ndim() - 1);
    detail::require(d >= 2, "layer_norm: feature dim must be >= 2, got " + shape_str(x.shape()));
    detail::require(gain.dim(0) == d && bias.dim(0) == d,
                    "layer_norm: feature dim " + std::to_string(d) + " vs gain " +
                        shape_str(gain.shape()) + " bias " + shape_str(bias.shape()));
    const size_t rows = x.numel() / d;
    TensorT<S> out(x.shape());
    auto xhat = std::make_shared<std::vector<S>>(x.numel());
    auto inv_std = std::make_shared<std::vector<S>>(rows);
    for (size_t r = 0; r < rows; ++r) {
        const S* xv = x.value().data() + r * d;
        S mean = S(0);
        for (size_t j = 0; j < d; ++j) mean += xv[j];
        mean /= static_cast<S>(d);
        S var = S(0);
        for (size_t j = 0; j < d; ++j) {
            S c = xv[j] - mean;
            var += c * c;
        }
        var /= static_cast<S>(d);
        const S istd = S(1) / std::sqrt(var + eps);
        (*inv_std)[r] = istd;
        for (size_t j = 0; j < d; ++j) {
            S h = (xv[j] - mean) * istd;
            (*xhat)[r * d + j] = h;
            out.value()[r * d + j] = h * gain.value()[j] + bias.value()[j];
        }
    }
    if (detail::track(tape, {&x, &gain, &bias})) {
        detail::mark_out(out);
        tape->record([x, gain, bias, out, xhat, inv_std, rows, d]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.grad();
            auto& gg = gain.grad();
            auto& gb = bias.grad();
            for (size_t r = 0; r < rows; ++r) {
                const S* h = xhat->data() + r * d;
                const S* g = go.data() + r * d;
                const S istd = (*inv_std)[r];
                S sum_dh = S(0), sum_dh_h = S(0);
                for (size_t j = 0; j < d; ++j) {
                    const S dh = g[j] * gain.value()[j];
                    sum_dh += dh;
                    sum_dh_h += dh * h[j];
                    gg[j] += g[j] * h[j];
                    gb[j] += g[j];
                }
                const S inv_d = S(1) / static_cast<S>(d);
                for (size_t j = 0; j < d; ++j) {
                    const S dh = g[j] * gain.value()[j];
                    gx[r * d + j] += istd * (dh - sum_dh * inv_d - h[j] * sum_dh_h * inv_d);
                }
            }
        });
    }
    return out;
}

// Softmax over the last axis with masked positions pinned to exactly zero and
// the remainder renormalized over the kept set. `keep` may be empty (keep
// everything); otherwise its length must equal the last extent.
template <class S>
TensorT<S> masked_softmax(TapeT<S>* tape, TensorT<S> scores, const BinaryMask& keep) {
    const size_t l = scores.dim(scores.ndim() - 1);
    detail::require(keep.empty() || keep.size() == l,
                    "masked_softmax: mask length " + std::to_string(keep.size()) +
                        " vs last extent " + std::to_string(l));
    const size_t rows = scores.numel() / l;
    TensorT<S> out(scores.shape());
    for (size_t r = 0; r < rows; ++r) {
        const S* sv = scores.value().data() + r * l;
        S* ov = out.value().data() + r * l;
        S mx = -std::numeric_limits<S>::infinity();
        for (size_t j = 0; j < l; ++j) {
            if (keep.empty() || keep[j]) mx = std::max(mx, sv[j]);
        }
        if (mx == -std::numeric_limits<S>::infinity()) {
            throw ContractError("masked_softmax: degenerate mask, all positions masked in row " +
                                std::to_string(r));
        }
        S denom = S(0);
        for (size_t j = 0; j < l; ++j) {
            if (keep.empty() || keep[j]) {
                ov[j] = std::exp(sv[j] - mx);
                denom += ov[j];
            } else {
                ov[j] = S(0);
            }
        }
        for (size_t j = 0; j < l; ++j) ov[j] /= denom;
    }
    if (detail::track(tape, {&scores})) {
        detail::mark_out(out);
        tape->record([scores, out, rows, l]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& gs = scores.grad();
            for (size_t r = 0; r < rows; ++r) {
                const S* p = out.value().data() + r * l;
                const S* g = go.data() + r * l;
                S dot = S(0);
                for (size_t j = 0; j < l; ++j) dot += g[j] * p[j];
                for (size_t j = 0; j < l; ++j) gs[r * l + j] += p[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> softmax_rows(TapeT<S>* tape, TensorT<S> scores) {
    return masked_softmax(tape, std::move(scores), BinaryMask{});
}

// Per-layer, per-head attention weights captured for analysis and tests.
template <class S>
struct AttentionProbsT {
    size_t heads = 0;
    size_t len = 0;
    std::vector<S> probs;  // heads x len x len, rows normalized over kept keys
};

// Fused multi-head self-attention over a single sequence.
//   q, k, v      : [L x D], heads divides D
//   hard_keep    : optional key/value mask; masked keys get weight exactly 0,
//                  remaining weights renormalize (empty = keep all)
//   modulate     : optional [L] tensor multiplied into every attention row
//                  column-wise; carries mask gradients (straight-through or
//                  soft). Values must be 1 at kept and 0 at dropped positions
//                  when paired with hard_keep so the forward stays equal to
//                  the renormalized masked softmax.
template <class S>
TensorT<S> multi_head_attention(TapeT<S>* tape, TensorT<S> q, TensorT<S> k, TensorT<S> v,
                                size_t heads, const BinaryMask& hard_keep,
                                std::type_identity_t<const TensorT<S>*> modulate = nullptr,
                                std::type_identity_t<AttentionProbsT<S>*> probs_out = nullptr) {
    detail::require(q.ndim() == 2 && q.shape() == k.shape() && q.shape() == v.shape(),
                    "attention: q/k/v shapes must match, got " + shape_str(q.shape()) + " " +
                        shape_str(k.shape()) + " " + shape_str(v.shape()));
    const size_t l = q.dim(0), d = q.dim(1);
    detail::require(heads >= 1 && d % heads == 0,
                    "attention: head count " + std::to_string(heads) + " must divide width " +
                        std::to_string(d));
    detail::require(hard_keep.empty() || hard_keep.size() == l, "attention: bad mask length");
    const size_t dh = d / heads;
    const S scl = S(1) / std::sqrt(static_cast<S>(dh));

    TensorT<S> out(Shape{l, d});
    auto probs = std::make_shared<std::vector<S>>(heads * l * l, S(0));

    const S* qv = q.value().data();
    const S* kv = k.value().data();
    const S* vv = v.value().data();
    const S* mod = modulate ? modulate->value().data() : nullptr;

    std::vector<S> srow(l);
    for (size_t h = 0; h < heads; ++h) {
        const size_t off = h * dh;
        for (size_t r = 0; r < l; ++r) {
            S mx = -std::numeric_limits<S>::infinity();
            for (size_t c = 0; c < l; ++c) {
                if (!hard_keep.empty() && !hard_keep[c]) continue;
                const S* qr = qv + r * d + off;
                const S* kc = kv + c * d + off;
                S acc = S(0);
                for (size_t j = 0; j < dh; ++j) acc += qr[j] * kc[j];
                srow[c] = acc * scl;
                mx = std::max(mx, srow[c]);
            }
            if (mx == -std::numeric_limits<S>::infinity()) {
                throw ContractError("attention: degenerate mask, no keys kept");
            }
            S denom = S(0);
            S* prow = probs->data() + (h * l + r) * l;
            for (size_t c = 0; c < l; ++c) {
                if (!hard_keep.empty() && !hard_keep[c]) {
                    prow[c] = S(0);
                    continue;
                }
                prow[c] = std::exp(srow[c] - mx);
                denom += prow[c];
            }
            for (size_t c = 0; c < l; ++c) prow[c] /= denom;
            S* orow = out.value().data() + r * d + off;
            for (size_t c = 0; c < l; ++c) {
                S w = prow[c];
                if (mod) w *= mod[c];
                if (w == S(0)) continue;
                const S* vc = vv + c * d + off;
                for (size_t j = 0; j < dh; ++j) orow[j] += w * vc[j];
            }
        }
    }

    if (probs_out) {
        probs_out->heads = heads;
        probs_out->len = l;
        probs_out->probs = *probs;
        if (mod) {
            for (size_t h = 0; h < heads; ++h)
                for (size_t r = 0; r < l; ++r)
                    for (size_t c = 0; c < l; ++c) probs_out->probs[(h * l + r) * l + c] *= mod[c];
        }
    }

    const TensorT<S> modcpy = modulate ? *modulate : TensorT<S>();
    bool needs = detail::track(tape, {&q, &k, &v}) ||
                 (modulate && tape && modulate->requires_grad());
    if (needs) {
        detail::mark_out(out);
        TensorT<S> m = modcpy;
        tape->record([q, k, v, m, out, probs, heads, l, d, dh, scl]() mutable {
            if (!out.has_grad()) return;
            const S* go = out.grad().data();
            const S* qv = q.value().data();
            const S* kv = k.value().data();
            const S* vv = v.value().data();
            S* gq = q.grad().data();
            S* gk = k.grad().data();
            S* gv = v.grad().data();
            const S* mod = m.defined() ? m.value().data() : nullptr;
            S* gmod = (m.defined() && m.requires_grad()) ? m.grad().data() : nullptr;
            std::vector<S> dp(l), dp0(l);
            for (size_t h = 0; h < heads; ++h) {
                const size_t off = h * dh;
                for (size_t r = 0; r < l; ++r) {
                    const S* prow = probs->data() + (h * l + r) * l;
                    const S* gorow = go + r * d + off;
                    // dP (post-modulation) and dV
                    for (size_t c = 0; c < l; ++c) {
                        const S* vc = vv + c * d + off;
                        S acc = S(0);
                        for (size_t j = 0; j < dh; ++j) acc += gorow[j] * vc[j];
                        dp[c] = acc;
                        S w = prow[c];
                        if (mod) w *= mod[c];
                        if (w != S(0)) {
                            S* gvc = gv + c * d + off;
                            for (size_t j = 0; j < dh; ++j) gvc[j] += w * gorow[j];
                        }
                    }
                    if (mod) {
                        for (size_t c = 0; c < l; ++c) {
                            if (gmod) gmod[c] += dp[c] * prow[c];
                            dp0[c] = dp[c] * mod[c];
                        }
                    } else {
                        dp0 = dp;
                    }
                    // softmax backward -> dS, then dQ/dK
                    S dot = S(0);
                    for (size_t c = 0; c < l; ++c) dot += dp0[c] * prow[c];
                    const S* qr = qv + r * d + off;
                    S* gqr = gq + r * d + off;
                    for (size_t c = 0; c < l; ++c) {
                        const S ds = prow[c] * (dp0[c] - dot) * scl;
                        if (ds == S(0)) continue;
                        const S* kc = kv + c * d + off;
                        S* gkc = gk + c * d + off;
                        for (size_t j = 0; j < dh; ++j) {
                            gqr[j] += ds * kc[j];
                            gkc[j] += ds * qr[j];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embedding, classification loss, mask plumbing
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> embedding(TapeT<S>* tape, TensorT<S> table, const std::vector<int>& ids) {
    detail::require(table.ndim() == 2, "embedding: table must be 2-d");
    const size_t v = table.dim(0), d = table.dim(1);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<size_t>(ids[i]) >= v) {
            throw DataError("embedding: token id " + std::to_string(ids[i]) + " at position " +
                            std::to_string(i) + " outside vocabulary of size " + std::to_string(v));
        }
    }
    TensorT<S> out(Shape{ids.size(), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        const S* row = table.value().data() + static_cast<size_t>(ids[i]) * d;
        std::copy(row, row + d, out.value().data() + i * d);
    }
    if (detail::track(tape, {&table})) {
        detail::mark_out(out);
        auto idcopy = std::make_shared<std::vector<int>>(ids);
        tape->record([table, out, idcopy, d]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& gt = table.grad();
            for (size_t i = 0; i < idcopy->size(); ++i) {
                S* grow = gt.data() + static_cast<size_t>((*idcopy)[i]) * d;
                const S* orow = go.data() + i * d;
                for (size_t j = 0; j < d; ++j) grow[j] += orow[j];
            }
        });
    }
    return out;
}

// Negative log-likelihood of `label` under softmax(logits). Accepts any shape
// with numel == class count.
template <class S>
TensorT<S> cross_entropy(TapeT<S>* tape, TensorT<S> logits, int label) {
    const size_t c = logits.numel();
    detail::require(label >= 0 && static_cast<size_t>(label) < c,
                    "cross_entropy: label " + std::to_string(label) + " outside " +
                        std::to_string(c) + " classes");
    S mx = logits.value()[0];
    for (size_t i = 1; i < c; ++i) mx = std::max(mx, logits.value()[i]);
    S sum = S(0);
    for (size_t i = 0; i < c; ++i) sum += std::exp(logits.value()[i] - mx);
    const S lse = mx + std::log(sum);
    TensorT<S> out = TensorT<S>::scalar(lse - logits.value()[static_cast<size_t>(label)]);
    if (detail::track(tape, {&logits})) {
        detail::mark_out(out);
        tape->record([logits, out, label, mx, lse]() mutable {
            if (!out.has_grad()) return;
            const S g = out.grad()[0];
            auto& gl = logits.grad();
            for (size_t i = 0; i < gl.size(); ++i) {
                S p = std::exp(logits.value()[i] - lse);
                gl[i] += g * (p - (static_cast<size_t>(label) == i ? S(1) : S(0)));
            }
        });
    }
    return out;
}

// Forward takes the hard 0/1 decisions; backward passes the gradient through
// to the soft keep-probabilities unchanged.
template <class S>
TensorT<S> straight_through(TapeT<S>* tape, TensorT<S> soft, const BinaryMask& hard) {
    detail::require(soft.ndim() == 1 && soft.numel() == hard.size(),
                    "straight_through: soft " + shape_str(soft.shape()) + " vs hard length " +
                        std::to_string(hard.size()));
    TensorT<S> out(soft.shape());
    for (size_t i = 0; i < hard.size(); ++i) out.value()[i] = hard[i] ? S(1) : S(0);
    if (detail::track(tape, {&soft})) {
        detail::mark_out(out);
        tape->record([soft, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& gs = soft.grad();
            for (size_t i = 0; i < go.size(); ++i) gs[i] += go[i];
        });
    }
    return out;
}

// Pins element 0 to exactly 1 (the classification token is never dropped);
// no gradient flows into position 0.
template <class S>
TensorT<S> force_first_one(TapeT<S>* tape, TensorT<S> m) {
    detail::require(m.ndim() == 1 && m.numel() >= 1, "force_first_one: want nonempty 1-d mask");
    TensorT<S> out(m.shape());
    out.value() = m.value();
    out.value()[0] = S(1);
    if (detail::track(tape, {&m})) {
        detail::mark_out(out);
        tape->record([m, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& gm = m.grad();
            for (size_t i = 1; i < go.size(); ++i) gm[i] += go[i];
        });
    }
    return out;
}

// Inverted dropout; draws one uniform per element in row-major order.
template <class S>
TensorT<S> dropout(TapeT<S>* tape, TensorT<S> x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    detail::require(rate < 1.0, "dropout: rate must be < 1");
    const S keep_scale = S(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<S>>(x.numel());
    TensorT<S> out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) {
        const S m = rng.uniform() < rate ? S(0) : keep_scale;
        (*mask)[i] = m;
        out.value()[i] = x.value()[i] * m;
    }
    if (detail::track(tape, {&x})) {
        detail::mark_out(out);
        tape->record([x, out, mask]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*mask)[i];
        });
    }
    return out;
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Gumbel binary gate sampling
// ---------------------------------------------------------------------------

template <class S>
struct GateSampleT {
    BinaryMask hard;    // argmax keep/drop decision per position
    TensorT<S> soft;    // keep-class probability, differentiable w.r.t. logits
    TensorT<S> gate;    // straight-through tensor when hard, else == soft
};

// logits: [L x 2], column 0 = keep class, column 1 = drop class.
// Draw order per position: keep noise, then drop noise.
template <class S>
GateSampleT<S> gumbel_binary_sample(TapeT<S>* tape, TensorT<S> logits, S temperature, Rng& rng,
                                    bool hard) {
    if (!(temperature > S(0))) {
        throw ConfigError("gumbel_binary_sample: temperature must be > 0");
    }
    detail::require(logits.ndim() == 2 && logits.dim(1) == 2,
                    "gumbel_binary_sample: want [L x 2] logits, got " + shape_str(logits.shape()));
    const size_t l = logits.dim(0);
    GateSampleT<S> res;
    res.hard.resize(l);
    TensorT<S> soft(Shape{l});
    auto zdiff = std::make_shared<std::vector<S>>(l);
    for (size_t j = 0; j < l; ++j) {
        const S gk = static_cast<S>(rng.gumbel());
        const S gd = static_cast<S>(rng.gumbel());
        const S zk = logits.value()[j * 2 + 0] + gk;
        const S zd = logits.value()[j * 2 + 1] + gd;
        const S diff = (zk - zd) / temperature;
        (*zdiff)[j] = diff;
        // logistic of the tempered noisy logit gap == tempered 2-way softmax
        soft.value()[j] = S(1) / (S(1) + std::exp(-diff));
        res.hard[j] = zk >= zd ? 1 : 0;
    }
    if (detail::track(tape, {&logits})) {
        detail::mark_out(soft);
        tape->record([logits, soft, temperature]() mutable {
            if (!soft.has_grad()) return;
            const auto& go = soft.grad();
            auto& gl = logits.grad();
            for (size_t j = 0; j < go.size(); ++j) {
                const S p = soft.value()[j];
                const S d = go[j] * p * (S(1) - p) / temperature;
                gl[j * 2 + 0] += d;
                gl[j * 2 + 1] -= d;
            }
        });
    }
    res.soft = soft;
    res.gate = hard ? ops::straight_through(tape, soft, res.hard) : soft;
    return res;
}

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay)
// ---------------------------------------------------------------------------

template <class S>
class AdamWT {
   public:
    AdamWT(S lr, S weight_decay = S(0), S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
        : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (!(lr > S(0))) throw ConfigError("adamw: learning rate must be > 0");
    }

    // Optional per-parameter learning-rate scales (defaults to 1).
    void attach(std::vector<TensorT<S>> params, std::vector<S> lr_scales = {}) {
        params_ = std::move(params);
        if (lr_scales.empty()) lr_scales.assign(params_.size(), S(1));
        if (lr_scales.size() != params_.size()) {
            throw ConfigError("adamw: lr scale count does not match parameter count");
        }
        lr_scales_ = std::move(lr_scales);
        m_.clear();
        v_.clear();
        for (auto& p : params_) {
            m_.emplace_back(p.numel(), S(0));
            v_.emplace_back(p.numel(), S(0));
        }
    }

    // One update from the gradients accumulated on the parameters; zeroes the
    // gradients afterwards.
    void step() {
        ++step_count_;
        const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(step_count_));
        const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(step_count_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) continue;
            const S lr = lr_ * lr_scales_[i];
            auto& pv = p.value();
            auto& g = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < pv.size(); ++j) {
                m[j] = beta1_ * m[j] + (S(1) - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (S(1) - beta2_) * g[j] * g[j];
                const S mhat = m[j] / bc1;
                const S vhat = v[j] / bc2;
                pv[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * pv[j]);
            }
            p.zero_grad();
        }
    }

    int64_t step_count() const { return step_count_; }
    void set_step_count(int64_t n) { step_count_ = n; }

    std::vector<std::vector<S>>& moment1() { return m_; }
    std::vector<std::vector<S>>& moment2() { return v_; }

   private:
    S lr_, wd_, beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
    std::vector<TensorT<S>> params_;
    std::vector<S> lr_scales_;
    std::vector<std::vector<S>> m_, v_;
};

using AdamW = AdamWT<double>;

}  // namespace yofo
