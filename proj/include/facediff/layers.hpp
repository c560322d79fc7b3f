#pragma once

#include <cmath>
#include <string>

#include "facediff/autodiff.hpp"
#include "facediff/params.hpp"

// Model layers on top of the tape: linear maps, multi-head attention with an
// additive mask, FiLM modulation, adaLN-style gated conditioning, the
// feed-forward block, and the zero-initialized projection used by adapters.
// Each layer owns references to parameters registered in a ParamStore under
// a caller-supplied name prefix.

namespace facediff {

template <typename Real>
struct Linear {
    Parameter<Real>* w = nullptr;  // in×out
    Parameter<Real>* b = nullptr;  // 1×out

    Linear() = default;
    Linear(ParamStore<Real>& ps, const std::string& prefix, int64_t in, int64_t out,
           Init kind = Init::kFanIn) {
        w = ps.create(prefix + ".w", in, out, kind);
        b = ps.create(prefix + ".b", 1, out, Init::kZeros);
    }

    NodePtr<Real> operator()(NodePtr<Real> x) const {
        return add(matmul(x, param_leaf(*w)), param_leaf(*b));
    }
};

// Scaled dot-product multi-head attention. q_in is T×d_model, kv_in is
// S×d_kv; `mask` (T×S additive, 0 or sentinel) is optional. Self-attention
// passes the same node for q_in and kv_in.
template <typename Real>
struct MultiHeadAttention {
    int64_t d_model = 0;
    int64_t n_heads = 0;
    Linear<Real> wq, wk, wv, wo;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore<Real>& ps, const std::string& prefix, int64_t d_model_,
                       int64_t n_heads_, int64_t d_kv = -1)
        : d_model(d_model_), n_heads(n_heads_) {
        if (d_model % n_heads != 0)
            throw std::invalid_argument("d_model must be divisible by n_heads");
        if (d_kv < 0) d_kv = d_model;
        wq = Linear<Real>(ps, prefix + ".q", d_model, d_model);
        wk = Linear<Real>(ps, prefix + ".k", d_kv, d_model);
        wv = Linear<Real>(ps, prefix + ".v", d_kv, d_model);
        wo = Linear<Real>(ps, prefix + ".o", d_model, d_model);
    }

    NodePtr<Real> operator()(NodePtr<Real> q_in, NodePtr<Real> kv_in,
                             const Tensor<Real>* mask = nullptr) const {
        const int64_t dh = d_model / n_heads;
        if (mask && (mask->rows() != q_in->val.rows() || mask->cols() != kv_in->val.rows()))
            throw std::invalid_argument("attention mask shape mismatch");
        auto q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
        std::vector<NodePtr<Real>> heads;
        heads.reserve(size_t(n_heads));
        const Real inv_sqrt_dh = Real(1) / Real(std::sqrt(double(dh)));
        for (int64_t h = 0; h < n_heads; ++h) {
            auto qh = col_slice(q, h * dh, (h + 1) * dh);
            auto kh = col_slice(k, h * dh, (h + 1) * dh);
            auto vh = col_slice(v, h * dh, (h + 1) * dh);
            auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
            if (mask) scores = add(scores, constant(Tensor<Real>(*mask)));
            heads.push_back(matmul(softmax_rows(scores), vh));
        }
        return wo(col_concat(heads));
    }
};

// FiLM modulation: out = (1 + γ(cond)) ⊙ x + δ(cond). γ and δ are affine in
// cond with zero-initialized weights, so a fresh layer is the identity —
// bit-for-bit, since x + 0·anything leaves x untouched only when the zero
// products are exact, which they are with zero weights.
template <typename Real>
struct Film {
    Linear<Real> gamma, delta;

    Film() = default;
    Film(ParamStore<Real>& ps, const std::string& prefix, int64_t d_cond, int64_t d) {
        gamma = Linear<Real>(ps, prefix + ".gamma", d_cond, d, Init::kZeros);
        delta = Linear<Real>(ps, prefix + ".delta", d_cond, d, Init::kZeros);
    }

    // cond: T×d_cond aligned with x, or 1×d_cond broadcast.
    NodePtr<Real> operator()(NodePtr<Real> x, NodePtr<Real> cond) const {
        auto g = gamma(cond);
        auto d = delta(cond);
        return add(add(x, mul(x, g)), d);  // x + x⊙γ + δ = (1+γ)⊙x + δ
    }
};

// Position-wise feed-forward block with GELU, hidden width `mult`·d.
template <typename Real>
struct FeedForward {
    Linear<Real> up, down;

    FeedForward() = default;
    FeedForward(ParamStore<Real>& ps, const std::string& prefix, int64_t d, int64_t mult = 4) {
        up = Linear<Real>(ps, prefix + ".up", d, d * mult);
        down = Linear<Real>(ps, prefix + ".down", d * mult, d);
    }

    NodePtr<Real> operator()(NodePtr<Real> x) const { return down(gelu(up(x))); }
};

// adaLN-style gated conditioning around a sublayer:
//   out = x + g(cond) ⊙ SubLayer((1 + s(cond)) ⊙ LayerNorm(x) + b(cond))
// with the gate g zero-initialized, so a fresh block is the identity
// regardless of the sublayer. cond is a single fused coarse row.
template <typename Real>
struct AdaLN {
    Linear<Real> scale_map, shift_map, gate_map;

    AdaLN() = default;
    AdaLN(ParamStore<Real>& ps, const std::string& prefix, int64_t d_cond, int64_t d) {
        scale_map = Linear<Real>(ps, prefix + ".scale", d_cond, d, Init::kZeros);
        shift_map = Linear<Real>(ps, prefix + ".shift", d_cond, d, Init::kZeros);
        gate_map = Linear<Real>(ps, prefix + ".gate", d_cond, d, Init::kZeros);
    }

    // Modulated input handed to the sublayer.
    NodePtr<Real> modulate(NodePtr<Real> x, NodePtr<Real> cond) const {
        auto h = layernorm_rows(x);
        return add(add(h, mul(h, scale_map(cond))), shift_map(cond));
    }

    // Gated residual merge of the sublayer's output.
    NodePtr<Real> merge(NodePtr<Real> x, NodePtr<Real> sub_out, NodePtr<Real> cond) const {
        return add(x, mul(sub_out, gate_map(cond)));
    }
};

// Affine map whose weight and bias start at exactly zero: the adapter's
// write path into the base stream. Output is the zero matrix until the
// optimizer first touches it.
template <typename Real>
struct ZeroProj {
    Parameter<Real>* w = nullptr;
    Parameter<Real>* b = nullptr;

    ZeroProj() = default;
    ZeroProj(ParamStore<Real>& ps, const std::string& prefix, int64_t in, int64_t out) {
        w = ps.create(prefix + ".w", in, out, Init::kZeros);
        b = ps.create(prefix + ".b", 1, out, Init::kZeros);
    }

    NodePtr<Real> operator()(NodePtr<Real> x) const {
        return add(matmul(x, param_leaf(*w)), param_leaf(*b));
    }
};

// Fixed sinusoidal position table, T×d. Not a parameter: the same table is
// regenerated from (T, d) wherever needed.
template <typename Real>
Tensor<Real> sinusoidal_table(int64_t t_frames, int64_t d) {
    Tensor<Real> pe(t_frames, d);
    for (int64_t t = 0; t < t_frames; ++t)
        for (int64_t i = 0; i < d; ++i) {
            double rate = std::pow(10000.0, -double(2 * (i / 2)) / double(d));
            double angle = double(t) * rate;
            pe.at(t, i) = Real((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

}  // namespace facediff
