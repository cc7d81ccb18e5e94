#pragma once

#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace yofo {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct ModelConfig {
    size_t layers = 4;       // N
    size_t heads = 4;        // H
    size_t width = 64;       // D
    size_t ff_width = 256;   // D_ff
    size_t gate_width = 64;  // hidden width of the skim-gate MLP
    size_t vocab_size = 0;
    size_t max_len = 128;    // includes the classification token slot
    double dropout = 0.1;

    void validate() const {
        if (layers < 1) throw ConfigError("model: layer count must be >= 1");
        if (heads < 1 || width % heads != 0) {
            throw ConfigError("model: width " + std::to_string(width) +
                              " must be divisible by head count " + std::to_string(heads));
        }
        if (max_len < 2) {
            throw ConfigError("model: max_len must be >= 2 (classification token plus text)");
        }
        if (vocab_size < 1) throw ConfigError("model: vocabulary is empty");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
    }
};

template <class S>
struct EncoderLayerParamsT {
    TensorT<S> wq, bq, wk, bk, wv, bv, wo, bo;
    TensorT<S> ln1_g, ln1_b;
    TensorT<S> w1, b1, w2, b2;
    TensorT<S> ln2_g, ln2_b;
};

// Named parameter list; the name order defines the checkpoint layout.
template <class S>
using ParamList = std::vector<std::pair<std::string, TensorT<S>>>;

template <class S>
struct EncoderParamsT {
    TensorT<S> tok_emb;  // vocab x D
    TensorT<S> pos_emb;  // max_len x D
    std::vector<EncoderLayerParamsT<S>> layers;
    TensorT<S> cls_w;  // D x 2
    TensorT<S> cls_b;  // 2

    static TensorT<S> normal_param(Shape shape, Rng& rng, double stddev = kInitStd) {
        auto t = TensorT<S>::param(std::move(shape));
        for (auto& x : t.value()) x = static_cast<S>(rng.normal(0.0, stddev));
        return t;
    }

    static TensorT<S> const_param(Shape shape, S fill) {
        auto t = TensorT<S>::param(std::move(shape));
        for (auto& x : t.value()) x = fill;
        return t;
    }

    void init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        const size_t d = cfg.width, f = cfg.ff_width;
        tok_emb = normal_param({cfg.vocab_size, d}, rng);
        pos_emb = normal_param({cfg.max_len, d}, rng);
        layers.clear();
        for (size_t i = 0; i < cfg.layers; ++i) {
            EncoderLayerParamsT<S> ly;
            ly.wq = normal_param({d, d}, rng);
            ly.bq = const_param({d}, S(0));
            ly.wk = normal_param({d, d}, rng);
            ly.bk = const_param({d}, S(0));
            ly.wv = normal_param({d, d}, rng);
            ly.bv = const_param({d}, S(0));
            ly.wo = normal_param({d, d}, rng);
            ly.bo = const_param({d}, S(0));
            ly.ln1_g = const_param({d}, S(1));
            ly.ln1_b = const_param({d}, S(0));
            ly.w1 = normal_param({d, f}, rng);
            ly.b1 = const_param({f}, S(0));
            ly.w2 = normal_param({f, d}, rng);
            ly.b2 = const_param({d}, S(0));
            ly.ln2_g = const_param({d}, S(1));
            ly.ln2_b = const_param({d}, S(0));
            layers.push_back(std::move(ly));
        }
        cls_w = normal_param({d, 2}, rng);
        cls_b = const_param({2}, S(0));
    }

    void collect(ParamList<S>& out, const std::string& prefix) const {
        out.emplace_back(prefix + "tok_emb", tok_emb);
        out.emplace_back(prefix + "pos_emb", pos_emb);
        for (size_t i = 0; i < layers.size(); ++i) {
            const auto& ly = layers[i];
            const std::string p = prefix + "layer" + std::to_string(i) + ".";
            out.emplace_back(p + "wq", ly.wq);
            out.emplace_back(p + "bq", ly.bq);
            out.emplace_back(p + "wk", ly.wk);
            out.emplace_back(p + "bk", ly.bk);
            out.emplace_back(p + "wv", ly.wv);
            out.emplace_back(p + "bv", ly.bv);
            out.emplace_back(p + "wo", ly.wo);
            out.emplace_back(p + "bo", ly.bo);
            out.emplace_back(p + "ln1_g", ly.ln1_g);
            out.emplace_back(p + "ln1_b", ly.ln1_b);
            out.emplace_back(p + "w1", ly.w1);
            out.emplace_back(p + "b1", ly.b1);
            out.emplace_back(p + "w2", ly.w2);
            out.emplace_back(p + "b2", ly.b2);
            out.emplace_back(p + "ln2_g", ly.ln2_g);
            out.emplace_back(p + "ln2_b", ly.ln2_b);
        }
        out.emplace_back(prefix + "cls_w", cls_w);
        out.emplace_back(prefix + "cls_b", cls_b);
    }
};

// H_0 = token embedding + learned positional embedding. `ids` already carry
// the classification token at position 0.
template <class S>
TensorT<S> embed(TapeT<S>* tape, const EncoderParamsT<S>& params, const std::vector<int>& ids) {
    if (ids.empty()) throw ContractError("embed: empty token sequence");
    if (ids.size() > params.pos_emb.dim(0)) {
        throw DataError("embed: sequence length " + std::to_string(ids.size()) +
                        " exceeds max_len " + std::to_string(params.pos_emb.dim(0)));
    }
    auto tok = ops::embedding(tape, params.tok_emb, ids);
    auto pos = ops::slice_rows(tape, params.pos_emb, 0, ids.size());
    return ops::add(tape, tok, pos);
}

// One transformer layer over the full-length sequence with masked attention:
// keys/values at masked positions contribute exactly zero to every output
// position, and remaining attention weights renormalize over the kept set.
// Masked positions still produce their own (ignored) output rows.
//   hard_keep : key/value keep mask (empty = keep all); hard_keep[0] must be 1
//   modulate  : optional [L] mask tensor multiplied into attention rows,
//               carries straight-through or soft gate gradients
template <class S>
TensorT<S> forward_layer_masked(TapeT<S>* tape, const EncoderLayerParamsT<S>& ly,
                                const ModelConfig& cfg, TensorT<S> h_prev,
                                const BinaryMask& hard_keep,
                                std::type_identity_t<const TensorT<S>*> modulate = nullptr,
                                Rng* dropout_rng = nullptr,
                                std::type_identity_t<ops::AttentionProbsT<S>*> probs_out =
                                    nullptr) {
    if (!hard_keep.empty() && !hard_keep[0]) {
        throw ContractError("forward_layer_masked: classification token (position 0) is masked");
    }
    auto q = ops::linear(tape, h_prev, ly.wq, ly.bq);
    auto k = ops::linear(tape, h_prev, ly.wk, ly.bk);
    auto v = ops::linear(tape, h_prev, ly.wv, ly.bv);
    auto ctx = ops::multi_head_attention(tape, q, k, v, cfg.heads, hard_keep, modulate, probs_out);
    auto attn = ops::linear(tape, ctx, ly.wo, ly.bo);
    if (dropout_rng && cfg.dropout > 0.0) attn = ops::dropout(tape, attn, cfg.dropout, *dropout_rng);
    auto x = ops::layer_norm(tape, ops::add(tape, h_prev, attn), ly.ln1_g, ly.ln1_b,
                             static_cast<S>(kLayerNormEps));
    auto ff = ops::linear(tape, ops::gelu(tape, ops::linear(tape, x, ly.w1, ly.b1)), ly.w2, ly.b2);
    if (dropout_rng && cfg.dropout > 0.0) ff = ops::dropout(tape, ff, cfg.dropout, *dropout_rng);
    return ops::layer_norm(tape, ops::add(tape, x, ff), ly.ln2_g, ly.ln2_b,
                           static_cast<S>(kLayerNormEps));
}

// Standard unmasked layer over an already-shortened sequence (hard pruning
// path). The classification token must sit at index 0 of the reduced rows.
template <class S>
TensorT<S> forward_layer_pruned(TapeT<S>* tape, const EncoderLayerParamsT<S>& ly,
                                const ModelConfig& cfg, TensorT<S> h_kept,
                                std::type_identity_t<ops::AttentionProbsT<S>*> probs_out =
                                    nullptr) {
    if (h_kept.numel() == 0 || h_kept.dim(0) == 0) {
        throw ContractError("forward_layer_pruned: empty sequence");
    }
    return forward_layer_masked<S>(tape, ly, cfg, std::move(h_kept), BinaryMask{}, nullptr,
                                   nullptr, probs_out);
}

// Linear head over the classification token's final representation.
template <class S>
TensorT<S> classify(TapeT<S>* tape, const EncoderParamsT<S>& params, TensorT<S> h_final) {
    auto cls_row = ops::slice_rows(tape, std::move(h_final), 0, 1);
    return ops::linear(tape, cls_row, params.cls_w, params.cls_b);
}

// Value-only row gather (inference pruning); not differentiable.
template <class S>
TensorT<S> gather_rows(const TensorT<S>& x, const std::vector<size_t>& rows) {
    const size_t c = x.dim(1);
    TensorT<S> out(Shape{rows.size(), c});
    for (size_t i = 0; i < rows.size(); ++i) {
        const S* src = x.value().data() + rows[i] * c;
        std::copy(src, src + c, out.value().data() + i * c);
    }
    return out;
}

// Plain classification forward (no masks, no pruning). Optionally records all
// hidden states H_0..H_N for analysis.
template <class S>
TensorT<S> plain_forward(TapeT<S>* tape, const EncoderParamsT<S>& params, const ModelConfig& cfg,
                         const std::vector<int>& ids, Rng* dropout_rng = nullptr,
                         std::type_identity_t<std::vector<TensorT<S>>*> hidden_out = nullptr) {
    auto h = embed(tape, params, ids);
    if (hidden_out) hidden_out->push_back(h);
    for (const auto& ly : params.layers) {
        h = forward_layer_masked(tape, ly, cfg, h, BinaryMask{}, nullptr, dropout_rng);
        if (hidden_out) hidden_out->push_back(h);
    }
    return classify(tape, params, h);
}

}  // namespace yofo
