#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "data.hpp"
#include "encoder.hpp"
#include "rnp.hpp"
#include "train.hpp"
#include "yofo.hpp"

namespace yofo {

// Token-level rationale metrics. The classification token is excluded from
// every rationale metric by construction: masks here cover text tokens only.

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// P = |pred ∩ gold| / |pred|, R = |pred ∩ gold| / |gold|, F1 harmonic mean.
// Empty prediction or empty gold contributes 0 to the respective ratio; F1 is
// 0 whenever P + R == 0.
inline Prf token_prf(const BinaryMask& pred, const BinaryMask& gold) {
    if (pred.size() != gold.size()) {
        throw ContractError("token_prf: mask lengths differ, " + std::to_string(pred.size()) +
                            " vs " + std::to_string(gold.size()));
    }
    size_t np = 0, ng = 0, ni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gold[i] != 0;
        np += p;
        ng += g;
        ni += (p && g);
    }
    Prf out;
    out.precision = np == 0 ? 0.0 : static_cast<double>(ni) / static_cast<double>(np);
    out.recall = ng == 0 ? 0.0 : static_cast<double>(ni) / static_cast<double>(ng);
    out.f1 = (out.precision + out.recall) == 0.0
                 ? 0.0
                 : 2.0 * out.precision * out.recall / (out.precision + out.recall);
    return out;
}

// S = #selected tokens / #tokens, over text tokens.
inline double sparsity(const BinaryMask& pred) {
    if (pred.empty()) return 0.0;
    size_t n = 0;
    for (uint8_t b : pred) n += (b != 0);
    return static_cast<double>(n) / static_cast<double>(pred.size());
}

// Accuracy of always predicting the majority class.
inline double majority_baseline(const std::vector<Example>& data) {
    if (data.empty()) throw ContractError("majority_baseline: empty dataset");
    size_t pos = 0;
    for (const auto& ex : data) pos += (ex.label == 1);
    const size_t major = std::max(pos, data.size() - pos);
    return static_cast<double>(major) / static_cast<double>(data.size());
}

// Aggregate metrics bundle written to metrics records. Field names S, P, R,
// F1, ACC match the exported record schema.
struct Metrics {
    double S = 0.0;
    double P = 0.0;
    double R = 0.0;
    double F1 = 0.0;
    double ACC = 0.0;
    bool has_gold = false;
    std::vector<double> layer_retention;  // fraction kept per layer (cls included)
    std::vector<double> layer_f1;         // per-layer rationale F1 vs gold
};

// ---------------------------------------------------------------------------
// Dataset-level evaluation of a skim model
// ---------------------------------------------------------------------------

template <class S>
Metrics evaluate_yofo(const YofoModelT<S>& model, const std::vector<Example>& data) {
    if (data.empty()) throw ContractError("evaluate_yofo: empty dataset");
    Metrics m;
    m.layer_retention.assign(model.cfg.layers, 0.0);
    m.layer_f1.assign(model.cfg.layers, 0.0);
    size_t gold_n = 0;
    for (const auto& ex : data) {
        auto res = infer(model, with_cls(ex.tokens));
        m.ACC += (res.prediction == ex.label);
        m.S += sparsity(res.rationale);
        const size_t full = ex.tokens.size() + 1;
        for (size_t i = 0; i < res.kept.size(); ++i) {
            m.layer_retention[i] +=
                static_cast<double>(res.kept[i].size()) / static_cast<double>(full);
        }
        if (ex.gold) {
            ++gold_n;
            auto prf = token_prf(res.rationale, *ex.gold);
            m.P += prf.precision;
            m.R += prf.recall;
            m.F1 += prf.f1;
            for (size_t i = 0; i < res.kept.size(); ++i) {
                BinaryMask layer_mask(ex.tokens.size(), 0);
                for (size_t idx : res.kept[i]) {
                    if (idx > 0) layer_mask[idx - 1] = 1;
                }
                m.layer_f1[i] += token_prf(layer_mask, *ex.gold).f1;
            }
        }
    }
    const double n = static_cast<double>(data.size());
    m.ACC /= n;
    m.S /= n;
    for (auto& r : m.layer_retention) r /= n;
    if (gold_n > 0) {
        m.has_gold = true;
        m.P /= static_cast<double>(gold_n);
        m.R /= static_cast<double>(gold_n);
        m.F1 /= static_cast<double>(gold_n);
        for (auto& f : m.layer_f1) f /= static_cast<double>(gold_n);
    }
    return m;
}

template <class S>
Metrics evaluate_rnp(const RnpModelT<S>& model, const std::vector<Example>& data) {
    if (data.empty()) throw ContractError("evaluate_rnp: empty dataset");
    Metrics m;
    size_t gold_n = 0;
    for (const auto& ex : data) {
        auto res = rnp_infer(model, with_cls(ex.tokens));
        m.ACC += (res.prediction == ex.label);
        m.S += sparsity(res.rationale);
        if (ex.gold) {
            ++gold_n;
            auto prf = token_prf(res.rationale, *ex.gold);
            m.P += prf.precision;
            m.R += prf.recall;
            m.F1 += prf.f1;
        }
    }
    const double n = static_cast<double>(data.size());
    m.ACC /= n;
    m.S /= n;
    if (gold_n > 0) {
        m.has_gold = true;
        m.P /= static_cast<double>(gold_n);
        m.R /= static_cast<double>(gold_n);
        m.F1 /= static_cast<double>(gold_n);
    }
    return m;
}

template <class S>
Metrics evaluate_plain(const EncoderParamsT<S>& enc, const ModelConfig& cfg,
                       const std::vector<Example>& data) {
    Metrics m;
    m.ACC = plain_accuracy(enc, cfg, data);
    m.S = 1.0;
    return m;
}

// ---------------------------------------------------------------------------
// Per-layer rationale decoding
// ---------------------------------------------------------------------------

struct LayerDecode {
    std::vector<std::vector<std::string>> layers;  // surface tokens kept per layer
    std::vector<std::string> rationale;            // final layer, the reported rationale
    int prediction = 0;
};

template <class S>
LayerDecode decode_layers(const YofoModelT<S>& model, const Example& ex, const Vocab& vocab) {
    auto res = infer(model, with_cls(ex.tokens));
    LayerDecode out;
    out.prediction = res.prediction;
    for (size_t i = 0; i < res.kept.size(); ++i) {
        std::vector<std::string> toks;
        size_t prev = 0;
        for (size_t idx : res.kept[i]) {
            if (idx == 0) continue;  // classification token is not text
            if (idx < prev) throw ContractError("decode_layers: kept indices out of order");
            prev = idx;
            toks.push_back(vocab.token(ex.tokens[idx - 1]));
        }
        // nested-set audit: every kept index must also be kept one layer up
        if (i > 0) {
            size_t j = 0;
            for (size_t idx : res.kept[i]) {
                while (j < res.kept[i - 1].size() && res.kept[i - 1][j] < idx) ++j;
                if (j == res.kept[i - 1].size() || res.kept[i - 1][j] != idx) {
                    throw ContractError("decode_layers: kept sets are not nested at layer " +
                                        std::to_string(i));
                }
            }
        }
        out.layers.push_back(std::move(toks));
    }
    out.rationale = out.layers.back();
    return out;
}

// ---------------------------------------------------------------------------
// Rationale-retrain importance check: train a fresh plain classifier on
// rationale-only inputs and report dev accuracy.
// ---------------------------------------------------------------------------

inline std::vector<Example> mask_to_inputs(const std::vector<Example>& data,
                                           const std::vector<BinaryMask>& rationales) {
    if (data.size() != rationales.size()) {
        throw ContractError("mask_to_inputs: dataset and rationale counts differ");
    }
    std::vector<Example> out;
    out.reserve(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
        const auto& ex = data[i];
        const auto& m = rationales[i];
        if (m.size() != ex.tokens.size()) {
            throw ContractError("mask_to_inputs: rationale length mismatch at example " +
                                std::to_string(i));
        }
        Example r;
        r.label = ex.label;
        r.aspect = ex.aspect;
        for (size_t t = 0; t < m.size(); ++t) {
            if (m[t]) r.tokens.push_back(ex.tokens[t]);
        }
        out.push_back(std::move(r));
    }
    return out;
}

struct RetrainReport {
    double rationale_acc = 0.0;  // classifier trained on rationale-only inputs
    double full_acc = 0.0;       // same recipe on full texts
    double majority_acc = 0.0;
};

// Trains two fresh classifiers with one recipe (rationale-only inputs vs full
// texts) and reports dev accuracy next to the majority baseline. Rationale
// inputs that end up empty keep only the classification token.
template <class S>
RetrainReport rationale_retrain(const std::vector<Example>& train_rats,
                                const std::vector<Example>& dev_rats,
                                const std::vector<Example>& train_full,
                                const std::vector<Example>& dev_full, const ModelConfig& base_cfg,
                                const TrainConfig& tc) {
    ModelConfig cfg = base_cfg;
    cfg.dropout = 0.0;
    RetrainReport rep;
    rep.majority_acc = majority_baseline(dev_full);
    {
        Rng rng(derive_seed(tc.seed, 101));
        EncoderParamsT<S> enc;
        enc.init(cfg, rng);
        AdamWT<S> opt(static_cast<S>(tc.lr), static_cast<S>(tc.weight_decay));
        ParamList<S> named;
        enc.collect(named, "enc.");
        std::vector<TensorT<S>> params;
        for (auto& [k, v] : named) params.push_back(v);
        opt.attach(params);
        for (size_t e = 0; e < tc.epochs; ++e) plain_train_epoch(enc, cfg, train_rats, tc, e, &opt);
        rep.rationale_acc = plain_accuracy(enc, cfg, dev_rats);
    }
    {
        Rng rng(derive_seed(tc.seed, 101));  // same init for a like-for-like anchor
        EncoderParamsT<S> enc;
        enc.init(cfg, rng);
        AdamWT<S> opt(static_cast<S>(tc.lr), static_cast<S>(tc.weight_decay));
        ParamList<S> named;
        enc.collect(named, "enc.");
        std::vector<TensorT<S>> params;
        for (auto& [k, v] : named) params.push_back(v);
        opt.attach(params);
        for (size_t e = 0; e < tc.epochs; ++e) plain_train_epoch(enc, cfg, train_full, tc, e, &opt);
        rep.full_acc = plain_accuracy(enc, cfg, dev_full);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Token representation similarity across layers of a plain classifier.
// intra[i]: mean pairwise cosine among text-token representations inside
// layer i (i = 1..N). inter[i]: mean cosine between each text token's
// representation at layers i-1 and i (H_0 is the embedding output), so both
// curves have length N.
// ---------------------------------------------------------------------------

struct SimilarityCurves {
    std::vector<double> intra;
    std::vector<double> inter;
};

inline double cosine(const double* a, const double* b, size_t d) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t j = 0; j < d; ++j) {
        dot += a[j] * b[j];
        na += a[j] * a[j];
        nb += b[j] * b[j];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    return denom == 0.0 ? 0.0 : dot / denom;
}

template <class S>
SimilarityCurves layer_similarity(const EncoderParamsT<S>& enc, const ModelConfig& cfg,
                                  const std::vector<Example>& data) {
    if (data.empty()) throw ContractError("layer_similarity: empty dataset");
    const size_t n_layers = cfg.layers;
    SimilarityCurves curves;
    curves.intra.assign(n_layers, 0.0);
    curves.inter.assign(n_layers, 0.0);
    std::vector<size_t> intra_cnt(n_layers, 0), inter_cnt(n_layers, 0);
    for (const auto& ex : data) {
        std::vector<TensorT<S>> hidden;
        plain_forward<S>(nullptr, enc, cfg, with_cls(ex.tokens), nullptr, &hidden);
        const size_t lt = ex.tokens.size();
        const size_t d = cfg.width;
        std::vector<double> row_a(d), row_b(d);
        for (size_t layer = 1; layer <= n_layers; ++layer) {
            const auto& h = hidden[layer].value();
            const auto& hp = hidden[layer - 1].value();
            // text tokens only (skip the classification row 0)
            for (size_t a = 1; a <= lt; ++a) {
                for (size_t j = 0; j < d; ++j) row_a[j] = static_cast<double>(h[a * d + j]);
                for (size_t b = a + 1; b <= lt; ++b) {
                    for (size_t j = 0; j < d; ++j) row_b[j] = static_cast<double>(h[b * d + j]);
                    curves.intra[layer - 1] += cosine(row_a.data(), row_b.data(), d);
                    ++intra_cnt[layer - 1];
                }
                for (size_t j = 0; j < d; ++j) row_b[j] = static_cast<double>(hp[a * d + j]);
                curves.inter[layer - 1] += cosine(row_a.data(), row_b.data(), d);
                ++inter_cnt[layer - 1];
            }
        }
    }
    for (size_t i = 0; i < n_layers; ++i) {
        if (intra_cnt[i]) curves.intra[i] /= static_cast<double>(intra_cnt[i]);
        if (inter_cnt[i]) curves.inter[i] /= static_cast<double>(inter_cnt[i]);
    }
    return curves;
}

}  // namespace yofo
