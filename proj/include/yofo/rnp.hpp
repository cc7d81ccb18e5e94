#pragma once

#include <array>
#include <cmath>
#include <type_traits>
#include <numeric>
#include <vector>

#include "data.hpp"
#include "encoder.hpp"
#include "train.hpp"
#include "yofo.hpp"

namespace yofo {

// Generate-then-predict baseline: a generator encoder emits one keep/drop
// mask over the text tokens, a predictor encoder classifies the masked input.
// Masked positions are excluded from the predictor's attention with the same
// machinery the skim model uses, so unselected tokens provably cannot reach
// the prediction.

template <class S>
struct RnpModelT {
    ModelConfig cfg;
    bool share_encoder = false;  // tie generator and predictor encoder weights
    EncoderParamsT<S> gen;       // theta (encoder part)
    TensorT<S> gen_w, gen_b;     // per-token keep/drop head, D -> 2
    EncoderParamsT<S> pred;      // omega

    void init(const ModelConfig& config, bool share, Rng& rng) {
        cfg = config;
        share_encoder = share;
        gen.init(cfg, rng);
        gen_w = EncoderParamsT<S>::normal_param({cfg.width, 2}, rng);
        gen_b = EncoderParamsT<S>::const_param({2}, S(0));
        gen_b.value()[0] = S(2);  // keep-biased at init, like the skim gates
        if (share) {
            pred = gen;  // same storage: one gradient accumulation site
        } else {
            pred.init(cfg, rng);
        }
    }

    ParamList<S> named_params() const {
        ParamList<S> out;
        gen.collect(out, "gen.");
        out.emplace_back("gen_head.w", gen_w);
        out.emplace_back("gen_head.b", gen_b);
        if (!share_encoder) pred.collect(out, "pred.");
        return out;
    }

    std::vector<TensorT<S>> params() const {
        std::vector<TensorT<S>> out;
        for (auto& [name, t] : named_params()) out.push_back(t);
        return out;
    }

    std::vector<TensorT<S>> predictor_params() const {
        std::vector<TensorT<S>> out;
        ParamList<S> named;
        pred.collect(named, "pred.");
        for (auto& [name, t] : named) out.push_back(t);
        return out;
    }
};

using RnpModel = RnpModelT<double>;

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

template <class S>
struct RnpMaskT {
    BinaryMask hard;      // over text tokens (cls excluded), length L-1
    TensorT<S> soft;      // keep probabilities, differentiable
    TensorT<S> st;        // straight-through mask
};

// m = Gen(x; theta): encoder over the full input, per-token keep/drop logits,
// Gumbel binary sampling.
template <class S>
RnpMaskT<S> generate_mask(TapeT<S>* tape, const RnpModelT<S>& model, const std::vector<int>& ids,
                          std::type_identity_t<S> temperature, Rng& rng, bool hard = true) {
    auto h = embed(tape, model.gen, ids);
    for (const auto& ly : model.gen.layers) {
        h = forward_layer_masked(tape, ly, model.cfg, h, BinaryMask{});
    }
    auto text = ops::slice_rows(tape, h, 1, ids.size());  // drop the cls row
    auto logits = ops::linear(tape, text, model.gen_w, model.gen_b);
    auto sample = gumbel_binary_sample(tape, logits, temperature, rng, hard);
    RnpMaskT<S> out;
    out.hard = sample.hard;
    out.soft = sample.soft;
    out.st = sample.gate;
    return out;
}

// ---------------------------------------------------------------------------
// Predictor
// ---------------------------------------------------------------------------

// y = Pred(m ⊙ x; omega). The mask covers text tokens; the classification
// token is always kept. `modulate` (straight-through or soft) carries the
// generator gradient when given.
template <class S>
TensorT<S> predict_masked(TapeT<S>* tape, const RnpModelT<S>& model, const std::vector<int>& ids,
                          const BinaryMask& text_mask,
                          std::type_identity_t<const TensorT<S>*> text_modulate = nullptr,
                          Rng* dropout_rng = nullptr) {
    if (text_mask.size() != ids.size() - 1) {
        throw ContractError("predict_masked: mask length " + std::to_string(text_mask.size()) +
                            " vs " + std::to_string(ids.size() - 1) + " text tokens");
    }
    bool any = false;
    for (uint8_t b : text_mask) any |= (b != 0);
    if (!any) throw ContractError("predict_masked: degenerate mask, no text tokens kept");

    BinaryMask keep(ids.size(), 0);
    keep[0] = 1;
    for (size_t i = 0; i < text_mask.size(); ++i) keep[i + 1] = text_mask[i];

    TensorT<S> modulate;
    if (text_modulate) {
        // prepend a constant 1 for the cls position; gradient flows to the
        // text entries only
        TensorT<S> full(Shape{ids.size()});
        full.value()[0] = S(1);
        for (size_t i = 0; i < text_mask.size(); ++i) {
            full.value()[i + 1] = text_modulate->value()[i];
        }
        if (tape && text_modulate->requires_grad()) {
            full.set_requires_grad(true);
            TensorT<S> src = *text_modulate;
            tape->record([src, full]() mutable {
                if (!full.has_grad()) return;
                const auto& go = full.grad();
                auto& gs = src.grad();
                for (size_t i = 0; i + 1 < go.size(); ++i) gs[i] += go[i + 1];
            });
        }
        modulate = full;
    }

    auto h = embed(tape, model.pred, ids);
    for (const auto& ly : model.pred.layers) {
        h = forward_layer_masked(tape, ly, model.cfg, h, keep,
                                 modulate.defined() ? &modulate : nullptr, dropout_rng);
    }
    return classify(tape, model.pred, h);
}

// ---------------------------------------------------------------------------
// Omega regularizer: w_s * sum|m^i| + w_c * sum|m^{i+1} - m^i|
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> omega_regularizer(TapeT<S>* tape, TensorT<S> mask, double sparsity_weight = 1.0,
                             double contiguity_weight = 1.0) {
    if (mask.numel() < 2) throw ShapeError("omega_regularizer: mask length must be >= 2");
    auto count = ops::sum_all(tape, ops::abs_val(tape, mask));
    auto trans = ops::sum_all(tape, ops::abs_val(tape, ops::adjacent_diff(tape, mask)));
    return ops::add(tape, ops::scale(tape, count, static_cast<S>(sparsity_weight)),
                    ops::scale(tape, trans, static_cast<S>(contiguity_weight)));
}

// ---------------------------------------------------------------------------
// Skew pretraining (interlocking probe): overfit the predictor on
// (first sentence, label) pairs for a fixed number of optimizer steps.
// The generator stays untouched. Step budget follows x = (#samples/500) * k.
// ---------------------------------------------------------------------------

inline size_t skew_steps(size_t n_samples, size_t k) {
    return static_cast<size_t>(static_cast<double>(n_samples) / 500.0 * static_cast<double>(k));
}

// The generator stays untouched; only the predictor overfits.
template <class S>
void skew_pretrain(RnpModelT<S>& model, const std::vector<Example>& data,
                   const std::vector<int>& delimiter_ids, size_t steps, const TrainConfig& tc) {
    skew_pretrain_encoder(model.pred, model.cfg, data, delimiter_ids, steps, tc);
}

// ---------------------------------------------------------------------------
// End-to-end training
// ---------------------------------------------------------------------------

template <class S>
EpochStats train_rnp_epoch(RnpModelT<S>& model, const std::vector<Example>& data,
                           const TrainConfig& tc, size_t epoch,
                           std::type_identity_t<AdamWT<S>*> opt) {
    if (data.empty()) throw ContractError("train_rnp_epoch: empty dataset");
    tc.validate();
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(tc.seed, epoch, 31));
    shuffle_rng.shuffle(order);
    Rng noise(derive_seed(tc.seed, epoch, 37));
    Rng drop(derive_seed(tc.seed, epoch, 41));
    Rng* drop_ptr = model.cfg.dropout > 0.0 ? &drop : nullptr;

    EpochStats stats;
    stats.retention.assign(1, 0.0);
    for (size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
        const size_t end = std::min(order.size(), begin + tc.batch_size);
        const S seed_scale = S(1) / static_cast<S>(end - begin);
        for (size_t idx = begin; idx < end; ++idx) {
            const Example& ex = data[order[idx]];
            const auto ids = with_cls(ex.tokens);
            TapeT<S> tape;
            auto mask = generate_mask(&tape, model, ids, static_cast<S>(tc.temperature), noise,
                                      true);
            size_t kept = 0;
            for (uint8_t b : mask.hard) kept += b;
            if (kept == 0) {
                // degenerate draw: keep the generator's single best token so
                // the predictor contract holds
                size_t best = 0;
                S best_v = mask.soft.value()[0];
                for (size_t j = 1; j < mask.hard.size(); ++j) {
                    if (mask.soft.value()[j] > best_v) {
                        best_v = mask.soft.value()[j];
                        best = j;
                    }
                }
                mask.hard[best] = 1;
                mask.st.value()[best] = S(1);
                ++stats.cls_only_events;
            }
            auto logits = predict_masked(&tape, model, ids, mask.hard, &mask.st, drop_ptr);
            auto task = ops::cross_entropy(&tape, logits, ex.label);
            auto omega = omega_regularizer(&tape, mask.soft, tc.omega_sparsity,
                                           tc.omega_contiguity);
            auto loss = ops::add(&tape, task, omega);
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv)) {
                throw NumericError("train_rnp_epoch: non-finite loss at batch " +
                                   std::to_string(begin / tc.batch_size) +
                                   " (task=" + std::to_string(static_cast<double>(task.item())) +
                                   ", omega=" + std::to_string(static_cast<double>(omega.item())) +
                                   ")");
            }
            if (opt) tape.backward(loss, seed_scale);
            stats.task += static_cast<double>(task.item());
            stats.sparsity += static_cast<double>(omega.item());
            stats.total += lv;
            stats.retention[0] +=
                static_cast<double>(kept == 0 ? 1 : kept) / static_cast<double>(mask.hard.size());
        }
        if (opt) {
            opt->step();
            ++stats.steps;
        }
    }
    const double n = static_cast<double>(data.size());
    stats.task /= n;
    stats.sparsity /= n;
    stats.total /= n;
    stats.retention[0] /= n;
    return stats;
}

// Deterministic inference: keep-logit argmax mask, predictor on kept tokens.
template <class S>
RationaleResult rnp_infer(const RnpModelT<S>& model, const std::vector<int>& ids) {
    RationaleResult res;
    auto h = embed<S>(nullptr, model.gen, ids);
    for (const auto& ly : model.gen.layers) {
        h = forward_layer_masked<S>(nullptr, ly, model.cfg, h, BinaryMask{});
    }
    auto text = ops::slice_rows<S>(nullptr, h, 1, ids.size());
    auto logits = ops::linear<S>(nullptr, text, model.gen_w, model.gen_b);
    const size_t lt = ids.size() - 1;
    res.rationale.assign(lt, 0);
    for (size_t j = 0; j < lt; ++j) {
        res.rationale[j] = logits.value()[j * 2 + 0] >= logits.value()[j * 2 + 1] ? 1 : 0;
    }
    bool any = false;
    for (uint8_t b : res.rationale) any |= (b != 0);
    if (!any) {
        size_t best = 0;
        S best_v = logits.value()[0] - logits.value()[1];
        for (size_t j = 1; j < lt; ++j) {
            const S v = logits.value()[j * 2 + 0] - logits.value()[j * 2 + 1];
            if (v > best_v) {
                best_v = v;
                best = j;
            }
        }
        res.rationale[best] = 1;
    }
    auto out = predict_masked<S>(nullptr, model, ids, res.rationale);
    res.logits = {static_cast<double>(out.value()[0]), static_cast<double>(out.value()[1])};
    res.prediction = res.logits[1] > res.logits[0] ? 1 : 0;
    std::vector<size_t> kept;
    kept.push_back(0);
    for (size_t j = 0; j < lt; ++j) {
        if (res.rationale[j]) kept.push_back(j + 1);
    }
    res.kept.assign(1, kept);
    return res;
}

}  // namespace yofo
