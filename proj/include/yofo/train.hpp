#pragma once

#include <cmath>
#include <numeric>
#include <type_traits>
#include <vector>

#include "data.hpp"
#include "encoder.hpp"
#include "yofo.hpp"

namespace yofo {

// Plain-classifier helpers shared by the baseline predictor, the skew
// pretraining probe and the rationale-retrain check.

template <class S>
struct PlainStats {
    double task = 0.0;
    size_t steps = 0;
};

template <class S>
PlainStats<S> plain_train_epoch(EncoderParamsT<S>& enc, const ModelConfig& cfg,
                                const std::vector<Example>& data, const TrainConfig& tc,
                                size_t epoch, std::type_identity_t<AdamWT<S>*> opt) {
    if (data.empty()) throw ContractError("plain_train_epoch: empty dataset");
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(tc.seed, epoch, 11));
    shuffle_rng.shuffle(order);
    Rng drop(derive_seed(tc.seed, epoch, 13));
    Rng* drop_ptr = cfg.dropout > 0.0 ? &drop : nullptr;

    PlainStats<S> stats;
    for (size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
        const size_t end = std::min(order.size(), begin + tc.batch_size);
        const S seed_scale = S(1) / static_cast<S>(end - begin);
        for (size_t idx = begin; idx < end; ++idx) {
            const Example& ex = data[order[idx]];
            TapeT<S> tape;
            auto logits = plain_forward(&tape, enc, cfg, with_cls(ex.tokens), drop_ptr);
            auto loss = ops::cross_entropy(&tape, logits, ex.label);
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv)) {
                throw NumericError("plain_train_epoch: non-finite loss at batch " +
                                   std::to_string(begin / tc.batch_size));
            }
            if (opt) tape.backward(loss, seed_scale);
            stats.task += lv;
        }
        if (opt) {
            opt->step();
            ++stats.steps;
        }
    }
    stats.task /= static_cast<double>(data.size());
    return stats;
}

// Overfit an encoder's classification path on (first sentence, label) pairs
// for a fixed number of optimizer steps. Used by the interlocking probe: for
// the generate-then-predict baseline this is the predictor, for the skim
// model the single shared classifier.
template <class S>
void skew_pretrain_encoder(EncoderParamsT<S>& enc, const ModelConfig& cfg,
                           const std::vector<Example>& data,
                           const std::vector<int>& delimiter_ids, size_t steps,
                           const TrainConfig& tc) {
    if (steps == 0) return;
    if (data.empty()) throw ContractError("skew_pretrain: empty dataset");
    AdamWT<S> opt(static_cast<S>(tc.lr), static_cast<S>(tc.weight_decay));
    ParamList<S> named;
    enc.collect(named, "enc.");
    std::vector<TensorT<S>> params;
    for (auto& [k, v] : named) params.push_back(v);
    opt.attach(params);
    Rng shuffle_rng(derive_seed(tc.seed, 0, 23));
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    shuffle_rng.shuffle(order);
    size_t done = 0, cursor = 0;
    while (done < steps) {
        const size_t take = std::min(tc.batch_size, data.size());
        const S seed_scale = S(1) / static_cast<S>(take);
        for (size_t b = 0; b < take; ++b) {
            if (cursor == order.size()) {
                cursor = 0;
                shuffle_rng.shuffle(order);
            }
            const Example& ex = data[order[cursor++]];
            auto sent = first_sentence(ex.tokens, delimiter_ids);
            TapeT<S> tape;
            auto logits = plain_forward(&tape, enc, cfg, with_cls(sent));
            auto loss = ops::cross_entropy(&tape, logits, ex.label);
            tape.backward(loss, seed_scale);
        }
        opt.step();
        ++done;
    }
}

template <class S>
int plain_predict(const EncoderParamsT<S>& enc, const ModelConfig& cfg,
                  const std::vector<int>& tokens) {
    auto logits = plain_forward<S>(nullptr, enc, cfg, with_cls(tokens));
    return logits.value()[1] > logits.value()[0] ? 1 : 0;
}

template <class S>
double plain_accuracy(const EncoderParamsT<S>& enc, const ModelConfig& cfg,
                      const std::vector<Example>& data) {
    if (data.empty()) throw ContractError("plain_accuracy: empty dataset");
    size_t hits = 0;
    for (const auto& ex : data) {
        if (plain_predict(enc, cfg, ex.tokens) == ex.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace yofo
