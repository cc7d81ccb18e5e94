#pragma once

#include <array>
#include <cmath>
#include <type_traits>
#include <numeric>
#include <string>
#include <vector>

#include "data.hpp"
#include "encoder.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace yofo {

enum class LossMode { final_layer, layerwise };

inline std::string loss_mode_name(LossMode m) {
    return m == LossMode::final_layer ? "final_layer" : "layerwise";
}

inline LossMode loss_mode_from(const std::string& name) {
    if (name == "final_layer") return LossMode::final_layer;
    if (name == "layerwise") return LossMode::layerwise;
    throw ConfigError("unknown loss mode '" + name + "'");
}

// Optimizer and loss weights. Defaults follow the reference recipe (AdamW,
// lr 3e-5, no weight decay, batch 64, 10 epochs); desk-scale runs override
// lr and batch size in their run configs.
struct TrainConfig {
    double beta = 1.0;   // sparsity loss weight
    double gamma = 1.0;  // contiguity loss weight
    double lr = 3e-5;
    double weight_decay = 0.0;
    size_t epochs = 10;
    size_t batch_size = 64;
    uint64_t seed = 0;
    LossMode loss_mode = LossMode::layerwise;
    double temperature = 1.0;  // gumbel temperature, fixed (no annealing)
    double gate_lr_multiplier = 1.0;  // skim gates may learn faster than the trunk
    // Mask regularizer weights for the generate-then-predict baseline.
    double omega_sparsity = 1.0;
    double omega_contiguity = 1.0;

    void validate() const {
        if (beta < 0.0 || gamma < 0.0) throw ConfigError("train: beta/gamma must be >= 0");
        if (lr < 0.0) throw ConfigError("train: lr must be >= 0");
        if (!(temperature > 0.0)) throw ConfigError("train: temperature must be > 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (omega_sparsity < 0.0 || omega_contiguity < 0.0) {
            throw ConfigError("train: omega weights must be >= 0");
        }
        if (gate_lr_multiplier <= 0.0) throw ConfigError("train: gate_lr_multiplier must be > 0");
    }
};

// ---------------------------------------------------------------------------
// Skim gates
// ---------------------------------------------------------------------------

template <class S>
struct SkimGateParamsT {
    TensorT<S> w1, b1;  // D -> D_gate
    TensorT<S> w2, b2;  // D_gate -> 2 (keep, drop)

    void init(const ModelConfig& cfg, Rng& rng) {
        w1 = EncoderParamsT<S>::normal_param({cfg.width, cfg.gate_width}, rng);
        b1 = EncoderParamsT<S>::const_param({cfg.gate_width}, S(0));
        w2 = EncoderParamsT<S>::normal_param({cfg.gate_width, 2}, rng);
        b2 = EncoderParamsT<S>::const_param({2}, S(0));
        // start biased toward keeping so early training sees most tokens
        b2.value()[0] = S(2);
    }

    void collect(ParamList<S>& out, const std::string& prefix) const {
        out.emplace_back(prefix + "w1", w1);
        out.emplace_back(prefix + "b1", b1);
        out.emplace_back(prefix + "w2", w2);
        out.emplace_back(prefix + "b2", b2);
    }
};

template <class S>
TensorT<S> gate_logits(TapeT<S>* tape, const SkimGateParamsT<S>& g, TensorT<S> h) {
    return ops::linear(tape, ops::gelu(tape, ops::linear(tape, std::move(h), g.w1, g.b1)), g.w2,
                       g.b2);
}

// ---------------------------------------------------------------------------
// Mask state: m_0 is implicitly all-ones; each layer appends its composed
// hard mask, the raw gate decision, and the soft / straight-through
// companions that carry gradients.
// ---------------------------------------------------------------------------

template <class S>
struct MaskStateT {
    std::vector<BinaryMask> hard;     // m_i = m~_i ⊙ m_{i-1}
    std::vector<BinaryMask> raw;      // m~_i (position 0 forced on)
    std::vector<TensorT<S>> soft;     // composed soft keep-probabilities
    std::vector<TensorT<S>> st;       // composed straight-through masks

    size_t layer_count() const { return hard.size(); }
};

// One skim step: gate the previous hidden states, sample keep/drop decisions,
// force the classification token on, and compose with the previous mask.
// The soft companion multiplies keep-probabilities through the layers — the
// soft analog of the hard mask product — so the sparsity loss can both pull
// over-pruned positions back up and push excess retention down.
template <class S>
void skim(TapeT<S>* tape, const SkimGateParamsT<S>& gate, const TensorT<S>& h_prev,
          S temperature, Rng& rng, bool hard, MaskStateT<S>& state) {
    auto logits = gate_logits(tape, gate, h_prev);
    auto sample = gumbel_binary_sample(tape, logits, temperature, rng, hard);
    TensorT<S> soft_m = ops::force_first_one(tape, sample.soft);
    TensorT<S> gate_m = hard ? ops::force_first_one(tape, sample.gate) : soft_m;

    BinaryMask raw = sample.hard;
    raw[0] = 1;
    BinaryMask composed = raw;
    if (!state.hard.empty()) {
        const BinaryMask& prev = state.hard.back();
        for (size_t j = 0; j < composed.size(); ++j) composed[j] = composed[j] & prev[j];
    }
    TensorT<S> st_m = state.st.empty() ? gate_m : ops::mul(tape, state.st.back(), gate_m);
    TensorT<S> soft_c = state.soft.empty() ? soft_m : ops::mul(tape, state.soft.back(), soft_m);

    state.raw.push_back(std::move(raw));
    state.hard.push_back(std::move(composed));
    state.st.push_back(std::move(st_m));
    state.soft.push_back(std::move(soft_c));
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// | mean(m_N) - s |
template <class S>
TensorT<S> sparsity_loss_final(TapeT<S>* tape, TensorT<S> mask, double target) {
    return ops::abs_val(
        tape, ops::add_scalar(tape, ops::mean_all(tape, std::move(mask)), static_cast<S>(-target)));
}

// (1/N) sum_i | mean(m_i) - l_i |
template <class S>
TensorT<S> sparsity_loss_layerwise(TapeT<S>* tape, const std::vector<TensorT<S>>& masks,
                                   const LengthConfiguration& lc) {
    if (masks.size() != lc.levels.size()) {
        throw ContractError("sparsity_loss_layerwise: " + std::to_string(masks.size()) +
                            " masks vs " + std::to_string(lc.levels.size()) + " retention levels");
    }
    TensorT<S> acc;
    for (size_t i = 0; i < masks.size(); ++i) {
        auto term = ops::abs_val(
            tape, ops::add_scalar(tape, ops::mean_all(tape, masks[i]),
                                  static_cast<S>(-lc.levels[i])));
        acc = acc.defined() ? ops::add(tape, acc, term) : term;
    }
    return ops::scale(tape, acc, S(1) / static_cast<S>(masks.size()));
}

// sum_i sum_j |m_i^{j+1} - m_i^j| / (N (L-1))
template <class S>
TensorT<S> contiguity_loss(TapeT<S>* tape, const std::vector<TensorT<S>>& masks) {
    if (masks.empty()) throw ContractError("contiguity_loss: no masks");
    const size_t len = masks[0].numel();
    if (len < 2) throw ShapeError("contiguity_loss: mask length must be >= 2");
    TensorT<S> acc;
    for (const auto& m : masks) {
        auto term = ops::sum_all(tape, ops::abs_val(tape, ops::adjacent_diff(tape, m)));
        acc = acc.defined() ? ops::add(tape, acc, term) : term;
    }
    return ops::scale(tape, acc,
                      S(1) / static_cast<S>(masks.size() * (len - 1)));
}

// L_task + beta * L_sparsity + gamma * L_contiguous
template <class S>
TensorT<S> total_loss(TapeT<S>* tape, TensorT<S> task, TensorT<S> sparsity, TensorT<S> contiguity,
                      double beta, double gamma) {
    return ops::add(tape, std::move(task),
                    ops::add(tape, ops::scale(tape, std::move(sparsity), static_cast<S>(beta)),
                             ops::scale(tape, std::move(contiguity), static_cast<S>(gamma))));
}

// Convenience matching the spec'd operation surface: picks the sparsity term
// by mode and assembles the overall loss.
template <class S>
TensorT<S> total_loss(TapeT<S>* tape, TensorT<S> task, const MaskStateT<S>& masks,
                      const LengthConfiguration& lc, double beta, double gamma, LossMode mode) {
    auto sparsity = mode == LossMode::layerwise
                        ? sparsity_loss_layerwise(tape, masks.soft, lc)
                        : sparsity_loss_final(tape, masks.soft.back(), lc.target);
    auto contig = contiguity_loss(tape, masks.soft);
    return total_loss(tape, std::move(task), std::move(sparsity), std::move(contig), beta, gamma);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class S>
struct YofoModelT {
    ModelConfig cfg;
    LengthConfiguration length;
    EncoderParamsT<S> enc;
    std::vector<SkimGateParamsT<S>> gates;

    void init(const ModelConfig& config, const LengthConfiguration& lc, Rng& rng) {
        if (lc.layer_count() != config.layers) {
            throw ConfigError("model: length configuration covers " +
                              std::to_string(lc.layer_count()) + " layers, model has " +
                              std::to_string(config.layers));
        }
        cfg = config;
        length = lc;
        enc.init(cfg, rng);
        gates.resize(cfg.layers);
        for (auto& g : gates) g.init(cfg, rng);
    }

    ParamList<S> named_params() const {
        ParamList<S> out;
        enc.collect(out, "enc.");
        for (size_t i = 0; i < gates.size(); ++i) {
            gates[i].collect(out, "gate" + std::to_string(i) + ".");
        }
        return out;
    }

    std::vector<TensorT<S>> params() const {
        std::vector<TensorT<S>> out;
        for (auto& [name, t] : named_params()) out.push_back(t);
        return out;
    }

    // Learning-rate scales aligned with params(): gate parameters may use a
    // faster rate so the selector saturates while the task loss still carries
    // signal.
    std::vector<S> lr_scales(const TrainConfig& tc) const {
        ParamList<S> named = named_params();
        std::vector<S> scales;
        scales.reserve(named.size());
        for (auto& [name, t] : named) {
            scales.push_back(name.rfind("gate", 0) == 0
                                 ? static_cast<S>(tc.gate_lr_multiplier)
                                 : S(1));
        }
        return scales;
    }
};

using YofoModel = YofoModelT<double>;

// ---------------------------------------------------------------------------
// Training forward pass (masked attention path)
// ---------------------------------------------------------------------------

template <class S>
struct YofoStepT {
    TensorT<S> logits;
    TensorT<S> task, sparsity, contiguity, total;
    MaskStateT<S> masks;
};

// hard=true: straight-through masks inside attention (the training
// estimator). hard=false: fully soft relaxation, differentiable everywhere
// (used by the composed gradient check).
template <class S>
YofoStepT<S> yofo_train_forward(TapeT<S>* tape, const YofoModelT<S>& model,
                                const std::vector<int>& ids, int label, const TrainConfig& tc,
                                Rng& noise, Rng* dropout_rng, bool hard = true) {
    YofoStepT<S> step;
    auto h = embed(tape, model.enc, ids);
    const BinaryMask no_mask;
    for (size_t i = 0; i < model.cfg.layers; ++i) {
        skim(tape, model.gates[i], h, static_cast<S>(tc.temperature), noise, hard, step.masks);
        const BinaryMask& keep = hard ? step.masks.hard.back() : no_mask;
        const TensorT<S>& modulate = hard ? step.masks.st.back() : step.masks.soft.back();
        h = forward_layer_masked(tape, model.enc.layers[i], model.cfg, h, keep, &modulate,
                                 dropout_rng);
    }
    step.logits = classify(tape, model.enc, h);
    step.task = ops::cross_entropy(tape, step.logits, label);
    step.sparsity = tc.loss_mode == LossMode::layerwise
                        ? sparsity_loss_layerwise(tape, step.masks.soft, model.length)
                        : sparsity_loss_final(tape, step.masks.soft.back(), model.length.target);
    step.contiguity = contiguity_loss(tape, step.masks.soft);
    step.total = total_loss(tape, step.task, step.sparsity, step.contiguity, tc.beta, tc.gamma);
    return step;
}

// Evaluate the masked forward with a given per-layer mask sequence (no gates,
// no sampling). Used by the prune-equivalence checks.
template <class S>
TensorT<S> masked_logits(const YofoModelT<S>& model, const std::vector<int>& ids,
                         const std::vector<BinaryMask>& masks) {
    if (masks.size() != model.cfg.layers) {
        throw ContractError("masked_logits: need one mask per layer");
    }
    auto h = embed<S>(nullptr, model.enc, ids);
    for (size_t i = 0; i < model.cfg.layers; ++i) {
        h = forward_layer_masked<S>(nullptr, model.enc.layers[i], model.cfg, h, masks[i]);
    }
    return classify<S>(nullptr, model.enc, h);
}

// ---------------------------------------------------------------------------
// Epoch training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    double task = 0.0;
    double sparsity = 0.0;
    double contiguity = 0.0;
    double total = 0.0;
    std::vector<double> retention;  // per-layer mean of hard masks
    size_t cls_only_events = 0;     // (example, layer) pairs collapsed to the cls token
    size_t steps = 0;               // optimizer steps this epoch
};

// One pass of minibatch AdamW over the data. `opt` may be null (lr == 0):
// losses and metrics are still computed but parameters stay untouched.
template <class S>
EpochStats train_epoch(YofoModelT<S>& model, const std::vector<Example>& data,
                       const TrainConfig& tc, size_t epoch,
                       std::type_identity_t<AdamWT<S>*> opt) {
    if (data.empty()) throw ContractError("train_epoch: empty dataset");
    tc.validate();
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(tc.seed, epoch, 1));
    shuffle_rng.shuffle(order);
    Rng noise(derive_seed(tc.seed, epoch, 2));
    Rng drop(derive_seed(tc.seed, epoch, 3));
    Rng* drop_ptr = model.cfg.dropout > 0.0 ? &drop : nullptr;

    EpochStats stats;
    stats.retention.assign(model.cfg.layers, 0.0);
    for (size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
        const size_t end = std::min(order.size(), begin + tc.batch_size);
        const S seed_scale = S(1) / static_cast<S>(end - begin);
        for (size_t idx = begin; idx < end; ++idx) {
            const Example& ex = data[order[idx]];
            TapeT<S> tape;
            auto step = yofo_train_forward(&tape, model, with_cls(ex.tokens), ex.label, tc, noise,
                                           drop_ptr, true);
            const double tot = static_cast<double>(step.total.item());
            if (!std::isfinite(tot)) {
                throw NumericError(
                    "train_epoch: non-finite loss at batch " + std::to_string(begin / tc.batch_size) +
                    " (task=" + std::to_string(static_cast<double>(step.task.item())) +
                    ", sparsity=" + std::to_string(static_cast<double>(step.sparsity.item())) +
                    ", contiguity=" + std::to_string(static_cast<double>(step.contiguity.item())) +
                    ")");
            }
            if (opt) tape.backward(step.total, seed_scale);
            stats.task += static_cast<double>(step.task.item());
            stats.sparsity += static_cast<double>(step.sparsity.item());
            stats.contiguity += static_cast<double>(step.contiguity.item());
            stats.total += tot;
            for (size_t i = 0; i < step.masks.hard.size(); ++i) {
                const auto& m = step.masks.hard[i];
                size_t kept = 0;
                for (uint8_t b : m) kept += b;
                stats.retention[i] += static_cast<double>(kept) / static_cast<double>(m.size());
                if (kept == 1) ++stats.cls_only_events;
            }
        }
        if (opt) {
            opt->step();
            ++stats.steps;
        }
    }
    const double n = static_cast<double>(data.size());
    stats.task /= n;
    stats.sparsity /= n;
    stats.contiguity /= n;
    stats.total /= n;
    for (auto& r : stats.retention) r /= n;
    return stats;
}

// ---------------------------------------------------------------------------
// Inference: hard token pruning, layer by layer
// ---------------------------------------------------------------------------

struct RationaleResult {
    int prediction = 0;
    std::array<double, 2> logits{0.0, 0.0};
    std::vector<std::vector<size_t>> kept;  // per layer, original indices (0 = cls)
    BinaryMask rationale;                   // over text tokens, cls excluded
};

template <class S>
RationaleResult infer(const YofoModelT<S>& model, const std::vector<int>& ids) {
    RationaleResult res;
    auto h = embed<S>(nullptr, model.enc, ids);
    std::vector<size_t> alive(ids.size());
    std::iota(alive.begin(), alive.end(), size_t{0});
    for (size_t i = 0; i < model.cfg.layers; ++i) {
        auto logits = gate_logits<S>(nullptr, model.gates[i], h);
        std::vector<size_t> keep_rows;
        std::vector<size_t> next_alive;
        for (size_t r = 0; r < alive.size(); ++r) {
            const bool keep =
                r == 0 || logits.value()[r * 2 + 0] >= logits.value()[r * 2 + 1];
            if (keep) {
                keep_rows.push_back(r);
                next_alive.push_back(alive[r]);
            }
        }
        h = gather_rows(h, keep_rows);
        alive = std::move(next_alive);
        h = forward_layer_pruned<S>(nullptr, model.enc.layers[i], model.cfg, h);
        res.kept.push_back(alive);
    }
    auto logits = classify<S>(nullptr, model.enc, h);
    res.logits = {static_cast<double>(logits.value()[0]), static_cast<double>(logits.value()[1])};
    res.prediction = res.logits[1] > res.logits[0] ? 1 : 0;
    res.rationale.assign(ids.size() - 1, 0);
    for (size_t idx : alive) {
        if (idx > 0) res.rationale[idx - 1] = 1;
    }
    return res;
}

}  // namespace yofo
