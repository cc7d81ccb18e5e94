// Command-line front door: dataset synthesis, training, evaluation, rationale
// decoding and analysis. One command per process; exit codes are 0 success,
// 1 usage/config error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "yofo/checkpoint.hpp"
#include "yofo/config.hpp"
#include "yofo/data.hpp"
#include "yofo/eval.hpp"
#include "yofo/rnp.hpp"
#include "yofo/train.hpp"
#include "yofo/yofo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace yofo;

namespace {

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

Vocab vocab_from_list(const std::vector<std::string>& tokens) {
    Vocab v;
    for (const auto& t : tokens) v.add(t);
    return v;
}

// Share of tokens that fall outside the checkpoint vocabulary; a majority of
// unknowns means the data does not belong to this model.
void check_vocab_compat(const Corpus& corpus, const Vocab& vocab, const std::string& path) {
    size_t total = 0, unk = 0;
    for (const auto& rec : corpus) {
        for (const auto& t : rec.tokens) {
            ++total;
            unk += (vocab.id(t) == Vocab::kUnk);
        }
    }
    if (total > 0 && unk * 2 > total) {
        throw DataError("vocabulary mismatch: " + std::to_string(100 * unk / total) + "% of " +
                        path + " is unknown to the checkpoint vocabulary");
    }
}

json metrics_to_json(const Metrics& m) {
    json j;
    j["S"] = m.S;
    if (m.has_gold) {
        j["P"] = m.P;
        j["R"] = m.R;
        j["F1"] = m.F1;
    } else {
        j["P"] = nullptr;
        j["R"] = nullptr;
        j["F1"] = nullptr;
    }
    j["ACC"] = m.ACC;
    if (!m.layer_retention.empty()) j["layer_retention"] = m.layer_retention;
    if (m.has_gold && !m.layer_f1.empty()) j["layer_f1"] = m.layer_f1;
    return j;
}

struct LoadedData {
    Corpus corpus;
    std::vector<Example> examples;
};

LoadedData load_examples(const std::string& path, const Vocab& vocab) {
    LoadedData out;
    out.corpus = load_corpus(path);
    check_vocab_compat(out.corpus, vocab, path);
    out.examples = encode_corpus(out.corpus, vocab);
    return out;
}

std::vector<int> delimiter_ids(const Vocab& vocab, const std::vector<std::string>& delims) {
    std::vector<int> ids;
    for (const auto& d : delims) {
        const int id = vocab.id(d);
        if (id != Vocab::kUnk) ids.push_back(id);
    }
    return ids;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& spec_path, const std::string& out_path, size_t n) {
    auto spec = load_synth_spec(spec_path);
    auto corpus = synth_generate(spec, n);
    fs::path out(out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    const std::string tmp = out_path + ".tmp";
    save_corpus(tmp, corpus);
    fs::rename(tmp, out_path);
    auto audit = audit_corpus(corpus, spec);
    std::cout << "wrote " << corpus.size() << " examples to " << out_path << "\n"
              << "audit: rho=" << spec.rho << " out_of_span_cues=" << audit.out_of_span_cues
              << " examples_with_distractor=" << audit.examples_with_distractor << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainContext {
    RunConfig rc;
    Vocab vocab;
    std::vector<Example> train_data;
    std::vector<Example> eval_data;  // may be empty
    size_t start_epoch = 0;
};

template <class S>
CheckpointMeta base_meta(const TrainContext& ctx, ModelKind kind, const ModelConfig& cfg) {
    CheckpointMeta meta;
    meta.kind = kind;
    meta.dtype = dtype_name<S>();
    meta.cfg = cfg;
    meta.lc_k = ctx.rc.lc_k;
    meta.lc_d = ctx.rc.lc_d;
    meta.lc_s = ctx.rc.lc_s;
    meta.lc_mode = ctx.rc.lc_mode;
    meta.vocab = ctx.vocab.id_to_token;
    return meta;
}

std::string epoch_ckpt_path(const std::string& out_dir, size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "epoch_%03zu.ckpt", epoch);
    return (fs::path(out_dir) / buf).string();
}

json stats_record(size_t epoch, const EpochStats& stats, int64_t step_count) {
    json j;
    j["epoch"] = epoch;
    j["task_loss"] = stats.task;
    j["sparsity_loss"] = stats.sparsity;
    j["contiguity_loss"] = stats.contiguity;
    j["total_loss"] = stats.total;
    j["retention"] = stats.retention;
    j["cls_only_events"] = stats.cls_only_events;
    j["step_count"] = step_count;
    return j;
}

template <class S>
int run_train(TrainContext& ctx) {
    const RunConfig& rc = ctx.rc;
    ModelConfig cfg = rc.model;
    cfg.vocab_size = ctx.vocab.size();
    cfg.validate();
    const auto delims = delimiter_ids(ctx.vocab, rc.skew_delimiters);

    std::ofstream metrics(fs::path(rc.out_dir) / "metrics.jsonl",
                          ctx.start_epoch == 0 ? std::ios::trunc : std::ios::app);
    if (!metrics) throw ConfigError("cannot write metrics in " + rc.out_dir);

    Rng init_rng(derive_seed(rc.train.seed, 7001));
    const bool use_opt = rc.train.lr > 0.0;

    auto emit = [&](json record, const Metrics* eval_metrics) {
        if (eval_metrics) {
            const json em = metrics_to_json(*eval_metrics);
            for (const auto& [k, v] : em.items()) record[k] = v;
        } else {
            record["S"] = nullptr;
            record["P"] = nullptr;
            record["R"] = nullptr;
            record["F1"] = nullptr;
            record["ACC"] = nullptr;
        }
        metrics << record.dump() << "\n";
        metrics.flush();
    };

    if (rc.kind == ModelKind::yofo || rc.kind == ModelKind::yofo_final) {
        YofoModelT<S> model;
        model.init(cfg, make_length_config(rc.lc_k, rc.lc_d, rc.lc_s, rc.lc_mode, cfg.layers),
                   init_rng);
        AdamWT<S> opt(static_cast<S>(use_opt ? rc.train.lr : 1.0),
                      static_cast<S>(rc.train.weight_decay));
        opt.attach(model.params(), model.lr_scales(rc.train));
        CheckpointMeta meta = base_meta<S>(ctx, rc.kind, cfg);
        if (!rc.resume_from.empty()) {
            meta = load_checkpoint<S>(rc.resume_from, model.named_params(), &opt);
            ctx.start_epoch = meta.epochs_done;
        }
        if (ctx.start_epoch == 0 && rc.skew_k > 0) {
            skew_pretrain_encoder(model.enc, cfg, ctx.train_data, delims,
                                  skew_steps(ctx.train_data.size(), rc.skew_k), rc.train);
        }
        if (rc.train.epochs == 0 || ctx.start_epoch >= rc.train.epochs) {
            meta.epochs_done = ctx.start_epoch;
            save_checkpoint(epoch_ckpt_path(rc.out_dir, ctx.start_epoch), meta,
                            model.named_params(), &opt);
            save_checkpoint((fs::path(rc.out_dir) / "final.ckpt").string(), meta,
                            model.named_params(), &opt);
            return 0;
        }
        for (size_t e = ctx.start_epoch; e < rc.train.epochs; ++e) {
            auto stats = train_epoch(model, ctx.train_data, rc.train, e, use_opt ? &opt : nullptr);
            Metrics em;
            const bool has_eval = !ctx.eval_data.empty();
            if (has_eval) em = evaluate_yofo(model, ctx.eval_data);
            emit(stats_record(e, stats, opt.step_count()), has_eval ? &em : nullptr);
            meta.epochs_done = e + 1;
            save_checkpoint(epoch_ckpt_path(rc.out_dir, e + 1), meta, model.named_params(), &opt);
        }
        meta.epochs_done = rc.train.epochs;
        save_checkpoint((fs::path(rc.out_dir) / "final.ckpt").string(), meta,
                        model.named_params(), &opt);
        return 0;
    }

    if (rc.kind == ModelKind::rnp || rc.kind == ModelKind::rnp_shared) {
        RnpModelT<S> model;
        model.init(cfg, rc.kind == ModelKind::rnp_shared, init_rng);
        AdamWT<S> opt(static_cast<S>(use_opt ? rc.train.lr : 1.0),
                      static_cast<S>(rc.train.weight_decay));
        opt.attach(model.params());
        CheckpointMeta meta = base_meta<S>(ctx, rc.kind, cfg);
        if (!rc.resume_from.empty()) {
            meta = load_checkpoint<S>(rc.resume_from, model.named_params(), &opt);
            ctx.start_epoch = meta.epochs_done;
        }
        if (ctx.start_epoch == 0 && rc.skew_k > 0) {
            skew_pretrain(model, ctx.train_data, delims,
                          skew_steps(ctx.train_data.size(), rc.skew_k), rc.train);
        }
        if (rc.train.epochs == 0 || ctx.start_epoch >= rc.train.epochs) {
            meta.epochs_done = ctx.start_epoch;
            save_checkpoint(epoch_ckpt_path(rc.out_dir, ctx.start_epoch), meta,
                            model.named_params(), &opt);
            save_checkpoint((fs::path(rc.out_dir) / "final.ckpt").string(), meta,
                            model.named_params(), &opt);
            return 0;
        }
        for (size_t e = ctx.start_epoch; e < rc.train.epochs; ++e) {
            auto stats =
                train_rnp_epoch(model, ctx.train_data, rc.train, e, use_opt ? &opt : nullptr);
            Metrics em;
            const bool has_eval = !ctx.eval_data.empty();
            if (has_eval) em = evaluate_rnp(model, ctx.eval_data);
            emit(stats_record(e, stats, opt.step_count()), has_eval ? &em : nullptr);
            meta.epochs_done = e + 1;
            save_checkpoint(epoch_ckpt_path(rc.out_dir, e + 1), meta, model.named_params(), &opt);
        }
        meta.epochs_done = rc.train.epochs;
        save_checkpoint((fs::path(rc.out_dir) / "final.ckpt").string(), meta,
                        model.named_params(), &opt);
        return 0;
    }

    // plain classifier
    EncoderParamsT<S> enc;
    enc.init(cfg, init_rng);
    ParamList<S> named;
    enc.collect(named, "enc.");
    std::vector<TensorT<S>> params;
    for (auto& [k, v] : named) params.push_back(v);
    AdamWT<S> opt(static_cast<S>(use_opt ? rc.train.lr : 1.0),
                  static_cast<S>(rc.train.weight_decay));
    opt.attach(params);
    CheckpointMeta meta = base_meta<S>(ctx, ModelKind::plain, cfg);
    if (!rc.resume_from.empty()) {
        meta = load_checkpoint<S>(rc.resume_from, named, &opt);
        ctx.start_epoch = meta.epochs_done;
    }
    if (ctx.start_epoch == 0 && rc.skew_k > 0) {
        skew_pretrain_encoder(enc, cfg, ctx.train_data, delims,
                              skew_steps(ctx.train_data.size(), rc.skew_k), rc.train);
    }
    if (rc.train.epochs == 0 || ctx.start_epoch >= rc.train.epochs) {
        meta.epochs_done = ctx.start_epoch;
        save_checkpoint(epoch_ckpt_path(rc.out_dir, ctx.start_epoch), meta, named, &opt);
        save_checkpoint((fs::path(rc.out_dir) / "final.ckpt").string(), meta, named, &opt);
        return 0;
    }
    for (size_t e = ctx.start_epoch; e < rc.train.epochs; ++e) {
        auto stats = plain_train_epoch(enc, cfg, ctx.train_data, rc.train, e,
                                       use_opt ? &opt : nullptr);
        json record;
        record["epoch"] = e;
        record["task_loss"] = stats.task;
        record["sparsity_loss"] = 0.0;
        record["contiguity_loss"] = 0.0;
        record["total_loss"] = stats.task;
        record["retention"] = json::array();
        record["cls_only_events"] = 0;
        record["step_count"] = opt.step_count();
        Metrics em;
        const bool has_eval = !ctx.eval_data.empty();
        if (has_eval) em = evaluate_plain(enc, cfg, ctx.eval_data);
        emit(record, has_eval ? &em : nullptr);
        meta.epochs_done = e + 1;
        save_checkpoint(epoch_ckpt_path(rc.out_dir, e + 1), meta, named, &opt);
    }
    meta.epochs_done = rc.train.epochs;
    save_checkpoint((fs::path(rc.out_dir) / "final.ckpt").string(), meta, named, &opt);
    return 0;
}

int cmd_train(const std::string& config_path, long long seed_override,
              const std::string& out_dir_override, const std::string& resume_override) {
    TrainContext ctx;
    ctx.rc = load_run_config(config_path);
    if (seed_override >= 0) ctx.rc.train.seed = static_cast<uint64_t>(seed_override);
    if (!out_dir_override.empty()) ctx.rc.out_dir = out_dir_override;
    if (!resume_override.empty()) ctx.rc.resume_from = resume_override;
    if (ctx.rc.out_dir.empty()) throw ConfigError("run config: out_dir is required");
    if (ctx.rc.train_data.empty()) throw ConfigError("run config: data.train is required");

    auto corpus = load_corpus(ctx.rc.train_data);
    if (corpus.empty()) throw DataError("training corpus is empty: " + ctx.rc.train_data);

    if (!ctx.rc.resume_from.empty()) {
        // resume: the checkpoint's vocabulary is authoritative
        auto meta = checkpoint_meta_from_header(read_checkpoint_header(ctx.rc.resume_from));
        ctx.vocab = vocab_from_list(meta.vocab);
        ctx.rc.model.max_len = meta.cfg.max_len;
    } else {
        ctx.vocab = build_vocab(corpus);
    }
    ctx.train_data = encode_corpus(corpus, ctx.vocab);

    size_t max_len = 0;
    for (const auto& ex : ctx.train_data) max_len = std::max(max_len, ex.tokens.size() + 1);
    if (!ctx.rc.eval_data.empty()) {
        auto eval_corpus = load_corpus(ctx.rc.eval_data);
        check_vocab_compat(eval_corpus, ctx.vocab, ctx.rc.eval_data);
        ctx.eval_data = encode_corpus(eval_corpus, ctx.vocab);
        for (const auto& ex : ctx.eval_data) max_len = std::max(max_len, ex.tokens.size() + 1);
    }
    if (ctx.rc.model.max_len == 0) ctx.rc.model.max_len = max_len;
    if (max_len > ctx.rc.model.max_len) {
        throw DataError("corpus sequence length " + std::to_string(max_len) +
                        " exceeds model max_len " + std::to_string(ctx.rc.model.max_len));
    }

    fs::create_directories(ctx.rc.out_dir);
    save_run_config((fs::path(ctx.rc.out_dir) / "config.frozen.json").string(), ctx.rc);

    if (ctx.rc.precision == "f32") return run_train<float>(ctx);
    return run_train<double>(ctx);
}

// ---------------------------------------------------------------------------
// checkpoint-consuming commands
// ---------------------------------------------------------------------------

struct LoadedYofo {
    CheckpointMeta meta;
    YofoModelT<double> model;
};

struct LoadedRnp {
    CheckpointMeta meta;
    RnpModelT<double> model;
};

struct LoadedPlain {
    CheckpointMeta meta;
    EncoderParamsT<double> enc;
};

CheckpointMeta peek_meta(const std::string& path) {
    return checkpoint_meta_from_header(read_checkpoint_header(path));
}

LoadedYofo load_yofo(const std::string& path) {
    LoadedYofo out;
    auto meta = peek_meta(path);
    if (meta.dtype != "f64") {
        throw ConfigError("analysis commands require an f64 checkpoint, got " + meta.dtype);
    }
    Rng rng(0);
    out.model.init(meta.cfg, meta.length_config(), rng);
    out.meta = load_checkpoint(path, out.model.named_params());
    return out;
}

LoadedRnp load_rnp(const std::string& path, bool shared) {
    LoadedRnp out;
    auto meta = peek_meta(path);
    if (meta.dtype != "f64") {
        throw ConfigError("analysis commands require an f64 checkpoint, got " + meta.dtype);
    }
    Rng rng(0);
    out.model.init(meta.cfg, shared, rng);
    out.meta = load_checkpoint(path, out.model.named_params());
    return out;
}

LoadedPlain load_plain(const std::string& path) {
    LoadedPlain out;
    auto meta = peek_meta(path);
    if (meta.dtype != "f64") {
        throw ConfigError("analysis commands require an f64 checkpoint, got " + meta.dtype);
    }
    Rng rng(0);
    out.enc.init(meta.cfg, rng);
    ParamList<double> named;
    out.enc.collect(named, "enc.");
    out.meta = load_checkpoint(path, named);
    return out;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& out_path) {
    auto meta = peek_meta(ckpt_path);
    Vocab vocab = vocab_from_list(meta.vocab);
    auto data = load_examples(data_path, vocab);
    Metrics m;
    switch (meta.kind) {
        case ModelKind::yofo:
        case ModelKind::yofo_final:
            m = evaluate_yofo(load_yofo(ckpt_path).model, data.examples);
            break;
        case ModelKind::rnp:
            m = evaluate_rnp(load_rnp(ckpt_path, false).model, data.examples);
            break;
        case ModelKind::rnp_shared:
            m = evaluate_rnp(load_rnp(ckpt_path, true).model, data.examples);
            break;
        case ModelKind::plain: {
            auto loaded = load_plain(ckpt_path);
            m = evaluate_plain(loaded.enc, loaded.meta.cfg, data.examples);
            break;
        }
    }
    json record = metrics_to_json(m);
    record["checkpoint"] = ckpt_path;
    record["data"] = data_path;
    record["examples"] = data.examples.size();
    std::cout << record.dump() << "\n";
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::app);
        if (!out) throw ConfigError("cannot write metrics to " + out_path);
        out << record.dump() << "\n";
    }
    return 0;
}

int cmd_decode(const std::string& ckpt_path, const std::string& data_path, size_t k_examples) {
    auto meta = peek_meta(ckpt_path);
    if (meta.kind != ModelKind::yofo && meta.kind != ModelKind::yofo_final) {
        throw ConfigError("decode requires a skim-model checkpoint, got " +
                          model_kind_name(meta.kind));
    }
    Vocab vocab = vocab_from_list(meta.vocab);
    auto data = load_examples(data_path, vocab);
    auto loaded = load_yofo(ckpt_path);
    const size_t n = std::min(k_examples, data.examples.size());
    for (size_t i = 0; i < n; ++i) {
        const auto& ex = data.examples[i];
        auto dec = decode_layers(loaded.model, ex, vocab);
        std::cout << "example " << i << "  label=" << ex.label << "  pred=" << dec.prediction
                  << "\n";
        std::cout << "  text:";
        for (int tok : ex.tokens) std::cout << " " << vocab.token(tok);
        std::cout << "\n";
        for (size_t l = 0; l < dec.layers.size(); ++l) {
            std::cout << "  layer " << (l + 1) << ":";
            for (const auto& t : dec.layers[l]) std::cout << " " << t;
            std::cout << "\n";
        }
        std::cout << "  rationale:";
        for (const auto& t : dec.rationale) std::cout << " " << t;
        std::cout << "\n";
    }
    return 0;
}

int cmd_analyze(const std::string& ckpt_path, const std::string& data_path,
                const std::string& out_dir, bool retrain) {
    auto meta = peek_meta(ckpt_path);
    Vocab vocab = vocab_from_list(meta.vocab);
    auto data = load_examples(data_path, vocab);
    fs::create_directories(out_dir);

    // token-similarity curves over the classification encoder
    SimilarityCurves curves;
    Metrics layer_metrics;
    bool has_layers = false;
    if (meta.kind == ModelKind::yofo || meta.kind == ModelKind::yofo_final) {
        auto loaded = load_yofo(ckpt_path);
        curves = layer_similarity(loaded.model.enc, loaded.meta.cfg, data.examples);
        layer_metrics = evaluate_yofo(loaded.model, data.examples);
        has_layers = true;
    } else if (meta.kind == ModelKind::plain) {
        auto loaded = load_plain(ckpt_path);
        curves = layer_similarity(loaded.enc, loaded.meta.cfg, data.examples);
    } else {
        auto loaded = load_rnp(ckpt_path, meta.kind == ModelKind::rnp_shared);
        curves = layer_similarity(loaded.model.pred, loaded.meta.cfg, data.examples);
    }
    {
        json j{{"intra", curves.intra}, {"inter", curves.inter}};
        const std::string path = (fs::path(out_dir) / "similarity.json").string();
        std::ofstream out(path + ".tmp", std::ios::trunc);
        out << j.dump(2) << "\n";
        out.close();
        fs::rename(path + ".tmp", path);
    }
    if (has_layers) {
        json j{{"layer_retention", layer_metrics.layer_retention}};
        if (layer_metrics.has_gold) j["layer_f1"] = layer_metrics.layer_f1;
        const std::string path = (fs::path(out_dir) / "layer_curves.json").string();
        std::ofstream out(path + ".tmp", std::ios::trunc);
        out << j.dump(2) << "\n";
        out.close();
        fs::rename(path + ".tmp", path);
    }

    if (retrain) {
        if (meta.kind != ModelKind::yofo && meta.kind != ModelKind::yofo_final) {
            throw ConfigError("--retrain requires a skim-model checkpoint");
        }
        auto loaded = load_yofo(ckpt_path);
        std::vector<BinaryMask> rats;
        for (const auto& ex : data.examples) {
            rats.push_back(infer(loaded.model, with_cls(ex.tokens)).rationale);
        }
        const size_t split = data.examples.size() * 4 / 5;
        std::vector<Example> train_full(data.examples.begin(), data.examples.begin() + split);
        std::vector<Example> dev_full(data.examples.begin() + split, data.examples.end());
        if (train_full.empty() || dev_full.empty()) {
            throw DataError("--retrain needs at least five examples");
        }
        auto train_rats = mask_to_inputs(
            train_full, std::vector<BinaryMask>(rats.begin(), rats.begin() + split));
        auto dev_rats =
            mask_to_inputs(dev_full, std::vector<BinaryMask>(rats.begin() + split, rats.end()));
        TrainConfig tc;
        tc.lr = 3e-3;
        tc.epochs = 6;
        tc.batch_size = 16;
        tc.seed = 17;
        auto rep = rationale_retrain<double>(train_rats, dev_rats, train_full, dev_full, meta.cfg,
                                             tc);
        json j{{"full_text_acc", rep.full_acc},
               {"rationale_acc", rep.rationale_acc},
               {"majority_acc", rep.majority_acc}};
        const std::string path = (fs::path(out_dir) / "retrain.json").string();
        std::ofstream out(path + ".tmp", std::ios::trunc);
        out << j.dump(2) << "\n";
        out.close();
        fs::rename(path + ".tmp", path);
        std::cout << j.dump() << "\n";
    }
    std::cout << "analysis written to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-pass rationale extraction lab"};
    app.require_subcommand(1);

    std::string spec_path, corpus_out;
    size_t synth_n = 0;
    auto* synth = app.add_subcommand("synth", "generate a synthetic planted-rationale corpus");
    synth->add_option("--spec", spec_path, "synth spec JSON")->required();
    synth->add_option("--out", corpus_out, "output corpus path")->required();
    synth->add_option("--n", synth_n, "number of examples")->required();

    std::string config_path, out_dir_override, resume_override;
    long long seed_override = -1;
    auto* train = app.add_subcommand("train", "train a model from a run config");
    train->add_option("--config", config_path, "run config JSON")->required();
    train->add_option("--seed", seed_override, "override the config seed");
    train->add_option("--out-dir", out_dir_override, "override the output directory");
    train->add_option("--resume", resume_override, "resume from a checkpoint");

    std::string ckpt_path, data_path, metrics_out;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
    eval_cmd->add_option("--data", data_path, "corpus path")->required();
    eval_cmd->add_option("--out", metrics_out, "append the metrics record to this file");

    std::string dec_ckpt, dec_data;
    size_t dec_examples = 5;
    auto* decode = app.add_subcommand("decode", "print per-layer rationales");
    decode->add_option("--checkpoint", dec_ckpt, "checkpoint path")->required();
    decode->add_option("--data", dec_data, "corpus path")->required();
    decode->add_option("--examples", dec_examples, "examples to decode");

    std::string ana_ckpt, ana_data, ana_out;
    bool ana_retrain = false;
    auto* analyze = app.add_subcommand("analyze", "similarity and retention curves");
    analyze->add_option("--checkpoint", ana_ckpt, "checkpoint path")->required();
    analyze->add_option("--data", ana_data, "corpus path")->required();
    analyze->add_option("--out-dir", ana_out, "output directory")->required();
    analyze->add_flag("--retrain", ana_retrain, "run the rationale-retrain check");

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(spec_path, corpus_out, synth_n);
        if (train->parsed()) {
            return cmd_train(config_path, seed_override, out_dir_override, resume_override);
        }
        if (eval_cmd->parsed()) return cmd_eval(ckpt_path, data_path, metrics_out);
        if (decode->parsed()) return cmd_decode(dec_ckpt, dec_data, dec_examples);
        if (analyze->parsed()) return cmd_analyze(ana_ckpt, ana_data, ana_out, ana_retrain);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
