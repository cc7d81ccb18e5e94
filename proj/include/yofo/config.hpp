#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "encoder.hpp"
#include "errors.hpp"
#include "schedule.hpp"
#include "yofo.hpp"

namespace yofo {

// Full experiment description. A resolved copy (every field explicit) is
// frozen into the run's output directory before training starts; re-running
// from the frozen config and seed reproduces the run byte for byte.
struct RunConfig {
    ModelKind kind = ModelKind::yofo;
    std::string precision = "f64";  // f64 | f32
    ModelConfig model;              // vocab_size 0 and max_len 0 resolve from data
    size_t lc_k = 0;
    size_t lc_d = 0;
    double lc_s = 1.0;
    DecayMode lc_mode = DecayMode::cliff;
    TrainConfig train;
    size_t skew_k = 0;  // 0 = no skew pretraining
    std::vector<std::string> skew_delimiters = {"."};
    std::string train_data;
    std::string eval_data;
    std::string out_dir;
    std::string resume_from;

    void validate() const {
        if (precision != "f64" && precision != "f32") {
            throw ConfigError("run: precision must be f64 or f32");
        }
        train.validate();
        if (kind == ModelKind::yofo || kind == ModelKind::yofo_final) {
            if (!(lc_s >= 0.0 && lc_s <= 1.0)) throw ConfigError("run: length target s in [0,1]");
        }
    }
};

inline nlohmann::json run_config_json(const RunConfig& rc) {
    return nlohmann::json{
        {"kind", model_kind_name(rc.kind)},
        {"precision", rc.precision},
        {"model",
         {{"layers", rc.model.layers},
          {"heads", rc.model.heads},
          {"width", rc.model.width},
          {"ff_width", rc.model.ff_width},
          {"gate_width", rc.model.gate_width},
          {"max_len", rc.model.max_len},
          {"dropout", rc.model.dropout}}},
        {"length",
         {{"k", rc.lc_k}, {"d", rc.lc_d}, {"s", rc.lc_s}, {"mode", decay_mode_name(rc.lc_mode)}}},
        {"train",
         {{"beta", rc.train.beta},
          {"gamma", rc.train.gamma},
          {"lr", rc.train.lr},
          {"weight_decay", rc.train.weight_decay},
          {"epochs", rc.train.epochs},
          {"batch_size", rc.train.batch_size},
          {"seed", rc.train.seed},
          {"loss_mode", loss_mode_name(rc.train.loss_mode)},
          {"temperature", rc.train.temperature},
          {"gate_lr_multiplier", rc.train.gate_lr_multiplier},
          {"omega_sparsity", rc.train.omega_sparsity},
          {"omega_contiguity", rc.train.omega_contiguity}}},
        {"skew", {{"k", rc.skew_k}, {"delimiters", rc.skew_delimiters}}},
        {"data", {{"train", rc.train_data}, {"eval", rc.eval_data}}},
        {"out_dir", rc.out_dir},
        {"resume_from", rc.resume_from}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig rc;
    try {
        rc.kind = model_kind_from(j.at("kind").get<std::string>());
        if (j.contains("precision")) rc.precision = j.at("precision").get<std::string>();
        if (j.contains("model")) {
            const auto& m = j.at("model");
            if (m.contains("layers")) rc.model.layers = m.at("layers").get<size_t>();
            if (m.contains("heads")) rc.model.heads = m.at("heads").get<size_t>();
            if (m.contains("width")) rc.model.width = m.at("width").get<size_t>();
            if (m.contains("ff_width")) rc.model.ff_width = m.at("ff_width").get<size_t>();
            if (m.contains("gate_width")) rc.model.gate_width = m.at("gate_width").get<size_t>();
            if (m.contains("max_len")) rc.model.max_len = m.at("max_len").get<size_t>();
            if (m.contains("dropout")) rc.model.dropout = m.at("dropout").get<double>();
        }
        if (j.contains("length")) {
            const auto& l = j.at("length");
            if (l.contains("k")) rc.lc_k = l.at("k").get<size_t>();
            if (l.contains("d")) rc.lc_d = l.at("d").get<size_t>();
            if (l.contains("s")) rc.lc_s = l.at("s").get<double>();
            if (l.contains("mode")) rc.lc_mode = decay_mode_from(l.at("mode").get<std::string>());
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            if (t.contains("beta")) rc.train.beta = t.at("beta").get<double>();
            if (t.contains("gamma")) rc.train.gamma = t.at("gamma").get<double>();
            if (t.contains("lr")) rc.train.lr = t.at("lr").get<double>();
            if (t.contains("weight_decay")) rc.train.weight_decay = t.at("weight_decay").get<double>();
            if (t.contains("epochs")) rc.train.epochs = t.at("epochs").get<size_t>();
            if (t.contains("batch_size")) rc.train.batch_size = t.at("batch_size").get<size_t>();
            if (t.contains("seed")) rc.train.seed = t.at("seed").get<uint64_t>();
            if (t.contains("loss_mode")) {
                rc.train.loss_mode = loss_mode_from(t.at("loss_mode").get<std::string>());
            }
            if (t.contains("temperature")) rc.train.temperature = t.at("temperature").get<double>();
            if (t.contains("gate_lr_multiplier")) {
                rc.train.gate_lr_multiplier = t.at("gate_lr_multiplier").get<double>();
            }
            if (t.contains("omega_sparsity")) {
                rc.train.omega_sparsity = t.at("omega_sparsity").get<double>();
            }
            if (t.contains("omega_contiguity")) {
                rc.train.omega_contiguity = t.at("omega_contiguity").get<double>();
            }
        }
        if (j.contains("skew")) {
            const auto& s = j.at("skew");
            if (s.contains("k")) rc.skew_k = s.at("k").get<size_t>();
            if (s.contains("delimiters")) {
                rc.skew_delimiters = s.at("delimiters").get<std::vector<std::string>>();
            }
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            if (d.contains("train")) rc.train_data = d.at("train").get<std::string>();
            if (d.contains("eval")) rc.eval_data = d.at("eval").get<std::string>();
        }
        if (j.contains("out_dir")) rc.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("resume_from")) rc.resume_from = j.at("resume_from").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: bad field: ") + e.what());
    }
    // the yofo_final variant constrains sparsity in the final layer only
    if (rc.kind == ModelKind::yofo_final) rc.train.loss_mode = LossMode::final_layer;
    rc.validate();
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open run config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("run config " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

inline void save_run_config(const std::string& path, const RunConfig& rc) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write run config: " + path);
        out << run_config_json(rc).dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace yofo
