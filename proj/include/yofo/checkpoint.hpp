#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "encoder.hpp"
#include "errors.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace yofo {

enum class ModelKind { yofo, yofo_final, rnp, rnp_shared, plain };

inline std::string model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::yofo: return "yofo";
        case ModelKind::yofo_final: return "yofo_final";
        case ModelKind::rnp: return "rnp";
        case ModelKind::rnp_shared: return "rnp_shared";
        case ModelKind::plain: return "plain";
    }
    throw ConfigError("unknown model kind");
}

inline ModelKind model_kind_from(const std::string& name) {
    if (name == "yofo") return ModelKind::yofo;
    if (name == "yofo_final") return ModelKind::yofo_final;
    if (name == "rnp") return ModelKind::rnp;
    if (name == "rnp_shared") return ModelKind::rnp_shared;
    if (name == "plain") return ModelKind::plain;
    throw ConfigError("unknown model kind '" + name + "'");
}

template <class S>
constexpr const char* dtype_name() {
    if constexpr (sizeof(S) == 8) {
        return "f64";
    } else {
        return "f32";
    }
}

// ---------------------------------------------------------------------------
// Checkpoint file: magic + version, a JSON header describing the model
// (kind, dtype, configuration, vocabulary, named parameter shapes, optimizer
// presence, step/epoch counters), then the raw little-endian parameter
// payload in header order, then optional AdamW moments. Round-trips are
// bit-exact.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "YOFOCKPT";
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    ModelKind kind = ModelKind::plain;
    std::string dtype = "f64";
    ModelConfig cfg;
    size_t lc_k = 0;
    size_t lc_d = 0;
    double lc_s = 1.0;
    DecayMode lc_mode = DecayMode::cliff;
    std::vector<std::string> vocab;
    int64_t step_count = 0;
    size_t epochs_done = 0;

    LengthConfiguration length_config() const {
        return make_length_config(lc_k, lc_d, lc_s, lc_mode, cfg.layers);
    }
};

namespace detail {

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
    return nlohmann::json{{"layers", cfg.layers},     {"heads", cfg.heads},
                          {"width", cfg.width},       {"ff_width", cfg.ff_width},
                          {"gate_width", cfg.gate_width}, {"vocab_size", cfg.vocab_size},
                          {"max_len", cfg.max_len},   {"dropout", cfg.dropout}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.layers = j.at("layers").get<size_t>();
    cfg.heads = j.at("heads").get<size_t>();
    cfg.width = j.at("width").get<size_t>();
    cfg.ff_width = j.at("ff_width").get<size_t>();
    cfg.gate_width = j.at("gate_width").get<size_t>();
    cfg.vocab_size = j.at("vocab_size").get<size_t>();
    cfg.max_len = j.at("max_len").get<size_t>();
    cfg.dropout = j.at("dropout").get<double>();
    return cfg;
}

}  // namespace detail

// Write to a temporary file first, then rename into place.
template <class S>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamList<S>& params, AdamWT<S>* opt = nullptr) {
    nlohmann::json header;
    header["kind"] = model_kind_name(meta.kind);
    header["dtype"] = dtype_name<S>();
    header["model"] = detail::model_config_json(meta.cfg);
    header["length"] = {{"k", meta.lc_k},
                        {"d", meta.lc_d},
                        {"s", meta.lc_s},
                        {"mode", decay_mode_name(meta.lc_mode)}};
    header["vocab"] = meta.vocab;
    header["step_count"] = opt ? opt->step_count() : meta.step_count;
    header["epochs_done"] = meta.epochs_done;
    header["has_adam"] = opt != nullptr;
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& [name, t] : params) {
        plist.push_back({{"name", name}, {"shape", t.shape()}});
    }
    header["params"] = plist;

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint: " + tmp);
        out.write(kCheckpointMagic, 8);
        const uint32_t version = kCheckpointVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        const std::string hs = header.dump();
        const uint64_t hlen = hs.size();
        out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& [name, t] : params) {
            out.write(reinterpret_cast<const char*>(t.value().data()),
                      static_cast<std::streamsize>(t.numel() * sizeof(S)));
        }
        if (opt) {
            for (const auto& m : opt->moment1()) {
                out.write(reinterpret_cast<const char*>(m.data()),
                          static_cast<std::streamsize>(m.size() * sizeof(S)));
            }
            for (const auto& v : opt->moment2()) {
                out.write(reinterpret_cast<const char*>(v.data()),
                          static_cast<std::streamsize>(v.size() * sizeof(S)));
            }
        }
        if (!out) throw DataError("failed writing checkpoint: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

// Peek at the header only (kind/dtype dispatch before constructing a model).
inline nlohmann::json read_checkpoint_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8)) {
        throw DataError("not a checkpoint file: " + path);
    }
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("truncated checkpoint header: " + path);
    try {
        return nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint header: " + std::string(e.what()));
    }
}

inline CheckpointMeta checkpoint_meta_from_header(const nlohmann::json& header) {
    CheckpointMeta meta;
    try {
        meta.kind = model_kind_from(header.at("kind").get<std::string>());
        meta.dtype = header.at("dtype").get<std::string>();
        meta.cfg = detail::model_config_from_json(header.at("model"));
        meta.lc_k = header.at("length").at("k").get<size_t>();
        meta.lc_d = header.at("length").at("d").get<size_t>();
        meta.lc_s = header.at("length").at("s").get<double>();
        meta.lc_mode = decay_mode_from(header.at("length").at("mode").get<std::string>());
        meta.vocab = header.at("vocab").get<std::vector<std::string>>();
        meta.step_count = header.at("step_count").get<int64_t>();
        meta.epochs_done = header.at("epochs_done").get<size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint header field: " + std::string(e.what()));
    }
    return meta;
}

// Load parameter values into an already-built model. Names and shapes must
// match the header exactly; optimizer moments are restored when present and
// requested.
template <class S>
CheckpointMeta load_checkpoint(const std::string& path, const ParamList<S>& params,
                               AdamWT<S>* opt = nullptr) {
    const nlohmann::json header = read_checkpoint_header(path);
    CheckpointMeta meta = checkpoint_meta_from_header(header);
    if (meta.dtype != dtype_name<S>()) {
        throw DataError("checkpoint dtype " + meta.dtype + " does not match requested " +
                        dtype_name<S>());
    }
    const auto& plist = header.at("params");
    if (plist.size() != params.size()) {
        throw DataError("checkpoint parameter count " + std::to_string(plist.size()) +
                        " does not match model (" + std::to_string(params.size()) + ")");
    }
    std::ifstream in(path, std::ios::binary);
    in.seekg(8 + sizeof(uint32_t));
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    in.seekg(static_cast<std::streamoff>(8 + sizeof(uint32_t) + sizeof(uint64_t) + hlen));
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string name = plist[i].at("name").get<std::string>();
        const auto shape = plist[i].at("shape").get<std::vector<size_t>>();
        TensorT<S> tensor = params[i].second;
        if (name != params[i].first || shape != tensor.shape()) {
            throw DataError("checkpoint layout mismatch at '" + name + "' (model has '" +
                            params[i].first + "' " + shape_str(tensor.shape()) + ")");
        }
        in.read(reinterpret_cast<char*>(tensor.value().data()),
                static_cast<std::streamsize>(tensor.numel() * sizeof(S)));
    }
    const bool has_adam = header.at("has_adam").get<bool>();
    if (opt && has_adam) {
        for (auto& m : opt->moment1()) {
            in.read(reinterpret_cast<char*>(m.data()),
                    static_cast<std::streamsize>(m.size() * sizeof(S)));
        }
        for (auto& v : opt->moment2()) {
            in.read(reinterpret_cast<char*>(v.data()),
                    static_cast<std::streamsize>(v.size() * sizeof(S)));
        }
        opt->set_step_count(meta.step_count);
    }
    if (!in) throw DataError("truncated checkpoint payload: " + path);
    return meta;
}

}  // namespace yofo
