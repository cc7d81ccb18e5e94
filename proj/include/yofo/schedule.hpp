#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "errors.hpp"

namespace yofo {

enum class DecayMode { cliff, linear, exponential, logarithmic };

inline std::string decay_mode_name(DecayMode m) {
    switch (m) {
        case DecayMode::cliff: return "cliff";
        case DecayMode::linear: return "linear";
        case DecayMode::exponential: return "exponential";
        case DecayMode::logarithmic: return "logarithmic";
    }
    throw ConfigError("unknown decay mode");
}

inline DecayMode decay_mode_from(const std::string& name) {
    if (name == "cliff") return DecayMode::cliff;
    if (name == "linear") return DecayMode::linear;
    if (name == "exponential") return DecayMode::exponential;
    if (name == "logarithmic") return DecayMode::logarithmic;
    throw ConfigError("unknown decay mode '" + name + "'");
}

// Per-layer token retention targets l_1..l_N. The first k layers gather
// information at full length, the next d layers decay from 1 to the target
// retention s per the decay mode, and the remaining layers hold s.
struct LengthConfiguration {
    size_t ig_layers = 0;   // k
    size_t rg_layers = 0;   // d
    double target = 1.0;    // s
    DecayMode mode = DecayMode::cliff;
    std::vector<double> levels;  // l_1..l_N

    size_t layer_count() const { return levels.size(); }
};

inline LengthConfiguration make_length_config(size_t k, size_t d, double s, DecayMode mode,
                                              size_t n) {
    if (k > n) {
        throw ConfigError("length config: k=" + std::to_string(k) + " exceeds layer count " +
                          std::to_string(n));
    }
    if (d > n - k) {
        throw ConfigError("length config: d=" + std::to_string(d) + " exceeds remaining layers " +
                          std::to_string(n - k));
    }
    if (!(s >= 0.0 && s <= 1.0)) {
        throw ConfigError("length config: target retention s must be in [0, 1]");
    }
    LengthConfiguration lc;
    lc.ig_layers = k;
    lc.rg_layers = d;
    lc.target = s;
    lc.mode = mode;
    lc.levels.resize(n);
    const double dd = static_cast<double>(d);
    for (size_t i = 1; i <= n; ++i) {
        double l;
        if (i <= k) {
            l = 1.0;
        } else if (mode == DecayMode::cliff || i >= k + d) {
            l = s;  // boundary and tail pinned exactly to the target
        } else {
            const double x = static_cast<double>(i - k);
            switch (mode) {
                case DecayMode::linear:
                    l = 1.0 - (1.0 - s) * x / dd;
                    break;
                case DecayMode::exponential:
                    l = std::pow(s, x / dd);
                    break;
                case DecayMode::logarithmic:
                    l = std::log((std::exp(s) * x + std::exp(1.0) * (dd - x)) / dd);
                    break;
                default:
                    l = s;
            }
        }
        lc.levels[i - 1] = l;
    }
    return lc;
}

}  // namespace yofo
