#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

// Brute-force scalar recomputations of every regularizer, kept deliberately
// independent of the tensor/tape code paths they check.
namespace testsupport {

inline double oracle_sparsity_final(const std::vector<double>& mask, double target) {
    double mean = 0.0;
    for (double v : mask) mean += v;
    mean /= static_cast<double>(mask.size());
    return std::fabs(mean - target);
}

inline double oracle_sparsity_layerwise(const std::vector<std::vector<double>>& masks,
                                        const std::vector<double>& levels) {
    double acc = 0.0;
    for (size_t i = 0; i < masks.size(); ++i) {
        double mean = 0.0;
        for (double v : masks[i]) mean += v;
        mean /= static_cast<double>(masks[i].size());
        acc += std::fabs(mean - levels[i]);
    }
    return acc / static_cast<double>(masks.size());
}

inline double oracle_contiguity(const std::vector<std::vector<double>>& masks) {
    const size_t n = masks.size();
    const size_t len = masks[0].size();
    double acc = 0.0;
    for (const auto& m : masks) {
        for (size_t j = 0; j + 1 < len; ++j) acc += std::fabs(m[j + 1] - m[j]);
    }
    return acc / (static_cast<double>(n) * static_cast<double>(len - 1));
}

inline double oracle_omega(const std::vector<double>& mask, double w_sparsity,
                           double w_contiguity) {
    double count = 0.0, trans = 0.0;
    for (double v : mask) count += std::fabs(v);
    for (size_t j = 0; j + 1 < mask.size(); ++j) trans += std::fabs(mask[j + 1] - mask[j]);
    return w_sparsity * count + w_contiguity * trans;
}

// Set-arithmetic precision/recall/F1 oracle over index sets.
struct OraclePrf {
    double p = 0.0;
    double r = 0.0;
    double f1 = 0.0;
};

inline OraclePrf oracle_token_prf(const std::vector<uint8_t>& pred,
                                  const std::vector<uint8_t>& gold) {
    std::vector<size_t> ps, gs;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i]) ps.push_back(i);
    }
    for (size_t i = 0; i < gold.size(); ++i) {
        if (gold[i]) gs.push_back(i);
    }
    size_t inter = 0;
    for (size_t a : ps) {
        for (size_t b : gs) {
            if (a == b) ++inter;
        }
    }
    OraclePrf out;
    out.p = ps.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(ps.size());
    out.r = gs.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(gs.size());
    out.f1 = (out.p + out.r) == 0.0 ? 0.0 : 2.0 * out.p * out.r / (out.p + out.r);
    return out;
}

}  // namespace testsupport
