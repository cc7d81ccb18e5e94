#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace yofo {

// ---------------------------------------------------------------------------
// Vocabulary. Id 0 is the classification token, id 1 the unknown token; the
// model prepends the classification token itself, corpora never store it.
// ---------------------------------------------------------------------------

struct Vocab {
    static constexpr int kCls = 0;
    static constexpr int kUnk = 1;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    size_t size() const { return id_to_token.size(); }

    int id(const std::string& tok) const {
        auto it = token_to_id.find(tok);
        return it == token_to_id.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const { return id_to_token.at(static_cast<size_t>(id)); }

    void add(const std::string& tok) {
        if (token_to_id.emplace(tok, static_cast<int>(id_to_token.size())).second) {
            id_to_token.push_back(tok);
        }
    }

    static Vocab with_specials() {
        Vocab v;
        v.add("[cls]");
        v.add("[unk]");
        return v;
    }
};

// ---------------------------------------------------------------------------
// Examples and corpus records
// ---------------------------------------------------------------------------

struct Example {
    std::vector<int> tokens;            // text token ids, no classification token
    int label = 0;                      // {0, 1}
    std::optional<BinaryMask> gold;     // rationale mask over text tokens
    std::string aspect;                 // empty = untagged
};

// On-disk record: token surface strings plus label and optional annotations.
struct CorpusRecord {
    std::vector<std::string> tokens;
    std::optional<int> label;
    std::vector<std::pair<size_t, size_t>> spans;  // [start, end) rationale spans
    std::string aspect;
    std::optional<double> score;
};

using Corpus = std::vector<CorpusRecord>;

// ---------------------------------------------------------------------------
// Score binarization (positive >= pos_thresh, negative <= neg_thresh,
// in-between discarded)
// ---------------------------------------------------------------------------

enum class Polarity { positive, negative, discard };

inline Polarity binarize_score(double score, double pos_thresh = 0.6, double neg_thresh = 0.4) {
    if (!(neg_thresh <= pos_thresh)) {
        throw ConfigError("binarize_score: thresholds must satisfy neg <= pos");
    }
    if (!(score >= 0.0 && score <= 1.0)) {
        throw DataError("binarize_score: score " + std::to_string(score) + " outside [0, 1]");
    }
    if (score >= pos_thresh) return Polarity::positive;
    if (score <= neg_thresh) return Polarity::negative;
    return Polarity::discard;
}

// ---------------------------------------------------------------------------
// Synthetic planted-rationale corpus
// ---------------------------------------------------------------------------

// Every example carries one contiguous gold span whose cue tokens entail the
// label: the span holds a majority of label-lexicon cues, with one
// opposite-lexicon cue mixed in when the span is long enough, so the label is
// the majority polarity of the span (mixed-sentiment texture at a fixed
// margin). The gold span never overlaps the first sentence, so the first
// sentence of a rho=0 corpus is label-free (needed by the predictor-skewing
// probe). With probability rho one distractor cue agreeing with the label is
// planted outside the span.
struct SynthSpec {
    size_t vocab_size = 200;  // filler token count; cue lexicons come on top
    size_t len_lo = 55;
    size_t len_hi = 65;
    double span_fraction = 0.15;
    std::vector<std::string> pos_cues = {"good", "great", "tasty",  "lovely",
                                         "superb", "fine", "crisp", "bright"};
    std::vector<std::string> neg_cues = {"bad",  "poor", "bland", "stale",
                                         "dull", "weak", "flat",  "sour"};
    double rho = 0.0;
    uint64_t seed = 0;

    void validate() const {
        if (vocab_size < 2) throw ConfigError("synth: vocab_size must be >= 2");
        if (len_lo < 12 || len_hi < len_lo) {
            throw ConfigError("synth: need 12 <= len_lo <= len_hi");
        }
        if (!(span_fraction > 0.0 && span_fraction <= 1.0)) {
            throw ConfigError("synth: span_fraction must be in (0, 1]");
        }
        if (pos_cues.empty() || neg_cues.empty()) {
            throw ConfigError("synth: cue lexicons must be nonempty");
        }
        if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("synth: rho must be in [0, 1]");
        // span plus first sentence (<= 10 tokens) must fit
        const size_t span = static_cast<size_t>(std::max(1.0, span_fraction * len_lo + 0.5));
        if (10 + span > len_lo) {
            throw ConfigError("synth: span fraction " + std::to_string(span_fraction) +
                              " does not fit after the first sentence at length " +
                              std::to_string(len_lo));
        }
    }
};

inline std::string synth_filler(size_t i) { return "w" + std::to_string(i); }

inline Corpus synth_generate(const SynthSpec& spec, size_t n) {
    spec.validate();
    if (n == 0) return {};
    Rng r(derive_seed(spec.seed, 17));
    Corpus out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        CorpusRecord rec;
        const size_t len = spec.len_lo + static_cast<size_t>(r.below(spec.len_hi - spec.len_lo + 1));
        const int label = r.bernoulli(0.5) ? 1 : 0;
        const size_t span_len =
            std::max<size_t>(1, static_cast<size_t>(spec.span_fraction * len + 0.5));
        rec.tokens.resize(len);
        for (size_t t = 0; t < len; ++t) {
            rec.tokens[t] = synth_filler(r.below(spec.vocab_size));
        }
        // first sentence, then delimiters every 7-12 tokens
        const size_t first_len = 6 + static_cast<size_t>(r.below(5));  // 6..10
        rec.tokens[first_len - 1] = ".";
        // gold span strictly after the first sentence
        const size_t start =
            first_len + static_cast<size_t>(r.below(len - span_len - first_len + 1));
        const size_t end = start + span_len;
        for (size_t p = first_len + 6 + r.below(7); p < len; p += 7 + r.below(6)) {
            if (p >= start && p < end) continue;
            rec.tokens[p] = ".";
        }
        const auto& major = label == 1 ? spec.pos_cues : spec.neg_cues;
        const auto& minor = label == 1 ? spec.neg_cues : spec.pos_cues;
        // roughly two thirds of the span carries cues; one dissenting cue
        // appears once the majority margin stays comfortable
        const size_t total_cues =
            std::max<size_t>(1, std::min<size_t>(span_len, static_cast<size_t>(0.66 * span_len + 0.5)));
        const size_t minority_cues = total_cues >= 5 ? 1 : 0;
        const size_t majority_cues = total_cues - minority_cues;
        std::vector<size_t> offs(span_len);
        for (size_t j = 0; j < span_len; ++j) offs[j] = j;
        r.shuffle(offs);
        for (size_t c = 0; c < majority_cues; ++c) {
            rec.tokens[start + offs[c]] = major[r.below(major.size())];
        }
        for (size_t c = 0; c < minority_cues; ++c) {
            rec.tokens[start + offs[majority_cues + c]] = minor[r.below(minor.size())];
        }
        if (r.bernoulli(spec.rho)) {
            // distractor cue agreeing with the label, planted outside the span
            size_t pos;
            do {
                pos = static_cast<size_t>(r.below(len));
            } while (pos >= start && pos < end);
            rec.tokens[pos] = major[r.below(major.size())];
        }
        rec.label = label;
        rec.spans.emplace_back(start, end);
        out.push_back(std::move(rec));
    }
    return out;
}

struct SynthAudit {
    size_t examples = 0;
    size_t out_of_span_cues = 0;        // cue token occurrences outside gold spans
    size_t examples_with_distractor = 0;
};

inline SynthAudit audit_corpus(const Corpus& corpus, const SynthSpec& spec) {
    std::set<std::string> cues(spec.pos_cues.begin(), spec.pos_cues.end());
    cues.insert(spec.neg_cues.begin(), spec.neg_cues.end());
    SynthAudit a;
    a.examples = corpus.size();
    for (const auto& rec : corpus) {
        size_t outside = 0;
        for (size_t t = 0; t < rec.tokens.size(); ++t) {
            if (!cues.count(rec.tokens[t])) continue;
            bool in_span = false;
            for (const auto& [s, e] : rec.spans) in_span |= (t >= s && t < e);
            if (!in_span) ++outside;
        }
        a.out_of_span_cues += outside;
        if (outside > 0) ++a.examples_with_distractor;
    }
    return a;
}

// ---------------------------------------------------------------------------
// Corpus files: UTF-8 JSON lines. The first line is a header record carrying
// the schema version; each following line is one example.
// ---------------------------------------------------------------------------

inline constexpr int kCorpusSchemaVersion = 1;

inline void save_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open corpus file for writing: " + path);
    nlohmann::json header{{"record", "header"}, {"schema_version", kCorpusSchemaVersion}};
    out << header.dump() << "\n";
    for (const auto& rec : corpus) {
        nlohmann::json j;
        j["tokens"] = rec.tokens;
        if (rec.label) j["label"] = *rec.label;
        if (!rec.spans.empty()) {
            nlohmann::json spans = nlohmann::json::array();
            for (const auto& [s, e] : rec.spans) spans.push_back({s, e});
            j["spans"] = spans;
        }
        if (!rec.aspect.empty()) j["aspect"] = rec.aspect;
        if (rec.score) j["score"] = *rec.score;
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("failed writing corpus file: " + path);
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file: " + path);
    Corpus corpus;
    std::string line;
    size_t lineno = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed record: " +
                            e.what());
        }
        const auto fail = [&](const std::string& field, const std::string& why) -> void {
            throw DataError(path + ":" + std::to_string(lineno) + ": field '" + field + "' " +
                            why);
        };
        if (!saw_header) {
            if (!j.is_object() || j.value("record", "") != "header") {
                fail("record", "missing corpus header line");
            }
            if (j.value("schema_version", -1) != kCorpusSchemaVersion) {
                fail("schema_version", "unsupported version");
            }
            saw_header = true;
            continue;
        }
        CorpusRecord rec;
        if (!j.contains("tokens") || !j["tokens"].is_array()) fail("tokens", "missing or not a list");
        for (const auto& t : j["tokens"]) {
            if (!t.is_string()) fail("tokens", "contains a non-string entry");
            rec.tokens.push_back(t.get<std::string>());
        }
        if (j.contains("label")) {
            if (!j["label"].is_number_integer()) fail("label", "not an integer");
            const int label = j["label"].get<int>();
            if (label != 0 && label != 1) fail("label", "must be 0 or 1");
            rec.label = label;
        }
        if (j.contains("score")) {
            if (!j["score"].is_number()) fail("score", "not a number");
            rec.score = j["score"].get<double>();
        }
        if (!rec.label && !rec.score) fail("label", "record has neither label nor score");
        if (j.contains("spans")) {
            if (!j["spans"].is_array()) fail("spans", "not a list");
            for (const auto& sp : j["spans"]) {
                if (!sp.is_array() || sp.size() != 2 || !sp[0].is_number_unsigned() ||
                    !sp[1].is_number_unsigned()) {
                    fail("spans", "entries must be [start, end) index pairs");
                }
                const size_t s = sp[0].get<size_t>(), e = sp[1].get<size_t>();
                if (s >= e || e > rec.tokens.size()) {
                    fail("spans", "range [" + std::to_string(s) + "," + std::to_string(e) +
                                      ") outside " + std::to_string(rec.tokens.size()) +
                                      " tokens");
                }
                rec.spans.emplace_back(s, e);
            }
        }
        if (j.contains("aspect")) {
            if (!j["aspect"].is_string()) fail("aspect", "not a string");
            rec.aspect = j["aspect"].get<std::string>();
        }
        corpus.push_back(std::move(rec));
    }
    if (!saw_header) throw DataError(path + ": missing corpus header line");
    return corpus;
}

// ---------------------------------------------------------------------------
// Encoding records to model examples
// ---------------------------------------------------------------------------

inline Vocab build_vocab(const Corpus& corpus) {
    std::set<std::string> uniq;
    for (const auto& rec : corpus) uniq.insert(rec.tokens.begin(), rec.tokens.end());
    Vocab v = Vocab::with_specials();
    for (const auto& tok : uniq) v.add(tok);
    return v;
}

// Records with a raw score and no label are binarized; mid-range scores are
// discarded. Gold spans become token masks.
inline std::vector<Example> encode_corpus(const Corpus& corpus, const Vocab& vocab,
                                          double pos_thresh = 0.6, double neg_thresh = 0.4) {
    std::vector<Example> out;
    out.reserve(corpus.size());
    for (const auto& rec : corpus) {
        int label;
        if (rec.label) {
            label = *rec.label;
        } else {
            const Polarity p = binarize_score(*rec.score, pos_thresh, neg_thresh);
            if (p == Polarity::discard) continue;
            label = p == Polarity::positive ? 1 : 0;
        }
        Example ex;
        ex.label = label;
        ex.aspect = rec.aspect;
        ex.tokens.reserve(rec.tokens.size());
        for (const auto& t : rec.tokens) ex.tokens.push_back(vocab.id(t));
        if (!rec.spans.empty()) {
            BinaryMask mask(rec.tokens.size(), 0);
            for (const auto& [s, e] : rec.spans)
                for (size_t i = s; i < e; ++i) mask[i] = 1;
            ex.gold = std::move(mask);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

// Model input: classification token prepended to the text token ids.
inline std::vector<int> with_cls(const std::vector<int>& tokens) {
    std::vector<int> ids;
    ids.reserve(tokens.size() + 1);
    ids.push_back(Vocab::kCls);
    ids.insert(ids.end(), tokens.begin(), tokens.end());
    return ids;
}

// Tokens up to and including the first sentence delimiter (whole text when no
// delimiter occurs). Used by the predictor-skewing probe.
inline std::vector<int> first_sentence(const std::vector<int>& tokens,
                                       const std::vector<int>& delimiter_ids) {
    for (size_t i = 0; i < tokens.size(); ++i) {
        for (int d : delimiter_ids) {
            if (tokens[i] == d) {
                return std::vector<int>(tokens.begin(), tokens.begin() + i + 1);
            }
        }
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// SynthSpec files: flat JSON, every field explicit
// ---------------------------------------------------------------------------

inline void save_synth_spec(const std::string& path, const SynthSpec& spec) {
    nlohmann::json j{{"vocab_size", spec.vocab_size},
                     {"len_lo", spec.len_lo},
                     {"len_hi", spec.len_hi},
                     {"span_fraction", spec.span_fraction},
                     {"pos_cues", spec.pos_cues},
                     {"neg_cues", spec.neg_cues},
                     {"rho", spec.rho},
                     {"seed", spec.seed}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write synth spec: " + path);
    out << j.dump(2) << "\n";
}

inline SynthSpec load_synth_spec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open synth spec: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("synth spec " + path + ": " + e.what());
    }
    SynthSpec spec;
    try {
        spec.vocab_size = j.at("vocab_size").get<size_t>();
        spec.len_lo = j.at("len_lo").get<size_t>();
        spec.len_hi = j.at("len_hi").get<size_t>();
        spec.span_fraction = j.at("span_fraction").get<double>();
        spec.pos_cues = j.at("pos_cues").get<std::vector<std::string>>();
        spec.neg_cues = j.at("neg_cues").get<std::vector<std::string>>();
        spec.rho = j.at("rho").get<double>();
        spec.seed = j.at("seed").get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("synth spec " + path + ": missing or bad field: " + e.what());
    }
    spec.validate();
    return spec;
}

}  // namespace yofo
