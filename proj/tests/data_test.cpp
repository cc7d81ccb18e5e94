#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "yofo/data.hpp"

using namespace yofo;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

SynthSpec small_spec(double rho, uint64_t seed) {
    SynthSpec spec;
    spec.vocab_size = 50;
    spec.len_lo = 20;
    spec.len_hi = 30;
    spec.span_fraction = 0.2;
    spec.rho = rho;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("synthetic corpus plants exactly one contiguous labeled span") {
    auto spec = small_spec(0.0, 11);
    auto corpus = synth_generate(spec, 200);
    REQUIRE(corpus.size() == 200);
    std::set<std::string> pos(spec.pos_cues.begin(), spec.pos_cues.end());
    std::set<std::string> neg(spec.neg_cues.begin(), spec.neg_cues.end());
    for (const auto& rec : corpus) {
        REQUIRE(rec.spans.size() == 1);
        const auto [s, e] = rec.spans[0];
        REQUIRE(s < e);
        REQUIRE(e <= rec.tokens.size());
        // the majority polarity of the span's cue tokens determines the label
        size_t n_pos = 0, n_neg = 0;
        for (size_t i = s; i < e; ++i) {
            n_pos += pos.count(rec.tokens[i]);
            n_neg += neg.count(rec.tokens[i]);
        }
        CHECK(n_pos + n_neg >= 1);
        CHECK(n_pos != n_neg);
        CHECK(*rec.label == (n_pos > n_neg ? 1 : 0));
    }
}

TEST_CASE("rho controls out-of-span cue planting") {
    auto clean = synth_generate(small_spec(0.0, 5), 300);
    auto clean_audit = audit_corpus(clean, small_spec(0.0, 5));
    CHECK(clean_audit.out_of_span_cues == 0);

    auto spiked = synth_generate(small_spec(1.0, 5), 300);
    auto spiked_audit = audit_corpus(spiked, small_spec(1.0, 5));
    CHECK(spiked_audit.examples_with_distractor == 300);
}

TEST_CASE("synth generation is deterministic under the seed") {
    auto a = synth_generate(small_spec(0.5, 42), 50);
    auto b = synth_generate(small_spec(0.5, 42), 50);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].tokens == b[i].tokens);
        CHECK(a[i].label == b[i].label);
        CHECK(a[i].spans == b[i].spans);
    }
    auto c = synth_generate(small_spec(0.5, 43), 50);
    bool any_diff = false;
    for (size_t i = 0; i < a.size(); ++i) any_diff |= (a[i].tokens != c[i].tokens);
    CHECK(any_diff);
}

TEST_CASE("infeasible synth specs are rejected") {
    auto spec = small_spec(0.0, 1);
    spec.len_lo = 12;
    spec.len_hi = 12;
    spec.span_fraction = 0.9;  // span + first sentence cannot fit
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = small_spec(2.0, 1);
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("binarize_score partitions the unit interval") {
    CHECK(binarize_score(0.8) == Polarity::positive);
    CHECK(binarize_score(0.6) == Polarity::positive);   // boundary inclusive
    CHECK(binarize_score(0.4) == Polarity::negative);   // boundary inclusive
    CHECK(binarize_score(0.1) == Polarity::negative);
    CHECK(binarize_score(0.5) == Polarity::discard);
    CHECK(binarize_score(0.59999) == Polarity::discard);
    CHECK_THROWS_AS(binarize_score(-0.1), DataError);
    CHECK_THROWS_AS(binarize_score(1.0001), DataError);
    CHECK_THROWS_AS(binarize_score(0.5, 0.3, 0.7), ConfigError);
}

TEST_CASE("corpus files round-trip exactly") {
    Corpus corpus = synth_generate(small_spec(0.3, 9), 40);
    corpus[3].aspect = "appearance";
    corpus[4].score = 0.75;
    CorpusRecord scored;  // score-only record
    scored.tokens = {"just", "a", "scored", "record", "."};
    scored.score = 0.9;
    corpus.push_back(scored);

    const std::string path = temp_path("yofo_corpus_roundtrip.jsonl");
    save_corpus(path, corpus);
    auto loaded = load_corpus(path);
    REQUIRE(loaded.size() == corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        CHECK(loaded[i].tokens == corpus[i].tokens);
        CHECK(loaded[i].label == corpus[i].label);
        CHECK(loaded[i].spans == corpus[i].spans);
        CHECK(loaded[i].aspect == corpus[i].aspect);
        CHECK(loaded[i].score == corpus[i].score);
    }
    std::filesystem::remove(path);
}

TEST_CASE("malformed corpus lines are rejected with their line number") {
    const std::string path = temp_path("yofo_corpus_bad.jsonl");
    {
        std::ofstream out(path);
        out << R"({"record":"header","schema_version":1})" << "\n";
        out << R"({"tokens":["a","b"],"label":1})" << "\n";
        out << R"({"tokens":["a","b"],"label":3})" << "\n";
    }
    CHECK_THROWS_WITH(load_corpus(path), Catch::Matchers::ContainsSubstring(":3:"));
    {
        std::ofstream out(path);
        out << R"({"record":"header","schema_version":1})" << "\n";
        out << R"({"tokens":["a","b"]})" << "\n";  // neither label nor score
    }
    CHECK_THROWS_WITH(load_corpus(path), Catch::Matchers::ContainsSubstring("label"));
    {
        std::ofstream out(path);
        out << R"({"record":"header","schema_version":1})" << "\n";
        out << R"({"tokens":["a","b"],"label":1,"spans":[[0,5]]})" << "\n";
    }
    CHECK_THROWS_WITH(load_corpus(path), Catch::Matchers::ContainsSubstring("spans"));
    {
        std::ofstream out(path);
        out << R"({"tokens":["a"],"label":1})" << "\n";  // missing header
    }
    CHECK_THROWS_AS(load_corpus(path), DataError);
    {
        std::ofstream out(path);
        out << R"({"record":"header","schema_version":1})" << "\n";
        out << "not json at all\n";
    }
    CHECK_THROWS_WITH(load_corpus(path), Catch::Matchers::ContainsSubstring(":2:"));
    std::filesystem::remove(path);
}

TEST_CASE("header-only corpus loads as an empty dataset") {
    const std::string path = temp_path("yofo_corpus_empty.jsonl");
    save_corpus(path, {});
    CHECK(load_corpus(path).empty());
    CHECK(synth_generate(small_spec(0.0, 1), 0).empty());
    std::filesystem::remove(path);
}

TEST_CASE("span lists expand to token masks") {
    CorpusRecord rec;
    rec.tokens = {"t0", "t1", "t2", "t3", "t4", "t5"};
    rec.label = 1;
    rec.spans = {{2, 5}};
    CorpusRecord bare;
    bare.tokens = {"t0", "t1"};
    bare.label = 0;
    Corpus corpus = {rec, bare};
    auto vocab = build_vocab(corpus);
    auto examples = encode_corpus(corpus, vocab);
    REQUIRE(examples.size() == 2);
    REQUIRE(examples[0].gold.has_value());
    CHECK(*examples[0].gold == BinaryMask{0, 0, 1, 1, 1, 0});
    CHECK(!examples[1].gold.has_value());
}

TEST_CASE("score-only records binarize and mid-range scores drop out") {
    Corpus corpus;
    for (double s : {0.9, 0.5, 0.2}) {
        CorpusRecord rec;
        rec.tokens = {"x", "y"};
        rec.score = s;
        corpus.push_back(rec);
    }
    auto vocab = build_vocab(corpus);
    auto examples = encode_corpus(corpus, vocab);
    REQUIRE(examples.size() == 2);  // 0.5 discarded
    CHECK(examples[0].label == 1);
    CHECK(examples[1].label == 0);
}

TEST_CASE("vocabulary is deterministic and stable") {
    auto corpus = synth_generate(small_spec(0.0, 3), 30);
    auto v1 = build_vocab(corpus);
    auto v2 = build_vocab(corpus);
    CHECK(v1.id_to_token == v2.id_to_token);
    CHECK(v1.id("[cls]") == Vocab::kCls);
    CHECK(v1.id("never-seen-token") == Vocab::kUnk);
    // encoding maps ids back to the same surface strings
    auto examples = encode_corpus(corpus, v1);
    for (size_t i = 0; i < 5; ++i) {
        for (size_t t = 0; t < examples[i].tokens.size(); ++t) {
            CHECK(v1.token(examples[i].tokens[t]) == corpus[i].tokens[t]);
        }
    }
}

TEST_CASE("first_sentence cuts at the first delimiter") {
    std::vector<int> tokens = {4, 9, 2, 7, 5, 9};
    CHECK(first_sentence(tokens, {2}) == std::vector<int>{4, 9, 2});
    CHECK(first_sentence(tokens, {99}) == tokens);  // no delimiter: whole text
    CHECK(first_sentence(tokens, {9, 2}) == std::vector<int>{4, 9});
}

TEST_CASE("synth spec files round-trip") {
    auto spec = small_spec(0.7, 123);
    const std::string path = temp_path("yofo_synth_spec.json");
    save_synth_spec(path, spec);
    auto loaded = load_synth_spec(path);
    CHECK(loaded.vocab_size == spec.vocab_size);
    CHECK(loaded.len_lo == spec.len_lo);
    CHECK(loaded.len_hi == spec.len_hi);
    CHECK(loaded.span_fraction == spec.span_fraction);
    CHECK(loaded.pos_cues == spec.pos_cues);
    CHECK(loaded.neg_cues == spec.neg_cues);
    CHECK(loaded.rho == spec.rho);
    CHECK(loaded.seed == spec.seed);

    // every field must be explicit
    {
        std::ofstream out(path);
        out << R"({"vocab_size": 50})" << "\n";
    }
    CHECK_THROWS_AS(load_synth_spec(path), DataError);
    std::filesystem::remove(path);
}
