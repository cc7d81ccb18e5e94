#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "yofo/data.hpp"

// Exercises the installed binary end to end through a shell.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;
};

CmdResult run_cli(const std::string& args) {
    const std::string cmd = std::string(YOFO_BIN) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CmdResult res;
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof(buf), pipe)) res.out.append(buf, n);
    const int status = pclose(pipe);
    res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("yofo_cli_" + std::to_string(reinterpret_cast<uintptr_t>(this)) + "_" +
                std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

const char* kSpecJson = R"({
  "vocab_size": 40, "len_lo": 20, "len_hi": 26, "span_fraction": 0.2,
  "pos_cues": ["good", "great", "tasty", "lovely"],
  "neg_cues": ["bad", "poor", "bland", "stale"],
  "rho": 0.0, "seed": 7
})";

std::string run_config(const std::string& kind, const std::string& train_path,
                       const std::string& eval_path, const std::string& out_dir,
                       size_t epochs = 2, const std::string& extra_train = "") {
    json j;
    j["kind"] = kind;
    j["model"] = {{"layers", 2},     {"heads", 2},       {"width", 16},
                  {"ff_width", 32},  {"gate_width", 16}, {"dropout", 0.0}};
    j["length"] = {{"k", 1}, {"d", 0}, {"s", 0.2}, {"mode", "cliff"}};
    json train = {{"beta", 3.0},      {"gamma", 0.5},     {"lr", 0.003},
                  {"epochs", epochs}, {"batch_size", 10}, {"seed", 1},
                  {"omega_sparsity", 0.01}, {"omega_contiguity", 0.01}};
    if (!extra_train.empty()) {
        const json extra = json::parse(extra_train);
        for (const auto& [k, v] : extra.items()) train[k] = v;
    }
    j["train"] = train;
    j["data"] = {{"train", train_path}, {"eval", eval_path}};
    j["out_dir"] = out_dir;
    return j.dump();
}

}  // namespace

TEST_CASE("synth writes an audited corpus deterministically") {
    TempDir dir;
    write_file(dir.file("spec.json"), kSpecJson);

    auto empty = run_cli("synth --spec " + dir.file("spec.json") + " --out " +
                         dir.file("empty.jsonl") + " --n 0");
    CHECK(empty.code == 0);
    CHECK(yofo::load_corpus(dir.file("empty.jsonl")).empty());

    auto a = run_cli("synth --spec " + dir.file("spec.json") + " --out " + dir.file("a.jsonl") +
                     " --n 50");
    auto b = run_cli("synth --spec " + dir.file("spec.json") + " --out " + dir.file("b.jsonl") +
                     " --n 50");
    CHECK(a.code == 0);
    CHECK(a.out.find("out_of_span_cues=0") != std::string::npos);
    CHECK(read_file(dir.file("a.jsonl")) == read_file(dir.file("b.jsonl")));  // byte-identical

    auto bad = run_cli("synth --spec " + dir.file("missing.json") + " --out " +
                       dir.file("c.jsonl") + " --n 5");
    CHECK(bad.code == 2);
}

TEST_CASE("train with zero epochs writes the initial checkpoint and empty metrics") {
    TempDir dir;
    write_file(dir.file("spec.json"), kSpecJson);
    run_cli("synth --spec " + dir.file("spec.json") + " --out " + dir.file("train.jsonl") +
            " --n 20");
    write_file(dir.file("run.json"),
               run_config("yofo", dir.file("train.jsonl"), "", dir.file("out"), 0));
    auto res = run_cli("train --config " + dir.file("run.json"));
    CHECK(res.code == 0);
    CHECK(fs::exists(dir.file("out") + "/epoch_000.ckpt"));
    CHECK(fs::exists(dir.file("out") + "/final.ckpt"));
    CHECK(fs::exists(dir.file("out") + "/config.frozen.json"));
    CHECK(read_file(dir.file("out") + "/metrics.jsonl").empty());
}

TEST_CASE("train runs are reproducible byte for byte and resume continues the step count") {
    TempDir dir;
    write_file(dir.file("spec.json"), kSpecJson);
    run_cli("synth --spec " + dir.file("spec.json") + " --out " + dir.file("train.jsonl") +
            " --n 30");
    write_file(dir.file("run.json"),
               run_config("yofo", dir.file("train.jsonl"), "", dir.file("outA"), 2));
    auto r1 = run_cli("train --config " + dir.file("run.json"));
    REQUIRE(r1.code == 0);
    auto r2 = run_cli("train --config " + dir.file("run.json") + " --out-dir " + dir.file("outB"));
    REQUIRE(r2.code == 0);
    CHECK(read_file(dir.file("outA") + "/metrics.jsonl") ==
          read_file(dir.file("outB") + "/metrics.jsonl"));
    CHECK(read_file(dir.file("outA") + "/final.ckpt") ==
          read_file(dir.file("outB") + "/final.ckpt"));

    // resuming from the first epoch checkpoint replays the second epoch with
    // a monotone step counter
    auto resumed = run_cli("train --config " + dir.file("run.json") + " --out-dir " +
                           dir.file("outC") + " --resume " + dir.file("outA") + "/epoch_001.ckpt");
    REQUIRE(resumed.code == 0);
    const auto full = read_file(dir.file("outA") + "/metrics.jsonl");
    const auto tail = read_file(dir.file("outC") + "/metrics.jsonl");
    const auto second_line = full.substr(full.find('\n') + 1);
    CHECK(tail == second_line);
    auto last = json::parse(tail.substr(0, tail.find('\n')));
    CHECK(last.at("epoch") == 1);
    CHECK(last.at("step_count") == 6);  // 3 steps per epoch, continued
}

TEST_CASE("eval reports near-perfect accuracy for a memorizing classifier") {
    TempDir dir;
    write_file(dir.file("spec.json"), kSpecJson);
    run_cli("synth --spec " + dir.file("spec.json") + " --out " + dir.file("train.jsonl") +
            " --n 24");
    write_file(dir.file("run.json"),
               run_config("plain", dir.file("train.jsonl"), dir.file("train.jsonl"),
                          dir.file("out"), 14));
    auto train = run_cli("train --config " + dir.file("run.json"));
    REQUIRE(train.code == 0);
    auto eval = run_cli("eval --checkpoint " + dir.file("out") + "/final.ckpt --data " +
                        dir.file("train.jsonl"));
    REQUIRE(eval.code == 0);
    auto record = json::parse(eval.out.substr(0, eval.out.find('\n')));
    CHECK(record.at("ACC").get<double>() >= 0.9);
}

TEST_CASE("decode prints the full text at every layer for keep-all gates") {
    TempDir dir;
    write_file(dir.file("spec.json"), kSpecJson);
    run_cli("synth --spec " + dir.file("spec.json") + " --out " + dir.file("train.jsonl") +
            " --n 10");
    // a freshly initialized skim model keeps everything (keep-biased gates)
    write_file(dir.file("run.json"),
               run_config("yofo", dir.file("train.jsonl"), "", dir.file("out"), 0));
    REQUIRE(run_cli("train --config " + dir.file("run.json")).code == 0);
    auto dec = run_cli("decode --checkpoint " + dir.file("out") + "/final.ckpt --data " +
                       dir.file("train.jsonl") + " --examples 2");
    REQUIRE(dec.code == 0);
    auto corpus = yofo::load_corpus(dir.file("train.jsonl"));
    std::string text;
    for (const auto& t : corpus[0].tokens) text += " " + t;
    CHECK(dec.out.find("layer 1:" + text) != std::string::npos);
    CHECK(dec.out.find("layer 2:" + text) != std::string::npos);
    CHECK(dec.out.find("rationale:" + text) != std::string::npos);
}

TEST_CASE("analyze emits similarity and layer curves with layer-count lengths") {
    TempDir dir;
    write_file(dir.file("spec.json"), kSpecJson);
    run_cli("synth --spec " + dir.file("spec.json") + " --out " + dir.file("train.jsonl") +
            " --n 12");
    write_file(dir.file("run.json"),
               run_config("yofo", dir.file("train.jsonl"), "", dir.file("out"), 1));
    REQUIRE(run_cli("train --config " + dir.file("run.json")).code == 0);
    auto ana = run_cli("analyze --checkpoint " + dir.file("out") + "/final.ckpt --data " +
                       dir.file("train.jsonl") + " --out-dir " + dir.file("ana"));
    REQUIRE(ana.code == 0);
    auto sim = json::parse(read_file(dir.file("ana") + "/similarity.json"));
    CHECK(sim.at("intra").size() == 2);  // N = 2 layers
    CHECK(sim.at("inter").size() == 2);
    auto curves = json::parse(read_file(dir.file("ana") + "/layer_curves.json"));
    CHECK(curves.at("layer_retention").size() == 2);
}

TEST_CASE("cli error taxonomy maps to exit codes") {
    TempDir dir;
    // usage error
    CHECK(run_cli("").code == 1);
    CHECK(run_cli("train").code == 1);
    // config error: malformed run config
    write_file(dir.file("bad.json"), "{\"kind\": \"nonsense\"}");
    CHECK(run_cli("train --config " + dir.file("bad.json")).code == 1);
    // data error: missing corpus
    write_file(dir.file("run.json"),
               run_config("yofo", dir.file("nope.jsonl"), "", dir.file("out"), 1));
    CHECK(run_cli("train --config " + dir.file("run.json")).code == 2);
}

TEST_CASE("vocabulary mismatch is rejected with an explanation") {
    TempDir dir;
    write_file(dir.file("spec.json"), kSpecJson);
    run_cli("synth --spec " + dir.file("spec.json") + " --out " + dir.file("train.jsonl") +
            " --n 12");
    write_file(dir.file("run.json"),
               run_config("yofo", dir.file("train.jsonl"), "", dir.file("out"), 0));
    REQUIRE(run_cli("train --config " + dir.file("run.json")).code == 0);

    // a corpus over a disjoint vocabulary
    yofo::Corpus weird;
    yofo::CorpusRecord rec;
    for (int i = 0; i < 30; ++i) rec.tokens.push_back("zz" + std::to_string(i));
    rec.label = 1;
    weird.push_back(rec);
    yofo::save_corpus(dir.file("weird.jsonl"), weird);
    auto res = run_cli("eval --checkpoint " + dir.file("out") + "/final.ckpt --data " +
                       dir.file("weird.jsonl"));
    CHECK(res.code == 2);
    CHECK(res.out.find("vocabulary mismatch") != std::string::npos);
}
