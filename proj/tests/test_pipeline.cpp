#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cytoforge/features.hpp"
#include "cytoforge/pipeline.hpp"
#include "testutil.hpp"

using namespace cytoforge;
using namespace cytoforge::pipeline;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Embeddings plus labels.csv usable by a knn stage.
void write_knn_inputs(const fs::path& dir, uint64_t seed) {
    Rng rng(seed);
    feat::EmbeddingMatrix m;
    m.dim = 8;
    std::ofstream labels(dir / "labels.csv");
    labels << "id,label\n";
    for (int i = 0; i < 60; ++i) {
        const int cls = i % 2;
        m.ids.push_back("v" + std::to_string(i));
        for (int d = 0; d < 8; ++d) {
            // Two shifted clusters, separable but noisy.
            m.data.push_back(static_cast<float>(rng.normal() + (cls ? 1.5 : 0.0)));
        }
        labels << "v" << i << "," << cls << "\n";
    }
    labels.close();
    feat::write_embeddings(m, (dir / "feats.emb").string());
}

}  // namespace

TEST_CASE("parse_config: minimal knn stage fills defaults") {
    const std::string text = R"({
      "output_root": "out",
      "seeds": [1],
      "stages": [
        {"stage": "knn", "train": "feats.emb", "train_labels": "labels.csv"}
      ]
    })";
    const PipelineConfig cfg = parse_config(text);
    REQUIRE(cfg.stages.size() == 1);
    CHECK(cfg.stages[0].kind == StageKind::Knn);
    CHECK(cfg.stages[0].params.at("split_frac").get<double>() == 0.75);
    CHECK(cfg.stages[0].params.at("report").get<std::string>() == "knn_report.json");
    CHECK(cfg.stages[0].params.at("k_grid").size() == 8);
    CHECK(cfg.seeds == std::vector<uint64_t>{1});
}

TEST_CASE("parse_config: unknown keys are rejected by name") {
    const std::string text = R"({
      "output_root": "out",
      "seeds": [1],
      "stages": [
        {"stage": "mil-train", "bags": ["b"], "embeddings": "e", "epochs": 1,
         "lamda_tile": 0.5}
      ]
    })";
    try {
        parse_config(text);
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == Error::Kind::Config);
        CHECK(std::string(e.what()).find("lamda_tile") != std::string::npos);
    }
}

TEST_CASE("parse_config: other malformed inputs") {
    CHECK_THROWS_AS(parse_config("not json"), Error);
    CHECK_THROWS_AS(parse_config(R"({"seeds":[1],"stages":[]})"), Error);  // no output_root
    CHECK_THROWS_AS(parse_config(R"({"output_root":"o","seeds":[],"stages":[]})"), Error);
    CHECK_THROWS_AS(
        parse_config(R"({"output_root":"o","seeds":[1],"stages":[{"stage":"bogus"}]})"), Error);
    CHECK_THROWS_AS(parse_config(
                        R"({"output_root":"o","seeds":[1],"stages":[],"extra":true})"),
                    Error);
    // type mismatch: epochs as string
    CHECK_THROWS_AS(parse_config(R"({
        "output_root":"o","seeds":[1],
        "stages":[{"stage":"mil-train","bags":["b"],"embeddings":"e","epochs":"three"}]})"),
                    Error);
    // missing required field
    CHECK_THROWS_AS(parse_config(R"({
        "output_root":"o","seeds":[1],
        "stages":[{"stage":"tile","input":"x.png","slide_id":"s"}]})"),
                    Error);
}

TEST_CASE("parse -> serialize -> parse is the identity on the config value") {
    const std::string text = R"({
      "output_root": "exp_out",
      "seeds": [3, 14, 159],
      "stages": [
        {"stage": "tile", "input": "a.png", "slide_id": "s0", "label": "neg"},
        {"stage": "embed", "images": ["slides/s0.json"], "dim": 32},
        {"stage": "knn", "train": "feats.emb", "train_labels": "l.csv", "k_grid": [1, 5]}
      ]
    })";
    const PipelineConfig first = parse_config(text);
    const std::string serialized = serialize_config(first);
    const PipelineConfig second = parse_config(serialized);
    CHECK(first == second);
    CHECK(serialize_config(second) == serialized);
}

TEST_CASE("run_pipeline: two-seed knn pipeline aggregates mean and std") {
    testutil::TempDir dir("pipe_knn");
    write_knn_inputs(dir.path(), 5);

    PipelineConfig cfg;
    cfg.output_root = (dir.path() / "out").string();
    cfg.seeds = {1, 2};
    StageSpec knn;
    knn.kind = StageKind::Knn;
    knn.params = validate_stage_params(
        StageKind::Knn, json{{"train", (dir.path() / "feats.emb").string()},
                             {"train_labels", (dir.path() / "labels.csv").string()},
                             {"k_grid", json::array({1, 3, 5})}});
    cfg.stages.push_back(knn);

    const RunSummary summary = run_pipeline(cfg);
    CHECK(summary.ok);
    REQUIRE(summary.seeds.size() == 2);
    CHECK(summary.seeds[0].ok);
    CHECK(summary.seeds[1].ok);
    REQUIRE(summary.aggregate.contains("stage0_knn.weighted_f1"));
    const double mean = summary.aggregate["stage0_knn.weighted_f1"]["mean"].get<double>();
    const double stdev = summary.aggregate["stage0_knn.weighted_f1"]["std"].get<double>();
    CHECK(mean > 0.5);  // separable clusters beat chance
    CHECK(stdev >= 0.0);

    CHECK(fs::exists(fs::path(cfg.output_root) / "summary.json"));
    CHECK(fs::exists(fs::path(cfg.output_root) / "seed_1" / "knn_report.json"));
    CHECK(fs::exists(fs::path(cfg.output_root) / "seed_2" / "knn_report.json"));

    // Identical re-run produces a byte-identical summary.
    const std::string first = slurp(fs::path(cfg.output_root) / "summary.json");
    run_pipeline(cfg);
    CHECK(slurp(fs::path(cfg.output_root) / "summary.json") == first);
}

TEST_CASE("run_pipeline: empty stage list succeeds with an empty summary") {
    testutil::TempDir dir("pipe_empty");
    PipelineConfig cfg;
    cfg.output_root = (dir.path() / "out").string();
    cfg.seeds = {7};
    const RunSummary summary = run_pipeline(cfg);
    CHECK(summary.ok);
    CHECK(summary.seeds.size() == 1);
    CHECK(summary.seeds[0].stages.empty());
    CHECK(summary.aggregate.empty());
}

TEST_CASE("run_pipeline: a stage referencing a missing file marks the seed failed") {
    testutil::TempDir dir("pipe_fail");
    PipelineConfig cfg;
    cfg.output_root = (dir.path() / "out").string();
    cfg.seeds = {1};
    StageSpec knn;
    knn.kind = StageKind::Knn;
    knn.params = validate_stage_params(StageKind::Knn, json{{"train", "missing.emb"},
                                                            {"train_labels", "missing.csv"}});
    cfg.stages.push_back(knn);

    const RunSummary summary = run_pipeline(cfg);
    CHECK_FALSE(summary.ok);
    REQUIRE(summary.seeds.size() == 1);
    CHECK_FALSE(summary.seeds[0].ok);
    CHECK(summary.seeds[0].failed_stage == "knn");
    CHECK(summary.seeds[0].error.find("missing.emb") != std::string::npos);
}
