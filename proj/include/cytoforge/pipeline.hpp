#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cytoforge::pipeline {

using json = nlohmann::ordered_json;

enum class StageKind { Tile, Augment, Embed, Knn, MilTrain, MilEval };

StageKind stage_kind_from_string(const std::string& s);
const char* stage_kind_to_string(StageKind k);

struct StageSpec {
    StageKind kind = StageKind::Tile;
    json params;  // schema-validated, defaults filled

    bool operator==(const StageSpec& o) const { return kind == o.kind && params == o.params; }
};

struct PipelineConfig {
    std::vector<StageSpec> stages;
    std::vector<uint64_t> seeds;
    std::string output_root;

    bool operator==(const PipelineConfig& o) const {
        return stages == o.stages && seeds == o.seeds && output_root == o.output_root;
    }
};

// Strict parse: unknown keys, type mismatches and missing required fields are
// config errors naming the offending field; defaults are filled in.
PipelineConfig parse_config(const std::string& text);
std::string serialize_config(const PipelineConfig& config);

// Validate one stage's parameter map against its schema (shared with the CLI
// subcommands). Returns the params with defaults filled.
json validate_stage_params(StageKind kind, const json& params);

// Execute one stage with paths resolved against work_dir (outputs always
// under it, inputs either as-given or under it). `seed` fills a stage's
// "seed" parameter when the config left it unset. Returns stage metrics.
json run_stage(const StageSpec& stage, const std::string& work_dir, uint64_t seed);

struct SeedSummary {
    uint64_t seed = 0;
    bool ok = false;
    json stages;  // array of {stage, metrics}
    std::string failed_stage;
    std::string error;
};

struct RunSummary {
    std::vector<SeedSummary> seeds;
    json aggregate;  // metric -> {mean, std} over succeeding seeds
    bool ok = false;
};

// Runs all stages per seed in <output_root>/seed_<S>/ and writes
// <output_root>/summary.json. Stage failure aborts that seed only.
RunSummary run_pipeline(const PipelineConfig& config);

std::string summary_to_json(const RunSummary& summary);

}  // namespace cytoforge::pipeline
