#include "cytoforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cytoforge/c3p.hpp"
#include "cytoforge/features.hpp"
#include "cytoforge/knn.hpp"
#include "cytoforge/mil.hpp"
#include "cytoforge/tiler.hpp"

namespace fs = std::filesystem;

namespace cytoforge::pipeline {

StageKind stage_kind_from_string(const std::string& s) {
    if (s == "tile") return StageKind::Tile;
    if (s == "augment") return StageKind::Augment;
    if (s == "embed") return StageKind::Embed;
    if (s == "knn") return StageKind::Knn;
    if (s == "mil-train") return StageKind::MilTrain;
    if (s == "mil-eval") return StageKind::MilEval;
    raise(Error::Kind::Config, "unknown stage '", s, "'");
}

const char* stage_kind_to_string(StageKind k) {
    switch (k) {
        case StageKind::Tile: return "tile";
        case StageKind::Augment: return "augment";
        case StageKind::Embed: return "embed";
        case StageKind::Knn: return "knn";
        case StageKind::MilTrain: return "mil-train";
        case StageKind::MilEval: return "mil-eval";
    }
    return "tile";
}

// ---- schemas ----

namespace {

enum class FieldType { String, Number, Integer, Boolean, StringArray, IntArray };

struct Field {
    const char* name;
    FieldType type;
    bool required;
    json default_value;  // ignored when required
};

bool type_matches(FieldType t, const json& v) {
    switch (t) {
        case FieldType::String: return v.is_string();
        case FieldType::Number: return v.is_number();
        case FieldType::Integer: return v.is_number_integer();
        case FieldType::Boolean: return v.is_boolean();
        case FieldType::StringArray:
            if (!v.is_array()) return false;
            return std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
        case FieldType::IntArray:
            if (!v.is_array()) return false;
            return std::all_of(v.begin(), v.end(),
                               [](const json& e) { return e.is_number_integer(); });
    }
    return false;
}

const char* type_name(FieldType t) {
    switch (t) {
        case FieldType::String: return "string";
        case FieldType::Number: return "number";
        case FieldType::Integer: return "integer";
        case FieldType::Boolean: return "boolean";
        case FieldType::StringArray: return "array of strings";
        case FieldType::IntArray: return "array of integers";
    }
    return "?";
}

const std::vector<Field>& stage_schema(StageKind kind) {
    static const std::vector<Field> tile = {
        {"input", FieldType::String, true, {}},
        {"slide_id", FieldType::String, true, {}},
        {"label", FieldType::String, true, {}},
        {"out", FieldType::String, false, "slides"},
        {"tile_px", FieldType::Integer, false, 320},
        {"min_tissue_frac", FieldType::Number, false, 0.05},
        {"morph_radius", FieldType::Integer, false, 8},
        {"min_component_area", FieldType::Integer, false, 10000},
        {"mpp", FieldType::Number, false, 0.50},
    };
    static const std::vector<Field> augment = {
        {"cells", FieldType::String, true, {}},
        {"cells_csv", FieldType::String, false, ""},
        {"canvases_pos", FieldType::StringArray, true, {}},
        {"canvases_neg", FieldType::StringArray, true, {}},
        {"mode", FieldType::String, false, "poisson"},
        {"p_pos", FieldType::Number, false, 1.0},
        {"p_neg", FieldType::Number, false, 0.5},
        {"lambda_lo", FieldType::Number, false, 0.0},
        {"lambda_hi", FieldType::Number, false, 1.0},
        {"canvases_per_class", FieldType::Integer, false, 2000},
        {"n", FieldType::Integer, true, {}},
        {"seed", FieldType::Integer, false, nullptr},
        {"out", FieldType::String, false, "augmented"},
    };
    static const std::vector<Field> embed = {
        {"images", FieldType::StringArray, true, {}},
        {"dim", FieldType::Integer, false, 64},
        {"seed", FieldType::Integer, false, nullptr},
        {"out", FieldType::String, false, "feats.emb"},
    };
    static const std::vector<Field> knn = {
        {"train", FieldType::String, true, {}},
        {"train_labels", FieldType::String, true, {}},
        {"val", FieldType::String, false, ""},
        {"val_labels", FieldType::String, false, ""},
        {"split_frac", FieldType::Number, false, 0.75},
        {"seed", FieldType::Integer, false, nullptr},
        {"k_grid", FieldType::IntArray, false, json::array({1, 3, 5, 7, 11, 15, 21, 31})},
        {"report", FieldType::String, false, "knn_report.json"},
    };
    static const std::vector<Field> mil_train = {
        {"bags", FieldType::StringArray, true, {}},
        {"embeddings", FieldType::String, true, {}},
        {"k", FieldType::Integer, false, 8},
        {"slide_batch", FieldType::Integer, false, 16},
        {"tile_batch", FieldType::Integer, false, 8},
        {"lambda_tile", FieldType::Number, false, 0.1},
        {"lr", FieldType::Number, false, 1e-3},
        {"hidden", FieldType::Integer, false, 128},
        {"queue_capacity", FieldType::Integer, false, 10},
        {"c3p", FieldType::String, false, "off"},
        {"epochs", FieldType::Integer, true, {}},
        {"seed", FieldType::Integer, false, nullptr},
        {"out", FieldType::String, false, "model.json"},
        {"log", FieldType::String, false, "train_log.jsonl"},
        // offline mode
        {"pasted_manifest", FieldType::String, false, ""},
        {"pasted_emb", FieldType::String, false, ""},
        // online mode
        {"cells", FieldType::String, false, ""},
        {"cells_csv", FieldType::String, false, ""},
        {"mode", FieldType::String, false, "poisson"},
        {"p_pos", FieldType::Number, false, 1.0},
        {"p_neg", FieldType::Number, false, 0.5},
        {"feat_seed", FieldType::Integer, false, 7},
    };
    static const std::vector<Field> mil_eval = {
        {"model", FieldType::String, true, {}},
        {"bags", FieldType::StringArray, true, {}},
        {"embeddings", FieldType::String, true, {}},
        {"tiles_manifest", FieldType::String, true, {}},
        {"tiles_emb", FieldType::String, true, {}},
        {"k", FieldType::Integer, false, 8},
        {"report", FieldType::String, false, "eval.json"},
    };
    switch (kind) {
        case StageKind::Tile: return tile;
        case StageKind::Augment: return augment;
        case StageKind::Embed: return embed;
        case StageKind::Knn: return knn;
        case StageKind::MilTrain: return mil_train;
        case StageKind::MilEval: return mil_eval;
    }
    return tile;
}

}  // namespace

json validate_stage_params(StageKind kind, const json& params) {
    const auto& schema = stage_schema(kind);
    check(params.is_object(), Error::Kind::Config, "stage '", stage_kind_to_string(kind),
          "' parameters must be an object");
    for (const auto& [key, value] : params.items()) {
        if (key == "stage") continue;
        const auto it = std::find_if(schema.begin(), schema.end(),
                                     [&](const Field& f) { return key == f.name; });
        check(it != schema.end(), Error::Kind::Config, "unknown key '", key, "' in stage '",
              stage_kind_to_string(kind), "'");
        // Optional fields defaulting to null accept null ("unset").
        const bool null_ok = !it->required && it->default_value.is_null() && value.is_null();
        check(null_ok || type_matches(it->type, value), Error::Kind::Config, "key '", key,
              "' in stage '", stage_kind_to_string(kind), "' must be a ", type_name(it->type));
    }
    json filled = json::object();
    for (const Field& f : schema) {
        if (params.contains(f.name)) {
            filled[f.name] = params.at(f.name);
        } else if (f.required) {
            raise(Error::Kind::Config, "stage '", stage_kind_to_string(kind),
                  "' is missing required key '", f.name, "'");
        } else {
            filled[f.name] = f.default_value;
        }
    }
    return filled;
}

PipelineConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        raise(Error::Kind::Config, "config is not valid JSON: ", e.what());
    }
    check(j.is_object(), Error::Kind::Config, "config root must be an object");
    for (const auto& [key, _] : j.items()) {
        check(key == "stages" || key == "seeds" || key == "output_root", Error::Kind::Config,
              "unknown top-level key '", key, "' in config");
    }
    check(j.contains("stages") && j["stages"].is_array(), Error::Kind::Config,
          "config needs a 'stages' array");
    check(j.contains("seeds") && j["seeds"].is_array() && !j["seeds"].empty(),
          Error::Kind::Config, "config needs a non-empty 'seeds' array");
    check(j.contains("output_root") && j["output_root"].is_string(), Error::Kind::Config,
          "config needs an 'output_root' string");

    PipelineConfig cfg;
    cfg.output_root = j["output_root"].get<std::string>();
    for (const auto& s : j["seeds"]) {
        check(s.is_number_integer() && s.get<int64_t>() >= 0, Error::Kind::Config,
              "seeds must be non-negative integers");
        cfg.seeds.push_back(s.get<uint64_t>());
    }
    for (const auto& js : j["stages"]) {
        check(js.is_object() && js.contains("stage") && js["stage"].is_string(),
              Error::Kind::Config, "every stage needs a 'stage' name");
        StageSpec spec;
        spec.kind = stage_kind_from_string(js["stage"].get<std::string>());
        spec.params = validate_stage_params(spec.kind, js);
        cfg.stages.push_back(std::move(spec));
    }
    return cfg;
}

std::string serialize_config(const PipelineConfig& config) {
    json j;
    j["output_root"] = config.output_root;
    j["seeds"] = config.seeds;
    j["stages"] = json::array();
    for (const auto& s : config.stages) {
        json js;
        js["stage"] = stage_kind_to_string(s.kind);
        for (const auto& [key, value] : s.params.items()) js[key] = value;
        j["stages"].push_back(std::move(js));
    }
    return j.dump(2) + "\n";
}

// ---- path resolution and shared loading helpers ----

namespace {

std::string resolve_output(const std::string& path, const fs::path& work_dir) {
    const fs::path p(path);
    return p.is_absolute() ? p.string() : (work_dir / p).string();
}

std::string resolve_input(const std::string& path, const fs::path& work_dir) {
    if (fs::exists(path)) return path;
    const fs::path under = work_dir / path;
    if (fs::exists(under)) return under.string();
    raise(Error::Kind::MissingData, "input path not found: ", path, " (also tried ",
          under.string(), ")");
}

uint64_t stage_seed(const json& params, uint64_t run_seed) {
    if (params.contains("seed") && !params.at("seed").is_null())
        return params.at("seed").get<uint64_t>();
    return run_seed;
}

// Manifest paths or directories of *.json manifests.
std::vector<std::string> collect_manifest_paths(const std::vector<std::string>& inputs,
                                                const fs::path& work_dir) {
    std::vector<std::string> out;
    for (const auto& raw : inputs) {
        const std::string p = resolve_input(raw, work_dir);
        if (fs::is_directory(p)) {
            std::vector<std::string> found;
            for (const auto& entry : fs::directory_iterator(p)) {
                if (entry.is_regular_file() && entry.path().extension() == ".json")
                    found.push_back(entry.path().string());
            }
            std::sort(found.begin(), found.end());
            check(!found.empty(), Error::Kind::MissingData, "no manifests in directory ", p);
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.push_back(p);
        }
    }
    return out;
}

struct LoadedManifests {
    std::vector<tiler::SlideManifest> manifests;
    // instance id (tile path) -> absolute image path
    std::map<std::string, std::string> image_paths;
};

LoadedManifests load_slide_manifests(const std::vector<std::string>& paths) {
    LoadedManifests out;
    for (const auto& p : paths) {
        tiler::SlideManifest m = tiler::load_manifest(p);
        const fs::path base = fs::path(p).parent_path();
        for (const auto& t : m.tiles) {
            out.image_paths[t.path] = (base / t.path).string();
        }
        out.manifests.push_back(std::move(m));
    }
    return out;
}

struct LabelFile {
    std::vector<std::pair<std::string, int>> id_label;
    std::vector<std::string> class_names;  // index = class id
};

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) {
        while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
        size_t b = 0;
        while (b < field.size() && field[b] == ' ') ++b;
        out.push_back(field.substr(b));
    }
    return out;
}

bool is_integer(const std::string& s) {
    if (s.empty()) return false;
    size_t i = s[0] == '-' ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    }
    return true;
}

// CSV with an id column ("id" or "file") and a class column ("label" wins
// over "class"); integer classes keep their values, string classes map to
// ids in sorted order. A pasted-dataset manifest (.json) also works.
LabelFile load_labels(const std::string& path) {
    LabelFile out;
    if (fs::path(path).extension() == ".json") {
        const auto manifest = c3p::load_pasted_manifest(path);
        for (const auto& item : manifest.items) out.id_label.push_back({item.path, item.label});
        out.class_names = {"0", "1"};
        return out;
    }
    std::ifstream in(path);
    check(in.good(), Error::Kind::Io, "cannot open labels ", path);
    std::string line;
    check(static_cast<bool>(std::getline(in, line)), Error::Kind::Format, "empty labels file ",
          path);
    const auto header = split_line(line);
    int id_col = -1, label_col = -1, class_col = -1;
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "id" || header[i] == "file") id_col = static_cast<int>(i);
        if (header[i] == "label") label_col = static_cast<int>(i);
        if (header[i] == "class") class_col = static_cast<int>(i);
    }
    if (label_col < 0) label_col = class_col;
    check(id_col >= 0 && label_col >= 0, Error::Kind::Format,
          "labels csv needs 'id'/'file' and 'label'/'class' columns: ", path);

    std::vector<std::pair<std::string, std::string>> raw;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_line(line);
        check(fields.size() > static_cast<size_t>(std::max(id_col, label_col)),
              Error::Kind::Format, path, ":", line_no, ": too few fields");
        raw.push_back({fields[id_col], fields[label_col]});
    }
    check(!raw.empty(), Error::Kind::Format, "labels file has no rows: ", path);

    const bool all_int = std::all_of(raw.begin(), raw.end(),
                                     [](const auto& r) { return is_integer(r.second); });
    if (all_int) {
        std::set<int> classes;
        for (const auto& [id, lab] : raw) {
            const int v = std::stoi(lab);
            classes.insert(v);
            out.id_label.push_back({id, v});
        }
        for (int c : classes) out.class_names.push_back(std::to_string(c));
    } else {
        std::set<std::string> classes;
        for (const auto& [_, lab] : raw) classes.insert(lab);
        std::map<std::string, int> to_id;
        for (const auto& name : classes) {
            to_id[name] = static_cast<int>(out.class_names.size());
            out.class_names.push_back(name);
        }
        for (const auto& [id, lab] : raw) out.id_label.push_back({id, to_id[lab]});
    }
    return out;
}

// Align labels to embedding row order; every embedding row needs a label.
std::vector<int> labels_for_matrix(const feat::EmbeddingMatrix& m, const LabelFile& lf) {
    std::map<std::string, int> by_id(lf.id_label.begin(), lf.id_label.end());
    std::vector<int> labels(m.rows());
    for (size_t i = 0; i < m.rows(); ++i) {
        const auto it = by_id.find(m.ids[i]);
        check(it != by_id.end(), Error::Kind::MissingData, "no label for embedding id '",
              m.ids[i], "'");
        labels[i] = it->second;
    }
    return labels;
}

feat::EmbeddingMatrix subset_rows(const feat::EmbeddingMatrix& m,
                                  const std::vector<size_t>& rows) {
    feat::EmbeddingMatrix out;
    out.dim = m.dim;
    out.ids.reserve(rows.size());
    out.data.reserve(rows.size() * static_cast<size_t>(m.dim));
    for (size_t r : rows) {
        out.ids.push_back(m.ids[r]);
        const float* p = m.row(r);
        out.data.insert(out.data.end(), p, p + m.dim);
    }
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    check(out.good(), Error::Kind::Io, "cannot write ", path);
    out << text;
    out.close();
    check(out.good(), Error::Kind::Io, "error writing ", path);
}

// ---- stage executors ----

json run_tile_stage(const json& p, const fs::path& work_dir) {
    const RasterImage image = read_image(resolve_input(p.at("input"), work_dir));
    tiler::DepositParams dp;
    dp.morph_radius = p.at("morph_radius").get<int>();
    dp.min_component_area = p.at("min_component_area").get<int>();
    dp.min_tissue_frac = p.at("min_tissue_frac").get<double>();
    const tiler::TissueMask mask = tiler::detect_cell_deposit(image, dp);
    const int tile_px = p.at("tile_px").get<int>();
    auto tiles = tiler::extract_tiles(image, mask, tile_px, dp.min_tissue_frac);
    const auto manifest = tiler::build_slide_manifest(
        image, p.at("slide_id").get<std::string>(),
        tiler::slide_label_from_string(p.at("label").get<std::string>()),
        p.at("mpp").get<double>(), tile_px, std::move(tiles),
        resolve_output(p.at("out"), work_dir));
    json metrics;
    metrics["slide_id"] = manifest.slide_id;
    metrics["n_tiles"] = manifest.tiles.size();
    metrics["deposit_pixels"] = mask.count();
    return metrics;
}

std::vector<c3p::CanvasRef> canvas_pool(const std::vector<std::string>& manifest_inputs,
                                        const fs::path& work_dir,
                                        tiler::SlideLabel expected_label) {
    std::vector<c3p::CanvasRef> pool;
    const auto paths = collect_manifest_paths(manifest_inputs, work_dir);
    for (const auto& mp : paths) {
        const tiler::SlideManifest m = tiler::load_manifest(mp);
        check(m.label == expected_label, Error::Kind::InvalidArgument, "slide ", m.slide_id,
              " has label '", tiler::slide_label_to_string(m.label), "' but was passed as a ",
              tiler::slide_label_to_string(expected_label), " canvas source");
        const fs::path base = fs::path(mp).parent_path();
        for (const auto& t : m.tiles) pool.push_back({t.path, (base / t.path).string()});
    }
    check(!pool.empty(), Error::Kind::MissingData, "canvas pool is empty");
    return pool;
}

json run_augment_stage(const json& p, const fs::path& work_dir, uint64_t run_seed) {
    const std::string cells_dir = resolve_input(p.at("cells"), work_dir);
    std::string cells_csv = p.at("cells_csv").get<std::string>();
    if (cells_csv.empty()) cells_csv = (fs::path(cells_dir) / "labels.csv").string();
    const c3p::CellBank bank = c3p::CellBank::load(cells_dir, resolve_input(cells_csv, work_dir));

    const auto pos_pool = canvas_pool(p.at("canvases_pos").get<std::vector<std::string>>(),
                                      work_dir, tiler::SlideLabel::Positive);
    const auto neg_pool = canvas_pool(p.at("canvases_neg").get<std::vector<std::string>>(),
                                      work_dir, tiler::SlideLabel::Negative);

    c3p::PastePolicy policy;
    policy.mode = c3p::paste_mode_from_string(p.at("mode").get<std::string>());
    policy.p_pos = p.at("p_pos").get<double>();
    policy.p_neg = p.at("p_neg").get<double>();
    policy.lambda_lo = p.at("lambda_lo").get<double>();
    policy.lambda_hi = p.at("lambda_hi").get<double>();
    policy.canvases_per_class = p.at("canvases_per_class").get<int>();
    policy.seed = stage_seed(p, run_seed);

    const auto manifest =
        c3p::generate_pasted_dataset(bank, neg_pool, pos_pool, policy, p.at("n").get<int>(),
                                     resolve_output(p.at("out"), work_dir));
    size_t n_pasted = 0;
    for (const auto& item : manifest.items) n_pasted += item.prov.pasted ? 1 : 0;
    json metrics;
    metrics["n_items"] = manifest.items.size();
    metrics["n_pasted"] = n_pasted;
    return metrics;
}

json run_embed_stage(const json& p, const fs::path& work_dir, uint64_t run_seed) {
    std::vector<std::string> ids, paths;
    for (const auto& raw : p.at("images").get<std::vector<std::string>>()) {
        const std::string input = resolve_input(raw, work_dir);
        if (fs::is_directory(input)) {
            std::vector<std::string> files;
            for (const auto& entry : fs::recursive_directory_iterator(input)) {
                if (entry.is_regular_file() && entry.path().extension() == ".png")
                    files.push_back(entry.path().string());
            }
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                ids.push_back(fs::relative(f, input).string());
                paths.push_back(f);
            }
        } else {
            // Manifest: slide manifest or pasted-dataset manifest.
            std::ifstream in(input);
            check(in.good(), Error::Kind::Io, "cannot open ", input);
            json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                raise(Error::Kind::Format, "invalid manifest ", input, ": ", e.what());
            }
            const fs::path base = fs::path(input).parent_path();
            if (j.contains("slide_id")) {
                const tiler::SlideManifest m = tiler::load_manifest(input);
                for (const auto& t : m.tiles) {
                    ids.push_back(t.path);
                    paths.push_back((base / t.path).string());
                }
            } else if (j.contains("policy")) {
                const auto m = c3p::load_pasted_manifest(input);
                for (const auto& item : m.items) {
                    ids.push_back(item.path);
                    paths.push_back((base / item.path).string());
                }
            } else {
                raise(Error::Kind::Format, "unrecognized manifest layout: ", input);
            }
        }
    }
    check(!ids.empty(), Error::Kind::MissingData, "embed stage found no images");
    const auto m = feat::featurize_images(ids, paths, p.at("dim").get<int>(),
                                          stage_seed(p, run_seed));
    feat::write_embeddings(m, resolve_output(p.at("out"), work_dir));
    json metrics;
    metrics["n_embedded"] = m.rows();
    metrics["dim"] = m.dim;
    return metrics;
}

json run_knn_stage(const json& p, const fs::path& work_dir, uint64_t run_seed) {
    const auto train_emb = feat::read_embeddings(resolve_input(p.at("train"), work_dir));
    const LabelFile train_lf = load_labels(resolve_input(p.at("train_labels"), work_dir));
    const std::vector<int> k_grid = p.at("k_grid").get<std::vector<int>>();

    knn::SweepResult result;
    if (p.at("val").get<std::string>().empty()) {
        // Single-set protocol: seeded split of the training set.
        const std::vector<int> labels = labels_for_matrix(train_emb, train_lf);
        const auto [train_rows, val_rows] = knn::split_train_val(
            train_emb.rows(), p.at("split_frac").get<double>(), stage_seed(p, run_seed));
        const auto tr = subset_rows(train_emb, train_rows);
        const auto va = subset_rows(train_emb, val_rows);
        std::vector<int> tr_labels, va_labels;
        for (size_t r : train_rows) tr_labels.push_back(labels[r]);
        for (size_t r : val_rows) va_labels.push_back(labels[r]);
        std::vector<int> grid;
        for (int k : k_grid) {
            if (k >= 1 && static_cast<size_t>(k) <= tr.rows()) grid.push_back(k);
        }
        check(!grid.empty(), Error::Kind::InvalidArgument, "no valid k in grid for ", tr.rows(),
              " training points");
        const auto index = knn::KnnIndex::fit(tr, tr_labels);
        result = knn::sweep_k(index, va, va_labels, grid);
    } else {
        const auto val_emb = feat::read_embeddings(resolve_input(p.at("val"), work_dir));
        const LabelFile val_lf = load_labels(resolve_input(p.at("val_labels"), work_dir));
        const auto index = knn::KnnIndex::fit(train_emb, labels_for_matrix(train_emb, train_lf));
        result = knn::sweep_k(index, val_emb, labels_for_matrix(val_emb, val_lf), k_grid);
    }

    json report;
    report["best_k"] = result.best_k;
    report["weighted_f1"] = result.report.weighted_f1;
    report["per_class_f1"] = json::object();
    report["support"] = json::object();
    for (const auto& [cls, f1] : result.report.per_class_f1) {
        const std::string name = cls >= 0 && static_cast<size_t>(cls) < train_lf.class_names.size()
                                     ? train_lf.class_names[cls]
                                     : std::to_string(cls);
        report["per_class_f1"][name] = f1;
        report["support"][name] = result.report.support.at(cls);
    }
    report["weighted_f1_by_k"] = json::object();
    for (const auto& [k, f1] : result.weighted_f1_by_k)
        report["weighted_f1_by_k"][std::to_string(k)] = f1;
    write_text(resolve_output(p.at("report"), work_dir), report.dump(2) + "\n");

    json metrics;
    metrics["best_k"] = result.best_k;
    metrics["weighted_f1"] = result.report.weighted_f1;
    return metrics;
}

json run_mil_train_stage(const json& p, const fs::path& work_dir, uint64_t run_seed) {
    const auto manifest_paths =
        collect_manifest_paths(p.at("bags").get<std::vector<std::string>>(), work_dir);
    LoadedManifests loaded = load_slide_manifests(manifest_paths);
    const auto emb = feat::read_embeddings(resolve_input(p.at("embeddings"), work_dir));
    const auto bags = feat::assemble_bags(loaded.manifests, emb);

    mil::TrainConfig cfg;
    cfg.k = p.at("k").get<int>();
    cfg.slide_batch = p.at("slide_batch").get<int>();
    cfg.tile_batch = p.at("tile_batch").get<int>();
    cfg.lambda_tile = p.at("lambda_tile").get<double>();
    cfg.lr = p.at("lr").get<double>();
    cfg.hidden = p.at("hidden").get<int>();
    cfg.queue_capacity = p.at("queue_capacity").get<int>();
    cfg.epochs = p.at("epochs").get<int>();
    cfg.seed = stage_seed(p, run_seed);
    cfg.c3p_mode = mil::c3p_mode_from_string(p.at("c3p").get<std::string>());

    mil::TrainResult result;
    if (cfg.c3p_mode == mil::TrainConfig::C3pMode::Offline) {
        check(!p.at("pasted_manifest").get<std::string>().empty() &&
                  !p.at("pasted_emb").get<std::string>().empty(),
              Error::Kind::Config, "offline c3p needs pasted_manifest and pasted_emb");
        const auto pasted_emb =
            feat::read_embeddings(resolve_input(p.at("pasted_emb"), work_dir));
        const auto pm = c3p::load_pasted_manifest(resolve_input(p.at("pasted_manifest"),
                                                                work_dir));
        std::vector<std::pair<std::string, int>> labels;
        for (const auto& item : pm.items) labels.push_back({item.path, item.label});
        const feat::LabeledTileSet set = feat::join_labels(pasted_emb, labels);
        mil::LabeledTiles tiles;
        tiles.emb = &pasted_emb;
        tiles.rows = set.rows;
        tiles.labels = set.labels;
        result = mil::train(bags, emb, cfg, nullptr, &tiles);
    } else if (cfg.c3p_mode == mil::TrainConfig::C3pMode::Online) {
        check(!p.at("cells").get<std::string>().empty(), Error::Kind::Config,
              "online c3p needs a cells directory");
        const std::string cells_dir = resolve_input(p.at("cells"), work_dir);
        std::string cells_csv = p.at("cells_csv").get<std::string>();
        if (cells_csv.empty()) cells_csv = (fs::path(cells_dir) / "labels.csv").string();
        const c3p::CellBank bank =
            c3p::CellBank::load(cells_dir, resolve_input(cells_csv, work_dir));
        mil::OnlineC3p online;
        online.bank = &bank;
        online.policy.mode = c3p::paste_mode_from_string(p.at("mode").get<std::string>());
        online.policy.p_pos = p.at("p_pos").get<double>();
        online.policy.p_neg = p.at("p_neg").get<double>();
        online.policy.seed = cfg.seed;
        online.feat_dim = emb.dim;
        online.feat_seed = p.at("feat_seed").get<uint64_t>();
        const auto& image_paths = loaded.image_paths;
        online.tile_image = [&image_paths](const std::string& id) {
            const auto it = image_paths.find(id);
            check(it != image_paths.end(), Error::Kind::MissingData, "no image for tile id '",
                  id, "'");
            return read_image(it->second);
        };
        result = mil::train(bags, emb, cfg, &online);
    } else {
        result = mil::train(bags, emb, cfg);
    }

    write_text(resolve_output(p.at("out"), work_dir),
               mil::params_to_json(result.params, cfg.seed));
    write_text(resolve_output(p.at("log"), work_dir), mil::log_to_jsonl(result.log));

    json metrics;
    metrics["epochs"] = cfg.epochs;
    metrics["final_loss"] = result.log.empty() ? 0.0 : result.log.back().loss;
    metrics["n_bags"] = bags.size();
    return metrics;
}

json run_mil_eval_stage(const json& p, const fs::path& work_dir) {
    std::ifstream in(resolve_input(p.at("model"), work_dir));
    check(in.good(), Error::Kind::Io, "cannot open model");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const mil::MilParams params = mil::params_from_json(text, p.at("model").get<std::string>());

    const auto manifest_paths =
        collect_manifest_paths(p.at("bags").get<std::vector<std::string>>(), work_dir);
    LoadedManifests loaded = load_slide_manifests(manifest_paths);
    const auto emb = feat::read_embeddings(resolve_input(p.at("embeddings"), work_dir));
    const auto bags = feat::assemble_bags(loaded.manifests, emb);

    const auto tiles_emb = feat::read_embeddings(resolve_input(p.at("tiles_emb"), work_dir));
    const auto pm = c3p::load_pasted_manifest(resolve_input(p.at("tiles_manifest"), work_dir));
    std::vector<std::pair<std::string, int>> labels;
    for (const auto& item : pm.items) labels.push_back({item.path, item.label});
    const feat::LabeledTileSet set = feat::join_labels(tiles_emb, labels);
    mil::LabeledTiles tiles;
    tiles.emb = &tiles_emb;
    tiles.rows = set.rows;
    tiles.labels = set.labels;

    const mil::EvalReport rep = mil::evaluate(params, bags, emb, tiles, p.at("k").get<int>());
    json report;
    report["slide_auc"] = rep.slide_auc;
    report["tile_auc"] = rep.tile_auc;
    report["n_bags"] = rep.n_bags;
    report["n_tiles"] = rep.n_tiles;
    report["k"] = p.at("k").get<int>();
    write_text(resolve_output(p.at("report"), work_dir), report.dump(2) + "\n");

    json metrics;
    metrics["slide_auc"] = rep.slide_auc;
    metrics["tile_auc"] = rep.tile_auc;
    return metrics;
}

}  // namespace

json run_stage(const StageSpec& stage, const std::string& work_dir, uint64_t seed) {
    const fs::path wd(work_dir);
    switch (stage.kind) {
        case StageKind::Tile: return run_tile_stage(stage.params, wd);
        case StageKind::Augment: return run_augment_stage(stage.params, wd, seed);
        case StageKind::Embed: return run_embed_stage(stage.params, wd, seed);
        case StageKind::Knn: return run_knn_stage(stage.params, wd, seed);
        case StageKind::MilTrain: return run_mil_train_stage(stage.params, wd, seed);
        case StageKind::MilEval: return run_mil_eval_stage(stage.params, wd);
    }
    raise(Error::Kind::Config, "unreachable stage kind");
}

RunSummary run_pipeline(const PipelineConfig& config) {
    RunSummary summary;
    // metric name -> values over succeeding seeds
    std::map<std::string, std::vector<double>> metric_values;

    for (uint64_t seed : config.seeds) {
        SeedSummary ss;
        ss.seed = seed;
        ss.stages = json::array();
        const fs::path seed_dir = fs::path(config.output_root) / ("seed_" + std::to_string(seed));
        std::error_code ec;
        fs::create_directories(seed_dir, ec);

        bool failed = false;
        for (size_t i = 0; i < config.stages.size(); ++i) {
            const auto& stage = config.stages[i];
            try {
                const json metrics = run_stage(stage, seed_dir.string(), seed);
                json js;
                js["stage"] = stage_kind_to_string(stage.kind);
                js["metrics"] = metrics;
                ss.stages.push_back(std::move(js));
                for (const auto& [key, value] : metrics.items()) {
                    if (value.is_number()) {
                        std::ostringstream name;
                        name << "stage" << i << "_" << stage_kind_to_string(stage.kind) << "."
                             << key;
                        metric_values[name.str()].push_back(value.get<double>());
                    }
                }
            } catch (const std::exception& e) {
                ss.failed_stage = stage_kind_to_string(stage.kind);
                ss.error = e.what();
                failed = true;
                break;
            }
        }
        ss.ok = !failed;
        summary.seeds.push_back(std::move(ss));
    }

    summary.ok = std::all_of(summary.seeds.begin(), summary.seeds.end(),
                             [](const SeedSummary& s) { return s.ok; });

    const size_t n_ok = static_cast<size_t>(
        std::count_if(summary.seeds.begin(), summary.seeds.end(),
                      [](const SeedSummary& s) { return s.ok; }));
    summary.aggregate = json::object();
    for (const auto& [name, values] : metric_values) {
        if (values.size() != n_ok || n_ok == 0) continue;  // only fully-populated metrics
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(values.size());
        json agg;
        agg["mean"] = mean;
        agg["std"] = std::sqrt(var);
        summary.aggregate[name] = std::move(agg);
    }

    std::error_code ec;
    fs::create_directories(config.output_root, ec);
    const std::string summary_path = (fs::path(config.output_root) / "summary.json").string();
    std::ofstream out(summary_path, std::ios::binary);
    check(out.good(), Error::Kind::Io, "cannot write ", summary_path);
    out << summary_to_json(summary);
    return summary;
}

std::string summary_to_json(const RunSummary& summary) {
    json j;
    j["ok"] = summary.ok;
    j["seeds"] = json::array();
    for (const auto& s : summary.seeds) {
        json js;
        js["seed"] = s.seed;
        js["ok"] = s.ok;
        js["stages"] = s.stages;
        if (!s.ok) {
            js["failed_stage"] = s.failed_stage;
            js["error"] = s.error;
        }
        j["seeds"].push_back(std::move(js));
    }
    j["aggregate"] = summary.aggregate;
    return j.dump(2) + "\n";
}

}  // namespace cytoforge::pipeline
