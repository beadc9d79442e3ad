#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cytoforge/c3p.hpp"
#include "cytoforge/features.hpp"
#include "cytoforge/pipeline.hpp"
#include "cytoforge/poisson.hpp"

using cytoforge::Error;
using cytoforge::pipeline::json;
using cytoforge::pipeline::StageKind;
using cytoforge::pipeline::StageSpec;

namespace {

int run_stage_cmd(StageKind kind, const json& params, uint64_t seed) {
    StageSpec spec;
    spec.kind = kind;
    spec.params = cytoforge::pipeline::validate_stage_params(kind, params);
    const json metrics = cytoforge::pipeline::run_stage(spec, ".", seed);
    std::cout << metrics.dump(2) << "\n";
    return 0;
}

std::vector<int> parse_k_grid(const std::string& csv) {
    std::vector<int> grid;
    std::stringstream ss(csv);
    std::string field;
    while (std::getline(ss, field, ',')) {
        if (!field.empty()) grid.push_back(std::stoi(field));
    }
    return grid;
}

int run_poisson_cmd(const std::string& source, const std::string& target, int x, int y,
                    const std::string& out, double rel_tol, int max_iter) {
    namespace ps = cytoforge::poisson;
    const auto cell = cytoforge::read_image(source);
    const auto canvas = cytoforge::read_image(target);
    ps::SolverParams params;
    params.rel_tol = rel_tol;
    params.max_iter = max_iter;
    const auto result = cytoforge::c3p::poisson_paste(cell, canvas, x, y, params);
    cytoforge::write_png(out, result);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int run_import_cmd(const std::string& csv_path, const std::string& out) {
    std::ifstream in(csv_path);
    cytoforge::check(in.good(), Error::Kind::Io, "cannot open ", csv_path);
    cytoforge::feat::EmbeddingMatrix m;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) {
            if (!f.empty() && f.back() == '\r') f.pop_back();
            fields.push_back(f);
        }
        cytoforge::check(fields.size() >= 2, Error::Kind::Format, csv_path, ":", line_no,
                         ": need id plus at least one value");
        if (line_no == 1) {
            // Optional header: skip when the second field is not numeric.
            try {
                std::stod(fields[1]);
            } catch (const std::exception&) {
                continue;
            }
        }
        std::vector<float> row;
        for (size_t i = 1; i < fields.size(); ++i) {
            try {
                row.push_back(std::stof(fields[i]));
            } catch (const std::exception&) {
                cytoforge::raise(Error::Kind::Format, csv_path, ":", line_no, ": bad float '",
                                 fields[i], "'");
            }
        }
        if (m.dim == 0) m.dim = static_cast<int>(row.size());
        cytoforge::check(static_cast<int>(row.size()) == m.dim, Error::Kind::Format, csv_path,
                         ":", line_no, ": expected ", m.dim, " values, got ", row.size());
        m.ids.push_back(fields[0]);
        m.data.insert(m.data.end(), row.begin(), row.end());
    }
    cytoforge::check(!m.ids.empty(), Error::Kind::Format, "no rows in ", csv_path);
    cytoforge::feat::write_embeddings(m, out);
    std::cout << "imported " << m.ids.size() << " embeddings of dim " << m.dim << " to " << out
              << "\n";
    return 0;
}

int run_run_cmd(const std::string& config_path) {
    std::ifstream in(config_path);
    cytoforge::check(in.good(), Error::Kind::Io, "cannot open config ", config_path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto config = cytoforge::pipeline::parse_config(text);
    const auto summary = cytoforge::pipeline::run_pipeline(config);
    for (const auto& s : summary.seeds) {
        if (s.ok) {
            std::cout << "seed " << s.seed << ": ok\n";
        } else {
            std::cout << "seed " << s.seed << ": FAILED at stage " << s.failed_stage << ": "
                      << s.error << "\n";
        }
    }
    std::cout << "summary: " << config.output_root << "/summary.json\n";
    return summary.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cytoforge - cervical cytology WSI pipeline toolkit"};
    app.require_subcommand(1);

    // tile
    std::string t_input, t_slide_id, t_label, t_out = "slides";
    int t_tile_px = 320, t_morph_radius = 8, t_min_area = 10000;
    double t_min_frac = 0.05, t_mpp = 0.50;
    auto* tile = app.add_subcommand("tile", "tile a slide raster into 320x320 tiles");
    tile->add_option("--input", t_input, "slide raster (PNG or uncompressed TIFF)")->required();
    tile->add_option("--slide-id", t_slide_id)->required();
    tile->add_option("--label", t_label, "pos|neg|unknown")->required();
    tile->add_option("--out", t_out, "output directory");
    tile->add_option("--tile-px", t_tile_px);
    tile->add_option("--min-tissue-frac", t_min_frac);
    tile->add_option("--morph-radius", t_morph_radius);
    tile->add_option("--min-component-area", t_min_area);
    tile->add_option("--mpp", t_mpp, "microns per pixel");

    // poisson (debug)
    std::string p_source, p_target, p_out;
    int p_x = 0, p_y = 0, p_max_iter = 10000;
    double p_rel_tol = 1e-6;
    auto* poisson = app.add_subcommand("poisson", "seamless-clone one image into another");
    poisson->add_option("--source", p_source)->required();
    poisson->add_option("--target", p_target)->required();
    poisson->add_option("--x", p_x)->required();
    poisson->add_option("--y", p_y)->required();
    poisson->add_option("--out", p_out)->required();
    poisson->add_option("--rel-tol", p_rel_tol);
    poisson->add_option("--max-iter", p_max_iter);

    // augment
    std::string a_cells, a_cells_csv, a_mode = "poisson", a_out = "augmented";
    std::vector<std::string> a_pos, a_neg;
    double a_p_pos = 1.0, a_p_neg = 0.5, a_lo = 0.0, a_hi = 1.0;
    int a_cpc = 2000, a_n = 0;
    uint64_t a_seed = 0;
    auto* augment = app.add_subcommand("augment", "generate a pasted tile dataset");
    augment->add_option("--cells", a_cells, "cell bank directory (with labels.csv)")->required();
    augment->add_option("--cells-csv", a_cells_csv);
    augment->add_option("--canvases-pos", a_pos, "positive slide manifest(s)")->required();
    augment->add_option("--canvases-neg", a_neg, "negative slide manifest(s)")->required();
    augment->add_option("--mode", a_mode, "paste|blend|poisson");
    augment->add_option("--p-pos", a_p_pos);
    augment->add_option("--p-neg", a_p_neg);
    augment->add_option("--lambda-lo", a_lo);
    augment->add_option("--lambda-hi", a_hi);
    augment->add_option("--canvases-per-class", a_cpc);
    augment->add_option("--n", a_n, "number of output tiles")->required();
    augment->add_option("--seed", a_seed);
    augment->add_option("--out", a_out);

    // embed
    std::vector<std::string> e_images;
    int e_dim = 64;
    uint64_t e_seed = 7;
    std::string e_out = "feats.emb";
    auto* embed = app.add_subcommand("embed", "featurize images with the toy featurizer");
    embed->add_option("--images", e_images, "manifest(s) or image directory")->required();
    embed->add_option("--dim", e_dim);
    embed->add_option("--seed", e_seed);
    embed->add_option("--out", e_out);

    // import-embeddings
    std::string i_csv, i_out = "feats.emb";
    auto* import_cmd = app.add_subcommand("import-embeddings", "CSV (id,v1..vD) to EMB1");
    import_cmd->add_option("--csv", i_csv)->required();
    import_cmd->add_option("--out", i_out);

    // knn
    std::string k_train, k_train_labels, k_val, k_val_labels, k_grid_csv, k_report =
        "knn_report.json";
    double k_split = 0.75;
    uint64_t k_seed = 0;
    auto* knn_cmd = app.add_subcommand("knn", "k-NN evaluation with weighted-F1 k sweep");
    knn_cmd->add_option("--train", k_train)->required();
    knn_cmd->add_option("--train-labels", k_train_labels)->required();
    knn_cmd->add_option("--val", k_val, "held-out set (omit for a seeded 75/25 split)");
    knn_cmd->add_option("--val-labels", k_val_labels);
    knn_cmd->add_option("--split-frac", k_split);
    knn_cmd->add_option("--seed", k_seed);
    knn_cmd->add_option("--k-grid", k_grid_csv, "comma-separated, default 1,3,5,7,11,15,21,31");
    knn_cmd->add_option("--report", k_report);

    // mil-train
    std::vector<std::string> m_bags;
    std::string m_emb, m_c3p = "off", m_out = "model.json", m_log = "train_log.jsonl";
    std::string m_pasted_manifest, m_pasted_emb, m_cells, m_cells_csv, m_mode = "poisson";
    int m_k = 8, m_slide_batch = 16, m_tile_batch = 8, m_hidden = 128, m_queue = 10, m_epochs = 0;
    double m_lambda = 0.1, m_lr = 1e-3, m_p_pos = 1.0, m_p_neg = 0.5;
    uint64_t m_seed = 0, m_feat_seed = 7;
    auto* mil_train = app.add_subcommand("mil-train", "train the MIL classifier");
    mil_train->add_option("--bags", m_bags, "slide manifest(s) or directory")->required();
    mil_train->add_option("--embeddings", m_emb)->required();
    mil_train->add_option("--k", m_k);
    mil_train->add_option("--slide-batch", m_slide_batch);
    mil_train->add_option("--tile-batch", m_tile_batch);
    mil_train->add_option("--lambda-tile", m_lambda);
    mil_train->add_option("--lr", m_lr);
    mil_train->add_option("--hidden", m_hidden);
    mil_train->add_option("--queue-capacity", m_queue);
    mil_train->add_option("--c3p", m_c3p, "off|offline|online");
    mil_train->add_option("--epochs", m_epochs)->required();
    mil_train->add_option("--seed", m_seed);
    mil_train->add_option("--out", m_out);
    mil_train->add_option("--log", m_log);
    mil_train->add_option("--pasted-manifest", m_pasted_manifest, "offline mode input");
    mil_train->add_option("--pasted-emb", m_pasted_emb, "offline mode input");
    mil_train->add_option("--cells", m_cells, "online mode cell bank");
    mil_train->add_option("--cells-csv", m_cells_csv);
    mil_train->add_option("--mode", m_mode, "online paste mode");
    mil_train->add_option("--p-pos", m_p_pos);
    mil_train->add_option("--p-neg", m_p_neg);
    mil_train->add_option("--feat-seed", m_feat_seed, "featurizer seed for online pastes");

    // mil-eval
    std::string v_model, v_emb, v_tiles_manifest, v_tiles_emb, v_report = "eval.json";
    std::vector<std::string> v_bags;
    int v_k = 8;
    auto* mil_eval = app.add_subcommand("mil-eval", "slide/tile AUC of a trained model");
    mil_eval->add_option("--model", v_model)->required();
    mil_eval->add_option("--bags", v_bags)->required();
    mil_eval->add_option("--embeddings", v_emb)->required();
    mil_eval->add_option("--tiles-manifest", v_tiles_manifest)->required();
    mil_eval->add_option("--tiles-emb", v_tiles_emb)->required();
    mil_eval->add_option("--k", v_k);
    mil_eval->add_option("--report", v_report);

    // run
    std::string r_config;
    auto* run_cmd = app.add_subcommand("run", "execute a multi-seed pipeline config");
    run_cmd->add_option("--config", r_config)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (tile->parsed()) {
            json p = {{"input", t_input},   {"slide_id", t_slide_id},
                      {"label", t_label},   {"out", t_out},
                      {"tile_px", t_tile_px}, {"min_tissue_frac", t_min_frac},
                      {"morph_radius", t_morph_radius}, {"min_component_area", t_min_area},
                      {"mpp", t_mpp}};
            return run_stage_cmd(StageKind::Tile, p, 0);
        }
        if (poisson->parsed()) {
            return run_poisson_cmd(p_source, p_target, p_x, p_y, p_out, p_rel_tol, p_max_iter);
        }
        if (augment->parsed()) {
            json p = {{"cells", a_cells},
                      {"canvases_pos", a_pos},
                      {"canvases_neg", a_neg},
                      {"mode", a_mode},
                      {"p_pos", a_p_pos},
                      {"p_neg", a_p_neg},
                      {"lambda_lo", a_lo},
                      {"lambda_hi", a_hi},
                      {"canvases_per_class", a_cpc},
                      {"n", a_n},
                      {"seed", a_seed},
                      {"out", a_out}};
            if (!a_cells_csv.empty()) p["cells_csv"] = a_cells_csv;
            return run_stage_cmd(StageKind::Augment, p, a_seed);
        }
        if (embed->parsed()) {
            json p = {{"images", e_images}, {"dim", e_dim}, {"seed", e_seed}, {"out", e_out}};
            return run_stage_cmd(StageKind::Embed, p, e_seed);
        }
        if (import_cmd->parsed()) {
            return run_import_cmd(i_csv, i_out);
        }
        if (knn_cmd->parsed()) {
            json p = {{"train", k_train},
                      {"train_labels", k_train_labels},
                      {"val", k_val},
                      {"val_labels", k_val_labels},
                      {"split_frac", k_split},
                      {"seed", k_seed},
                      {"report", k_report}};
            if (!k_grid_csv.empty()) p["k_grid"] = parse_k_grid(k_grid_csv);
            return run_stage_cmd(StageKind::Knn, p, k_seed);
        }
        if (mil_train->parsed()) {
            json p = {{"bags", m_bags},
                      {"embeddings", m_emb},
                      {"k", m_k},
                      {"slide_batch", m_slide_batch},
                      {"tile_batch", m_tile_batch},
                      {"lambda_tile", m_lambda},
                      {"lr", m_lr},
                      {"hidden", m_hidden},
                      {"queue_capacity", m_queue},
                      {"c3p", m_c3p},
                      {"epochs", m_epochs},
                      {"seed", m_seed},
                      {"out", m_out},
                      {"log", m_log},
                      {"pasted_manifest", m_pasted_manifest},
                      {"pasted_emb", m_pasted_emb},
                      {"cells", m_cells},
                      {"cells_csv", m_cells_csv},
                      {"mode", m_mode},
                      {"p_pos", m_p_pos},
                      {"p_neg", m_p_neg},
                      {"feat_seed", m_feat_seed}};
            return run_stage_cmd(StageKind::MilTrain, p, m_seed);
        }
        if (mil_eval->parsed()) {
            json p = {{"model", v_model},
                      {"bags", v_bags},
                      {"embeddings", v_emb},
                      {"tiles_manifest", v_tiles_manifest},
                      {"tiles_emb", v_tiles_emb},
                      {"k", v_k},
                      {"report", v_report}};
            return run_stage_cmd(StageKind::MilEval, p, 0);
        }
        if (run_cmd->parsed()) {
            return run_run_cmd(r_config);
        }
    } catch (const Error& e) {
        std::cerr << "error (" << Error::kind_name(e.kind()) << "): " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
