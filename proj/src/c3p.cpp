#include "cytoforge/c3p.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace cytoforge::c3p {

PasteMode paste_mode_from_string(const std::string& s) {
    if (s == "paste") return PasteMode::Paste;
    if (s == "blend") return PasteMode::Blend;
    if (s == "poisson") return PasteMode::Poisson;
    raise(Error::Kind::InvalidArgument, "unrecognized paste mode '", s, "'");
}

const char* paste_mode_to_string(PasteMode m) {
    switch (m) {
        case PasteMode::Paste: return "paste";
        case PasteMode::Blend: return "blend";
        case PasteMode::Poisson: return "poisson";
    }
    return "poisson";
}

namespace {

const std::set<std::string> kHerlevPositive = {"LD", "MD", "SD", "CIS"};
const std::set<std::string> kHerlevNegative = {"NS", "NI", "NC"};
const std::set<std::string> kSipakmedPositive = {"K", "D"};
const std::set<std::string> kSipakmedNegative = {"M", "SI", "P"};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) {
        // trim spaces and CR
        while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
        size_t b = 0;
        while (b < field.size() && field[b] == ' ') ++b;
        out.push_back(field.substr(b));
    }
    return out;
}

}  // namespace

bool class_is_positive(const std::string& dataset_tag, const std::string& class_tag, int* known) {
    if (dataset_tag == "herlev") {
        if (kHerlevPositive.count(class_tag)) {
            if (known) *known = 1;
            return true;
        }
        if (kHerlevNegative.count(class_tag)) {
            if (known) *known = 1;
            return false;
        }
        raise(Error::Kind::InvalidArgument, "unknown herlev class '", class_tag, "'");
    }
    if (dataset_tag == "sipakmed") {
        if (kSipakmedPositive.count(class_tag)) {
            if (known) *known = 1;
            return true;
        }
        if (kSipakmedNegative.count(class_tag)) {
            if (known) *known = 1;
            return false;
        }
        raise(Error::Kind::InvalidArgument, "unknown sipakmed class '", class_tag, "'");
    }
    if (known) *known = 0;
    return false;
}

void CellBank::add(CellImage cell) {
    check(cell.image.width >= 1 && cell.image.height >= 1, Error::Kind::InvalidArgument,
          "cell image must be non-degenerate");
    check(cell.label == 0 || cell.label == 1, Error::Kind::InvalidArgument,
          "cell label must be 0 or 1");
    int known = 0;
    const bool pos = class_is_positive(cell.dataset_tag, cell.class_tag, &known);
    if (known) {
        check((cell.label == 1) == pos, Error::Kind::InvalidArgument, "cell '", cell.id,
              "': label ", cell.label, " contradicts ", cell.dataset_tag, " class ",
              cell.class_tag);
    }
    if (cell.label == 1)
        positives_.push_back(cells_.size());
    else
        negatives_.push_back(cells_.size());
    cells_.push_back(std::move(cell));
}

CellBank CellBank::load(const std::string& dir, const std::string& labels_csv) {
    std::ifstream in(labels_csv);
    check(in.good(), Error::Kind::Io, "cannot open cell labels ", labels_csv);
    std::string line;
    check(static_cast<bool>(std::getline(in, line)), Error::Kind::Format, "empty labels csv ",
          labels_csv);
    const auto header = split_csv_line(line);
    check(header.size() >= 4 && header[0] == "file" && header[1] == "dataset" &&
              header[2] == "class" && header[3] == "label",
          Error::Kind::Format, "labels csv must have header file,dataset,class,label: ",
          labels_csv);

    CellBank bank;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        check(fields.size() >= 4, Error::Kind::Format, labels_csv, ":", line_no,
              ": expected 4 fields");
        CellImage cell;
        cell.id = fields[0];
        cell.dataset_tag = fields[1];
        cell.class_tag = fields[2];
        try {
            cell.label = std::stoi(fields[3]);
        } catch (const std::exception&) {
            raise(Error::Kind::Format, labels_csv, ":", line_no, ": bad label '", fields[3], "'");
        }
        cell.image = read_image((fs::path(dir) / fields[0]).string());
        bank.add(std::move(cell));
    }
    check(!bank.cells_.empty(), Error::Kind::MissingData, "cell bank is empty: ", labels_csv);
    return bank;
}

const CellImage& CellBank::sample(int label, Rng& rng) const {
    const auto& idx = label ? positives_ : negatives_;
    check(!idx.empty(), Error::Kind::MissingData, "cell bank has no cells with label ", label);
    return cells_[idx[rng.below(idx.size())]];
}

void PastePolicy::validate() const {
    check(p_pos >= 0.0 && p_pos <= 1.0, Error::Kind::InvalidArgument, "p_pos must be in [0,1]");
    check(p_neg >= 0.0 && p_neg <= 1.0, Error::Kind::InvalidArgument, "p_neg must be in [0,1]");
    check(lambda_lo <= lambda_hi && lambda_lo >= 0.0 && lambda_hi <= 1.0,
          Error::Kind::InvalidArgument, "lambda range must satisfy 0 <= lo <= hi <= 1");
    check(canvases_per_class >= 1, Error::Kind::InvalidArgument,
          "canvases_per_class must be >= 1");
}

std::pair<int, int> sample_paste_location(int canvas_w, int canvas_h, int cell_w, int cell_h,
                                          Rng& rng) {
    check(cell_w >= 1 && cell_h >= 1, Error::Kind::InvalidArgument, "degenerate cell size");
    check(cell_w <= canvas_w && cell_h <= canvas_h, Error::Kind::InvalidArgument, "cell ",
          cell_w, "x", cell_h, " does not fit canvas ", canvas_w, "x", canvas_h);
    const int x = static_cast<int>(rng.below(static_cast<uint64_t>(canvas_w - cell_w) + 1));
    const int y = static_cast<int>(rng.below(static_cast<uint64_t>(canvas_h - cell_h) + 1));
    return {x, y};
}

namespace {

void check_site(const RasterImage& cell, const RasterImage& canvas, int x, int y) {
    check(x >= 0 && y >= 0 && x + cell.width <= canvas.width && y + cell.height <= canvas.height,
          Error::Kind::InvalidArgument, "paste site ", cell.width, "x", cell.height, "+", x, "+",
          y, " exceeds canvas ", canvas.width, "x", canvas.height);
}

}  // namespace

RasterImage paste(const RasterImage& cell, const RasterImage& canvas, int x, int y) {
    check_site(cell, canvas, x, y);
    RasterImage out = canvas;
    for (int row = 0; row < cell.height; ++row) {
        std::copy_n(cell.px(0, row), static_cast<size_t>(cell.width) * 3, out.px(x, y + row));
    }
    return out;
}

RasterImage blend(const RasterImage& cell, const RasterImage& canvas, int x, int y,
                  double lambda_paste) {
    check(lambda_paste >= 0.0 && lambda_paste <= 1.0, Error::Kind::InvalidArgument,
          "lambda_paste must be in [0,1], got ", lambda_paste);
    check_site(cell, canvas, x, y);
    RasterImage out = canvas;
    for (int row = 0; row < cell.height; ++row) {
        const uint8_t* cp = cell.px(0, row);
        uint8_t* op = out.px(x, y + row);
        for (int i = 0; i < cell.width * 3; ++i) {
            const double v = (1.0 - lambda_paste) * cp[i] + lambda_paste * op[i];
            op[i] = static_cast<uint8_t>(std::min(255.0, std::max(0.0, std::round(v))));
        }
    }
    return out;
}

RasterImage poisson_paste(const RasterImage& cell, const RasterImage& canvas, int x, int y,
                          const poisson::SolverParams& params) {
    check_site(cell, canvas, x, y);
    check(cell.width >= 3 && cell.height >= 3, Error::Kind::InvalidArgument,
          "poisson paste needs a cell of at least 3x3 (omega is the interior)");
    poisson::PasteRegion region;
    region.x = x;
    region.y = y;
    region.width = cell.width;
    region.height = cell.height;
    const auto system = poisson::assemble_system(cell, canvas, region);
    const auto solved = poisson::solve_channels(system, params);
    std::array<std::vector<double>, 3> solution;
    for (int c = 0; c < 3; ++c) solution[c] = solved[c].x;
    return poisson::compose(solution, canvas, system);
}

PastedTile apply_c3p(const RasterImage& canvas, const std::string& canvas_id, int canvas_polarity,
                     const CellBank& bank, const PastePolicy& policy, Rng& rng) {
    policy.validate();
    check(canvas_polarity == 0 || canvas_polarity == 1, Error::Kind::InvalidArgument,
          "canvas polarity must be 0 or 1");

    PastedTile out;
    out.prov.canvas_id = canvas_id;
    out.prov.mode = policy.mode;

    const double p = canvas_polarity ? policy.p_pos : policy.p_neg;
    const double u = rng.real01();
    if (u >= p) {
        out.image = canvas;
        out.label = canvas_polarity;
        out.prov.pasted = false;
        return out;
    }

    const CellImage& cell = bank.sample(canvas_polarity, rng);
    const auto [x, y] =
        sample_paste_location(canvas.width, canvas.height, cell.image.width, cell.image.height,
                              rng);
    out.prov.cell_id = cell.id;
    out.prov.x = x;
    out.prov.y = y;
    out.prov.pasted = true;
    out.label = cell.label;
    switch (policy.mode) {
        case PasteMode::Paste: out.image = paste(cell.image, canvas, x, y); break;
        case PasteMode::Blend: {
            const double lambda = rng.uniform(policy.lambda_lo, policy.lambda_hi);
            out.prov.lambda = lambda;
            out.image = blend(cell.image, canvas, x, y, lambda);
            break;
        }
        case PasteMode::Poisson:
            out.image = poisson_paste(cell.image, canvas, x, y, policy.solver);
            break;
    }
    return out;
}

namespace {

// Seeded subsample without replacement down to cap (keeps all when smaller);
// partial Fisher-Yates, order given by the draw sequence.
std::vector<CanvasRef> subsample_pool(const std::vector<CanvasRef>& pool, int cap, Rng& rng) {
    if (pool.size() <= static_cast<size_t>(cap)) return pool;
    std::vector<CanvasRef> work = pool;
    std::vector<CanvasRef> out;
    out.reserve(cap);
    for (int i = 0; i < cap; ++i) {
        const size_t j = i + rng.below(work.size() - i);
        std::swap(work[i], work[j]);
        out.push_back(work[i]);
    }
    return out;
}

ordered_json policy_to_json(const PastePolicy& p) {
    ordered_json j;
    j["mode"] = paste_mode_to_string(p.mode);
    j["p_pos"] = p.p_pos;
    j["p_neg"] = p.p_neg;
    j["lambda_range"] = ordered_json::array({p.lambda_lo, p.lambda_hi});
    j["canvases_per_class"] = p.canvases_per_class;
    j["seed"] = p.seed;
    return j;
}

PastePolicy policy_from_json(const ordered_json& j) {
    PastePolicy p;
    p.mode = paste_mode_from_string(j.at("mode").get<std::string>());
    p.p_pos = j.at("p_pos").get<double>();
    p.p_neg = j.at("p_neg").get<double>();
    p.lambda_lo = j.at("lambda_range").at(0).get<double>();
    p.lambda_hi = j.at("lambda_range").at(1).get<double>();
    p.canvases_per_class = j.at("canvases_per_class").get<int>();
    p.seed = j.at("seed").get<uint64_t>();
    return p;
}

}  // namespace

PastedDatasetManifest generate_pasted_dataset(const CellBank& bank,
                                              const std::vector<CanvasRef>& negative_pool,
                                              const std::vector<CanvasRef>& positive_pool,
                                              const PastePolicy& policy, int n_outputs,
                                              const std::string& out_dir) {
    policy.validate();
    check(n_outputs >= 0, Error::Kind::InvalidArgument, "n_outputs must be >= 0");
    check(!negative_pool.empty() && !positive_pool.empty(), Error::Kind::MissingData,
          "both canvas pools must be non-empty");

    Rng pool_rng(sub_seed(policy.seed, 0xC0FFEE));
    const auto neg = subsample_pool(negative_pool, policy.canvases_per_class, pool_rng);
    const auto pos = subsample_pool(positive_pool, policy.canvases_per_class, pool_rng);

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "pasted", ec);
    check(!ec, Error::Kind::Io, "cannot create ", out_dir, "/pasted: ", ec.message());

    PastedDatasetManifest manifest;
    manifest.policy = policy;
    manifest.items.resize(n_outputs);

    std::atomic<bool> failed{false};
    std::string fail_msg;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_outputs; ++i) {
        if (failed.load()) continue;
        try {
            Rng rng(sub_seed(policy.seed, static_cast<uint64_t>(i)));
            const int polarity = i % 2;  // even -> negative canvas, odd -> positive
            const auto& pool = polarity ? pos : neg;
            const CanvasRef& ref = pool[rng.below(pool.size())];
            const RasterImage canvas = read_image(ref.path);
            PastedTile tile = apply_c3p(canvas, ref.id, polarity, bank, policy, rng);

            char name[32];
            std::snprintf(name, sizeof(name), "pasted/p_%06d.png", i);
            write_png((fs::path(out_dir) / name).string(), tile.image);

            DatasetItem item;
            item.path = name;
            item.label = tile.label;
            item.prov = tile.prov;
            manifest.items[i] = std::move(item);
        } catch (const std::exception& e) {
#pragma omp critical
            {
                failed.store(true);
                fail_msg = e.what();
            }
        }
    }
    check(!failed.load(), Error::Kind::Io, "pasted dataset generation failed: ", fail_msg);

    const fs::path manifest_path = fs::path(out_dir) / "manifest.json";
    std::ofstream out(manifest_path, std::ios::binary);
    check(out.good(), Error::Kind::Io, "cannot write ", manifest_path.string());
    out << pasted_manifest_to_json(manifest);
    out.close();
    check(out.good(), Error::Kind::Io, "error writing ", manifest_path.string());
    return manifest;
}

std::string pasted_manifest_to_json(const PastedDatasetManifest& m) {
    ordered_json j;
    j["policy"] = policy_to_json(m.policy);
    j["items"] = ordered_json::array();
    for (const auto& it : m.items) {
        ordered_json ji;
        ji["path"] = it.path;
        ji["label"] = it.label;
        if (it.prov.cell_id)
            ji["cell_id"] = *it.prov.cell_id;
        else
            ji["cell_id"] = nullptr;
        ji["canvas_id"] = it.prov.canvas_id;
        ji["x"] = it.prov.x;
        ji["y"] = it.prov.y;
        ji["mode"] = paste_mode_to_string(it.prov.mode);
        if (it.prov.lambda)
            ji["lambda"] = *it.prov.lambda;
        else
            ji["lambda"] = nullptr;
        j["items"].push_back(std::move(ji));
    }
    return j.dump(2) + "\n";
}

PastedDatasetManifest pasted_manifest_from_json(const std::string& text,
                                                const std::string& origin) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        raise(Error::Kind::Format, "invalid pasted manifest JSON in ", origin, ": ", e.what());
    }
    PastedDatasetManifest m;
    try {
        m.policy = policy_from_json(j.at("policy"));
        for (const auto& ji : j.at("items")) {
            DatasetItem it;
            it.path = ji.at("path").get<std::string>();
            it.label = ji.at("label").get<int>();
            if (!ji.at("cell_id").is_null()) it.prov.cell_id = ji.at("cell_id").get<std::string>();
            it.prov.canvas_id = ji.at("canvas_id").get<std::string>();
            it.prov.x = ji.at("x").get<int>();
            it.prov.y = ji.at("y").get<int>();
            it.prov.mode = paste_mode_from_string(ji.at("mode").get<std::string>());
            if (!ji.at("lambda").is_null()) it.prov.lambda = ji.at("lambda").get<double>();
            it.prov.pasted = it.prov.cell_id.has_value();
            m.items.push_back(std::move(it));
        }
    } catch (const nlohmann::json::exception& e) {
        raise(Error::Kind::Format, "pasted manifest field error in ", origin, ": ", e.what());
    }
    return m;
}

PastedDatasetManifest load_pasted_manifest(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), Error::Kind::Io, "cannot open pasted manifest ", path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return pasted_manifest_from_json(text, path);
}

}  // namespace cytoforge::c3p
