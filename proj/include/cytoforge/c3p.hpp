#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cytoforge/image.hpp"
#include "cytoforge/poisson.hpp"
#include "cytoforge/rng.hpp"

namespace cytoforge::c3p {

enum class PasteMode { Paste, Blend, Poisson };

PasteMode paste_mode_from_string(const std::string& s);
const char* paste_mode_to_string(PasteMode m);

// A labeled single-cell image. The binary label follows the dataset's
// positive class set; for herlev/sipakmed the consistency is enforced on
// load, other dataset tags are taken at face value.
struct CellImage {
    RasterImage image;
    std::vector<uint8_t> mask;  // optional, row-major 0/1
    int label = 0;
    std::string dataset_tag;
    std::string class_tag;
    std::string id;
};

bool class_is_positive(const std::string& dataset_tag, const std::string& class_tag, int* known);

class CellBank {
public:
    void add(CellImage cell);
    // Directory of PNGs plus labels.csv with columns file,dataset,class,label.
    static CellBank load(const std::string& dir, const std::string& labels_csv);

    const std::vector<CellImage>& cells() const { return cells_; }
    size_t count(int label) const { return label ? positives_.size() : negatives_.size(); }
    const CellImage& sample(int label, Rng& rng) const;

private:
    std::vector<CellImage> cells_;
    std::vector<size_t> positives_;
    std::vector<size_t> negatives_;
};

struct PastePolicy {
    PasteMode mode = PasteMode::Poisson;
    double p_pos = 1.0;
    double p_neg = 0.5;
    double lambda_lo = 0.0;
    double lambda_hi = 1.0;
    int canvases_per_class = 2000;
    uint64_t seed = 0;
    poisson::SolverParams solver;

    void validate() const;
};

struct Provenance {
    std::optional<std::string> cell_id;
    std::string canvas_id;
    int x = 0;
    int y = 0;
    PasteMode mode = PasteMode::Poisson;
    std::optional<double> lambda;
    bool pasted = false;
};

struct PastedTile {
    RasterImage image;
    int label = 0;
    Provenance prov;
};

// Uniform over all offsets keeping the cell inside the canvas; x then y.
std::pair<int, int> sample_paste_location(int canvas_w, int canvas_h, int cell_w, int cell_h,
                                          Rng& rng);

RasterImage paste(const RasterImage& cell, const RasterImage& canvas, int x, int y);
RasterImage blend(const RasterImage& cell, const RasterImage& canvas, int x, int y,
                  double lambda_paste);
RasterImage poisson_paste(const RasterImage& cell, const RasterImage& canvas, int x, int y,
                          const poisson::SolverParams& params);

// Asymmetric application: with probability p_pos (positive canvas polarity)
// or p_neg (negative), paste a label-matched cell; otherwise pass the canvas
// through. Draw order: u, cell index, x, y, lambda.
PastedTile apply_c3p(const RasterImage& canvas, const std::string& canvas_id, int canvas_polarity,
                     const CellBank& bank, const PastePolicy& policy, Rng& rng);

struct CanvasRef {
    std::string id;
    std::string path;
};

struct DatasetItem {
    std::string path;
    int label = 0;
    Provenance prov;
};

struct PastedDatasetManifest {
    PastePolicy policy;
    std::vector<DatasetItem> items;
};

// Pools are subsampled to canvases_per_class (seeded), outputs alternate
// canvas polarity negative/positive, each output drawn from
// sub_seed(policy.seed, index). Images land in <out_dir>/pasted/, the
// manifest at <out_dir>/manifest.json.
PastedDatasetManifest generate_pasted_dataset(const CellBank& bank,
                                              const std::vector<CanvasRef>& negative_pool,
                                              const std::vector<CanvasRef>& positive_pool,
                                              const PastePolicy& policy, int n_outputs,
                                              const std::string& out_dir);

std::string pasted_manifest_to_json(const PastedDatasetManifest& m);
PastedDatasetManifest pasted_manifest_from_json(const std::string& text,
                                                const std::string& origin);
PastedDatasetManifest load_pasted_manifest(const std::string& path);

}  // namespace cytoforge::c3p
