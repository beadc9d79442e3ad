#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cytoforge/image.hpp"
#include "cytoforge/tiler.hpp"

namespace cytoforge::feat {

// n x dim float32 embeddings with unique string ids, row-major.
struct EmbeddingMatrix {
    std::vector<std::string> ids;
    int dim = 0;
    std::vector<float> data;

    size_t rows() const { return ids.size(); }
    const float* row(size_t i) const { return data.data() + i * static_cast<size_t>(dim); }
};

// Binary format: magic "EMB1", u32 LE n, u32 LE dim, n*dim little-endian
// f32 row-major. String ids in the <path>.ids.json sidecar.
void write_embeddings(const EmbeddingMatrix& m, const std::string& path);
EmbeddingMatrix read_embeddings(const std::string& path);

// Deterministic stand-in featurizer: per-channel 16-bin normalized
// histograms plus per-channel mean/std (54 raw values), projected to dim by
// a seeded Gaussian matrix, then L2-normalized.
std::vector<float> toy_featurizer(const RasterImage& image, int dim, uint64_t seed);

// Raw 54-feature vector before projection (exposed for tests).
std::vector<double> featurizer_raw(const RasterImage& image);

// Projection matrix rows for a given seed (dim x 54, row-major).
std::vector<double> featurizer_projection(int dim, uint64_t seed);

// Batch version, parallel across images.
EmbeddingMatrix featurize_images(const std::vector<std::string>& ids,
                                 const std::vector<std::string>& paths, int dim, uint64_t seed);

struct Bag {
    std::string slide_id;
    int label = 0;  // 0/1; manifests with unknown labels are rejected
    std::vector<std::string> instance_ids;
    std::vector<size_t> rows;  // indices into the backing EmbeddingMatrix
};

// One bag per manifest, instance order = manifest order, instance id =
// manifest tile path. Missing embedding ids and unknown labels are errors;
// an empty manifest yields an empty bag and a warning on stderr.
std::vector<Bag> assemble_bags(const std::vector<tiler::SlideManifest>& manifests,
                               const EmbeddingMatrix& embeddings);

struct LabeledTileSet {
    std::vector<size_t> rows;  // indices into the backing EmbeddingMatrix
    std::vector<int> labels;
};

// id -> label join against the embedding ids; every id must resolve.
LabeledTileSet join_labels(const EmbeddingMatrix& embeddings,
                           const std::vector<std::pair<std::string, int>>& labels);

}  // namespace cytoforge::feat
