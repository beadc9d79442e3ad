#include "cytoforge/features.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cytoforge/rng.hpp"

namespace cytoforge::feat {

namespace {

void put_u32_le(std::ostream& os, uint32_t v) {
    const uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                          static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(const uint8_t* p) {
    return p[0] | p[1] << 8 | p[2] << 16 | static_cast<uint32_t>(p[3]) << 24;
}

}  // namespace

void write_embeddings(const EmbeddingMatrix& m, const std::string& path) {
    check(m.dim >= 0, Error::Kind::InvalidArgument, "negative embedding dim");
    check(m.rows() == 0 || m.dim >= 1, Error::Kind::InvalidArgument,
          "non-empty matrix needs dim >= 1");
    check(m.data.size() == m.rows() * static_cast<size_t>(m.dim), Error::Kind::DimensionMismatch,
          "embedding buffer size does not match n*dim");
    {
        std::unordered_set<std::string> uniq(m.ids.begin(), m.ids.end());
        check(uniq.size() == m.ids.size(), Error::Kind::InvalidArgument,
              "embedding ids must be unique");
    }
    for (float v : m.data) {
        check(std::isfinite(v), Error::Kind::InvalidArgument,
              "embedding contains non-finite value");
    }

    std::ofstream out(path, std::ios::binary);
    check(out.good(), Error::Kind::Io, "cannot write ", path);
    out.write("EMB1", 4);
    put_u32_le(out, static_cast<uint32_t>(m.rows()));
    put_u32_le(out, static_cast<uint32_t>(m.dim));
    for (float v : m.data) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32_le(out, bits);
    }
    out.close();
    check(out.good(), Error::Kind::Io, "error writing ", path);

    nlohmann::json ids = m.ids;
    std::ofstream sidecar(path + ".ids.json", std::ios::binary);
    check(sidecar.good(), Error::Kind::Io, "cannot write ", path, ".ids.json");
    sidecar << ids.dump() << "\n";
    sidecar.close();
    check(sidecar.good(), Error::Kind::Io, "error writing ", path, ".ids.json");
}

EmbeddingMatrix read_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), Error::Kind::Io, "cannot open ", path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    check(bytes.size() >= 12, Error::Kind::Format, "truncated embedding file ", path);
    check(std::memcmp(bytes.data(), "EMB1", 4) == 0, Error::Kind::Format,
          "bad magic in embedding file ", path);
    const uint32_t n = get_u32_le(bytes.data() + 4);
    const uint32_t dim = get_u32_le(bytes.data() + 8);
    const size_t expected = 12 + static_cast<size_t>(n) * dim * 4;
    check(bytes.size() == expected, Error::Kind::Format, "embedding file ", path, " has ",
          bytes.size(), " bytes, expected ", expected);

    EmbeddingMatrix m;
    m.dim = static_cast<int>(dim);
    m.data.resize(static_cast<size_t>(n) * dim);
    for (size_t i = 0; i < m.data.size(); ++i) {
        const uint32_t bits = get_u32_le(bytes.data() + 12 + i * 4);
        float v;
        std::memcpy(&v, &bits, 4);
        check(std::isfinite(v), Error::Kind::Format, "non-finite value in ", path, " at index ",
              i);
        m.data[i] = v;
    }

    std::ifstream side(path + ".ids.json");
    check(side.good(), Error::Kind::Io, "cannot open ids sidecar ", path, ".ids.json");
    nlohmann::json ids;
    try {
        side >> ids;
    } catch (const nlohmann::json::exception& e) {
        raise(Error::Kind::Format, "invalid ids sidecar for ", path, ": ", e.what());
    }
    check(ids.is_array() && ids.size() == n, Error::Kind::Format, "ids sidecar for ", path,
          " must be an array of ", n, " strings");
    m.ids.reserve(n);
    std::unordered_set<std::string> uniq;
    for (const auto& id : ids) {
        check(id.is_string(), Error::Kind::Format, "non-string id in sidecar of ", path);
        std::string s = id.get<std::string>();
        check(uniq.insert(s).second, Error::Kind::Format, "duplicate id '", s, "' in sidecar of ",
              path);
        m.ids.push_back(std::move(s));
    }
    return m;
}

std::vector<double> featurizer_raw(const RasterImage& image) {
    std::vector<double> raw(54, 0.0);
    const size_t n = image.pixel_count();
    uint64_t hist[3][16] = {};
    double sum[3] = {0, 0, 0};
    double sumsq[3] = {0, 0, 0};
    for (size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            const uint8_t v = image.pixels[i * 3 + c];
            ++hist[c][v >> 4];
            sum[c] += v;
            sumsq[c] += static_cast<double>(v) * v;
        }
    }
    for (int c = 0; c < 3; ++c) {
        for (int b = 0; b < 16; ++b) {
            raw[c * 16 + b] = static_cast<double>(hist[c][b]) / static_cast<double>(n);
        }
        const double mean = sum[c] / static_cast<double>(n);
        const double var = std::max(0.0, sumsq[c] / static_cast<double>(n) - mean * mean);
        raw[48 + c * 2] = mean / 255.0;
        raw[48 + c * 2 + 1] = std::sqrt(var) / 255.0;
    }
    return raw;
}

std::vector<double> featurizer_projection(int dim, uint64_t seed) {
    check(dim >= 1, Error::Kind::InvalidArgument, "featurizer dim must be >= 1");
    Rng rng(splitmix64(seed ^ 0xFEA7FEA7FEA7FEA7ULL));
    std::vector<double> proj(static_cast<size_t>(dim) * 54);
    const double scale = 1.0 / std::sqrt(54.0);
    for (auto& v : proj) v = rng.normal() * scale;
    return proj;
}

std::vector<float> toy_featurizer(const RasterImage& image, int dim, uint64_t seed) {
    const std::vector<double> raw = featurizer_raw(image);
    const std::vector<double> proj = featurizer_projection(dim, seed);
    std::vector<double> out(dim, 0.0);
    for (int d = 0; d < dim; ++d) {
        double acc = 0.0;
        for (int k = 0; k < 54; ++k) acc += proj[static_cast<size_t>(d) * 54 + k] * raw[k];
        out[d] = acc;
    }
    double norm = 0.0;
    for (double v : out) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<float> result(dim);
    if (norm > 1e-12) {
        for (int d = 0; d < dim; ++d) result[d] = static_cast<float>(out[d] / norm);
    } else {
        for (int d = 0; d < dim; ++d) result[d] = 0.0f;
    }
    return result;
}

EmbeddingMatrix featurize_images(const std::vector<std::string>& ids,
                                 const std::vector<std::string>& paths, int dim, uint64_t seed) {
    check(ids.size() == paths.size(), Error::Kind::DimensionMismatch,
          "ids and paths must have equal length");
    EmbeddingMatrix m;
    m.ids = ids;
    m.dim = dim;
    m.data.assign(ids.size() * static_cast<size_t>(dim), 0.0f);

    std::atomic<bool> failed{false};
    std::string fail_msg;
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < static_cast<long long>(paths.size()); ++i) {
        if (failed.load()) continue;
        try {
            const RasterImage img = read_image(paths[i]);
            const std::vector<float> v = toy_featurizer(img, dim, seed);
            std::copy(v.begin(), v.end(), m.data.begin() + i * static_cast<long long>(dim));
        } catch (const std::exception& e) {
#pragma omp critical
            {
                failed.store(true);
                fail_msg = e.what();
            }
        }
    }
    check(!failed.load(), Error::Kind::Io, "featurization failed: ", fail_msg);
    return m;
}

std::vector<Bag> assemble_bags(const std::vector<tiler::SlideManifest>& manifests,
                               const EmbeddingMatrix& embeddings) {
    std::unordered_map<std::string, size_t> by_id;
    by_id.reserve(embeddings.rows());
    for (size_t i = 0; i < embeddings.rows(); ++i) by_id.emplace(embeddings.ids[i], i);

    std::vector<Bag> bags;
    bags.reserve(manifests.size());
    for (const auto& m : manifests) {
        check(m.label != tiler::SlideLabel::Unknown, Error::Kind::InvalidArgument, "slide ",
              m.slide_id, " has unknown label; bags need 0/1 labels");
        Bag bag;
        bag.slide_id = m.slide_id;
        bag.label = m.label == tiler::SlideLabel::Positive ? 1 : 0;
        if (m.tiles.empty()) {
            std::cerr << "warning: slide " << m.slide_id << " has an empty manifest\n";
        }
        for (const auto& t : m.tiles) {
            const auto it = by_id.find(t.path);
            check(it != by_id.end(), Error::Kind::MissingData, "embedding id '", t.path,
                  "' (slide ", m.slide_id, ") not found in embedding matrix");
            bag.instance_ids.push_back(t.path);
            bag.rows.push_back(it->second);
        }
        bags.push_back(std::move(bag));
    }
    return bags;
}

LabeledTileSet join_labels(const EmbeddingMatrix& embeddings,
                           const std::vector<std::pair<std::string, int>>& labels) {
    std::unordered_map<std::string, size_t> by_id;
    by_id.reserve(embeddings.rows());
    for (size_t i = 0; i < embeddings.rows(); ++i) by_id.emplace(embeddings.ids[i], i);

    LabeledTileSet set;
    for (const auto& [id, label] : labels) {
        const auto it = by_id.find(id);
        check(it != by_id.end(), Error::Kind::MissingData, "label id '", id,
              "' not found in embedding matrix");
        set.rows.push_back(it->second);
        set.labels.push_back(label);
    }
    return set;
}

}  // namespace cytoforge::feat
