#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cytoforge/c3p.hpp"
#include "cytoforge/features.hpp"

namespace cytoforge::mil {

// Gated-attention MIL parameters plus the linear classifier shared between
// slide-level and tile-level scoring. 64-bit throughout.
struct MilParams {
    int dim = 0;     // embedding dim D
    int hidden = 0;  // attention hidden dim L
    std::vector<double> V;  // hidden x dim
    std::vector<double> U;  // hidden x dim
    std::vector<double> w;  // hidden
    std::vector<double> g;  // dim
    double g_bias = 0.0;
};

// uniform(-1/sqrt(D), 1/sqrt(D)) for V, U, w, g in that order, zero bias.
MilParams init_params(int dim, int hidden, uint64_t seed);

std::string params_to_json(const MilParams& p, uint64_t seed);
MilParams params_from_json(const std::string& text, const std::string& origin,
                           uint64_t* seed_out = nullptr);

struct TrainConfig {
    int k = 8;
    int slide_batch = 16;
    int tile_batch = 8;
    double lambda_tile = 0.1;
    double lr = 1e-3;
    int epochs = 0;
    uint64_t seed = 0;
    int hidden = 128;
    int queue_capacity = 10;
    enum class C3pMode { Off, Offline, Online } c3p_mode = C3pMode::Off;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

TrainConfig::C3pMode c3p_mode_from_string(const std::string& s);
const char* c3p_mode_to_string(TrainConfig::C3pMode m);

// ---- forward ----

// Elementwise sigmoid(g . h_i + bias) over the selected rows.
std::vector<double> instance_scores(const MilParams& p, const feat::EmbeddingMatrix& emb,
                                    const std::vector<size_t>& rows);
double instance_score(const MilParams& p, const float* h);

// Indices of the min(k, n) largest scores in descending-score order, ties to
// the smaller index.
std::vector<int> select_topk(const std::vector<double>& scores, int k);

// Cached forward state of the attention head over the selected instances.
struct AttentionCache {
    std::vector<size_t> sel_rows;       // selected embedding rows
    std::vector<double> h;              // k x D selected embeddings (doubles)
    std::vector<double> tanh_v;         // k x L
    std::vector<double> sig_u;          // k x L
    std::vector<double> gate;           // k x L
    std::vector<double> e;              // k
    std::vector<double> alpha;          // k
    std::vector<double> z;              // D
    int k = 0;
};

AttentionCache attention_aggregate(const MilParams& p, const feat::EmbeddingMatrix& emb,
                                   const std::vector<size_t>& sel_rows);

double slide_score(const MilParams& p, const std::vector<double>& z);

int bag_label(const std::vector<int>& instance_labels);

// Binary cross-entropy with probability clamped to [1e-7, 1-1e-7].
double bce(double prob, int label);
double combined_loss(double slide_pred, int slide_label, const std::vector<double>& tile_preds,
                     const std::vector<int>& tile_labels, double lambda_tile);

// Full slide forward for one bag: scores -> top-k -> attention -> g.
struct BagForward {
    std::vector<double> scores;
    std::vector<int> topk;
    AttentionCache att;
    double slide_logit = 0.0;
    double slide_prob = 0.0;
};
BagForward forward_bag(const MilParams& p, const feat::EmbeddingMatrix& emb,
                       const std::vector<size_t>& rows, int k);

// ---- backward ----

struct Gradients {
    std::vector<double> V, U, w, g;
    double g_bias = 0.0;

    explicit Gradients(const MilParams& p)
        : V(p.V.size(), 0.0), U(p.U.size(), 0.0), w(p.w.size(), 0.0), g(p.g.size(), 0.0) {}
    void add_scaled(const Gradients& o, double s);
};

// d BCE(slide) / d params for one bag, top-k indices fixed; accumulates into
// grads with weight `scale`.
void slide_backward(const MilParams& p, const BagForward& fwd, int slide_label, double scale,
                    Gradients& grads);

// d (mean tile BCE) / d params for a batch of tile embeddings (n x D floats);
// accumulates with weight `scale`.
void tile_backward(const MilParams& p, const float* tiles, size_t n, const int* labels,
                   double scale, Gradients& grads);

// Gradients of combined_loss for one bag plus one tile batch.
Gradients backward(const MilParams& p, const feat::EmbeddingMatrix& emb,
                   const std::vector<size_t>& rows, int slide_label, const float* tiles,
                   size_t n_tiles, const int* tile_labels, double lambda_tile, int k);

// ---- queues ----

struct QueueEntry {
    std::string id;
    double score = 0.0;
};

// Per-slide top-scoring tiles: positive slides feed confident_positives,
// negative slides feed hard_negatives. A later update for the same slide
// replaces the earlier list.
struct QueuePair {
    int capacity = 10;
    std::map<std::string, std::vector<QueueEntry>> confident_positives;
    std::map<std::string, std::vector<QueueEntry>> hard_negatives;

    size_t total(int polarity) const;
};

void update_queues(QueuePair& queues, const std::string& slide_id, int slide_label,
                   const std::vector<double>& scores, const std::vector<std::string>& ids);

// ---- training ----

struct OnlineC3p {
    const c3p::CellBank* bank = nullptr;
    c3p::PastePolicy policy;
    int feat_dim = 0;        // must equal the bag embedding dim
    uint64_t feat_seed = 0;  // must match the featurizer used for the bags
    std::function<RasterImage(const std::string& id)> tile_image;
};

struct LabeledTiles {
    const feat::EmbeddingMatrix* emb = nullptr;
    std::vector<size_t> rows;
    std::vector<int> labels;
};

struct TrainLogEntry {
    int epoch = 0;
    double loss = 0.0;
    std::optional<double> slide_auc_val;
    std::optional<double> tile_auc_val;
};

std::string log_to_jsonl(const std::vector<TrainLogEntry>& log);

struct TrainResult {
    MilParams params;
    std::vector<TrainLogEntry> log;
    QueuePair queues;
};

TrainResult train(const std::vector<feat::Bag>& bags, const feat::EmbeddingMatrix& emb,
                  const TrainConfig& cfg, const OnlineC3p* online = nullptr,
                  const LabeledTiles* offline_tiles = nullptr,
                  const std::vector<feat::Bag>* val_bags = nullptr,
                  const LabeledTiles* val_tiles = nullptr);

// ---- evaluation ----

// Rank-based (Mann-Whitney) AUC, ties 0.5; both classes must be present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct EvalReport {
    double slide_auc = 0.0;
    double tile_auc = 0.0;
    size_t n_bags = 0;
    size_t n_tiles = 0;
};

double bag_slide_score(const MilParams& p, const feat::EmbeddingMatrix& emb,
                       const std::vector<size_t>& rows, int k);

EvalReport evaluate(const MilParams& p, const std::vector<feat::Bag>& bags,
                    const feat::EmbeddingMatrix& emb, const LabeledTiles& tiles, int k);

}  // namespace cytoforge::mil
