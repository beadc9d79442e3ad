#include "cytoforge/mil.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cytoforge/kernels.hpp"
#include "cytoforge/rng.hpp"

using ordered_json = nlohmann::ordered_json;

namespace cytoforge::mil {

namespace {

constexpr double kProbClamp = 1e-7;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double clamp_prob(double p) { return std::min(1.0 - kProbClamp, std::max(kProbClamp, p)); }

// d BCE(clamp(sigmoid(logit)), y) / d logit; zero in the clamped region.
double bce_dlogit(double logit, int y) {
    const double p = sigmoid(logit);
    if (p <= kProbClamp || p >= 1.0 - kProbClamp) return 0.0;
    return p - static_cast<double>(y);
}

}  // namespace

MilParams init_params(int dim, int hidden, uint64_t seed) {
    check(dim >= 1 && hidden >= 1, Error::Kind::InvalidArgument,
          "dim and hidden must be >= 1, got ", dim, ", ", hidden);
    MilParams p;
    p.dim = dim;
    p.hidden = hidden;
    p.V.resize(static_cast<size_t>(hidden) * dim);
    p.U.resize(static_cast<size_t>(hidden) * dim);
    p.w.resize(hidden);
    p.g.resize(dim);
    p.g_bias = 0.0;
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    Rng rng(splitmix64(seed ^ 0x1217AB1E5EEDULL));
    for (auto& v : p.V) v = rng.uniform(-bound, bound);
    for (auto& v : p.U) v = rng.uniform(-bound, bound);
    for (auto& v : p.w) v = rng.uniform(-bound, bound);
    for (auto& v : p.g) v = rng.uniform(-bound, bound);
    return p;
}

void TrainConfig::validate() const {
    check(k >= 1, Error::Kind::Config, "k must be >= 1");
    check(slide_batch >= 1 && tile_batch >= 1, Error::Kind::Config, "batch sizes must be >= 1");
    check(lambda_tile >= 0.0, Error::Kind::Config, "lambda_tile must be >= 0");
    check(lr > 0.0, Error::Kind::Config, "lr must be positive");
    check(epochs >= 0, Error::Kind::Config, "epochs must be >= 0");
    check(hidden >= 1, Error::Kind::Config, "hidden must be >= 1");
    check(queue_capacity >= 1, Error::Kind::Config, "queue_capacity must be >= 1");
}

TrainConfig::C3pMode c3p_mode_from_string(const std::string& s) {
    if (s == "off") return TrainConfig::C3pMode::Off;
    if (s == "offline") return TrainConfig::C3pMode::Offline;
    if (s == "online") return TrainConfig::C3pMode::Online;
    raise(Error::Kind::Config, "unrecognized c3p mode '", s, "'");
}

const char* c3p_mode_to_string(TrainConfig::C3pMode m) {
    switch (m) {
        case TrainConfig::C3pMode::Off: return "off";
        case TrainConfig::C3pMode::Offline: return "offline";
        case TrainConfig::C3pMode::Online: return "online";
    }
    return "off";
}

double instance_score(const MilParams& p, const float* h) {
    double logit = p.g_bias;
    for (int d = 0; d < p.dim; ++d) logit += p.g[d] * static_cast<double>(h[d]);
    return sigmoid(logit);
}

std::vector<double> instance_scores(const MilParams& p, const feat::EmbeddingMatrix& emb,
                                    const std::vector<size_t>& rows) {
    check(emb.dim == p.dim, Error::Kind::DimensionMismatch, "embedding dim ", emb.dim,
          " does not match params dim ", p.dim);
    std::vector<double> scores(rows.size());
    const size_t work = rows.size() * static_cast<size_t>(p.dim);
#pragma omp parallel for schedule(static) if (work >= 16384)
    for (long long i = 0; i < static_cast<long long>(rows.size()); ++i) {
        scores[i] = instance_score(p, emb.row(rows[i]));
    }
    return scores;
}

std::vector<int> select_topk(const std::vector<double>& scores, int k) {
    check(!scores.empty(), Error::Kind::InvalidArgument, "select_topk on empty scores");
    check(k >= 1, Error::Kind::InvalidArgument, "k must be >= 1");
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    const size_t take = std::min<size_t>(k, scores.size());
    std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    idx.resize(take);
    return idx;
}

AttentionCache attention_aggregate(const MilParams& p, const feat::EmbeddingMatrix& emb,
                                   const std::vector<size_t>& sel_rows) {
    check(!sel_rows.empty(), Error::Kind::InvalidArgument, "attention over empty selection");
    const int k = static_cast<int>(sel_rows.size());
    const int D = p.dim;
    const int L = p.hidden;

    AttentionCache c;
    c.k = k;
    c.sel_rows = sel_rows;
    c.h.resize(static_cast<size_t>(k) * D);
    c.tanh_v.resize(static_cast<size_t>(k) * L);
    c.sig_u.resize(static_cast<size_t>(k) * L);
    c.gate.resize(static_cast<size_t>(k) * L);
    c.e.resize(k);
    c.alpha.resize(k);
    c.z.assign(D, 0.0);

    // Per-instance work is independent; the reduction into e stays within
    // one instance so the result does not depend on the thread count.
    const size_t gate_work = static_cast<size_t>(k) * L * D;
#pragma omp parallel for schedule(static) if (gate_work >= 16384)
    for (int i = 0; i < k; ++i) {
        const float* row = emb.row(sel_rows[i]);
        double* h = c.h.data() + static_cast<size_t>(i) * D;
        for (int d = 0; d < D; ++d) h[d] = static_cast<double>(row[d]);
        double e_i = 0.0;
        for (int l = 0; l < L; ++l) {
            double av = 0.0, au = 0.0;
            const double* Vrow = p.V.data() + static_cast<size_t>(l) * D;
            const double* Urow = p.U.data() + static_cast<size_t>(l) * D;
            for (int d = 0; d < D; ++d) {
                av += Vrow[d] * h[d];
                au += Urow[d] * h[d];
            }
            const double tv = std::tanh(av);
            const double su = sigmoid(au);
            c.tanh_v[static_cast<size_t>(i) * L + l] = tv;
            c.sig_u[static_cast<size_t>(i) * L + l] = su;
            const double gate = tv * su;
            c.gate[static_cast<size_t>(i) * L + l] = gate;
            e_i += p.w[l] * gate;
        }
        c.e[i] = e_i;
    }

    // Softmax in selection order (canonical reduction order).
    double e_max = c.e[0];
    for (int i = 1; i < k; ++i) e_max = std::max(e_max, c.e[i]);
    double denom = 0.0;
    for (int i = 0; i < k; ++i) {
        c.alpha[i] = std::exp(c.e[i] - e_max);
        denom += c.alpha[i];
    }
    for (int i = 0; i < k; ++i) c.alpha[i] /= denom;

    for (int i = 0; i < k; ++i) {
        const double* h = c.h.data() + static_cast<size_t>(i) * D;
        for (int d = 0; d < D; ++d) c.z[d] += c.alpha[i] * h[d];
    }
    return c;
}

double slide_score(const MilParams& p, const std::vector<double>& z) {
    check(z.size() == static_cast<size_t>(p.dim), Error::Kind::DimensionMismatch,
          "z dim does not match params");
    double logit = p.g_bias;
    for (int d = 0; d < p.dim; ++d) logit += p.g[d] * z[d];
    return sigmoid(logit);
}

int bag_label(const std::vector<int>& instance_labels) {
    for (int y : instance_labels) {
        if (y != 0) return 1;
    }
    return 0;
}

double bce(double prob, int label) {
    const double p = clamp_prob(prob);
    return label ? -std::log(p) : -std::log(1.0 - p);
}

double combined_loss(double slide_pred, int slide_label, const std::vector<double>& tile_preds,
                     const std::vector<int>& tile_labels, double lambda_tile) {
    check(lambda_tile >= 0.0, Error::Kind::InvalidArgument, "lambda_tile must be >= 0");
    check(tile_preds.size() == tile_labels.size(), Error::Kind::DimensionMismatch,
          "tile preds/labels length mismatch");
    double loss = bce(slide_pred, slide_label);
    if (!tile_preds.empty()) {
        double tile_loss = 0.0;
        for (size_t i = 0; i < tile_preds.size(); ++i)
            tile_loss += bce(tile_preds[i], tile_labels[i]);
        loss += lambda_tile * tile_loss / static_cast<double>(tile_preds.size());
    }
    return loss;
}

BagForward forward_bag(const MilParams& p, const feat::EmbeddingMatrix& emb,
                       const std::vector<size_t>& rows, int k) {
    BagForward f;
    f.scores = instance_scores(p, emb, rows);
    f.topk = select_topk(f.scores, k);
    std::vector<size_t> sel_rows(f.topk.size());
    for (size_t i = 0; i < f.topk.size(); ++i) sel_rows[i] = rows[f.topk[i]];
    f.att = attention_aggregate(p, emb, sel_rows);
    f.slide_logit = p.g_bias;
    for (int d = 0; d < p.dim; ++d) f.slide_logit += p.g[d] * f.att.z[d];
    f.slide_prob = sigmoid(f.slide_logit);
    return f;
}

void Gradients::add_scaled(const Gradients& o, double s) {
    for (size_t i = 0; i < V.size(); ++i) V[i] += s * o.V[i];
    for (size_t i = 0; i < U.size(); ++i) U[i] += s * o.U[i];
    for (size_t i = 0; i < w.size(); ++i) w[i] += s * o.w[i];
    for (size_t i = 0; i < g.size(); ++i) g[i] += s * o.g[i];
    g_bias += s * o.g_bias;
}

void slide_backward(const MilParams& p, const BagForward& fwd, int slide_label, double scale,
                    Gradients& grads) {
    const int D = p.dim;
    const int L = p.hidden;
    const AttentionCache& c = fwd.att;
    const int k = c.k;

    const double dlogit = scale * bce_dlogit(fwd.slide_logit, slide_label);
    if (dlogit == 0.0) return;

    for (int d = 0; d < D; ++d) grads.g[d] += dlogit * c.z[d];
    grads.g_bias += dlogit;

    // dz = dlogit * g; dalpha_i = dz . h_i
    std::vector<double> dalpha(k, 0.0);
    for (int i = 0; i < k; ++i) {
        const double* h = c.h.data() + static_cast<size_t>(i) * D;
        double acc = 0.0;
        for (int d = 0; d < D; ++d) acc += p.g[d] * h[d];
        dalpha[i] = dlogit * acc;
    }

    // Softmax backward: de_i = alpha_i * (dalpha_i - sum_j alpha_j dalpha_j)
    double inner = 0.0;
    for (int i = 0; i < k; ++i) inner += c.alpha[i] * dalpha[i];
    std::vector<double> de(k);
    for (int i = 0; i < k; ++i) de[i] = c.alpha[i] * (dalpha[i] - inner);

    // Hidden rows are written by exactly one l each, so the loop nest runs
    // l-outer and in parallel; per-slot accumulation order over i is fixed.
    const size_t acc_work = static_cast<size_t>(k) * L * D;
#pragma omp parallel for schedule(static) if (acc_work >= 16384)
    for (int l = 0; l < L; ++l) {
        double gw = 0.0;
        double* gV = grads.V.data() + static_cast<size_t>(l) * D;
        double* gU = grads.U.data() + static_cast<size_t>(l) * D;
        for (int i = 0; i < k; ++i) {
            const double* h = c.h.data() + static_cast<size_t>(i) * D;
            const double tv = c.tanh_v[static_cast<size_t>(i) * L + l];
            const double su = c.sig_u[static_cast<size_t>(i) * L + l];
            gw += de[i] * c.gate[static_cast<size_t>(i) * L + l];
            const double dgate = de[i] * p.w[l];
            const double dpre_v = dgate * su * (1.0 - tv * tv);
            const double dpre_u = dgate * tv * su * (1.0 - su);
            for (int d = 0; d < D; ++d) {
                gV[d] += dpre_v * h[d];
                gU[d] += dpre_u * h[d];
            }
        }
        grads.w[l] += gw;
    }
}

void tile_backward(const MilParams& p, const float* tiles, size_t n, const int* labels,
                   double scale, Gradients& grads) {
    if (n == 0) return;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const float* row = tiles + i * static_cast<size_t>(p.dim);
        double logit = p.g_bias;
        for (int d = 0; d < p.dim; ++d) logit += p.g[d] * static_cast<double>(row[d]);
        const double dlogit = scale * inv_n * bce_dlogit(logit, labels[i]);
        if (dlogit == 0.0) continue;
        for (int d = 0; d < p.dim; ++d) grads.g[d] += dlogit * static_cast<double>(row[d]);
        grads.g_bias += dlogit;
    }
}

Gradients backward(const MilParams& p, const feat::EmbeddingMatrix& emb,
                   const std::vector<size_t>& rows, int slide_label, const float* tiles,
                   size_t n_tiles, const int* tile_labels, double lambda_tile, int k) {
    Gradients grads(p);
    const BagForward fwd = forward_bag(p, emb, rows, k);
    slide_backward(p, fwd, slide_label, 1.0, grads);
    tile_backward(p, tiles, n_tiles, tile_labels, lambda_tile, grads);
    return grads;
}

size_t QueuePair::total(int polarity) const {
    const auto& side = polarity ? confident_positives : hard_negatives;
    size_t n = 0;
    for (const auto& [_, entries] : side) n += entries.size();
    return n;
}

void update_queues(QueuePair& queues, const std::string& slide_id, int slide_label,
                   const std::vector<double>& scores, const std::vector<std::string>& ids) {
    check(scores.size() == ids.size(), Error::Kind::DimensionMismatch,
          "queue update: scores/ids length mismatch");
    const std::vector<int> top = select_topk(scores, queues.capacity);
    std::vector<QueueEntry> entries;
    entries.reserve(top.size());
    for (int idx : top) entries.push_back({ids[idx], scores[idx]});
    auto& side = slide_label ? queues.confident_positives : queues.hard_negatives;
    side[slide_id] = std::move(entries);
}

// ---- Adam ----

namespace {

struct AdamState {
    std::vector<double> m, v;
    explicit AdamState(size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& param, const std::vector<double>& grad, double lr, double b1,
              double b2, double eps, double bc1, double bc2) {
        for (size_t i = 0; i < param.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            param[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
};

struct Adam {
    AdamState sV, sU, sw, sg;
    double m_bias = 0.0, v_bias = 0.0;
    int t = 0;

    explicit Adam(const MilParams& p)
        : sV(p.V.size()), sU(p.U.size()), sw(p.w.size()), sg(p.g.size()) {}

    void step(MilParams& p, const Gradients& grads, const TrainConfig& cfg) {
        ++t;
        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
        sV.step(p.V, grads.V, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1, bc2);
        sU.step(p.U, grads.U, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1, bc2);
        sw.step(p.w, grads.w, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1, bc2);
        sg.step(p.g, grads.g, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1, bc2);
        m_bias = cfg.adam_beta1 * m_bias + (1.0 - cfg.adam_beta1) * grads.g_bias;
        v_bias = cfg.adam_beta2 * v_bias + (1.0 - cfg.adam_beta2) * grads.g_bias * grads.g_bias;
        p.g_bias -= cfg.lr * (m_bias / bc1) / (std::sqrt(v_bias / bc2) + cfg.adam_eps);
    }
};

}  // namespace

// ---- training ----

namespace {

// Draw one queue entry of the given polarity; map iteration order (slide id
// asc) keeps the flattening deterministic.
const QueueEntry* draw_queue_entry(const QueuePair& queues, int polarity, Rng& rng) {
    const auto& side = polarity ? queues.confident_positives : queues.hard_negatives;
    size_t total = 0;
    for (const auto& [_, entries] : side) total += entries.size();
    if (total == 0) return nullptr;
    size_t pick = rng.below(total);
    for (const auto& [_, entries] : side) {
        if (pick < entries.size()) return &entries[pick];
        pick -= entries.size();
    }
    return nullptr;
}

}  // namespace

TrainResult train(const std::vector<feat::Bag>& bags, const feat::EmbeddingMatrix& emb,
                  const TrainConfig& cfg, const OnlineC3p* online,
                  const LabeledTiles* offline_tiles, const std::vector<feat::Bag>* val_bags,
                  const LabeledTiles* val_tiles) {
    cfg.validate();
    check(!bags.empty(), Error::Kind::InvalidArgument, "train needs at least one bag");
    if (cfg.c3p_mode == TrainConfig::C3pMode::Online) {
        check(online != nullptr && online->bank != nullptr && online->tile_image != nullptr,
              Error::Kind::Config, "online c3p mode needs a cell bank and a tile image provider");
        check(online->feat_dim == emb.dim, Error::Kind::Config, "online c3p featurizer dim ",
              online->feat_dim, " must equal embedding dim ", emb.dim);
    }
    if (cfg.c3p_mode == TrainConfig::C3pMode::Offline) {
        check(offline_tiles != nullptr && offline_tiles->emb != nullptr &&
                  !offline_tiles->rows.empty(),
              Error::Kind::Config, "offline c3p mode needs a pre-embedded pasted tile set");
        check(offline_tiles->emb->dim == emb.dim, Error::Kind::Config,
              "offline tile embeddings must match bag embedding dim");
    }

    TrainResult result;
    result.params = init_params(emb.dim, cfg.hidden, cfg.seed);
    result.queues.capacity = cfg.queue_capacity;

    Rng rng(splitmix64(cfg.seed ^ 0x7EA1A55AA55AULL));
    Adam adam(result.params);

    std::vector<size_t> order(bags.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Seeded shuffle.
        for (size_t i = 0; i + 1 < order.size(); ++i) {
            const size_t j = i + rng.below(order.size() - i);
            std::swap(order[i], order[j]);
        }

        double epoch_loss = 0.0;
        int n_steps = 0;
        for (size_t begin = 0; begin < order.size(); begin += cfg.slide_batch) {
            const size_t end = std::min(begin + cfg.slide_batch, order.size());
            const double inv_batch = 1.0 / static_cast<double>(end - begin);

            Gradients grads(result.params);
            double slide_loss = 0.0;
            std::vector<std::pair<const feat::Bag*, std::vector<double>>> step_scores;
            for (size_t bi = begin; bi < end; ++bi) {
                const feat::Bag& bag = bags[order[bi]];
                if (bag.rows.empty()) continue;
                const BagForward fwd = forward_bag(result.params, emb, bag.rows, cfg.k);
                slide_loss += inv_batch * bce(fwd.slide_prob, bag.label);
                slide_backward(result.params, fwd, bag.label, inv_batch, grads);
                step_scores.emplace_back(&bag, fwd.scores);
            }

            // Tile batch for the combined loss.
            double tile_loss = 0.0;
            size_t n_tiles = 0;
            std::vector<float> tile_rows;
            std::vector<int> tile_labels;
            if (cfg.c3p_mode == TrainConfig::C3pMode::Offline) {
                for (int j = 0; j < cfg.tile_batch; ++j) {
                    const size_t pick = rng.below(offline_tiles->rows.size());
                    const float* row = offline_tiles->emb->row(offline_tiles->rows[pick]);
                    tile_rows.insert(tile_rows.end(), row, row + emb.dim);
                    tile_labels.push_back(offline_tiles->labels[pick]);
                }
            } else if (cfg.c3p_mode == TrainConfig::C3pMode::Online) {
                for (int j = 0; j < cfg.tile_batch; ++j) {
                    const int polarity = j % 2 == 0 ? 1 : 0;
                    const QueueEntry* entry = draw_queue_entry(result.queues, polarity, rng);
                    if (!entry) continue;  // queue side still empty
                    const RasterImage canvas = online->tile_image(entry->id);
                    const c3p::PastedTile tile = c3p::apply_c3p(canvas, entry->id, polarity,
                                                                *online->bank, online->policy,
                                                                rng);
                    const std::vector<float> h =
                        feat::toy_featurizer(tile.image, online->feat_dim, online->feat_seed);
                    tile_rows.insert(tile_rows.end(), h.begin(), h.end());
                    tile_labels.push_back(tile.label);
                }
            }
            n_tiles = tile_labels.size();
            if (n_tiles > 0 && cfg.lambda_tile > 0.0) {
                for (size_t j = 0; j < n_tiles; ++j) {
                    const double prob = instance_score(
                        result.params, tile_rows.data() + j * static_cast<size_t>(emb.dim));
                    tile_loss += bce(prob, tile_labels[j]);
                }
                tile_loss /= static_cast<double>(n_tiles);
                tile_backward(result.params, tile_rows.data(), n_tiles, tile_labels.data(),
                              cfg.lambda_tile, grads);
            }

            adam.step(result.params, grads, cfg);
            epoch_loss += slide_loss + cfg.lambda_tile * tile_loss;
            ++n_steps;

            for (const auto& [bag, scores] : step_scores) {
                update_queues(result.queues, bag->slide_id, bag->label, scores,
                              bag->instance_ids);
            }
        }

        TrainLogEntry entry;
        entry.epoch = epoch;
        entry.loss = n_steps > 0 ? epoch_loss / n_steps : 0.0;
        if (val_bags && !val_bags->empty()) {
            std::vector<double> s;
            std::vector<int> y;
            for (const auto& bag : *val_bags) {
                if (bag.rows.empty()) continue;
                s.push_back(bag_slide_score(result.params, emb, bag.rows, cfg.k));
                y.push_back(bag.label);
            }
            entry.slide_auc_val = auc(s, y);
        }
        if (val_tiles && val_tiles->emb && !val_tiles->rows.empty()) {
            const std::vector<double> s =
                instance_scores(result.params, *val_tiles->emb, val_tiles->rows);
            entry.tile_auc_val = auc(s, val_tiles->labels);
        }
        result.log.push_back(std::move(entry));
    }
    return result;
}

// ---- evaluation ----

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check(scores.size() == labels.size() && !scores.empty(), Error::Kind::InvalidArgument,
          "auc needs equal-length, non-empty scores and labels");
    size_t n_pos = 0;
    for (int y : labels) {
        check(y == 0 || y == 1, Error::Kind::InvalidArgument, "auc labels must be 0/1");
        n_pos += y;
    }
    const size_t n_neg = labels.size() - n_pos;
    check(n_pos > 0 && n_neg > 0, Error::Kind::InvalidArgument,
          "auc needs both classes present (", n_pos, " positives, ", n_neg, " negatives)");

    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Average ranks over tie groups, then the Mann-Whitney statistic.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i + 1;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
        for (size_t t = i; t < j; ++t) {
            if (labels[idx[t]]) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double bag_slide_score(const MilParams& p, const feat::EmbeddingMatrix& emb,
                       const std::vector<size_t>& rows, int k) {
    return forward_bag(p, emb, rows, k).slide_prob;
}

EvalReport evaluate(const MilParams& p, const std::vector<feat::Bag>& bags,
                    const feat::EmbeddingMatrix& emb, const LabeledTiles& tiles, int k) {
    EvalReport rep;
    std::vector<double> slide_scores;
    std::vector<int> slide_labels;
    for (const auto& bag : bags) {
        if (bag.rows.empty()) continue;
        slide_scores.push_back(bag_slide_score(p, emb, bag.rows, k));
        slide_labels.push_back(bag.label);
    }
    rep.n_bags = slide_scores.size();
    rep.slide_auc = auc(slide_scores, slide_labels);
    check(tiles.emb != nullptr && !tiles.rows.empty(), Error::Kind::InvalidArgument,
          "evaluate needs a labeled tile set");
    const std::vector<double> tile_scores = instance_scores(p, *tiles.emb, tiles.rows);
    rep.tile_auc = auc(tile_scores, tiles.labels);
    rep.n_tiles = tiles.rows.size();
    return rep;
}

// ---- serialization ----

std::string params_to_json(const MilParams& p, uint64_t seed) {
    ordered_json j;
    j["dim"] = p.dim;
    j["hidden"] = p.hidden;
    j["seed"] = seed;
    j["V"] = p.V;
    j["U"] = p.U;
    j["w"] = p.w;
    j["g"] = p.g;
    j["g_bias"] = p.g_bias;
    return j.dump(2) + "\n";
}

MilParams params_from_json(const std::string& text, const std::string& origin,
                           uint64_t* seed_out) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        raise(Error::Kind::Format, "invalid model JSON in ", origin, ": ", e.what());
    }
    MilParams p;
    try {
        p.dim = j.at("dim").get<int>();
        p.hidden = j.at("hidden").get<int>();
        if (seed_out) *seed_out = j.at("seed").get<uint64_t>();
        p.V = j.at("V").get<std::vector<double>>();
        p.U = j.at("U").get<std::vector<double>>();
        p.w = j.at("w").get<std::vector<double>>();
        p.g = j.at("g").get<std::vector<double>>();
        p.g_bias = j.at("g_bias").get<double>();
    } catch (const nlohmann::json::exception& e) {
        raise(Error::Kind::Format, "model field error in ", origin, ": ", e.what());
    }
    check(p.dim >= 1 && p.hidden >= 1, Error::Kind::Format, "bad dims in model ", origin);
    check(p.V.size() == static_cast<size_t>(p.dim) * p.hidden &&
              p.U.size() == static_cast<size_t>(p.dim) * p.hidden &&
              p.w.size() == static_cast<size_t>(p.hidden) &&
              p.g.size() == static_cast<size_t>(p.dim),
          Error::Kind::Format, "parameter shapes inconsistent in model ", origin);
    for (const auto* vec : {&p.V, &p.U, &p.w, &p.g}) {
        for (double v : *vec)
            check(std::isfinite(v), Error::Kind::Format, "non-finite parameter in ", origin);
    }
    check(std::isfinite(p.g_bias), Error::Kind::Format, "non-finite parameter in ", origin);
    return p;
}

std::string log_to_jsonl(const std::vector<TrainLogEntry>& log) {
    std::ostringstream out;
    for (const auto& e : log) {
        ordered_json j;
        j["epoch"] = e.epoch;
        j["loss"] = e.loss;
        j["slide_auc_val"] = e.slide_auc_val ? ordered_json(*e.slide_auc_val) : ordered_json();
        j["tile_auc_val"] = e.tile_auc_val ? ordered_json(*e.tile_auc_val) : ordered_json();
        out << j.dump() << "\n";
    }
    return out.str();
}

}  // namespace cytoforge::mil
