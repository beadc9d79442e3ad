#include "cytoforge/knn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cytoforge/rng.hpp"

namespace cytoforge::knn {

namespace {

// Normalize a float row into a double buffer; zero vectors stay zero.
void normalize_into(const float* src, int dim, double* dst) {
    double norm = 0.0;
    for (int d = 0; d < dim; ++d) {
        const double v = src[d];
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (int d = 0; d < dim; ++d) dst[d] = static_cast<double>(src[d]) / norm;
    } else {
        std::fill(dst, dst + dim, 0.0);
    }
}

}  // namespace

KnnIndex KnnIndex::fit(const feat::EmbeddingMatrix& train, const std::vector<int>& labels) {
    check(train.rows() >= 1, Error::Kind::InvalidArgument, "k-NN needs at least 1 training point");
    check(train.rows() == labels.size(), Error::Kind::DimensionMismatch,
          "training labels must match embedding rows");
    KnnIndex idx;
    idx.dim_ = train.dim;
    idx.labels_ = labels;
    idx.normed_.resize(train.rows() * static_cast<size_t>(train.dim));
    for (size_t i = 0; i < train.rows(); ++i) {
        normalize_into(train.row(i), train.dim, idx.normed_.data() + i * train.dim);
    }
    std::set<int> classes(labels.begin(), labels.end());
    idx.class_set_.assign(classes.begin(), classes.end());
    return idx;
}

int KnnIndex::predict(const float* query, int k) const {
    check(k >= 1 && static_cast<size_t>(k) <= size(), Error::Kind::InvalidArgument, "k=", k,
          " out of range [1,", size(), "]");
    std::vector<double> q(dim_);
    normalize_into(query, dim_, q.data());

    struct Neighbor {
        double sim;
        int label;
    };
    std::vector<Neighbor> nbrs(size());
    for (size_t i = 0; i < size(); ++i) {
        const double* p = point(i);
        double sim = 0.0;
        for (int d = 0; d < dim_; ++d) sim += q[d] * p[d];
        nbrs[i] = {sim, labels_[i]};
    }
    // (similarity desc, class asc): invariant under training-row order.
    std::partial_sort(nbrs.begin(), nbrs.begin() + k, nbrs.end(),
                      [](const Neighbor& a, const Neighbor& b) {
                          if (a.sim != b.sim) return a.sim > b.sim;
                          return a.label < b.label;
                      });

    std::map<int, std::pair<int, double>> votes;  // class -> (count, sim sum)
    for (int i = 0; i < k; ++i) {
        auto& v = votes[nbrs[i].label];
        v.first += 1;
        v.second += nbrs[i].sim;
    }
    int best_class = votes.begin()->first;
    std::pair<int, double> best = votes.begin()->second;
    for (auto it = std::next(votes.begin()); it != votes.end(); ++it) {
        const auto& v = it->second;
        if (v.first > best.first || (v.first == best.first && v.second > best.second)) {
            best = v;
            best_class = it->first;
        }
    }
    return best_class;
}

std::vector<int> KnnIndex::predict_batch(const feat::EmbeddingMatrix& queries, int k) const {
    check(queries.dim == dim_, Error::Kind::DimensionMismatch, "query dim ", queries.dim,
          " does not match index dim ", dim_);
    check(k >= 1 && static_cast<size_t>(k) <= size(), Error::Kind::InvalidArgument, "k=", k,
          " out of range [1,", size(), "]");
    std::vector<int> preds(queries.rows());
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < static_cast<long long>(queries.rows()); ++i) {
        preds[i] = predict(queries.row(i), k);
    }
    return preds;
}

F1Report f1_report(const std::vector<int>& predictions, const std::vector<int>& labels,
                   const std::vector<int>& class_set) {
    check(!predictions.empty() && predictions.size() == labels.size(),
          Error::Kind::InvalidArgument, "predictions and labels must be equal-length, non-empty");
    const std::set<int> classes(class_set.begin(), class_set.end());
    for (int y : labels)
        check(classes.count(y), Error::Kind::InvalidArgument, "label ", y, " outside class set");
    for (int p : predictions)
        check(classes.count(p), Error::Kind::InvalidArgument, "prediction ", p,
              " outside class set");

    F1Report rep;
    double weighted = 0.0;
    size_t total = 0;
    for (int c : classes) {
        size_t tp = 0, fp = 0, fn = 0, support = 0;
        for (size_t i = 0; i < labels.size(); ++i) {
            const bool is_c = labels[i] == c;
            const bool pred_c = predictions[i] == c;
            if (is_c) ++support;
            if (is_c && pred_c) ++tp;
            if (!is_c && pred_c) ++fp;
            if (is_c && !pred_c) ++fn;
        }
        const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
        const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
        const double f1 =
            precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
        rep.per_class_f1[c] = f1;
        rep.support[c] = support;
        weighted += static_cast<double>(support) * f1;
        total += support;
    }
    rep.weighted_f1 = total == 0 ? 0.0 : weighted / static_cast<double>(total);
    return rep;
}

SweepResult sweep_k(const KnnIndex& index, const feat::EmbeddingMatrix& val,
                    const std::vector<int>& val_labels, const std::vector<int>& k_grid) {
    check(!k_grid.empty(), Error::Kind::InvalidArgument, "k grid must be non-empty");
    check(val.rows() >= 1, Error::Kind::InvalidArgument, "validation set must be non-empty");
    check(val.rows() == val_labels.size(), Error::Kind::DimensionMismatch,
          "validation labels must match rows");

    std::set<int> grid(k_grid.begin(), k_grid.end());
    SweepResult res;
    bool have_best = false;
    for (int k : grid) {
        const std::vector<int> preds = index.predict_batch(val, k);
        F1Report rep = f1_report(preds, val_labels, index.class_set());
        res.weighted_f1_by_k[k] = rep.weighted_f1;
        // Strict > and ascending grid order give ties to the smaller k.
        if (!have_best || rep.weighted_f1 > res.report.weighted_f1) {
            have_best = true;
            res.best_k = k;
            res.report = std::move(rep);
        }
    }
    return res;
}

std::pair<std::vector<size_t>, std::vector<size_t>> split_train_val(size_t n, double train_frac,
                                                                    uint64_t seed) {
    check(n >= 2, Error::Kind::InvalidArgument, "need at least 2 rows to split");
    check(train_frac > 0.0 && train_frac < 1.0, Error::Kind::InvalidArgument,
          "train_frac must be in (0,1)");
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(splitmix64(seed ^ 0x5917A7ULL));
    for (size_t i = 0; i + 1 < n; ++i) {
        const size_t j = i + rng.below(n - i);
        std::swap(order[i], order[j]);
    }
    size_t n_train = static_cast<size_t>(std::floor(train_frac * static_cast<double>(n)));
    n_train = std::max<size_t>(1, std::min(n_train, n - 1));
    return {std::vector<size_t>(order.begin(), order.begin() + n_train),
            std::vector<size_t>(order.begin() + n_train, order.end())};
}

}  // namespace cytoforge::knn
