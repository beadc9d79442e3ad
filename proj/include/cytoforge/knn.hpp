#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cytoforge/features.hpp"

namespace cytoforge::knn {

// Cosine k-NN over L2-normalized copies of the training embeddings.
class KnnIndex {
public:
    static KnnIndex fit(const feat::EmbeddingMatrix& train, const std::vector<int>& labels);

    int dim() const { return dim_; }
    size_t size() const { return labels_.size(); }
    const std::vector<int>& class_set() const { return class_set_; }
    const std::vector<int>& labels() const { return labels_; }
    const double* point(size_t i) const { return normed_.data() + i * static_cast<size_t>(dim_); }

    // Majority vote among the k most similar points; neighbor order is
    // (similarity desc, class asc); vote ties break by summed similarity,
    // then smaller class id.
    int predict(const float* query, int k) const;
    std::vector<int> predict_batch(const feat::EmbeddingMatrix& queries, int k) const;

private:
    int dim_ = 0;
    std::vector<double> normed_;
    std::vector<int> labels_;
    std::vector<int> class_set_;
};

struct F1Report {
    std::map<int, double> per_class_f1;
    std::map<int, size_t> support;
    double weighted_f1 = 0.0;
};

F1Report f1_report(const std::vector<int>& predictions, const std::vector<int>& labels,
                   const std::vector<int>& class_set);

struct SweepResult {
    int best_k = 0;
    F1Report report;
    std::map<int, double> weighted_f1_by_k;
};

// Evaluates each k on the validation set, returns the argmax of weighted F1
// (ties to the smaller k). Duplicate grid entries collapse.
SweepResult sweep_k(const KnnIndex& index, const feat::EmbeddingMatrix& val,
                    const std::vector<int>& val_labels, const std::vector<int>& k_grid);

// Seeded 75/25-style split of n row indices (plain random, not stratified).
std::pair<std::vector<size_t>, std::vector<size_t>> split_train_val(size_t n, double train_frac,
                                                                    uint64_t seed);

inline const std::vector<int> kDefaultKGrid = {1, 3, 5, 7, 11, 15, 21, 31};

}  // namespace cytoforge::knn
