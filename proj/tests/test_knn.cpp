#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cytoforge/knn.hpp"
#include "testutil.hpp"

using namespace cytoforge;
using namespace cytoforge::knn;
using cytoforge::feat::EmbeddingMatrix;

namespace {

EmbeddingMatrix make_matrix(const std::vector<std::vector<float>>& rows) {
    EmbeddingMatrix m;
    m.dim = static_cast<int>(rows.empty() ? 0 : rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
        m.ids.push_back("p" + std::to_string(i));
        m.data.insert(m.data.end(), rows[i].begin(), rows[i].end());
    }
    return m;
}

EmbeddingMatrix random_matrix(size_t n, int dim, Rng& rng) {
    EmbeddingMatrix m;
    m.dim = dim;
    for (size_t i = 0; i < n; ++i) m.ids.push_back("p" + std::to_string(i));
    m.data.resize(n * static_cast<size_t>(dim));
    for (auto& v : m.data) v = static_cast<float>(rng.normal());
    return m;
}

// Exhaustive-scan oracle, written from scratch: cosine from raw vectors,
// neighbor order (sim desc, label asc), vote by count then summed similarity
// then smaller class id.
int oracle_predict(const EmbeddingMatrix& train, const std::vector<int>& labels,
                   const float* query, int dim, int k) {
    const size_t n = train.rows();
    auto cosine = [&](const float* a, const float* b) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int d = 0; d < dim; ++d) {
            dot += static_cast<double>(a[d]) * b[d];
            na += static_cast<double>(a[d]) * a[d];
            nb += static_cast<double>(b[d]) * b[d];
        }
        if (na == 0.0 || nb == 0.0) return 0.0;
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    std::vector<std::pair<double, int>> sims(n);
    for (size_t i = 0; i < n; ++i) sims[i] = {cosine(train.row(i), query), labels[i]};
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::map<int, std::pair<int, double>> votes;
    for (int i = 0; i < k; ++i) {
        votes[sims[i].second].first += 1;
        votes[sims[i].second].second += sims[i].first;
    }
    int best = -1;
    std::pair<int, double> best_v{-1, 0.0};
    for (const auto& [cls, v] : votes) {
        if (v.first > best_v.first ||
            (v.first == best_v.first && v.second > best_v.second)) {
            best = cls;
            best_v = v;
        }
    }
    return best;
}

// Independent confusion-matrix F1 oracle.
std::pair<std::map<int, double>, double> oracle_f1(const std::vector<int>& preds,
                                                   const std::vector<int>& labels,
                                                   const std::vector<int>& classes) {
    std::map<int, double> per_class;
    double weighted = 0.0;
    size_t total = labels.size();
    for (int c : classes) {
        int tp = 0, fp = 0, fn = 0, support = 0;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == c) ++support;
            if (preds[i] == c && labels[i] == c) ++tp;
            if (preds[i] == c && labels[i] != c) ++fp;
            if (preds[i] != c && labels[i] == c) ++fn;
        }
        double f1 = 0.0;
        if (2 * tp + fp + fn > 0) f1 = 2.0 * tp / (2.0 * tp + fp + fn);
        per_class[c] = f1;
        weighted += f1 * support;
    }
    return {per_class, weighted / static_cast<double>(total)};
}

}  // namespace

TEST_CASE("knn_predict basics") {
    SUBCASE("single training point always wins at k=1") {
        const EmbeddingMatrix train = make_matrix({{1.0f, 2.0f, 3.0f}});
        const auto index = KnnIndex::fit(train, {5});
        const std::vector<float> q = {-1.0f, 0.5f, 2.0f};
        CHECK(index.predict(q.data(), 1) == 5);
    }
    SUBCASE("query equal to a training point returns its label at k=1") {
        Rng rng(3);
        const EmbeddingMatrix train = random_matrix(20, 8, rng);
        std::vector<int> labels(20);
        for (size_t i = 0; i < 20; ++i) labels[i] = static_cast<int>(i % 3);
        const auto index = KnnIndex::fit(train, labels);
        for (size_t i = 0; i < 20; ++i) {
            CHECK(index.predict(train.row(i), 1) == labels[i]);
        }
    }
    SUBCASE("k out of range is an error") {
        const EmbeddingMatrix train = make_matrix({{1.0f, 0.0f}, {0.0f, 1.0f}});
        const auto index = KnnIndex::fit(train, {0, 1});
        CHECK_THROWS_AS(index.predict(train.row(0), 0), Error);
        CHECK_THROWS_AS(index.predict(train.row(0), 3), Error);
    }
}

TEST_CASE("knn_predict equals the exhaustive-scan oracle (500 train, 50 queries)") {
    Rng rng(11);
    const EmbeddingMatrix train = random_matrix(500, 16, rng);
    std::vector<int> labels(500);
    for (auto& l : labels) l = static_cast<int>(rng.below(4));
    const EmbeddingMatrix queries = random_matrix(50, 16, rng);
    const auto index = KnnIndex::fit(train, labels);
    for (int k : {1, 5, 15}) {
        const auto preds = index.predict_batch(queries, k);
        for (size_t q = 0; q < queries.rows(); ++q) {
            CHECK(preds[q] == oracle_predict(train, labels, queries.row(q), 16, k));
        }
    }
}

TEST_CASE("scale invariance: scaling raw embeddings leaves predictions unchanged") {
    Rng rng(13);
    const EmbeddingMatrix train = random_matrix(200, 12, rng);
    std::vector<int> labels(200);
    for (auto& l : labels) l = static_cast<int>(rng.below(3));
    const EmbeddingMatrix queries = random_matrix(40, 12, rng);

    const auto base = KnnIndex::fit(train, labels);
    for (float scale : {0.25f, 8.0f, 3.7f}) {
        EmbeddingMatrix scaled = train;
        for (auto& v : scaled.data) v *= scale;
        EmbeddingMatrix scaled_q = queries;
        for (auto& v : scaled_q.data) v *= scale;
        const auto index = KnnIndex::fit(scaled, labels);
        for (int k : {1, 7}) {
            CHECK(index.predict_batch(scaled_q, k) == base.predict_batch(queries, k));
        }
    }
}

TEST_CASE("permutation invariance: shuffling training rows never changes predictions") {
    Rng rng(17);
    EmbeddingMatrix train = random_matrix(100, 6, rng);
    // Inject exact duplicates with different labels to exercise tie handling.
    for (int i = 0; i < 10; ++i) {
        for (int d = 0; d < 6; ++d) train.data[i * 6 + d] = train.data[(i + 50) * 6 + d];
    }
    std::vector<int> labels(100);
    for (size_t i = 0; i < 100; ++i) labels[i] = static_cast<int>(rng.below(3));
    const EmbeddingMatrix queries = random_matrix(30, 6, rng);

    const auto base = KnnIndex::fit(train, labels);
    const auto base_preds = base.predict_batch(queries, 5);

    std::vector<size_t> perm(100);
    std::iota(perm.begin(), perm.end(), size_t{0});
    for (int trial = 0; trial < 5; ++trial) {
        for (size_t i = 0; i + 1 < perm.size(); ++i) {
            const size_t j = i + rng.below(perm.size() - i);
            std::swap(perm[i], perm[j]);
        }
        EmbeddingMatrix shuffled;
        shuffled.dim = 6;
        std::vector<int> shuffled_labels;
        for (size_t i = 0; i < 100; ++i) {
            shuffled.ids.push_back(train.ids[perm[i]]);
            const float* row = train.row(perm[i]);
            shuffled.data.insert(shuffled.data.end(), row, row + 6);
            shuffled_labels.push_back(labels[perm[i]]);
        }
        const auto index = KnnIndex::fit(shuffled, shuffled_labels);
        CHECK(index.predict_batch(queries, 5) == base_preds);
    }
}

TEST_CASE("sweep_k") {
    SUBCASE("singleton grid returns that k") {
        Rng rng(19);
        const EmbeddingMatrix train = random_matrix(30, 4, rng);
        std::vector<int> labels(30);
        for (auto& l : labels) l = static_cast<int>(rng.below(2));
        const EmbeddingMatrix val = random_matrix(10, 4, rng);
        std::vector<int> val_labels(10);
        for (auto& l : val_labels) l = static_cast<int>(rng.below(2));
        const auto index = KnnIndex::fit(train, labels);
        const auto res = sweep_k(index, val, val_labels, {1});
        CHECK(res.best_k == 1);
        CHECK(res.weighted_f1_by_k.size() == 1);
    }
    SUBCASE("duplicate grid entries collapse") {
        Rng rng(23);
        const EmbeddingMatrix train = random_matrix(30, 4, rng);
        std::vector<int> labels(30);
        for (auto& l : labels) l = static_cast<int>(rng.below(2));
        const EmbeddingMatrix val = random_matrix(10, 4, rng);
        std::vector<int> val_labels(10);
        for (auto& l : val_labels) l = static_cast<int>(rng.below(2));
        const auto index = KnnIndex::fit(train, labels);
        const auto a = sweep_k(index, val, val_labels, {1, 3, 5});
        const auto b = sweep_k(index, val, val_labels, {5, 1, 3, 3, 1, 5});
        CHECK(a.best_k == b.best_k);
        CHECK(a.report.weighted_f1 == b.report.weighted_f1);
    }
    SUBCASE("constructed case where k=3 beats k=1") {
        // Validation query sits next to a lone wrong-label point; the two
        // next neighbors carry the right label.
        const EmbeddingMatrix train = make_matrix({
            {1.0f, 0.0f},      // label 1, closest (noise)
            {0.95f, 0.31f},    // label 0
            {0.95f, -0.31f},   // label 0
            {-1.0f, 0.0f},     // label 1, far away
        });
        const std::vector<int> labels = {1, 0, 0, 1};
        const EmbeddingMatrix val = make_matrix({{0.999f, 0.01f}});
        const std::vector<int> val_labels = {0};
        const auto index = KnnIndex::fit(train, labels);

        // Verified with the oracle: k=1 predicts 1 (wrong), k=3 predicts 0.
        CHECK(oracle_predict(train, labels, val.row(0), 2, 1) == 1);
        CHECK(oracle_predict(train, labels, val.row(0), 2, 3) == 0);

        const auto res = sweep_k(index, val, val_labels, {1, 3});
        CHECK(res.best_k == 3);
        CHECK(res.report.weighted_f1 == 1.0);
    }
    SUBCASE("empty validation set is an error") {
        const EmbeddingMatrix train = make_matrix({{1.0f, 0.0f}});
        const auto index = KnnIndex::fit(train, {0});
        EmbeddingMatrix val;
        val.dim = 2;
        CHECK_THROWS_AS(sweep_k(index, val, {}, {1}), Error);
    }
}

TEST_CASE("f1_report") {
    SUBCASE("perfect predictions give all ones") {
        const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
        const auto rep = f1_report(labels, labels, {0, 1, 2});
        for (const auto& [cls, f1] : rep.per_class_f1) {
            (void)cls;
            CHECK(f1 == 1.0);
        }
        CHECK(rep.weighted_f1 == 1.0);
    }
    SUBCASE("binary all-flipped predictions give zeros") {
        const std::vector<int> labels = {0, 0, 1, 1};
        const std::vector<int> preds = {1, 1, 0, 0};
        const auto rep = f1_report(preds, labels, {0, 1});
        CHECK(rep.per_class_f1.at(0) == 0.0);
        CHECK(rep.per_class_f1.at(1) == 0.0);
        CHECK(rep.weighted_f1 == 0.0);
    }
    SUBCASE("hand-computed case: preds [1,1,0,0] labels [1,0,0,0]") {
        const std::vector<int> preds = {1, 1, 0, 0};
        const std::vector<int> labels = {1, 0, 0, 0};
        const auto rep = f1_report(preds, labels, {0, 1});
        const auto [oracle_per_class, oracle_weighted] = oracle_f1(preds, labels, {0, 1});
        CHECK(rep.per_class_f1.at(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        CHECK(rep.per_class_f1.at(0) == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(rep.weighted_f1 == doctest::Approx(0.76667).epsilon(1e-4));
        CHECK(rep.per_class_f1.at(0) == doctest::Approx(oracle_per_class.at(0)).epsilon(1e-15));
        CHECK(rep.per_class_f1.at(1) == doctest::Approx(oracle_per_class.at(1)).epsilon(1e-15));
        CHECK(rep.weighted_f1 == doctest::Approx(oracle_weighted).epsilon(1e-15));
    }
    SUBCASE("zero-support class contributes zero weight") {
        const std::vector<int> preds = {0, 0};
        const std::vector<int> labels = {0, 0};
        const auto rep = f1_report(preds, labels, {0, 1, 2});
        CHECK(rep.per_class_f1.at(1) == 0.0);
        CHECK(rep.support.at(1) == 0);
        CHECK(rep.weighted_f1 == 1.0);
    }
    SUBCASE("label outside the class set is an error") {
        CHECK_THROWS_AS(f1_report({0, 1}, {0, 7}, {0, 1}), Error);
        CHECK_THROWS_AS(f1_report({0, 7}, {0, 1}, {0, 1}), Error);
    }
    SUBCASE("random predictions agree with the confusion oracle") {
        Rng rng(29);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<int> preds(50), labels(50);
            for (auto& v : preds) v = static_cast<int>(rng.below(4));
            for (auto& v : labels) v = static_cast<int>(rng.below(4));
            const auto rep = f1_report(preds, labels, {0, 1, 2, 3});
            const auto [oracle_per_class, oracle_weighted] =
                oracle_f1(preds, labels, {0, 1, 2, 3});
            for (int c = 0; c < 4; ++c) {
                CHECK(rep.per_class_f1.at(c) ==
                      doctest::Approx(oracle_per_class.at(c)).epsilon(1e-12));
            }
            CHECK(rep.weighted_f1 == doctest::Approx(oracle_weighted).epsilon(1e-12));
        }
    }
}

TEST_CASE("split_train_val: seeded, reproducible, 75/25") {
    const auto [train_a, val_a] = split_train_val(100, 0.75, 7);
    const auto [train_b, val_b] = split_train_val(100, 0.75, 7);
    CHECK(train_a == train_b);
    CHECK(val_a == val_b);
    CHECK(train_a.size() == 75);
    CHECK(val_a.size() == 25);

    const auto [train_c, val_c] = split_train_val(100, 0.75, 8);
    CHECK(train_a != train_c);

    // Partition property: together they cover 0..99 exactly once.
    std::vector<size_t> all = train_a;
    all.insert(all.end(), val_a.begin(), val_a.end());
    std::sort(all.begin(), all.end());
    for (size_t i = 0; i < 100; ++i) CHECK(all[i] == i);
}
