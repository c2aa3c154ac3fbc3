#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dakd/errors.hpp"
#include "dakd/metrics.hpp"
#include "dakd/rng.hpp"

using namespace dakd;

namespace {

// O(n^2) pairwise Mann-Whitney oracle, ties counted one half.
double brute_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    long pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

// Brute-force AP: stable descending sweep, AP = sum (R_n - R_{n-1}) * P_n.
double brute_ap(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    const double total_pos = std::count(labels.begin(), labels.end(), 1);
    double tp = 0.0, ap = 0.0, prev_recall = 0.0;
    for (size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] == 1) tp += 1.0;
        const double precision = tp / static_cast<double>(rank + 1);
        const double recall = tp / total_pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

}  // namespace

TEST_CASE("expand_to_frames follows the floor map") {
    CHECK(expand_to_frames({0.2, 0.8}, 4) == std::vector<double>{0.2, 0.2, 0.8, 0.8});
    CHECK(expand_to_frames({0.2, 0.8}, 3) == std::vector<double>{0.2, 0.2, 0.8});
    CHECK(expand_to_frames({0.7}, 5) == std::vector<double>(5, 0.7));
    // Frame f maps to segment floor(f * n_s / n_f), checked directly.
    const std::vector<double> seg = {0.0, 0.25, 0.5, 0.75};
    const auto frames = expand_to_frames(seg, 11);
    REQUIRE(frames.size() == 11);
    for (int f = 0; f < 11; ++f) CHECK(frames[f] == seg[f * 4 / 11]);
}

TEST_CASE("roc_auc trivial cases") {
    CHECK(roc_auc({0.9, 0.1}, {1, 0}) == 1.0);
    CHECK(roc_auc({0.9, 0.1}, {0, 1}) == 0.0);
    CHECK(roc_auc({0.5, 0.5}, {1, 0}) == 0.5);
    CHECK_THROWS_AS(roc_auc({0.5, 0.6}, {1, 1}), DataError);
    CHECK_THROWS_AS(roc_auc({0.5, 0.6}, {0, 0}), DataError);
}

TEST_CASE("average_precision trivial cases") {
    CHECK(average_precision({0.9, 0.2, 0.1}, {1, 0, 0}) == 1.0);
    CHECK(average_precision({0.9, 0.1}, {0, 1}) == 0.5);
    CHECK(average_precision({0.3, 0.6}, {1, 1}) == 1.0);
    CHECK_THROWS_AS(average_precision({0.5, 0.6}, {0, 0}), DataError);
}

TEST_CASE("metrics match the brute-force oracles on random labelings") {
    Rng rng(97);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(199));
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (auto& s : scores) {
            s = rng.uniform();
            // Quantize some trials to force ties.
            if (trial % 3 == 0) s = std::round(s * 8.0) / 8.0;
        }
        int pos = 0;
        for (auto& l : labels) pos += (l = rng.uniform() < 0.4 ? 1 : 0);
        if (pos == 0) labels[0] = 1;
        if (pos == n) labels[0] = 0;
        CHECK(std::abs(roc_auc(scores, labels) - brute_auc(scores, labels)) <= 1e-12);
        CHECK(std::abs(average_precision(scores, labels) - brute_ap(scores, labels)) <= 1e-12);
    }
}

TEST_CASE("roc_auc is invariant under strictly monotone transforms") {
    Rng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 5 + static_cast<int>(rng.uniform_int(60));
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (auto& s : scores) s = rng.uniform(-2.0, 2.0);
        for (auto& l : labels) l = rng.uniform() < 0.5 ? 1 : 0;
        labels[0] = 1;
        labels[1] = 0;
        const double base = roc_auc(scores, labels);
        std::vector<double> warped(n), shifted(n);
        for (int i = 0; i < n; ++i) {
            warped[i] = std::tanh(scores[i]) + 0.001 * scores[i];
            shifted[i] = 3.0 * scores[i] + 7.0;
        }
        CHECK(roc_auc(warped, labels) == doctest::Approx(base).epsilon(1e-12));
        CHECK(roc_auc(shifted, labels) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("roc_auc complement identity") {
    Rng rng(103);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 4 + static_cast<int>(rng.uniform_int(40));
        std::vector<double> scores(n);
        std::vector<int> labels(n), flipped(n);
        for (auto& s : scores) s = std::round(rng.uniform() * 10.0) / 10.0;
        for (int i = 0; i < n; ++i) labels[i] = rng.uniform() < 0.5 ? 1 : 0;
        labels[0] = 1;
        labels[1] = 0;
        for (int i = 0; i < n; ++i) flipped[i] = 1 - labels[i];
        CHECK(roc_auc(scores, labels) + roc_auc(scores, flipped) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("per-class report matches a brute-force recomputation") {
    Rng rng(5);
    std::vector<VideoFrameSeries> frames;
    auto add = [&](const std::string& id, const std::string& cls, int n_f, bool high) {
        VideoFrameSeries v;
        v.video_id = id;
        v.anomaly_class = cls;
        v.labels.assign(n_f, 0);
        v.scores.resize(n_f);
        for (int f = 0; f < n_f; ++f) v.scores[f] = rng.uniform() * 0.3 + (high ? 0.5 : 0.0);
        if (!cls.empty())
            for (int f = n_f / 4; f < n_f / 2; ++f) v.labels[f] = 1;
        frames.push_back(std::move(v));
    };
    add("a0", "c0", 40, true);
    add("a1", "c0", 30, true);
    add("a2", "c1", 50, false);
    add("n0", "", 40, false);
    add("n1", "", 60, false);

    const auto report = per_class_report(frames);
    REQUIRE(report.size() == 2);
    for (const auto& entry : report) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const auto& v : frames) {
            if (v.anomaly_class != entry.anomaly_class && !v.anomaly_class.empty()) continue;
            scores.insert(scores.end(), v.scores.begin(), v.scores.end());
            labels.insert(labels.end(), v.labels.begin(), v.labels.end());
        }
        CHECK(std::abs(entry.auc - brute_auc(scores, labels)) <= 1e-12);
        CHECK(entry.videos == (entry.anomaly_class == "c0" ? 2 : 1));
    }
}
