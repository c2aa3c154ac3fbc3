#include "dakd/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "dakd/errors.hpp"

namespace dakd {

std::vector<double> expand_to_frames(const std::vector<double>& segment_scores, int n_f) {
    const int n_s = static_cast<int>(segment_scores.size());
    if (n_s < 1 || n_f < 1) throw ShapeError("expand_to_frames: extents must be positive");
    std::vector<double> out(n_f);
    for (int f = 0; f < n_f; ++f)
        out[f] = segment_scores[static_cast<int>(static_cast<int64_t>(f) * n_s / n_f)];
    return out;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("roc_auc: length mismatch");
    const size_t n = scores.size();
    size_t pos = 0;
    for (int y : labels) pos += (y != 0);
    const size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw DataError("roc_auc: both classes required");

    // Midranks over the score ordering.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (size_t k = 0; k < n; ++k)
        if (labels[k] != 0) rank_sum_pos += rank[k];
    const double u = rank_sum_pos - static_cast<double>(pos) * (pos + 1) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("average_precision: length mismatch");
    const size_t n = scores.size();
    size_t pos = 0;
    for (int y : labels) pos += (y != 0);
    if (pos == 0) throw DataError("average_precision: at least one positive required");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    size_t tp = 0;
    for (size_t k = 0; k < n; ++k) {
        if (labels[order[k]] != 0) {
            ++tp;
            const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
            ap += precision / static_cast<double>(pos);  // delta recall = 1/pos per hit
        }
    }
    return ap;
}

std::vector<PerClassEntry> per_class_report(const std::vector<VideoFrameSeries>& videos) {
    std::set<std::string> classes;
    for (const auto& v : videos) {
        if (v.labels.size() != v.scores.size())
            throw ShapeError("per_class_report: label/score length mismatch for " + v.video_id);
        if (!v.anomaly_class.empty()) classes.insert(v.anomaly_class);
    }
    if (classes.empty()) throw DataError("per_class_report: no anomalous classes present");

    std::vector<PerClassEntry> report;
    for (const auto& cls : classes) {
        std::vector<double> scores;
        std::vector<int> labels;
        int count = 0;
        for (const auto& v : videos) {
            const bool take = v.anomaly_class == cls || v.anomaly_class.empty();
            if (!take) continue;
            if (v.anomaly_class == cls) ++count;
            scores.insert(scores.end(), v.scores.begin(), v.scores.end());
            labels.insert(labels.end(), v.labels.begin(), v.labels.end());
        }
        PerClassEntry e;
        e.anomaly_class = cls;
        e.videos = count;
        e.auc = roc_auc(scores, labels);
        report.push_back(e);
    }
    return report;
}

}  // namespace dakd
