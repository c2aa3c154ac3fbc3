#pragma once

#include <map>
#include <string>
#include <vector>

namespace dakd {

// Frame f takes the score of segment floor(f * n_s / n_f).
std::vector<double> expand_to_frames(const std::vector<double>& segment_scores, int n_f);

// Mann-Whitney AUC: probability a random positive outscores a random
// negative, ties counted one half. Requires both classes present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// AP over the score-sorted sweep, ties broken by stable original order.
// Requires at least one positive.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

struct PerClassEntry {
    std::string anomaly_class;
    double auc = 0.0;
    int videos = 0;
};

// Per-class AUC: frames of class-c anomalous test videos plus all normal
// test videos. Inputs are per-video (class tag, frame scores, frame labels).
struct VideoFrameSeries {
    std::string video_id;
    std::string anomaly_class;  // empty for normal videos
    std::vector<int> labels;
    std::vector<double> scores;
};

std::vector<PerClassEntry> per_class_report(const std::vector<VideoFrameSeries>& videos);

}  // namespace dakd
