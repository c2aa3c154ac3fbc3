#include "dakd/refinery.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dakd {

std::vector<double> moving_average(const std::vector<double>& scores, int eps) {
    const int n = static_cast<int>(scores.size());
    if (eps < 1 || eps % 2 == 0) throw DataError("moving_average: width must be odd and positive");
    if (eps > n) throw DataError("moving_average: width exceeds sequence length");
    const int half = eps / 2;
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int o = -half; o <= half; ++o) {
            const int j = std::clamp(i + o, 0, n - 1);  // edge replication
            sum += scores[j];
        }
        out[i] = sum / eps;
    }
    return out;
}

std::vector<double> min_max_normalize(const std::vector<double>& scores) {
    if (scores.empty()) throw DataError("min_max_normalize: empty sequence");
    const auto [mn_it, mx_it] = std::minmax_element(scores.begin(), scores.end());
    const double mn = *mn_it, mx = *mx_it;
    std::vector<double> out(scores.size(), 0.0);
    if (mx > mn)
        for (size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - mn) / (mx - mn);
    return out;
}

PseudoLabelStore build_pseudo_labels(const Checkpoint& teacher, const FeatureStore& dataset,
                                     int eps, bool use_minmax) {
    PseudoLabelStore store;
    store.smoothing_width = eps;
    ModelRunner runner(teacher.spec, teacher.params, dataset.n_s);
    for (const auto& video : dataset.videos) {
        if (video.record.split != "train") continue;
        if (video.record.label == 0) {
            store.labels[video.record.id] = std::vector<double>(dataset.n_s, 0.0);
        } else {
            const auto result = runner.forward(video.streams);
            auto smoothed = moving_average(result.scores, eps);
            store.labels[video.record.id] =
                use_minmax ? min_max_normalize(smoothed) : std::move(smoothed);
        }
    }
    return store;
}

void write_pseudo_labels(const PseudoLabelStore& store, const std::filesystem::path& path,
                         const std::string& fingerprint) {
    std::ofstream out(path);
    if (!out) throw DataError("pseudo labels: cannot write " + path.string());
    out << "# " << fingerprint << "\n";
    out << "# smoothing_width=" << store.smoothing_width << "\n";
    out << "videoId,segmentIndex,label\n";
    out.precision(17);
    for (const auto& [id, labels] : store.labels)
        for (size_t i = 0; i < labels.size(); ++i)
            out << id << ',' << i << ',' << labels[i] << "\n";
}

PseudoLabelStore read_pseudo_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("pseudo labels: cannot open " + path.string());
    PseudoLabelStore store;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string key = "# smoothing_width=";
            if (line.rfind(key, 0) == 0) store.smoothing_width = std::stoi(line.substr(key.size()));
            continue;
        }
        if (!header_seen) {
            if (line != "videoId,segmentIndex,label")
                throw DataError("pseudo labels: unexpected header in " + path.string());
            header_seen = true;
            continue;
        }
        std::istringstream ss(line);
        std::string id, idx, val;
        if (!std::getline(ss, id, ',') || !std::getline(ss, idx, ',') || !std::getline(ss, val))
            throw DataError("pseudo labels: malformed row '" + line + "'");
        auto& vec = store.labels[id];
        const size_t i = std::stoul(idx);
        if (vec.size() <= i) vec.resize(i + 1, 0.0);
        vec[i] = std::stod(val);
    }
    if (!header_seen) throw DataError("pseudo labels: missing header in " + path.string());
    return store;
}

}  // namespace dakd
