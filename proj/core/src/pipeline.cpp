#include "dakd/pipeline.hpp"

namespace dakd {

EvalResult evaluate_model(const Checkpoint& ckpt, const FeatureStore& dataset) {
    const bool single_stream = ckpt.spec.streams() == 1;
    const int n_streams = static_cast<int>(dataset.manifest.stream_ids.size());
    int stream_idx = 0;
    if (single_stream) {
        stream_idx = ckpt.stream >= 0 ? ckpt.stream : dataset.manifest.student_stream_index();
        if (stream_idx >= n_streams)
            throw DataError("eval: checkpoint stream index out of range for dataset");
    } else if (ckpt.spec.streams() != n_streams) {
        throw DataError("eval: checkpoint stream count does not match dataset");
    }

    ModelRunner runner(ckpt.spec, ckpt.params, dataset.n_s);
    EvalResult result;
    std::vector<double> all_scores;
    std::vector<int> all_labels;
    for (const auto& v : dataset.videos) {
        if (v.record.split != "test") continue;
        const ForwardResult fwd = single_stream
                                      ? runner.forward({v.streams[stream_idx]})
                                      : runner.forward(v.streams);
        VideoFrameSeries series;
        series.video_id = v.record.id;
        series.anomaly_class = v.record.anomaly_class;
        series.scores = expand_to_frames(fwd.scores, v.record.frames);
        series.labels.assign(v.record.frames, 0);
        for (auto [a, b] : v.record.intervals)
            for (int f = a; f < b; ++f) series.labels[f] = 1;
        all_scores.insert(all_scores.end(), series.scores.begin(), series.scores.end());
        all_labels.insert(all_labels.end(), series.labels.begin(), series.labels.end());
        result.frames.push_back(std::move(series));
    }
    if (result.frames.empty()) throw DataError("eval: dataset has no test videos");
    result.auc = roc_auc(all_scores, all_labels);
    result.ap = average_precision(all_scores, all_labels);
    result.per_class = per_class_report(result.frames);
    return result;
}

}  // namespace dakd
