#pragma once

#include "dakd/dataio.hpp"
#include "dakd/metrics.hpp"

namespace dakd {

struct EvalResult {
    double auc = 0.0;
    double ap = 0.0;
    std::vector<PerClassEntry> per_class;
    std::vector<VideoFrameSeries> frames;  // per test video, frame scores + labels
};

// Scores every test video with the checkpointed model (single-stream models
// consume the manifest's designated student stream), expands segment scores
// to frames and computes the frame-level metrics.
EvalResult evaluate_model(const Checkpoint& ckpt, const FeatureStore& dataset);

}  // namespace dakd
