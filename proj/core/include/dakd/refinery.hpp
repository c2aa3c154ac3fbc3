#pragma once

#include <map>
#include <string>
#include <vector>

#include "dakd/dataio.hpp"

namespace dakd {

// Moving average of odd width `eps` with edge-replication padding; output
// length equals input length.
std::vector<double> moving_average(const std::vector<double>& scores, int eps);

// (s - min) / (max - min); a constant sequence maps to all zeros.
std::vector<double> min_max_normalize(const std::vector<double>& scores);

// Refined soft labels per video: anomalous videos get
// min_max_normalize(moving_average(teacher scores)), normal videos hard
// zeros.
struct PseudoLabelStore {
    int smoothing_width = 3;
    std::map<std::string, std::vector<double>> labels;  // video id -> per-segment label
};

// `use_minmax` disables the normalization step for ablations (eps = 1
// likewise disables smoothing).
PseudoLabelStore build_pseudo_labels(const Checkpoint& teacher, const FeatureStore& dataset,
                                     int eps, bool use_minmax = true);

// CSV round trip: videoId,segmentIndex,label rows.
void write_pseudo_labels(const PseudoLabelStore& store, const std::filesystem::path& path,
                         const std::string& fingerprint);
PseudoLabelStore read_pseudo_labels(const std::filesystem::path& path);

}  // namespace dakd
