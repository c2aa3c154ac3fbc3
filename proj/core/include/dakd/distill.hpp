#pragma once

#include <vector>

#include "dakd/miltrain.hpp"
#include "dakd/refinery.hpp"

namespace dakd {

struct DistillConfig {
    double delta = 0.9;   // teacher-score threshold splitting the contrastive classes
    double tau = 10.0;    // InfoNCE temperature
    double alpha = 7.5;   // loss mixing coefficient
    int proj_hidden = 512;
    int proj_out = 128;
    bool use_bce = true;  // ablation toggles
    bool use_nce = true;

    void validate() const;
};

// Segment indices split by the teacher-score threshold; the same mask labels
// teacher and student sides.
struct FeaturePartition {
    std::vector<int> anomalous;
    std::vector<int> normal;
};

FeaturePartition partition_features(const std::vector<double>& teacher_scores, double delta);
// Alignment-checked variant over the representation pair.
FeaturePartition partition_features(const std::vector<double>& teacher_scores,
                                    const Tensor& teacher_h, const Tensor& student_h,
                                    double delta);

// Symmetric InfoNCE over projected features with cosine similarity.
// Positive pairs are index-aligned rows of (teacher, student); negatives for
// an anomaly anchor are the opposite-class student rows, and symmetrically.
// Each class term is a mean over its anchors; an empty class contributes 0.
// Inputs are already-projected feature rows.
double info_nce_loss(const std::vector<std::vector<double>>& teacher_anom,
                     const std::vector<std::vector<double>>& student_anom,
                     const std::vector<std::vector<double>>& teacher_norm,
                     const std::vector<std::vector<double>>& student_norm, double tau);

// Mean binary cross entropy, predictions clamped to [1e-7, 1 - 1e-7].
double bce_loss(const std::vector<double>& pseudo_labels, const std::vector<double>& predictions);

// L_d = L_bce + alpha * tau^2 * L_nce.
double distill_loss(double bce, double nce, double alpha, double tau);

// One micro-batch of stage-2 training material: the student inputs plus the
// frozen teacher's cached outputs and refined labels.
struct DistillBatchData {
    std::vector<Tensor> student_inputs;               // per video, n_s x d_1
    std::vector<std::vector<double>> pseudo_labels;   // per video, length n_s
    std::vector<std::vector<double>> teacher_scores;  // per video, length n_s
    std::vector<Tensor> teacher_h;                    // per video, n_s x dim
};

struct DistillLossIds {
    Graph::Id bce = -1;
    Graph::Id nce = -1;
    Graph::Id total = -1;
};

// Builds the combined distillation loss over the batch. Student inputs are
// graph inputs "v<i>.z0"; teacher outputs enter as constants. Registers the
// student parameters plus both projection heads ("nce_head_t.*",
// "nce_head_s.*"). Marks the single scalar output "loss".
DistillLossIds build_distill_loss(Graph& g, const ModelSpec& student_spec,
                                  const ParamMap& params, const DistillBatchData& data,
                                  const DistillConfig& cfg);

// Projection-head parameters (w1: dim x hidden, w2: hidden x out, no biases).
ParamMap init_projection_heads(int dim, const DistillConfig& cfg, uint64_t seed);

struct DistillHistory {
    std::vector<double> epoch_bce;
    std::vector<double> epoch_nce;
    std::vector<double> epoch_total;
};

// Stage-2 training: teacher frozen, student and both projection heads train.
Checkpoint train_student(const FeatureStore& dataset, const Checkpoint& teacher,
                         const ModelSpec& student_spec, const PseudoLabelStore& labels,
                         const DistillConfig& cfg, const MilConfig& opt_cfg, uint64_t seed,
                         DistillHistory* history = nullptr);

}  // namespace dakd
