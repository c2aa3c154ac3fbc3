#pragma once

#include <functional>
#include <vector>

#include "dakd/dataio.hpp"
#include "dakd/models.hpp"

namespace dakd {

struct MilConfig {
    double lambda_smooth = 8e-5;
    double lambda_sparse = 8e-5;
    int epochs = 100;
    int batch_normal = 30;
    int batch_anomalous = 30;
    double lr_temporal = 1e-4;   // attention / feedforward block
    double lr_other = 1e-3;      // projections and scoring head
    double weight_decay = 1e-3;
    double opt_epsilon = 1e-10;  // Adagrad denominator floor
    int bag_top_k = 1;           // segments pooled into the bag score

    void validate() const;
};

// Hinge ranking loss with smoothness and sparsity terms on the anomalous
// scores: max(0, 1 - max_i a_i + max_i n_i)
//         + lambda_smooth * sum (a_i - a_{i+1})^2 + lambda_sparse * sum a_i.
// The bag score generalises to the mean of the top bag_top_k segments.
double mil_ranking_loss(const std::vector<double>& anomalous_scores,
                        const std::vector<double>& normal_scores, const MilConfig& cfg);

// Per-parameter squared-gradient accumulators.
struct OptimizerState {
    ParamMap accumulators;
    double epsilon = 1e-10;

    static OptimizerState init(const ParamMap& params, double epsilon);
};

// g' = g + wd * theta; G += g'^2; theta -= lr * g' / (sqrt(G) + eps).
void adagrad_step(ParamMap& params, const ParamMap& grads, OptimizerState& state,
                  const std::function<double(const std::string&)>& lr_for,
                  double weight_decay);

// Learning-rate selector per the two-rate scheme: temporal-block parameters
// (names under "tam.") use lr_temporal, everything else lr_other.
std::function<double(const std::string&)> mil_lr_selector(const MilConfig& cfg);

struct TrainHistory {
    std::vector<double> epoch_mean_loss;
};

// Builds the per-pair MIL loss graph (two shared-parameter model forwards,
// inputs "a.z<t>" / "n.z<t>", single scalar output "loss").
Graph::Id build_mil_pair_loss(Graph& g, const ModelSpec& spec, const ParamMap& params,
                              int n_s, const MilConfig& cfg);

// Stage-1 teacher training; deterministic in `seed`.
Checkpoint train_teacher(const FeatureStore& dataset, const ModelSpec& spec,
                         const MilConfig& cfg, uint64_t seed, TrainHistory* history = nullptr);

}  // namespace dakd
