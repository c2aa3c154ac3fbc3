#include "dakd/miltrain.hpp"

#include <algorithm>
#include <cmath>

#include "dakd/rng.hpp"

namespace dakd {

void MilConfig::validate() const {
    if (lambda_smooth < 0.0 || lambda_sparse < 0.0)
        throw DataError("mil: lambda terms must be non-negative");
    if (epochs < 0) throw DataError("mil: epochs must be non-negative");
    if (batch_normal < 1 || batch_anomalous < 1) throw DataError("mil: batch counts must be positive");
    if (lr_temporal <= 0.0 || lr_other <= 0.0) throw DataError("mil: learning rates must be positive");
    if (weight_decay < 0.0) throw DataError("mil: weight decay must be non-negative");
    if (bag_top_k < 1) throw DataError("mil: bag_top_k must be >= 1");
}

static double bag_score(const std::vector<double>& scores, int top_k) {
    std::vector<double> s = scores;
    std::stable_sort(s.begin(), s.end(), std::greater<double>());
    const int k = std::min<int>(top_k, static_cast<int>(s.size()));
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += s[i];
    return sum / k;
}

double mil_ranking_loss(const std::vector<double>& anomalous_scores,
                        const std::vector<double>& normal_scores, const MilConfig& cfg) {
    if (anomalous_scores.size() != normal_scores.size())
        throw ShapeError("mil_ranking_loss: sequence lengths differ");
    if (anomalous_scores.empty()) throw ShapeError("mil_ranking_loss: empty sequences");
    const double hinge = std::max(
        0.0, 1.0 - bag_score(anomalous_scores, cfg.bag_top_k) + bag_score(normal_scores, cfg.bag_top_k));
    double smooth = 0.0;
    for (size_t i = 0; i + 1 < anomalous_scores.size(); ++i) {
        const double diff = anomalous_scores[i] - anomalous_scores[i + 1];
        smooth += diff * diff;
    }
    double sparse = 0.0;
    for (double s : anomalous_scores) sparse += s;
    return hinge + cfg.lambda_smooth * smooth + cfg.lambda_sparse * sparse;
}

OptimizerState OptimizerState::init(const ParamMap& params, double epsilon) {
    OptimizerState s;
    s.epsilon = epsilon;
    for (const auto& [name, t] : params) s.accumulators[name] = Tensor(t.rows, t.cols, 0.0);
    return s;
}

void adagrad_step(ParamMap& params, const ParamMap& grads, OptimizerState& state,
                  const std::function<double(const std::string&)>& lr_for,
                  double weight_decay) {
    for (auto& [name, theta] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) throw ShapeError("adagrad: missing gradient for " + name);
        const Tensor& g = git->second;
        Tensor& acc = state.accumulators.at(name);
        if (!theta.same_shape(g) || !theta.same_shape(acc))
            throw ShapeError("adagrad: shape mismatch for " + name);
        const double lr = lr_for(name);
        for (size_t i = 0; i < theta.data.size(); ++i) {
            const double gp = g.data[i] + weight_decay * theta.data[i];
            acc.data[i] += gp * gp;
            theta.data[i] -= lr * gp / (std::sqrt(acc.data[i]) + state.epsilon);
        }
    }
}

std::function<double(const std::string&)> mil_lr_selector(const MilConfig& cfg) {
    return [lr_t = cfg.lr_temporal, lr_o = cfg.lr_other](const std::string& name) {
        return name.rfind("tam.", 0) == 0 ? lr_t : lr_o;
    };
}

Graph::Id build_mil_pair_loss(Graph& g, const ModelSpec& spec, const ParamMap& params,
                              int n_s, const MilConfig& cfg) {
    const ModelGraphOut anom = build_model(g, spec, params, "a.", n_s);
    const ModelGraphOut norm = build_model(g, spec, params, "n.", n_s);

    const Graph::Id bag_a = g.topk_mean(anom.scores, cfg.bag_top_k);
    const Graph::Id bag_n = g.topk_mean(norm.scores, cfg.bag_top_k);
    const Graph::Id one = g.constant(Tensor::scalar(1.0));
    const Graph::Id hinge = g.relu(g.add(g.sub(one, bag_a), bag_n));

    Graph::Id loss = hinge;
    if (cfg.lambda_smooth > 0.0 && n_s > 1) {
        const Graph::Id head = g.slice_rows(anom.scores, 0, n_s - 1);
        const Graph::Id tail = g.slice_rows(anom.scores, 1, n_s - 1);
        const Graph::Id diff = g.sub(head, tail);
        loss = g.add(loss, g.scale(g.sum_all(g.mul(diff, diff)), cfg.lambda_smooth));
    }
    if (cfg.lambda_sparse > 0.0)
        loss = g.add(loss, g.scale(g.sum_all(anom.scores), cfg.lambda_sparse));

    g.mark_output("loss", loss);
    return loss;
}

Checkpoint train_teacher(const FeatureStore& dataset, const ModelSpec& spec,
                         const MilConfig& cfg, uint64_t seed, TrainHistory* history) {
    cfg.validate();
    const auto anom_idx = dataset.indices("train", 1);
    const auto norm_idx = dataset.indices("train", 0);
    if (anom_idx.empty() || norm_idx.empty())
        throw DataError("train_teacher: training split must contain both classes");

    ParamMap params = init_params(spec, seed);
    Graph graph;
    build_mil_pair_loss(graph, spec, params, dataset.n_s, cfg);
    OptimizerState opt = OptimizerState::init(params, cfg.opt_epsilon);
    const auto lr_for = mil_lr_selector(cfg);
    Rng rng(seed ^ 0x5eedULL);

    const int T = spec.streams();
    const int pair_batch = std::min(cfg.batch_normal, cfg.batch_anomalous);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto a = anom_idx;
        auto n = norm_idx;
        rng.shuffle(a);
        rng.shuffle(n);
        const int pairs = static_cast<int>(std::min(a.size(), n.size()));
        double loss_sum = 0.0;
        int loss_count = 0;
        for (int start = 0; start < pairs; start += pair_batch) {
            const int count = std::min(pair_batch, pairs - start);
            ParamMap grad_sum;
            for (const auto& [name, t] : params) grad_sum[name] = Tensor(t.rows, t.cols, 0.0);
            for (int p = 0; p < count; ++p) {
                const VideoFeatures& va = dataset.videos[a[start + p]];
                const VideoFeatures& vn = dataset.videos[n[start + p]];
                std::map<std::string, Tensor> inputs;
                for (int t = 0; t < T; ++t) {
                    inputs["a.z" + std::to_string(t)] = va.streams[t];
                    inputs["n.z" + std::to_string(t)] = vn.streams[t];
                }
                const auto out = graph.forward(inputs);
                loss_sum += out.at("loss").data[0];
                ++loss_count;
                const auto grads = graph.backward();
                for (auto& [name, gacc] : grad_sum) {
                    const Tensor& gi = grads.at(name);
                    for (size_t i = 0; i < gacc.data.size(); ++i) gacc.data[i] += gi.data[i];
                }
            }
            for (auto& [name, gacc] : grad_sum)
                for (double& v : gacc.data) v /= count;
            adagrad_step(params, grad_sum, opt, lr_for, cfg.weight_decay);
            for (const auto& [name, t] : params) graph.set_parameter(name, t);
        }
        if (history) history->epoch_mean_loss.push_back(loss_count ? loss_sum / loss_count : 0.0);
    }

    Checkpoint ckpt;
    ckpt.kind = spec.streams() > 1 ? "teacher" : "student";
    if (spec.streams() == 1)
        ckpt.stream = dataset.source_stream >= 0 ? dataset.source_stream
                                                 : dataset.manifest.student_stream_index();
    ckpt.spec = spec;
    ckpt.params = std::move(params);
    return ckpt;
}

}  // namespace dakd
