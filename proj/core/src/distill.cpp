#include "dakd/distill.hpp"

#include <algorithm>
#include <cmath>

namespace dakd {

void DistillConfig::validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw DataError("distill: delta must be in (0,1)");
    if (!(tau > 0.0)) throw DataError("distill: tau must be positive");
    if (alpha < 0.0) throw DataError("distill: alpha must be non-negative");
    if (proj_hidden < 1 || proj_out < 1) throw DataError("distill: projection widths must be positive");
    if (!use_bce && !use_nce) throw DataError("distill: at least one loss term must be enabled");
}

FeaturePartition partition_features(const std::vector<double>& teacher_scores, double delta) {
    FeaturePartition p;
    for (size_t i = 0; i < teacher_scores.size(); ++i) {
        if (teacher_scores[i] >= delta)
            p.anomalous.push_back(static_cast<int>(i));
        else
            p.normal.push_back(static_cast<int>(i));
    }
    return p;
}

FeaturePartition partition_features(const std::vector<double>& teacher_scores,
                                    const Tensor& teacher_h, const Tensor& student_h,
                                    double delta) {
    if (teacher_h.rows != static_cast<int>(teacher_scores.size()) ||
        student_h.rows != teacher_h.rows)
        throw ShapeError("partition_features: misaligned scores/representations");
    return partition_features(teacher_scores, delta);
}

static double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero-norm projection vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// One class term: mean over anchors i of
// -log(e^{sim(t_i, s_i)/tau} / (sum_k e^{sim(t_i, neg_k)/tau} + e^{sim(t_i, s_i)/tau})).
static double nce_term(const std::vector<std::vector<double>>& teacher,
                       const std::vector<std::vector<double>>& student,
                       const std::vector<std::vector<double>>& negatives, double tau) {
    if (teacher.size() != student.size()) throw ShapeError("info_nce: positive pairs misaligned");
    if (teacher.empty()) return 0.0;
    double sum = 0.0;
    for (size_t i = 0; i < teacher.size(); ++i) {
        const double pos = cosine(teacher[i], student[i]) / tau;
        // log-sum-exp over {pos} + negatives
        double mx = pos;
        std::vector<double> terms{pos};
        for (const auto& neg : negatives) {
            terms.push_back(cosine(teacher[i], neg) / tau);
            mx = std::max(mx, terms.back());
        }
        double denom = 0.0;
        for (double t : terms) denom += std::exp(t - mx);
        sum += -(pos - (mx + std::log(denom)));
    }
    return sum / static_cast<double>(teacher.size());
}

double info_nce_loss(const std::vector<std::vector<double>>& teacher_anom,
                     const std::vector<std::vector<double>>& student_anom,
                     const std::vector<std::vector<double>>& teacher_norm,
                     const std::vector<std::vector<double>>& student_norm, double tau) {
    if (!(tau > 0.0)) throw DataError("info_nce: tau must be positive");
    return nce_term(teacher_anom, student_anom, student_norm, tau) +
           nce_term(teacher_norm, student_norm, student_anom, tau);
}

double bce_loss(const std::vector<double>& pseudo_labels, const std::vector<double>& predictions) {
    if (pseudo_labels.size() != predictions.size()) throw ShapeError("bce_loss: length mismatch");
    if (pseudo_labels.empty()) throw ShapeError("bce_loss: empty inputs");
    double sum = 0.0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const double p = std::clamp(predictions[i], 1e-7, 1.0 - 1e-7);
        const double y = pseudo_labels[i];
        sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    return sum / static_cast<double>(predictions.size());
}

double distill_loss(double bce, double nce, double alpha, double tau) {
    if (!std::isfinite(bce) || !std::isfinite(nce)) throw NumericError("distill_loss: non-finite component");
    return bce + alpha * tau * tau * nce;
}

static Tensor glorot(int rows, int cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    Tensor t(rows, cols);
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

ParamMap init_projection_heads(int dim, const DistillConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    ParamMap p;
    p["nce_head_t.w1"] = glorot(dim, cfg.proj_hidden, rng);
    p["nce_head_t.w2"] = glorot(cfg.proj_hidden, cfg.proj_out, rng);
    p["nce_head_s.w1"] = glorot(dim, cfg.proj_hidden, rng);
    p["nce_head_s.w2"] = glorot(cfg.proj_hidden, cfg.proj_out, rng);
    return p;
}

// Rows projected through z = W2 relu(W1 h), then L2-normalized.
static Graph::Id project_normalize(Graph& g, Graph::Id h, Graph::Id w1, Graph::Id w2) {
    const Graph::Id z = g.matmul(g.relu(g.matmul(h, w1)), w2);
    const Graph::Id norms = g.sqrt(g.sum_rows(g.mul(z, z)));
    return g.div_colvec(z, norms);
}

DistillLossIds build_distill_loss(Graph& g, const ModelSpec& student_spec,
                                  const ParamMap& params, const DistillBatchData& data,
                                  const DistillConfig& cfg) {
    cfg.validate();
    if (data.student_inputs.empty()) throw ShapeError("distill: empty batch");
    const size_t n_videos = data.student_inputs.size();
    if (data.pseudo_labels.size() != n_videos || data.teacher_scores.size() != n_videos ||
        data.teacher_h.size() != n_videos)
        throw ShapeError("distill: batch arrays misaligned");
    const int n_s = data.student_inputs[0].rows;

    std::vector<Graph::Id> score_parts, h_parts;
    std::vector<double> labels_flat, teacher_scores_flat;
    std::vector<Tensor> teacher_h_rows;
    for (size_t i = 0; i < n_videos; ++i) {
        if (static_cast<int>(data.pseudo_labels[i].size()) != n_s ||
            static_cast<int>(data.teacher_scores[i].size()) != n_s ||
            data.teacher_h[i].rows != n_s)
            throw ShapeError("distill: per-video segment counts misaligned");
        const ModelGraphOut m =
            build_model(g, student_spec, params, "v" + std::to_string(i) + ".", n_s);
        score_parts.push_back(m.scores);
        h_parts.push_back(m.representation);
        labels_flat.insert(labels_flat.end(), data.pseudo_labels[i].begin(),
                           data.pseudo_labels[i].end());
        teacher_scores_flat.insert(teacher_scores_flat.end(), data.teacher_scores[i].begin(),
                                   data.teacher_scores[i].end());
    }
    const int total = static_cast<int>(labels_flat.size());
    const Graph::Id scores = g.concat_rows(score_parts);   // total x 1
    const Graph::Id student_h = g.concat_rows(h_parts);    // total x dim

    Tensor teacher_h_all(total, student_spec.dim);
    {
        int r = 0;
        for (const Tensor& th : data.teacher_h) {
            if (th.cols != student_spec.dim)
                throw ShapeError("distill: teacher/student representation widths differ");
            std::copy(th.data.begin(), th.data.end(),
                      teacher_h_all.data.begin() + static_cast<size_t>(r) * th.cols);
            r += th.rows;
        }
    }

    DistillLossIds ids;

    // Prediction-level: BCE against the refined labels.
    const Graph::Id y = g.constant(Tensor(total, 1, labels_flat));
    const Graph::Id ones = g.constant(Tensor(total, 1, 1.0));
    const Graph::Id p = g.clamp(scores, 1e-7, 1.0 - 1e-7);
    const Graph::Id pos_term = g.mul(y, g.log(p));
    const Graph::Id neg_term = g.mul(g.sub(ones, y), g.log(g.sub(ones, p)));
    ids.bce = g.scale(g.mean_all(g.add(pos_term, neg_term)), -1.0);

    // Feature-level: symmetric InfoNCE over cosine similarities.
    const FeaturePartition part = partition_features(teacher_scores_flat, cfg.delta);
    const Graph::Id tw1 = g.get_or_parameter("nce_head_t.w1", params.at("nce_head_t.w1"));
    const Graph::Id tw2 = g.get_or_parameter("nce_head_t.w2", params.at("nce_head_t.w2"));
    const Graph::Id sw1 = g.get_or_parameter("nce_head_s.w1", params.at("nce_head_s.w1"));
    const Graph::Id sw2 = g.get_or_parameter("nce_head_s.w2", params.at("nce_head_s.w2"));
    const Graph::Id zt = project_normalize(g, g.constant(teacher_h_all), tw1, tw2);
    const Graph::Id zs = project_normalize(g, student_h, sw1, sw2);

    auto nce_class_term = [&](const std::vector<int>& anchors,
                              const std::vector<int>& negatives) -> Graph::Id {
        const Graph::Id zt_a = g.gather_rows(zt, anchors);
        const Graph::Id zs_a = g.gather_rows(zs, anchors);
        const Graph::Id pos = g.sum_rows(g.mul(zt_a, zs_a));  // anchors x 1
        Graph::Id logits = pos;
        if (!negatives.empty()) {
            const Graph::Id zs_n = g.gather_rows(zs, negatives);
            const Graph::Id neg = g.matmul(zt_a, g.transpose(zs_n));
            logits = g.concat_cols({pos, neg});
        }
        const Graph::Id sm = g.softmax_rows(g.scale(logits, 1.0 / cfg.tau));
        const Graph::Id p_pos = g.slice_cols(sm, 0, 1);
        return g.scale(g.mean_all(g.log(p_pos)), -1.0);
    };

    if (!part.anomalous.empty() && !part.normal.empty()) {
        ids.nce = g.add(nce_class_term(part.anomalous, part.normal),
                        nce_class_term(part.normal, part.anomalous));
    } else if (!part.anomalous.empty()) {
        ids.nce = nce_class_term(part.anomalous, part.normal);
    } else if (!part.normal.empty()) {
        ids.nce = nce_class_term(part.normal, part.anomalous);
    } else {
        ids.nce = g.constant(Tensor::scalar(0.0));
    }

    if (cfg.use_bce && cfg.use_nce) {
        ids.total = g.add(ids.bce, g.scale(ids.nce, cfg.alpha * cfg.tau * cfg.tau));
    } else if (cfg.use_bce) {
        ids.total = ids.bce;
    } else {
        ids.total = g.scale(ids.nce, cfg.alpha * cfg.tau * cfg.tau);
    }
    g.mark_output("loss", ids.total);
    return ids;
}

Checkpoint train_student(const FeatureStore& dataset, const Checkpoint& teacher,
                         const ModelSpec& student_spec, const PseudoLabelStore& labels,
                         const DistillConfig& cfg, const MilConfig& opt_cfg, uint64_t seed,
                         DistillHistory* history) {
    cfg.validate();
    opt_cfg.validate();
    if (student_spec.streams() != 1) throw DataError("train_student: student must be single-stream");
    if (student_spec.dim != teacher.spec.dim)
        throw DataError("train_student: teacher and student widths differ");
    const int stream_idx = dataset.manifest.student_stream_index();
    if (dataset.videos.empty()) throw DataError("train_student: empty dataset");
    if (dataset.videos[0].streams[stream_idx].cols != student_spec.stream_dims[0])
        throw DataError("train_student: designated stream width does not match student spec");

    // Frozen teacher outputs, cached once per training video.
    ModelRunner teacher_runner(teacher.spec, teacher.params, dataset.n_s);
    std::vector<int> train_videos;
    std::vector<ForwardResult> teacher_out(dataset.videos.size());
    for (size_t i = 0; i < dataset.videos.size(); ++i) {
        const auto& v = dataset.videos[i];
        if (v.record.split != "train") continue;
        if (!labels.labels.count(v.record.id))
            throw DataError("train_student: missing pseudo-labels for video " + v.record.id);
        train_videos.push_back(static_cast<int>(i));
        teacher_out[i] = teacher_runner.forward(v.streams);
    }
    if (train_videos.empty()) throw DataError("train_student: no training videos");

    ParamMap params = init_params(student_spec, seed);
    {
        ParamMap heads = init_projection_heads(student_spec.dim, cfg, seed ^ 0x9c0ffeeULL);
        params.insert(heads.begin(), heads.end());
    }
    OptimizerState opt = OptimizerState::init(params, opt_cfg.opt_epsilon);
    const auto lr_for = mil_lr_selector(opt_cfg);
    Rng rng(seed ^ 0xd157111ULL);

    auto anom = dataset.indices("train", 1);
    auto norm = dataset.indices("train", 0);
    const int batch_size = opt_cfg.batch_normal + opt_cfg.batch_anomalous;

    for (int epoch = 0; epoch < opt_cfg.epochs; ++epoch) {
        rng.shuffle(anom);
        rng.shuffle(norm);
        // 30 normal + 30 anomalous per batch when both classes suffice;
        // leftovers form a final smaller batch.
        std::vector<int> schedule;
        size_t ai = 0, ni = 0;
        while (ai < anom.size() || ni < norm.size()) {
            for (int k = 0; k < opt_cfg.batch_anomalous && ai < anom.size(); ++k) schedule.push_back(anom[ai++]);
            for (int k = 0; k < opt_cfg.batch_normal && ni < norm.size(); ++k) schedule.push_back(norm[ni++]);
        }
        double bce_sum = 0.0, nce_sum = 0.0, total_sum = 0.0;
        int batches = 0;
        for (size_t start = 0; start < schedule.size(); start += batch_size) {
            const size_t count = std::min<size_t>(batch_size, schedule.size() - start);
            DistillBatchData data;
            std::map<std::string, Tensor> inputs;
            for (size_t b = 0; b < count; ++b) {
                const int vi = schedule[start + b];
                const auto& v = dataset.videos[vi];
                data.student_inputs.push_back(v.streams[stream_idx]);
                data.pseudo_labels.push_back(labels.labels.at(v.record.id));
                data.teacher_scores.push_back(teacher_out[vi].scores);
                data.teacher_h.push_back(teacher_out[vi].representation);
                inputs["v" + std::to_string(b) + ".z0"] = v.streams[stream_idx];
            }
            Graph g;
            const DistillLossIds ids = build_distill_loss(g, student_spec, params, data, cfg);
            g.forward(inputs);
            bce_sum += g.node_value(ids.bce).data[0];
            nce_sum += g.node_value(ids.nce).data[0];
            total_sum += g.node_value(ids.total).data[0];
            ++batches;
            const auto grads = g.backward();
            adagrad_step(params, grads, opt, lr_for, opt_cfg.weight_decay);
        }
        if (history && batches > 0) {
            history->epoch_bce.push_back(bce_sum / batches);
            history->epoch_nce.push_back(nce_sum / batches);
            history->epoch_total.push_back(total_sum / batches);
        }
    }

    Checkpoint ckpt;
    ckpt.kind = "student";
    ckpt.stream = dataset.source_stream >= 0 ? dataset.source_stream
                                             : dataset.manifest.student_stream_index();
    ckpt.spec = student_spec;
    // Projection heads are training-time machinery; the deployed student is
    // the model parameters alone.
    for (const auto& [name, t] : params)
        if (name.rfind("nce_head_", 0) != 0) ckpt.params[name] = t;
    return ckpt;
}

}  // namespace dakd
