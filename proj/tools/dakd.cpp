// dakd: batch pipeline driver — synthetic data, teacher training, pseudo-label
// refinement, student distillation, evaluation and ablation sweeps.

#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "dakd/csvio.hpp"
#include "dakd/distill.hpp"
#include "dakd/miltrain.hpp"
#include "dakd/pipeline.hpp"
#include "dakd/refinery.hpp"

namespace fs = std::filesystem;
using namespace dakd;

namespace {

struct RunConfig {
    std::string data;
    std::string out_dir = "run";
    uint64_t seed = 1;
    int n_s = 32;

    // model
    int dim = 512;
    int heads = 8;
    int bucket_cap = 25;
    int ffn_hidden = 0;  // 0 = 2 * dim
    bool no_tam = false;
    bool freeze_rel_embed = false;
    bool drop_self = false, drop_cross = false, drop_c2p = false, drop_p2c = false;
    int stream = -1;  // single-stream baseline when >= 0

    // optimization
    int epochs = 100;
    int batch_normal = 30;
    int batch_anomalous = 30;
    double lr_temporal = 1e-4;
    double lr_other = 1e-3;
    double weight_decay = 1e-3;
    double lambda_smooth = 8e-5;
    double lambda_sparse = 8e-5;
    int bag_top_k = 1;

    // refinement / distillation
    int eps = 3;
    bool no_minmax = false;
    double delta = 0.9;
    double tau = 10.0;
    double alpha = 7.5;
    int proj_hidden = 512;
    int proj_out = 128;
    bool no_nce = false;
    bool no_bce = false;

    // file inputs
    std::string teacher_path;
    std::string labels_path;
    std::string ckpt_path;

    // ablate
    std::string sweep_param;
    std::string sweep_values;
    std::string component;
    int workers = 1;

    // synth
    SynthConfig synth;
    std::string synth_dims = "64,64,32";
};

std::string fingerprint_line(const RunConfig& c, const std::string& cmd) {
    std::ostringstream ss;
    ss << "cmd=" << cmd << " seed=" << c.seed << " ns=" << c.n_s << " dim=" << c.dim
       << " heads=" << c.heads << " k=" << c.bucket_cap << " epochs=" << c.epochs
       << " batch=" << c.batch_normal << "+" << c.batch_anomalous << " wd=" << c.weight_decay
       << " lr=" << c.lr_temporal << "/" << c.lr_other << " eps=" << c.eps
       << " delta=" << c.delta << " tau=" << c.tau << " alpha=" << c.alpha;
    return config_fingerprint(ss.str());
}

void note_output(const fs::path& out_dir, const std::string& file) {
    std::ofstream out(out_dir / "outputs.txt", std::ios::app);
    out << file << "\n";
}

MilConfig mil_config(const RunConfig& c) {
    MilConfig m;
    m.lambda_smooth = c.lambda_smooth;
    m.lambda_sparse = c.lambda_sparse;
    m.epochs = c.epochs;
    m.batch_normal = c.batch_normal;
    m.batch_anomalous = c.batch_anomalous;
    m.lr_temporal = c.lr_temporal;
    m.lr_other = c.lr_other;
    m.weight_decay = c.weight_decay;
    m.bag_top_k = c.bag_top_k;
    return m;
}

DistillConfig distill_config(const RunConfig& c) {
    DistillConfig d;
    d.delta = c.delta;
    d.tau = c.tau;
    d.alpha = c.alpha;
    d.proj_hidden = c.proj_hidden;
    d.proj_out = c.proj_out;
    d.use_bce = !c.no_bce;
    d.use_nce = !c.no_nce;
    return d;
}

ModelSpec model_spec(const RunConfig& c, const std::vector<int>& stream_dims, bool is_student) {
    ModelSpec s = is_student
                      ? make_student_spec(stream_dims[0], c.dim, c.heads, c.bucket_cap)
                      : make_teacher_spec(stream_dims, c.dim, c.heads, c.bucket_cap);
    if (c.ffn_hidden > 0) s.ffn_hidden = c.ffn_hidden;
    s.use_tam = !c.no_tam;
    s.train_rel_embed = !c.freeze_rel_embed;
    if (c.drop_self) s.attn_mask.self_c2c = false;
    if (c.drop_cross) s.attn_mask.cross_c2c = false;
    if (c.drop_c2p) s.attn_mask.c2p = false;
    if (c.drop_p2c) s.attn_mask.p2c = false;
    return s;
}

void cmd_synth(const RunConfig& c) {
    SynthConfig cfg = c.synth;
    cfg.seed = c.seed;
    cfg.stream_dims.clear();
    std::istringstream ss(c.synth_dims);
    std::string tok;
    while (std::getline(ss, tok, ',')) cfg.stream_dims.push_back(std::stoi(tok));
    fs::create_directories(c.out_dir);
    generate_synthetic(cfg, c.out_dir);
    note_output(c.out_dir, "manifest.txt");
    std::cout << "synth: wrote dataset to " << c.out_dir << "\n";
}

void cmd_train_teacher(const RunConfig& c) {
    FeatureStore store = load_dataset(c.data, c.n_s);
    if (c.stream >= 0) store = select_stream(store, c.stream);
    const ModelSpec spec = model_spec(c, store.stream_dims(), false);
    TrainHistory history;
    const Checkpoint ckpt = train_teacher(store, spec, mil_config(c), c.seed, &history);
    fs::create_directories(c.out_dir);
    const fs::path ckpt_path = fs::path(c.out_dir) / "teacher.ckpt";
    save_checkpoint(ckpt, ckpt_path);
    std::vector<std::vector<std::string>> rows;
    for (size_t e = 0; e < history.epoch_mean_loss.size(); ++e)
        rows.push_back({std::to_string(e), fmt_double(history.epoch_mean_loss[e])});
    write_csv(fs::path(c.out_dir) / "teacher_loss.csv", fingerprint_line(c, "train-teacher"),
              "epoch,meanLoss", rows);
    note_output(c.out_dir, "teacher.ckpt");
    note_output(c.out_dir, "teacher_loss.csv");
    std::cout << "train-teacher: wrote " << ckpt_path.string() << "\n";
}

void cmd_refine(const RunConfig& c) {
    const FeatureStore store = load_dataset(c.data, c.n_s);
    const Checkpoint teacher = load_checkpoint(c.teacher_path);
    const PseudoLabelStore labels = build_pseudo_labels(teacher, store, c.eps, !c.no_minmax);
    fs::create_directories(c.out_dir);
    write_pseudo_labels(labels, fs::path(c.out_dir) / "pseudo_labels.csv",
                        fingerprint_line(c, "refine"));
    note_output(c.out_dir, "pseudo_labels.csv");
    std::cout << "refine: wrote pseudo labels for " << labels.labels.size() << " videos\n";
}

void cmd_distill(const RunConfig& c) {
    const FeatureStore store = load_dataset(c.data, c.n_s);
    const Checkpoint teacher = load_checkpoint(c.teacher_path);
    const PseudoLabelStore labels = read_pseudo_labels(c.labels_path);
    const int stream_idx = store.manifest.student_stream_index();
    const ModelSpec spec = model_spec(c, {store.stream_dims()[stream_idx]}, true);
    DistillHistory history;
    const Checkpoint student = train_student(store, teacher, spec, labels, distill_config(c),
                                             mil_config(c), c.seed, &history);
    fs::create_directories(c.out_dir);
    save_checkpoint(student, fs::path(c.out_dir) / "student.ckpt");
    std::vector<std::vector<std::string>> rows;
    for (size_t e = 0; e < history.epoch_total.size(); ++e)
        rows.push_back({std::to_string(e), fmt_double(history.epoch_bce[e]),
                        fmt_double(history.epoch_nce[e]), fmt_double(history.epoch_total[e])});
    write_csv(fs::path(c.out_dir) / "distill_history.csv", fingerprint_line(c, "distill"),
              "epoch,bce,nce,total", rows);
    note_output(c.out_dir, "student.ckpt");
    note_output(c.out_dir, "distill_history.csv");
    std::cout << "distill: wrote " << (fs::path(c.out_dir) / "student.ckpt").string() << "\n";
}

void cmd_eval(const RunConfig& c) {
    const FeatureStore store = load_dataset(c.data, c.n_s);
    const Checkpoint ckpt = load_checkpoint(c.ckpt_path);
    const EvalResult result = evaluate_model(ckpt, store);
    fs::create_directories(c.out_dir);
    const std::string fp = fingerprint_line(c, "eval");

    std::vector<std::vector<std::string>> rows;
    rows.push_back({"auc", fmt_double(result.auc)});
    rows.push_back({"ap", fmt_double(result.ap)});
    for (const auto& e : result.per_class)
        rows.push_back({"auc_class_" + e.anomaly_class, fmt_double(e.auc)});
    write_csv(fs::path(c.out_dir) / "metrics.csv", fp, "metric,value", rows);

    std::vector<std::vector<std::string>> frame_rows;
    for (const auto& v : result.frames)
        for (size_t f = 0; f < v.scores.size(); ++f)
            frame_rows.push_back({v.video_id, std::to_string(f), fmt_double(v.scores[f]),
                                  std::to_string(v.labels[f])});
    write_csv(fs::path(c.out_dir) / "frame_scores.csv", fp, "videoId,frame,score,label",
              frame_rows);
    note_output(c.out_dir, "metrics.csv");
    note_output(c.out_dir, "frame_scores.csv");
    std::cout << "eval: AUC=" << result.auc << " AP=" << result.ap << "\n";
}

struct TrialResult {
    double teacher_auc = 0.0;
    double student_auc = 0.0;
    double student_ap = 0.0;
};

TrialResult run_full_pipeline(const RunConfig& c) {
    const FeatureStore store = load_dataset(c.data, c.n_s);
    const ModelSpec teacher_spec = model_spec(c, store.stream_dims(), false);
    const Checkpoint teacher = train_teacher(store, teacher_spec, mil_config(c), c.seed);
    const PseudoLabelStore labels = build_pseudo_labels(teacher, store, c.eps, !c.no_minmax);
    const int stream_idx = store.manifest.student_stream_index();
    const ModelSpec student_spec = model_spec(c, {store.stream_dims()[stream_idx]}, true);
    const Checkpoint student = train_student(store, teacher, student_spec, labels,
                                             distill_config(c), mil_config(c), c.seed);
    TrialResult r;
    r.teacher_auc = evaluate_model(teacher, store).auc;
    const EvalResult se = evaluate_model(student, store);
    r.student_auc = se.auc;
    r.student_ap = se.ap;
    return r;
}

RunConfig apply_sweep_value(RunConfig c, const std::string& param, double value) {
    if (param == "k") c.bucket_cap = static_cast<int>(value);
    else if (param == "eps") c.eps = static_cast<int>(value);
    else if (param == "delta") c.delta = value;
    else if (param == "tau") c.tau = value;
    else if (param == "alpha") { c.alpha = value; if (value == 0.0) c.no_nce = true; }
    else if (param == "lambda_smooth") c.lambda_smooth = value;
    else if (param == "lambda_sparse") c.lambda_sparse = value;
    else if (param == "epochs") c.epochs = static_cast<int>(value);
    else throw DataError("ablate: unknown sweep parameter '" + param + "'");
    return c;
}

RunConfig apply_component(RunConfig c, const std::string& component) {
    if (component == "notam") c.no_tam = true;
    else if (component == "nonce") c.no_nce = true;
    else if (component == "nobce") c.no_bce = true;
    else if (component == "nominmax") c.no_minmax = true;
    else if (component == "nosmooth") c.eps = 1;
    else if (component == "attn-self") c.drop_self = true;
    else if (component == "attn-cross") c.drop_cross = true;
    else if (component == "attn-c2p") c.drop_c2p = true;
    else if (component == "attn-p2c") c.drop_p2c = true;
    else throw DataError("ablate: unknown component '" + component + "'");
    return c;
}

void cmd_ablate(const RunConfig& c) {
    struct Trial {
        std::string label;
        RunConfig cfg;
    };
    std::vector<Trial> trials;
    if (!c.sweep_param.empty()) {
        std::istringstream ss(c.sweep_values);
        std::string tok;
        int index = 0;
        while (std::getline(ss, tok, ',')) {
            RunConfig t = apply_sweep_value(c, c.sweep_param, std::stod(tok));
            t.seed = c.seed + 1000ull * index++;
            trials.push_back({c.sweep_param + "=" + tok, t});
        }
        if (trials.empty()) throw DataError("ablate: no sweep values given");
    } else if (!c.component.empty()) {
        RunConfig base = c;
        base.seed = c.seed;
        trials.push_back({"full", base});
        RunConfig t = apply_component(c, c.component);
        t.seed = c.seed + 1000ull;
        trials.push_back({c.component, t});
    } else {
        throw DataError("ablate: provide --param/--values or --component");
    }

    std::vector<TrialResult> results(trials.size());
    if (c.workers > 1) {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        const int n_workers = std::min<int>(c.workers, static_cast<int>(trials.size()));
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < trials.size(); i = next.fetch_add(1))
                    results[i] = run_full_pipeline(trials[i].cfg);
            });
        for (auto& t : pool) t.join();
    } else {
        for (size_t i = 0; i < trials.size(); ++i) results[i] = run_full_pipeline(trials[i].cfg);
    }

    fs::create_directories(c.out_dir);
    std::vector<std::vector<std::string>> rows;
    for (size_t i = 0; i < trials.size(); ++i)
        rows.push_back({trials[i].label, fmt_double(results[i].teacher_auc),
                        fmt_double(results[i].student_auc), fmt_double(results[i].student_ap)});
    write_csv(fs::path(c.out_dir) / "ablation.csv", fingerprint_line(c, "ablate"),
              "trial,teacherAuc,studentAuc,studentAp", rows);
    note_output(c.out_dir, "ablation.csv");
    for (size_t i = 0; i < trials.size(); ++i)
        std::cout << "ablate: " << trials[i].label << " teacherAUC=" << results[i].teacher_auc
                  << " studentAUC=" << results[i].student_auc << "\n";
}

void add_common_flags(CLI::App* cmd, RunConfig& c, bool needs_data) {
    if (needs_data) cmd->add_option("--data", c.data, "dataset manifest path")->required();
    cmd->add_option("--out", c.out_dir, "output directory");
    cmd->add_option("--seed", c.seed, "RNG seed");
    cmd->add_option("--ns", c.n_s, "segments per video");
}

void add_model_flags(CLI::App* cmd, RunConfig& c) {
    cmd->add_option("--dim", c.dim, "attention width");
    cmd->add_option("--heads", c.heads, "attention heads");
    cmd->add_option("--k", c.bucket_cap, "relative distance cap");
    cmd->add_option("--ffn-hidden", c.ffn_hidden, "feedforward hidden width (0 = 2*dim)");
    cmd->add_flag("--no-tam", c.no_tam, "mean-pooling fallback instead of attention");
    cmd->add_flag("--freeze-rel-embed", c.freeze_rel_embed, "keep the relative embedding table fixed");
    cmd->add_flag("--drop-self", c.drop_self, "ablate the self content-to-content term");
    cmd->add_flag("--drop-cross", c.drop_cross, "ablate the cross content-to-content term");
    cmd->add_flag("--drop-c2p", c.drop_c2p, "ablate the content-to-position term");
    cmd->add_flag("--drop-p2c", c.drop_p2c, "ablate the position-to-content term");
}

void add_opt_flags(CLI::App* cmd, RunConfig& c) {
    cmd->add_option("--epochs", c.epochs, "training epochs");
    cmd->add_option("--batch-normal", c.batch_normal, "normal videos per batch");
    cmd->add_option("--batch-anomalous", c.batch_anomalous, "anomalous videos per batch");
    cmd->add_option("--lr-temporal", c.lr_temporal, "learning rate for the temporal block");
    cmd->add_option("--lr-other", c.lr_other, "learning rate for other parameters");
    cmd->add_option("--weight-decay", c.weight_decay, "Adagrad weight decay");
    cmd->add_option("--lambda-smooth", c.lambda_smooth, "smoothness coefficient");
    cmd->add_option("--lambda-sparse", c.lambda_sparse, "sparsity coefficient");
    cmd->add_option("--bag-top-k", c.bag_top_k, "segments pooled into the bag score");
}

void add_distill_flags(CLI::App* cmd, RunConfig& c) {
    cmd->add_option("--eps", c.eps, "moving-average width (odd)");
    cmd->add_flag("--no-minmax", c.no_minmax, "skip min-max normalization");
    cmd->add_option("--delta", c.delta, "contrastive class threshold");
    cmd->add_option("--tau", c.tau, "InfoNCE temperature");
    cmd->add_option("--alpha", c.alpha, "loss mixing coefficient");
    cmd->add_option("--proj-hidden", c.proj_hidden, "projection head hidden width");
    cmd->add_option("--proj-out", c.proj_out, "projection head output width");
    cmd->add_flag("--no-nce", c.no_nce, "disable the feature-level loss");
    cmd->add_flag("--no-bce", c.no_bce, "disable the prediction-level loss");
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig c;
    if (const char* env = std::getenv("DAKD_OUT_DIR")) c.out_dir = env;
    if (const char* env = std::getenv("DAKD_WORKERS")) c.workers = std::max(1, std::atoi(env));

    CLI::App app{"DAKD pipeline: multi-backbone anomaly-detection training laboratory"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic multi-stream dataset");
    add_common_flags(synth, c, false);
    synth->add_option("--train-normal", c.synth.train_normal);
    synth->add_option("--train-anomalous", c.synth.train_anomalous);
    synth->add_option("--test-normal", c.synth.test_normal);
    synth->add_option("--test-anomalous", c.synth.test_anomalous);
    synth->add_option("--frames-min", c.synth.frames_min);
    synth->add_option("--frames-max", c.synth.frames_max);
    synth->add_option("--clip-len", c.synth.clip_len);
    synth->add_option("--stream-dims", c.synth_dims, "comma-separated stream widths");
    synth->add_option("--classes", c.synth.num_classes);
    synth->add_option("--snr", c.synth.snr);
    synth->add_option("--weak-gain", c.synth.weak_gain);
    synth->add_option("--anom-fraction", c.synth.anomaly_fraction);
    synth->add_option("--student-stream", c.synth.student_stream);

    auto* tt = app.add_subcommand("train-teacher", "stage-1 MIL training");
    add_common_flags(tt, c, true);
    add_model_flags(tt, c);
    add_opt_flags(tt, c);
    tt->add_option("--stream", c.stream, "train a single-stream baseline on this stream index");

    auto* rf = app.add_subcommand("refine", "teacher scores -> soft pseudo-labels");
    add_common_flags(rf, c, true);
    rf->add_option("--teacher", c.teacher_path, "teacher checkpoint")->required();
    rf->add_option("--eps", c.eps, "moving-average width (odd)");
    rf->add_flag("--no-minmax", c.no_minmax, "skip min-max normalization");

    auto* ds = app.add_subcommand("distill", "stage-2 bi-level distillation");
    add_common_flags(ds, c, true);
    add_model_flags(ds, c);
    add_opt_flags(ds, c);
    add_distill_flags(ds, c);
    ds->add_option("--teacher", c.teacher_path, "teacher checkpoint")->required();
    ds->add_option("--labels", c.labels_path, "pseudo-label CSV")->required();

    auto* ev = app.add_subcommand("eval", "frame-level metrics for a checkpoint");
    add_common_flags(ev, c, true);
    ev->add_option("--ckpt", c.ckpt_path, "model checkpoint")->required();

    auto* ab = app.add_subcommand("ablate", "hyperparameter sweep or component toggle");
    add_common_flags(ab, c, true);
    add_model_flags(ab, c);
    add_opt_flags(ab, c);
    add_distill_flags(ab, c);
    ab->add_option("--param", c.sweep_param, "hyperparameter to sweep (k,eps,delta,tau,alpha,...)");
    ab->add_option("--values", c.sweep_values, "comma-separated sweep values");
    ab->add_option("--component", c.component,
                   "component toggle: notam,nonce,nobce,nominmax,nosmooth,attn-*");
    ab->add_option("--parallel", c.workers, "worker threads for trials");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) cmd_synth(c);
        else if (tt->parsed()) cmd_train_teacher(c);
        else if (rf->parsed()) cmd_refine(c);
        else if (ds->parsed()) cmd_distill(c);
        else if (ev->parsed()) cmd_eval(c);
        else if (ab->parsed()) cmd_ablate(c);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
