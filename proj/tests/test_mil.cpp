#include <doctest.h>

#include <cmath>

#include "dakd/miltrain.hpp"
#include "dakd/rng.hpp"

using namespace dakd;

namespace {

MilConfig zero_lambda() {
    MilConfig cfg;
    cfg.lambda_smooth = 0.0;
    cfg.lambda_sparse = 0.0;
    return cfg;
}

// A tiny in-memory dataset with a planted anomaly direction in segment 0.
FeatureStore tiny_store(int streams, int d, int n_s, uint64_t seed) {
    Rng rng(seed);
    FeatureStore store;
    store.n_s = n_s;
    for (int t = 0; t < streams; ++t)
        store.manifest.stream_ids.push_back("s" + std::to_string(t));
    store.manifest.student_stream = "s0";
    auto add = [&](const std::string& id, const std::string& split, int label) {
        VideoFeatures v;
        v.record.id = id;
        v.record.split = split;
        v.record.label = label;
        v.record.frames = n_s * 16;
        v.record.stream_paths["s0"] = id + ".dakf";
        if (label) {
            v.record.anomaly_class = "c0";
            v.record.intervals = {{0, 16}};
        }
        for (int t = 0; t < streams; ++t) {
            Tensor x(n_s, d);
            for (auto& val : x.data) val = 0.3 * rng.normal();
            if (label)
                for (int c = 0; c < d; ++c) x.at(0, c) += 3.0;
            v.streams.push_back(std::move(x));
        }
        store.manifest.videos.push_back(v.record);
        store.videos.push_back(std::move(v));
    };
    for (int i = 0; i < 4; ++i) add("a" + std::to_string(i), "train", 1);
    for (int i = 0; i < 4; ++i) add("n" + std::to_string(i), "train", 0);
    return store;
}

ParamMap perturb_biases(ParamMap params, uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, t] : params)
        if (name.find(".b") != std::string::npos)
            for (auto& v : t.data) v += 0.01 * rng.normal();
    return params;
}

}  // namespace

TEST_CASE("mil loss on all-zero scores is the bare hinge") {
    MilConfig cfg = zero_lambda();
    const std::vector<double> zeros(8, 0.0);
    CHECK(mil_ranking_loss(zeros, zeros, cfg) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("mil loss on interior one-hot matches hand arithmetic") {
    MilConfig cfg;
    cfg.lambda_smooth = 8e-5;
    cfg.lambda_sparse = 8e-5;
    std::vector<double> anom(8, 0.0);
    anom[3] = 1.0;
    const std::vector<double> norm(8, 0.0);
    // hinge 0, smoothness 2 * 8e-5, sparsity 8e-5.
    CHECK(mil_ranking_loss(anom, norm, cfg) == doctest::Approx(2.4e-4).epsilon(1e-12));
}

TEST_CASE("mil loss vanishes when the margin is satisfied") {
    MilConfig cfg = zero_lambda();
    std::vector<double> anom(5, 0.0), norm(5, 0.0);
    anom[2] = 1.0;
    CHECK(mil_ranking_loss(anom, norm, cfg) == 0.0);
}

TEST_CASE("mil loss length mismatch is rejected") {
    MilConfig cfg;
    CHECK_THROWS_AS(mil_ranking_loss({0.1, 0.2}, {0.1, 0.2, 0.3}, cfg), ShapeError);
}

TEST_CASE("mil loss is non-negative and hinge-consistent") {
    Rng rng(3);
    MilConfig cfg;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> anom(6), norm(6);
        for (auto& v : anom) v = rng.uniform();
        for (auto& v : norm) v = rng.uniform();
        const double loss = mil_ranking_loss(anom, norm, cfg);
        CHECK(loss >= 0.0);
        const double ma = *std::max_element(anom.begin(), anom.end());
        const double mn = *std::max_element(norm.begin(), norm.end());
        MilConfig bare = zero_lambda();
        const double hinge = mil_ranking_loss(anom, norm, bare);
        if (ma - mn >= 1.0)
            CHECK(hinge == 0.0);
        else
            CHECK(hinge == doctest::Approx(1.0 - ma + mn).epsilon(1e-12));
    }
}

TEST_CASE("mil loss permutation behaviour") {
    Rng rng(5);
    MilConfig cfg;
    std::vector<double> anom(6), norm(6);
    for (auto& v : anom) v = rng.uniform();
    for (auto& v : norm) v = rng.uniform();

    std::vector<double> norm_perm = norm;
    std::swap(norm_perm[0], norm_perm[4]);
    CHECK(mil_ranking_loss(anom, norm_perm, cfg) ==
          doctest::Approx(mil_ranking_loss(anom, norm, cfg)).epsilon(1e-15));

    std::vector<double> anom_perm = anom;
    std::swap(anom_perm[0], anom_perm[4]);
    MilConfig no_smooth = cfg;
    no_smooth.lambda_smooth = 0.0;
    CHECK(mil_ranking_loss(anom_perm, norm, no_smooth) ==
          doctest::Approx(mil_ranking_loss(anom, norm, no_smooth)).epsilon(1e-15));
    // The smoothness term is order-sensitive.
    std::vector<double> ramp = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<double> shuffled = {1.0, 0.0, 0.8, 0.2, 0.6, 0.4};
    CHECK(mil_ranking_loss(shuffled, norm, cfg) > mil_ranking_loss(ramp, norm, cfg));
}

TEST_CASE("bag top-k pooling averages the strongest segments") {
    MilConfig cfg = zero_lambda();
    cfg.bag_top_k = 2;
    std::vector<double> anom = {0.2, 1.0, 0.6, 0.0};
    std::vector<double> norm = {0.1, 0.1, 0.1, 0.1};
    // bag(anom) = (1.0 + 0.6)/2 = 0.8, bag(norm) = 0.1.
    CHECK(mil_ranking_loss(anom, norm, cfg) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("adagrad follows the reference arithmetic") {
    ParamMap params = {{"w", Tensor::scalar(1.0)}};
    ParamMap grads = {{"w", Tensor::scalar(1.0)}};
    OptimizerState state = OptimizerState::init(params, 0.0);
    auto lr = [](const std::string&) { return 0.1; };

    adagrad_step(params, grads, state, lr, 0.0);
    CHECK(params.at("w").at(0, 0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(state.accumulators.at("w").at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));

    adagrad_step(params, grads, state, lr, 0.0);
    CHECK(params.at("w").at(0, 0) == doctest::Approx(0.9 - 0.1 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(state.accumulators.at("w").at(0, 0) == doctest::Approx(2.0).epsilon(1e-15));

    // Zero gradient with zero decay is a fixed point.
    ParamMap zero_grads = {{"w", Tensor::scalar(0.0)}};
    const double before = params.at("w").at(0, 0);
    adagrad_step(params, zero_grads, state, lr, 0.0);
    CHECK(params.at("w").at(0, 0) == before);
}

TEST_CASE("adagrad applies weight decay through the effective gradient") {
    ParamMap params = {{"w", Tensor::scalar(2.0)}};
    ParamMap grads = {{"w", Tensor::scalar(0.0)}};
    OptimizerState state = OptimizerState::init(params, 0.0);
    adagrad_step(params, grads, state, [](const std::string&) { return 0.5; }, 0.1);
    // g' = 0 + 0.1*2 = 0.2; G = 0.04; step = 0.5 * 0.2 / 0.2 = 0.5.
    CHECK(params.at("w").at(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("adagrad accumulators never decrease and lr=0 freezes parameters") {
    Rng rng(11);
    ParamMap params = {{"a", Tensor(2, 3)}, {"b", Tensor(1, 4)}};
    for (auto& [name, t] : params)
        for (auto& v : t.data) v = rng.normal();
    const ParamMap frozen = params;
    OptimizerState state = OptimizerState::init(params, 1e-10);
    ParamMap prev_acc = state.accumulators;
    for (int step = 0; step < 10; ++step) {
        ParamMap grads;
        for (auto& [name, t] : params) {
            Tensor gt(t.rows, t.cols);
            for (auto& v : gt.data) v = rng.normal();
            grads[name] = gt;
        }
        adagrad_step(params, grads, state, [](const std::string&) { return 0.0; }, 1e-3);
        for (const auto& [name, acc] : state.accumulators)
            for (size_t i = 0; i < acc.data.size(); ++i)
                CHECK(acc.data[i] >= prev_acc.at(name).data[i]);
        prev_acc = state.accumulators;
    }
    for (const auto& [name, t] : params) CHECK(bit_identical(t, frozen.at(name)));
}

TEST_CASE("learning-rate selector splits temporal and other parameters") {
    MilConfig cfg;
    cfg.lr_temporal = 1e-4;
    cfg.lr_other = 1e-3;
    auto lr = mil_lr_selector(cfg);
    CHECK(lr("tam.attn.w_q_c0") == 1e-4);
    CHECK(lr("tam.ffn.w1") == 1e-4);
    CHECK(lr("proj0.w1") == 1e-3);
    CHECK(lr("head.w2") == 1e-3);
}

TEST_CASE("mil pair loss gradients pass the finite-difference check") {
    Rng rng(13);
    for (int T : {1, 2}) {
        std::vector<int> dims(T, 8);
        ModelSpec spec = make_teacher_spec(dims, 8, 2, 3);
        const ParamMap params = perturb_biases(init_params(spec, 17 + T), 300 + T);
        MilConfig cfg;
        Graph g;
        build_mil_pair_loss(g, spec, params, 4, cfg);
        std::map<std::string, Tensor> inputs;
        for (int t = 0; t < T; ++t) {
            Tensor a(4, 8), n(4, 8);
            for (auto& v : a.data) v = rng.normal();
            for (auto& v : n.data) v = rng.normal();
            inputs["a.z" + std::to_string(t)] = a;
            inputs["n.z" + std::to_string(t)] = n;
        }
        const auto rep = g.grad_check(inputs, 1e-4);
        INFO("T=" << T << " worst=" << rep.worst_parameter << " err=" << rep.max_rel_error);
        CHECK(rep.passed);
    }
}

TEST_CASE("train_teacher with zero epochs leaves parameters at init") {
    FeatureStore store = tiny_store(1, 6, 4, 21);
    ModelSpec spec = make_teacher_spec({6}, 8, 2, 3);
    MilConfig cfg;
    cfg.epochs = 0;
    cfg.batch_normal = 2;
    cfg.batch_anomalous = 2;
    const Checkpoint ckpt = train_teacher(store, spec, cfg, 5);
    const ParamMap init = init_params(spec, 5);
    for (const auto& [name, t] : init) CHECK(bit_identical(t, ckpt.params.at(name)));
}

TEST_CASE("train_teacher is deterministic in the seed") {
    FeatureStore store = tiny_store(1, 6, 4, 23);
    ModelSpec spec = make_teacher_spec({6}, 8, 2, 3);
    MilConfig cfg;
    cfg.epochs = 2;
    cfg.batch_normal = 2;
    cfg.batch_anomalous = 2;
    const Checkpoint a = train_teacher(store, spec, cfg, 9);
    const Checkpoint b = train_teacher(store, spec, cfg, 9);
    REQUIRE(a.params.size() == b.params.size());
    for (const auto& [name, t] : a.params) CHECK(bit_identical(t, b.params.at(name)));
    const Checkpoint c = train_teacher(store, spec, cfg, 10);
    bool any_diff = false;
    for (const auto& [name, t] : a.params)
        if (!bit_identical(t, c.params.at(name))) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("train_teacher reduces the mean epoch loss on separable data") {
    FeatureStore store = tiny_store(2, 6, 4, 29);
    ModelSpec spec = make_teacher_spec({6, 6}, 8, 2, 3);
    MilConfig cfg;
    cfg.epochs = 10;
    cfg.batch_normal = 2;
    cfg.batch_anomalous = 2;
    cfg.lr_other = 1e-2;
    cfg.lr_temporal = 1e-3;
    TrainHistory history;
    train_teacher(store, spec, cfg, 3, &history);
    REQUIRE(history.epoch_mean_loss.size() == 10);
    CHECK(history.epoch_mean_loss.back() < history.epoch_mean_loss.front());
}

TEST_CASE("train_teacher rejects single-class datasets") {
    FeatureStore store = tiny_store(1, 6, 4, 31);
    // Drop all anomalous train videos.
    FeatureStore normals_only;
    normals_only.manifest = store.manifest;
    normals_only.manifest.videos.clear();
    normals_only.n_s = store.n_s;
    for (const auto& v : store.videos)
        if (v.record.label == 0) {
            normals_only.videos.push_back(v);
            normals_only.manifest.videos.push_back(v.record);
        }
    ModelSpec spec = make_teacher_spec({6}, 8, 2, 3);
    MilConfig cfg;
    cfg.batch_normal = 2;
    cfg.batch_anomalous = 2;
    CHECK_THROWS_AS(train_teacher(normals_only, spec, cfg, 1), DataError);
}

TEST_CASE("mil config validation rejects non-positive settings") {
    MilConfig cfg;
    cfg.epochs = -1;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = MilConfig{};
    cfg.batch_normal = 0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = MilConfig{};
    cfg.lr_other = 0.0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = MilConfig{};
    cfg.bag_top_k = 0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
}
