#include <doctest.h>

#include <cmath>

#include "dakd/models.hpp"
#include "dakd/rng.hpp"

using namespace dakd;

namespace {

Tensor random_tensor(int r, int c, Rng& rng) {
    Tensor t(r, c);
    for (auto& v : t.data) v = rng.normal();
    return t;
}

ParamMap perturb_biases(ParamMap params, uint64_t seed) {
    // Zero-initialized biases sit exactly on relu kinks, which breaks finite
    // differences; nudging them off keeps grad checks meaningful.
    Rng rng(seed);
    for (auto& [name, t] : params)
        if (name.find(".b") != std::string::npos)
            for (auto& v : t.data) v += 0.01 * rng.normal();
    return params;
}

}  // namespace

TEST_CASE("glorot initialization respects the fan bound") {
    ModelSpec spec = make_teacher_spec({64, 64, 32}, 512, 8, 25);
    const ParamMap params = init_params(spec, 5);
    // 512x512 square matrices: bound sqrt(6/1024) ~ 0.07654.
    const double bound = std::sqrt(6.0 / 1024.0);
    CHECK(bound == doctest::Approx(0.07654).epsilon(1e-4));
    const Tensor& w = params.at("tam.attn.w_q_c0");
    REQUIRE(w.rows == 512);
    REQUIRE(w.cols == 512);
    double mx = 0.0;
    for (double v : w.data) mx = std::max(mx, std::abs(v));
    CHECK(mx <= bound);
    CHECK(mx > 0.9 * bound);  // the maximum of 262144 uniforms hugs the bound
    // Biases start at zero.
    for (const auto& [name, t] : params)
        if (name.find(".b") != std::string::npos)
            for (double v : t.data) CHECK(v == 0.0);
}

TEST_CASE("init_params is deterministic in the seed") {
    ModelSpec spec = make_teacher_spec({8, 6}, 8, 2, 3);
    const ParamMap a = init_params(spec, 42);
    const ParamMap b = init_params(spec, 42);
    const ParamMap c = init_params(spec, 43);
    REQUIRE(a.size() == b.size());
    bool any_diff = false;
    for (const auto& [name, t] : a) {
        CHECK(bit_identical(t, b.at(name)));
        if (!bit_identical(t, c.at(name))) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("forward scores are probabilities") {
    Rng rng(9);
    ModelSpec spec = make_teacher_spec({8, 6, 4}, 8, 2, 3);
    const ParamMap params = init_params(spec, 1);
    std::vector<Tensor> streams = {random_tensor(5, 8, rng), random_tensor(5, 6, rng),
                                   random_tensor(5, 4, rng)};
    const ForwardResult out = teacher_forward(spec, params, streams);
    REQUIRE(out.scores.size() == 5);
    for (double s : out.scores) {
        CHECK(s > 0.0);
        CHECK(s < 1.0);
    }
    CHECK(out.representation.rows == 5);
    CHECK(out.representation.cols == 8);
    CHECK(out.representation.all_finite());
}

TEST_CASE("single-stream teacher equals the student bit-exactly") {
    Rng rng(13);
    ModelSpec teacher = make_teacher_spec({10}, 8, 2, 3);
    ModelSpec student = make_student_spec(10, 8, 2, 3);
    const ParamMap tp = init_params(teacher, 7);
    const ParamMap sp = init_params(student, 7);
    REQUIRE(tp.size() == sp.size());
    for (const auto& [name, t] : tp) CHECK(bit_identical(t, sp.at(name)));

    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor(6, 10, rng);
        const ForwardResult a = teacher_forward(teacher, tp, {x});
        const ForwardResult b = student_forward(student, sp, x);
        REQUIRE(a.scores.size() == b.scores.size());
        for (size_t i = 0; i < a.scores.size(); ++i) CHECK(a.scores[i] == b.scores[i]);
        CHECK(bit_identical(a.representation, b.representation));
    }
}

TEST_CASE("repeated forward is bit-identical") {
    Rng rng(17);
    ModelSpec spec = make_teacher_spec({8, 6}, 8, 2, 3);
    const ParamMap params = init_params(spec, 3);
    std::vector<Tensor> streams = {random_tensor(4, 8, rng), random_tensor(4, 6, rng)};
    ModelRunner runner(spec, params, 4);
    const ForwardResult a = runner.forward(streams);
    const ForwardResult b = runner.forward(streams);
    for (size_t i = 0; i < a.scores.size(); ++i) CHECK(a.scores[i] == b.scores[i]);
    const ForwardResult c = teacher_forward(spec, params, streams);
    for (size_t i = 0; i < a.scores.size(); ++i) CHECK(a.scores[i] == c.scores[i]);
}

TEST_CASE("mean-pooling fallback differs from the attention model") {
    Rng rng(19);
    ModelSpec spec = make_teacher_spec({8, 6}, 8, 2, 3);
    ModelSpec notam = spec;
    notam.use_tam = false;
    const ParamMap params = init_params(spec, 11);
    std::vector<Tensor> streams = {random_tensor(4, 8, rng), random_tensor(4, 6, rng)};
    const ForwardResult a = teacher_forward(spec, params, streams);
    const ForwardResult b = teacher_forward(notam, params, streams);
    double diff = 0.0;
    for (size_t i = 0; i < a.scores.size(); ++i) diff += std::abs(a.scores[i] - b.scores[i]);
    CHECK(diff > 0.0);
    for (double s : b.scores) {
        CHECK(s > 0.0);
        CHECK(s < 1.0);
    }
}

TEST_CASE("teacher graph gradients pass the finite-difference check") {
    Rng rng(23);
    for (int T : {1, 2, 3}) {
        std::vector<int> dims;
        for (int t = 0; t < T; ++t) dims.push_back(6 + t);
        ModelSpec spec = make_teacher_spec(dims, 8, 2, 3);
        const ParamMap params = perturb_biases(init_params(spec, 29 + T), 100 + T);

        Graph g;
        const ModelGraphOut model = build_model(g, spec, params, "", 4);
        g.mark_output("loss", g.mean_all(model.scores));
        std::map<std::string, Tensor> inputs;
        for (int t = 0; t < T; ++t)
            inputs["z" + std::to_string(t)] = random_tensor(4, dims[t], rng);
        const auto rep = g.grad_check(inputs, 1e-4);
        INFO("T=" << T << " worst=" << rep.worst_parameter << " err=" << rep.max_rel_error);
        CHECK(rep.passed);
    }
}

TEST_CASE("student graph gradients pass the finite-difference check") {
    Rng rng(31);
    ModelSpec spec = make_student_spec(8, 8, 2, 3);
    const ParamMap params = perturb_biases(init_params(spec, 37), 200);
    Graph g;
    const ModelGraphOut model = build_model(g, spec, params, "", 4);
    g.mark_output("loss", g.mean_all(model.scores));
    const auto rep = g.grad_check({{"z0", random_tensor(4, 8, rng)}}, 1e-4);
    INFO("worst=" << rep.worst_parameter << " err=" << rep.max_rel_error);
    CHECK(rep.passed);
}

TEST_CASE("invalid model specs are rejected") {
    ModelSpec spec = make_teacher_spec({8, 6}, 8, 3, 3);  // heads do not divide dim
    CHECK_THROWS_AS(spec.validate(), ShapeError);
    ModelSpec empty = make_teacher_spec({}, 8, 2, 3);
    CHECK_THROWS_AS(empty.validate(), ShapeError);

    ModelSpec ok = make_teacher_spec({8, 6}, 8, 2, 3);
    const ParamMap params = init_params(ok, 1);
    Rng rng(3);
    // Wrong stream count at forward time.
    CHECK_THROWS_AS(teacher_forward(ok, params, {random_tensor(4, 8, rng)}), ShapeError);
    // Wrong input width.
    CHECK_THROWS_AS(
        teacher_forward(ok, params, {random_tensor(4, 8, rng), random_tensor(4, 5, rng)}),
        ShapeError);
}
