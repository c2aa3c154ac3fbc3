#include <doctest.h>

#include <cmath>
#include <vector>

#include "dakd/relattn.hpp"
#include "dakd/rng.hpp"

using namespace dakd;

namespace {

Tensor random_tensor(int r, int c, Rng& rng) {
    Tensor t(r, c);
    for (auto& v : t.data) v = rng.normal();
    return t;
}

// Plain-loop matmul, independent of the graph engine.
Tensor loop_matmul(const Tensor& a, const Tensor& b) {
    Tensor out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.cols; ++j) {
            double s = 0.0;
            for (int l = 0; l < a.cols; ++l) s += a.at(i, l) * b.at(l, j);
            out.at(i, j) = s;
        }
    return out;
}

double slice_dot(const Tensor& a, int ra, const Tensor& b, int rb, int c0, int len) {
    double s = 0.0;
    for (int c = c0; c < c0 + len; ++c) s += a.at(ra, c) * b.at(rb, c);
    return s;
}

struct NaiveOut {
    std::vector<Tensor> per_stream;
    Tensor aggregated;
    std::vector<std::vector<Tensor>> logits;
};

// Reference implementation: explicit loops over target stream, head, query
// position, key position, with each logit term spelled out from scratch.
NaiveOut naive_tam(const std::vector<Tensor>& streams, const AttentionParams& params,
                   const AttnMask& mask) {
    const AttnSpec& spec = params.spec;
    const int T = spec.streams;
    const int d = spec.dim;
    const int dh = d / spec.heads;
    const int n = streams[0].rows;
    const int k = spec.bucket_cap;

    std::vector<Tensor> qc, kc, vc;
    for (int t = 0; t < T; ++t) {
        qc.push_back(loop_matmul(streams[t], params.w_q_c[t]));
        kc.push_back(loop_matmul(streams[t], params.w_k_c[t]));
        vc.push_back(loop_matmul(streams[t], params.w_v_c[t]));
    }
    const Tensor qr = loop_matmul(params.rel_embed, params.w_q_r);
    const Tensor kr = loop_matmul(params.rel_embed, params.w_k_r);

    int m = 0;
    if (mask.self_c2c) m += 1;
    if (mask.cross_c2c) m += T - 1;
    if (mask.c2p) m += 1;
    if (mask.p2c) m += 1;
    const double div = std::sqrt(static_cast<double>(m) * d);

    NaiveOut out;
    out.aggregated = Tensor(n, d);
    out.logits.resize(T);
    for (int t = 0; t < T; ++t) {
        Tensor ht(n, d);
        for (int h = 0; h < spec.heads; ++h) {
            const int c0 = h * dh;
            Tensor a(n, n);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    if (mask.self_c2c) s += slice_dot(qc[t], i, kc[t], j, c0, dh);
                    if (mask.cross_c2c)
                        for (int u = 0; u < T; ++u)
                            if (u != t) s += slice_dot(qc[t], i, kc[u], j, c0, dh);
                    if (mask.c2p) s += slice_dot(qc[t], i, kr, relative_bucket(i, j, k), c0, dh);
                    if (mask.p2c) s += slice_dot(kc[t], j, qr, relative_bucket(j, i, k), c0, dh);
                    a.at(i, j) = s / div;
                }
            }
            out.logits[t].push_back(a);
            for (int i = 0; i < n; ++i) {
                double mx = a.at(i, 0);
                for (int j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
                std::vector<double> e(n);
                double z = 0.0;
                for (int j = 0; j < n; ++j) z += e[j] = std::exp(a.at(i, j) - mx);
                for (int c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += (e[j] / z) * vc[t].at(j, c0 + c);
                    ht.at(i, c0 + c) = acc;
                }
            }
        }
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) out.aggregated.at(i, c) += ht.at(i, c) / T;
        out.per_stream.push_back(std::move(ht));
    }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.cols == b.cols);
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST_CASE("relative bucket table for k=3") {
    // i - j swept over [-5, 5] at k = 3.
    const std::vector<int> expected = {0, 0, 0, 1, 2, 3, 4, 5, 5, 5, 5};
    for (int delta = -5; delta <= 5; ++delta)
        CHECK(relative_bucket(delta + 5, 5, 3) == expected[delta + 5]);
}

TEST_CASE("relative bucket exhaustive against closed form") {
    for (int k : {1, 3, 25}) {
        for (int i = 0; i < 60; ++i) {
            for (int j = 0; j < 60; ++j) {
                const int delta = i - j;
                const int expected = delta <= -k ? 0 : (delta >= k ? 2 * k - 1 : delta + k);
                CHECK(relative_bucket(i, j, k) == expected);
            }
        }
        const auto b = bucket_matrix(8, k);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) CHECK(b[i][j] == relative_bucket(i, j, k));
    }
    CHECK(relative_bucket(0, 40, 25) == 0);
    CHECK(relative_bucket(40, 0, 25) == 49);
    CHECK(relative_bucket(5, 5, 25) == 25);
    CHECK_THROWS_AS(relative_bucket(0, 0, 0), ShapeError);
    CHECK_THROWS_AS(relative_bucket(-1, 0, 3), ShapeError);
}

TEST_CASE("softmax divisor term counts") {
    AttnSpec spec;
    spec.streams = 3;
    spec.dim = 512;
    CHECK(spec.divisor_terms(AttnMask{}) == 5);  // sqrt(5*512) = sqrt(2560) ~ 50.596
    spec.streams = 1;
    CHECK(spec.divisor_terms(AttnMask{}) == 3);  // sqrt(3*512) = sqrt(1536) ~ 39.192
    AttnMask self_only{true, false, false, false};
    CHECK(spec.divisor_terms(self_only) == 1);
    CHECK(std::sqrt(5.0 * 512.0) == doctest::Approx(50.596).epsilon(1e-4));
    CHECK(std::sqrt(3.0 * 512.0) == doctest::Approx(39.192).epsilon(1e-4));
}

TEST_CASE("tam_forward matches the loop oracle on random instances") {
    Rng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        AttnSpec spec;
        spec.streams = 1 + static_cast<int>(rng.uniform_int(3));
        spec.heads = 1 + static_cast<int>(rng.uniform_int(2));  // 1 or 2
        spec.dim = spec.heads * (2 + static_cast<int>(rng.uniform_int(3)));
        if (spec.dim > 8) spec.dim = 8 - (8 % spec.heads);
        spec.bucket_cap = 1 + static_cast<int>(rng.uniform_int(4));
        const int n_s = 2 + static_cast<int>(rng.uniform_int(5));  // 2..6

        AttentionParams params = AttentionParams::init(spec, rng);
        std::vector<Tensor> streams;
        for (int t = 0; t < spec.streams; ++t)
            streams.push_back(random_tensor(n_s, spec.dim, rng));

        AttnMask mask;
        mask.self_c2c = rng.uniform() < 0.5;
        mask.cross_c2c = rng.uniform() < 0.5;
        mask.c2p = rng.uniform() < 0.5;
        mask.p2c = rng.uniform() < 0.5;
        if (spec.divisor_terms(mask) == 0) mask.self_c2c = true;

        const AttentionOutput got = ablate_components(streams, params, mask, true);
        const NaiveOut want = naive_tam(streams, params, mask);

        CHECK(max_abs_diff(got.aggregated, want.aggregated) <= 1e-10);
        for (int t = 0; t < spec.streams; ++t) {
            CHECK(max_abs_diff(got.per_stream[t], want.per_stream[t]) <= 1e-10);
            for (int h = 0; h < spec.heads; ++h)
                CHECK(max_abs_diff(got.logits[t][h], want.logits[t][h]) <= 1e-10);
        }
    }
}

TEST_CASE("tam_forward include_cross flag matches full and no-cross masks") {
    Rng rng(7);
    AttnSpec spec;
    spec.streams = 3;
    spec.dim = 8;
    spec.heads = 2;
    spec.bucket_cap = 3;
    AttentionParams params = AttentionParams::init(spec, rng);
    std::vector<Tensor> streams;
    for (int t = 0; t < 3; ++t) streams.push_back(random_tensor(5, 8, rng));

    const auto with_cross = tam_forward(streams, params, true);
    const auto full = ablate_components(streams, params, AttnMask{});
    CHECK(max_abs_diff(with_cross.aggregated, full.aggregated) == 0.0);

    const auto no_cross = tam_forward(streams, params, false);
    AttnMask nc;
    nc.cross_c2c = false;
    const auto masked = ablate_components(streams, params, nc);
    CHECK(max_abs_diff(no_cross.aggregated, masked.aggregated) == 0.0);
}

TEST_CASE("single stream with content-only mask reduces to vanilla attention") {
    Rng rng(19);
    AttnSpec spec;
    spec.streams = 1;
    spec.dim = 8;
    spec.heads = 2;
    spec.bucket_cap = 3;
    AttentionParams params = AttentionParams::init(spec, rng);
    const Tensor x = random_tensor(6, 8, rng);

    AttnMask self_only{true, false, false, false};
    const auto got = ablate_components({x}, params, self_only);

    // Vanilla multi-head attention: softmax(Q Kᵀ / sqrt(d)) V per head.
    const Tensor q = loop_matmul(x, params.w_q_c[0]);
    const Tensor k = loop_matmul(x, params.w_k_c[0]);
    const Tensor v = loop_matmul(x, params.w_v_c[0]);
    const int dh = 4;
    Tensor want(6, 8);
    for (int h = 0; h < 2; ++h) {
        const int c0 = h * dh;
        for (int i = 0; i < 6; ++i) {
            std::vector<double> a(6);
            double mx = -1e300;
            for (int j = 0; j < 6; ++j)
                mx = std::max(mx, a[j] = slice_dot(q, i, k, j, c0, dh) / std::sqrt(8.0));
            double z = 0.0;
            for (int j = 0; j < 6; ++j) z += a[j] = std::exp(a[j] - mx);
            for (int c = 0; c < dh; ++c) {
                double s = 0.0;
                for (int j = 0; j < 6; ++j) s += (a[j] / z) * v.at(j, c0 + c);
                want.at(i, c0 + c) = s;
            }
        }
    }
    CHECK(max_abs_diff(got.aggregated, want) <= 1e-10);
    CHECK(max_abs_diff(got.per_stream[0], got.aggregated) == 0.0);
}

TEST_CASE("zero relative embedding removes the positional contribution") {
    Rng rng(23);
    AttnSpec spec;
    spec.streams = 1;
    spec.dim = 8;
    spec.heads = 2;
    spec.bucket_cap = 3;
    AttentionParams params = AttentionParams::init(spec, rng);
    params.rel_embed = Tensor(2 * spec.bucket_cap, spec.dim);  // zeros
    const Tensor x = random_tensor(5, 8, rng);

    // Full mask with a zero table still divides by sqrt(3d); logits must equal
    // the content-only logits rescaled by sqrt(1/3).
    const auto full = ablate_components({x}, params, AttnMask{}, true);
    AttnMask self_only{true, false, false, false};
    const auto content = ablate_components({x}, params, self_only, true);
    for (int h = 0; h < 2; ++h) {
        Tensor rescaled = content.logits[0][h];
        for (auto& v : rescaled.data) v *= std::sqrt(1.0 / 3.0);
        CHECK(max_abs_diff(full.logits[0][h], rescaled) <= 1e-12);
    }
}

TEST_CASE("aggregated output is the mean of per-stream outputs") {
    Rng rng(31);
    AttnSpec spec;
    spec.streams = 3;
    spec.dim = 6;
    spec.heads = 3;
    spec.bucket_cap = 2;
    AttentionParams params = AttentionParams::init(spec, rng);
    std::vector<Tensor> streams;
    for (int t = 0; t < 3; ++t) streams.push_back(random_tensor(4, 6, rng));
    const auto out = tam_forward(streams, params, true);
    Tensor mean(4, 6);
    for (const auto& h : out.per_stream)
        for (size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += h.data[i] / 3.0;
    CHECK(max_abs_diff(out.aggregated, mean) <= 1e-12);
}

TEST_CASE("stream permutation permutes per-stream outputs") {
    Rng rng(47);
    AttnSpec spec;
    spec.streams = 3;
    spec.dim = 8;
    spec.heads = 2;
    spec.bucket_cap = 3;
    AttentionParams params = AttentionParams::init(spec, rng);
    std::vector<Tensor> streams;
    for (int t = 0; t < 3; ++t) streams.push_back(random_tensor(5, 8, rng));

    const std::vector<int> perm = {2, 0, 1};
    AttentionParams pp = params;
    std::vector<Tensor> ps;
    for (int t = 0; t < 3; ++t) {
        pp.w_q_c[t] = params.w_q_c[perm[t]];
        pp.w_k_c[t] = params.w_k_c[perm[t]];
        pp.w_v_c[t] = params.w_v_c[perm[t]];
        ps.push_back(streams[perm[t]]);
    }
    const auto a = tam_forward(streams, params, true);
    const auto b = tam_forward(ps, pp, true);
    CHECK(max_abs_diff(a.aggregated, b.aggregated) <= 1e-10);
    for (int t = 0; t < 3; ++t)
        CHECK(max_abs_diff(a.per_stream[perm[t]], b.per_stream[t]) <= 1e-10);
}

TEST_CASE("attention rows of softmax sum to one via logits") {
    Rng rng(53);
    AttnSpec spec;
    spec.streams = 2;
    spec.dim = 8;
    spec.heads = 2;
    spec.bucket_cap = 25;
    AttentionParams params = AttentionParams::init(spec, rng);
    std::vector<Tensor> streams = {random_tensor(6, 8, rng), random_tensor(6, 8, rng)};
    const auto out = tam_forward(streams, params, true, true);
    for (const auto& per_head : out.logits) {
        for (const Tensor& a : per_head) {
            for (int i = 0; i < a.rows; ++i) {
                double z = 0.0, mx = a.at(i, 0);
                for (int j = 1; j < a.cols; ++j) mx = std::max(mx, a.at(i, j));
                for (int j = 0; j < a.cols; ++j) z += std::exp(a.at(i, j) - mx);
                // finite and normalizable
                CHECK(std::isfinite(z));
                CHECK(z > 0.0);
            }
        }
    }
}

TEST_CASE("tam gradients pass the finite-difference check") {
    Rng rng(61);
    AttnSpec spec;
    spec.streams = 2;
    spec.dim = 6;
    spec.heads = 2;
    spec.bucket_cap = 2;
    AttentionParams params = AttentionParams::init(spec, rng);

    Graph g;
    std::vector<Graph::Id> ids = {g.input("z0", 4, 6), g.input("z1", 4, 6)};
    const auto tam = build_tam(g, ids, params, AttnMask{}, "attn.");
    g.mark_output("loss", g.mean_all(g.sigmoid(tam.aggregated)));
    const auto rep = g.grad_check(
        {{"z0", random_tensor(4, 6, rng)}, {"z1", random_tensor(4, 6, rng)}}, 1e-4);
    INFO("worst=" << rep.worst_parameter << " err=" << rep.max_rel_error);
    CHECK(rep.passed);
}

TEST_CASE("frozen relative embedding is not a trainable parameter") {
    Rng rng(71);
    AttnSpec spec;
    spec.streams = 1;
    spec.dim = 4;
    spec.heads = 1;
    spec.bucket_cap = 2;
    spec.train_rel_embed = false;
    AttentionParams params = AttentionParams::init(spec, rng);
    Graph g;
    const auto tam = build_tam(g, {g.input("z0", 3, 4)}, params, AttnMask{}, "attn.");
    g.mark_output("loss", g.sum_all(tam.aggregated));
    for (const auto& name : g.parameter_names()) CHECK(name != "attn.rel_embed");
}

TEST_CASE("invalid attention configurations are rejected") {
    Rng rng(83);
    AttnSpec spec;
    spec.streams = 2;
    spec.dim = 8;
    spec.heads = 3;  // does not divide dim
    CHECK_THROWS_AS(spec.validate(), ShapeError);
    spec.heads = 2;
    AttentionParams params = AttentionParams::init(spec, rng);

    AttnMask none{false, false, false, false};
    std::vector<Tensor> streams = {random_tensor(4, 8, rng), random_tensor(4, 8, rng)};
    CHECK_THROWS_AS(ablate_components(streams, params, none), ShapeError);

    // Cross-only mask with a single stream leaves no logit terms.
    AttnSpec solo = spec;
    solo.streams = 1;
    AttentionParams solo_params = AttentionParams::init(solo, rng);
    AttnMask cross_only{false, true, false, false};
    CHECK_THROWS_AS(ablate_components({streams[0]}, solo_params, cross_only), ShapeError);

    std::vector<Tensor> bad = {random_tensor(4, 8, rng), random_tensor(3, 8, rng)};
    CHECK_THROWS_AS(tam_forward(bad, params, true), ShapeError);
    CHECK_THROWS_AS(tam_forward({bad[0]}, params, true), ShapeError);
}
