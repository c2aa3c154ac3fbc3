#include "dakd/models.hpp"

#include <cmath>

namespace dakd {

void ModelSpec::validate() const {
    if (stream_dims.empty()) throw ShapeError("model: at least one stream required");
    for (int d : stream_dims)
        if (d < 1) throw ShapeError("model: stream width must be positive");
    if (dim < 1 || ffn_hidden < 1 || head_h1() < 1 || head_hidden2 < 1)
        throw ShapeError("model: widths must be positive");
    attn_spec().validate();
}

AttnSpec ModelSpec::attn_spec() const {
    AttnSpec a;
    a.streams = streams();
    a.dim = dim;
    a.heads = heads;
    a.bucket_cap = bucket_cap;
    a.include_cross = include_cross;
    a.train_rel_embed = train_rel_embed;
    return a;
}

static Tensor glorot(int rows, int cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    Tensor t(rows, cols);
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

ParamMap init_params(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    ParamMap p;
    const int d = spec.dim;
    for (int t = 0; t < spec.streams(); ++t) {
        const std::string k = "proj" + std::to_string(t) + ".";
        p[k + "w1"] = glorot(spec.stream_dims[t], d, rng);
        p[k + "b1"] = Tensor(1, d, 0.0);
        p[k + "w2"] = glorot(d, d, rng);
        p[k + "b2"] = Tensor(1, d, 0.0);
    }
    if (spec.use_tam) {
        AttentionParams attn = AttentionParams::init(spec.attn_spec(), rng);
        for (int t = 0; t < spec.streams(); ++t) {
            p["tam.attn.w_q_c" + std::to_string(t)] = attn.w_q_c[t];
            p["tam.attn.w_k_c" + std::to_string(t)] = attn.w_k_c[t];
            p["tam.attn.w_v_c" + std::to_string(t)] = attn.w_v_c[t];
        }
        p["tam.attn.w_q_r"] = attn.w_q_r;
        p["tam.attn.w_k_r"] = attn.w_k_r;
        p["tam.attn.rel_embed"] = attn.rel_embed;
    }
    p["tam.ffn.w1"] = glorot(d, spec.ffn_hidden, rng);
    p["tam.ffn.b1"] = Tensor(1, spec.ffn_hidden, 0.0);
    p["tam.ffn.w2"] = glorot(spec.ffn_hidden, d, rng);
    p["tam.ffn.b2"] = Tensor(1, d, 0.0);
    p["head.w1"] = glorot(d, spec.head_h1(), rng);
    p["head.b1"] = Tensor(1, spec.head_h1(), 0.0);
    p["head.w2"] = glorot(spec.head_h1(), spec.head_hidden2, rng);
    p["head.b2"] = Tensor(1, spec.head_hidden2, 0.0);
    p["head.w3"] = glorot(spec.head_hidden2, 1, rng);
    p["head.b3"] = Tensor(1, 1, 0.0);
    return p;
}

static const Tensor& need(const ParamMap& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw DataError("model: missing parameter " + name);
    return it->second;
}

ModelGraphOut build_model(Graph& g, const ModelSpec& spec, const ParamMap& params,
                          const std::string& prefix, int n_s) {
    spec.validate();
    const int T = spec.streams();
    const int d = spec.dim;

    ModelGraphOut out;
    std::vector<Graph::Id> projected;
    for (int t = 0; t < T; ++t) {
        const std::string k = "proj" + std::to_string(t) + ".";
        const Graph::Id z = g.input(prefix + "z" + std::to_string(t), n_s, spec.stream_dims[t]);
        out.inputs.push_back(z);
        const Graph::Id w1 = g.get_or_parameter(k + "w1", need(params, k + "w1"));
        const Graph::Id b1 = g.get_or_parameter(k + "b1", need(params, k + "b1"));
        const Graph::Id w2 = g.get_or_parameter(k + "w2", need(params, k + "w2"));
        const Graph::Id b2 = g.get_or_parameter(k + "b2", need(params, k + "b2"));
        const Graph::Id h = g.relu(g.add_rowvec(g.matmul(z, w1), b1));
        projected.push_back(g.add_rowvec(g.matmul(h, w2), b2));
    }

    Graph::Id mean_x = projected[0];
    for (int t = 1; t < T; ++t) mean_x = g.add(mean_x, projected[t]);
    if (T > 1) mean_x = g.scale(mean_x, 1.0 / T);

    Graph::Id block_in;
    if (spec.use_tam) {
        AttentionParams attn;
        attn.spec = spec.attn_spec();
        for (int t = 0; t < T; ++t) {
            attn.w_q_c.push_back(need(params, "tam.attn.w_q_c" + std::to_string(t)));
            attn.w_k_c.push_back(need(params, "tam.attn.w_k_c" + std::to_string(t)));
            attn.w_v_c.push_back(need(params, "tam.attn.w_v_c" + std::to_string(t)));
        }
        attn.w_q_r = need(params, "tam.attn.w_q_r");
        attn.w_k_r = need(params, "tam.attn.w_k_r");
        attn.rel_embed = need(params, "tam.attn.rel_embed");
        AttnMask mask = spec.attn_mask;
        mask.cross_c2c = mask.cross_c2c && spec.include_cross && T > 1;
        const TamGraphOut tam = build_tam(g, projected, attn, mask, "tam.attn.");
        block_in = g.add(tam.aggregated, mean_x);  // residual
    } else {
        block_in = mean_x;  // mean-pooling fallback
    }

    // Positionwise feedforward with residual.
    const Graph::Id fw1 = g.get_or_parameter("tam.ffn.w1", need(params, "tam.ffn.w1"));
    const Graph::Id fb1 = g.get_or_parameter("tam.ffn.b1", need(params, "tam.ffn.b1"));
    const Graph::Id fw2 = g.get_or_parameter("tam.ffn.w2", need(params, "tam.ffn.w2"));
    const Graph::Id fb2 = g.get_or_parameter("tam.ffn.b2", need(params, "tam.ffn.b2"));
    const Graph::Id ffn = g.add_rowvec(
        g.matmul(g.relu(g.add_rowvec(g.matmul(block_in, fw1), fb1)), fw2), fb2);
    out.representation = g.add(block_in, ffn);

    // Scoring head: dim -> h1 -> h2 -> 1, ReLU between hidden layers,
    // sigmoid output.
    const Graph::Id hw1 = g.get_or_parameter("head.w1", need(params, "head.w1"));
    const Graph::Id hb1 = g.get_or_parameter("head.b1", need(params, "head.b1"));
    const Graph::Id hw2 = g.get_or_parameter("head.w2", need(params, "head.w2"));
    const Graph::Id hb2 = g.get_or_parameter("head.b2", need(params, "head.b2"));
    const Graph::Id hw3 = g.get_or_parameter("head.w3", need(params, "head.w3"));
    const Graph::Id hb3 = g.get_or_parameter("head.b3", need(params, "head.b3"));
    const Graph::Id h1 = g.relu(g.add_rowvec(g.matmul(out.representation, hw1), hb1));
    const Graph::Id h2 = g.relu(g.add_rowvec(g.matmul(h1, hw2), hb2));
    out.scores = g.sigmoid(g.add_rowvec(g.matmul(h2, hw3), hb3));
    return out;
}

ModelRunner::ModelRunner(const ModelSpec& spec, const ParamMap& params, int n_s) : spec_(spec) {
    handles_ = build_model(graph_, spec_, params, "", n_s);
    graph_.mark_output("scores", handles_.scores);
    graph_.mark_output("H", handles_.representation);
}

ForwardResult ModelRunner::forward(const std::vector<Tensor>& streams) {
    if (static_cast<int>(streams.size()) != spec_.streams())
        throw ShapeError("forward: expected " + std::to_string(spec_.streams()) + " streams");
    std::map<std::string, Tensor> bindings;
    for (size_t t = 0; t < streams.size(); ++t) bindings["z" + std::to_string(t)] = streams[t];
    auto values = graph_.forward(bindings);
    ForwardResult r;
    r.representation = values.at("H");
    const Tensor& s = values.at("scores");
    r.scores.assign(s.data.begin(), s.data.end());
    return r;
}

void ModelRunner::set_params(const ParamMap& params) {
    for (const auto& [name, value] : params) graph_.set_parameter(name, value);
}

ForwardResult teacher_forward(const ModelSpec& spec, const ParamMap& params,
                              const std::vector<Tensor>& streams) {
    if (streams.empty()) throw ShapeError("teacher_forward: no streams");
    const int n_s = streams[0].rows;
    for (const Tensor& s : streams)
        if (s.rows != n_s) throw ShapeError("teacher_forward: segment count mismatch across streams");
    ModelRunner runner(spec, params, n_s);
    return runner.forward(streams);
}

ForwardResult student_forward(const ModelSpec& spec, const ParamMap& params,
                              const Tensor& stream) {
    if (spec.streams() != 1) throw ShapeError("student_forward: spec must have exactly one stream");
    ModelRunner runner(spec, params, stream.rows);
    return runner.forward({stream});
}

ModelSpec make_teacher_spec(std::vector<int> stream_dims, int dim, int heads, int bucket_cap) {
    ModelSpec s;
    s.stream_dims = std::move(stream_dims);
    s.dim = dim;
    s.heads = heads;
    s.bucket_cap = bucket_cap;
    s.ffn_hidden = 2 * dim;
    s.head_hidden1 = dim;
    s.head_hidden2 = 32;
    s.include_cross = true;
    return s;
}

ModelSpec make_student_spec(int stream_dim, int dim, int heads, int bucket_cap) {
    ModelSpec s = make_teacher_spec({stream_dim}, dim, heads, bucket_cap);
    s.include_cross = false;
    return s;
}

}  // namespace dakd
