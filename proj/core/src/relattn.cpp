#include "dakd/relattn.hpp"

#include <cmath>

namespace dakd {

void AttnSpec::validate() const {
    if (streams < 1) throw ShapeError("attention: stream count must be >= 1");
    if (dim < 1) throw ShapeError("attention: dim must be >= 1");
    if (heads < 1 || dim % heads != 0) throw ShapeError("attention: heads must divide dim");
    if (bucket_cap < 1) throw ShapeError("attention: bucket cap k must be >= 1");
}

int AttnSpec::divisor_terms(const AttnMask& mask) const {
    int m = 0;
    if (mask.self_c2c) m += 1;
    if (mask.cross_c2c) m += streams - 1;
    if (mask.c2p) m += 1;
    if (mask.p2c) m += 1;
    return m;
}

int relative_bucket(int i, int j, int k) {
    if (k < 1) throw ShapeError("relative_bucket: k must be >= 1");
    if (i < 0 || j < 0) throw ShapeError("relative_bucket: indices must be non-negative");
    const int delta = i - j;
    if (delta <= -k) return 0;
    if (delta >= k) return 2 * k - 1;
    return delta + k;
}

std::vector<std::vector<int>> bucket_matrix(int n, int k) {
    std::vector<std::vector<int>> b(n, std::vector<int>(n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) b[i][j] = relative_bucket(i, j, k);
    return b;
}

static Tensor glorot(int rows, int cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    Tensor t(rows, cols);
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

AttentionParams AttentionParams::init(const AttnSpec& spec, Rng& rng) {
    spec.validate();
    AttentionParams p;
    p.spec = spec;
    const int d = spec.dim;
    for (int t = 0; t < spec.streams; ++t) {
        p.w_q_c.push_back(glorot(d, d, rng));
        p.w_k_c.push_back(glorot(d, d, rng));
        p.w_v_c.push_back(glorot(d, d, rng));
    }
    p.w_q_r = glorot(d, d, rng);
    p.w_k_r = glorot(d, d, rng);
    p.rel_embed = glorot(2 * spec.bucket_cap, d, rng);
    return p;
}

TamGraphOut build_tam(Graph& g, const std::vector<Graph::Id>& streams,
                      const AttentionParams& params, const AttnMask& mask,
                      const std::string& prefix, bool keep_logits) {
    const AttnSpec& spec = params.spec;
    spec.validate();
    if (!mask.any()) throw ShapeError("attention: component mask is empty");
    if (spec.divisor_terms(mask) == 0)
        throw ShapeError("attention: mask leaves no logit terms for this stream count");
    if (static_cast<int>(streams.size()) != spec.streams)
        throw ShapeError("attention: stream count does not match spec");
    const int T = spec.streams;
    const int d = spec.dim;
    const int n_s = g.rows(streams[0]);
    for (Graph::Id s : streams)
        if (g.rows(s) != n_s || g.cols(s) != d)
            throw ShapeError("attention: streams must share shape n_s x d");

    // Registered parameters: per-stream content projections, shared
    // positional projections, shared relative embedding table.
    std::vector<Graph::Id> wq(T), wk(T), wv(T);
    for (int t = 0; t < T; ++t) {
        wq[t] = g.get_or_parameter(prefix + "w_q_c" + std::to_string(t), params.w_q_c[t]);
        wk[t] = g.get_or_parameter(prefix + "w_k_c" + std::to_string(t), params.w_k_c[t]);
        wv[t] = g.get_or_parameter(prefix + "w_v_c" + std::to_string(t), params.w_v_c[t]);
    }
    const Graph::Id wqr = g.get_or_parameter(prefix + "w_q_r", params.w_q_r);
    const Graph::Id wkr = g.get_or_parameter(prefix + "w_k_r", params.w_k_r);
    const Graph::Id zt = spec.train_rel_embed
                             ? g.get_or_parameter(prefix + "rel_embed", params.rel_embed)
                             : g.constant(params.rel_embed);

    std::vector<Graph::Id> qc(T), kc(T), vc(T);
    for (int t = 0; t < T; ++t) {
        qc[t] = g.matmul(streams[t], wq[t]);
        kc[t] = g.matmul(streams[t], wk[t]);
        vc[t] = g.matmul(streams[t], wv[t]);
    }
    const Graph::Id qr = g.matmul(zt, wqr);  // 2k x d
    const Graph::Id kr = g.matmul(zt, wkr);

    const auto buckets = bucket_matrix(n_s, spec.bucket_cap);
    const int m_terms = spec.divisor_terms(mask);
    const double inv_div = 1.0 / std::sqrt(static_cast<double>(m_terms) * d);
    const int dh = d / spec.heads;

    TamGraphOut out;
    out.logits.resize(T);
    for (int t = 0; t < T; ++t) {
        std::vector<Graph::Id> head_outs;
        for (int h = 0; h < spec.heads; ++h) {
            const int c0 = h * dh;
            const Graph::Id qc_h = g.slice_cols(qc[t], c0, dh);
            const Graph::Id kc_h = g.slice_cols(kc[t], c0, dh);
            const Graph::Id vc_h = g.slice_cols(vc[t], c0, dh);

            Graph::Id acc = -1;
            auto accumulate = [&](Graph::Id term) { acc = (acc < 0) ? term : g.add(acc, term); };

            if (mask.self_c2c) accumulate(g.matmul(qc_h, g.transpose(kc_h)));
            if (mask.cross_c2c) {
                for (int u = 0; u < T; ++u) {
                    if (u == t) continue;
                    const Graph::Id kc_u = g.slice_cols(kc[u], c0, dh);
                    accumulate(g.matmul(qc_h, g.transpose(kc_u)));
                }
            }
            if (mask.c2p) {
                // C2P[i][j] = Qc_i . Kr_{bucket(i,j)}
                const Graph::Id kr_h = g.slice_cols(kr, c0, dh);
                const Graph::Id p = g.matmul(qc_h, g.transpose(kr_h));  // n_s x 2k
                accumulate(g.gather_cols(p, buckets));
            }
            if (mask.p2c) {
                // P2C[i][j] = Kc_j . Qr_{bucket(j,i)}
                const Graph::Id qr_h = g.slice_cols(qr, c0, dh);
                const Graph::Id p = g.matmul(kc_h, g.transpose(qr_h));  // n_s x 2k
                accumulate(g.transpose(g.gather_cols(p, buckets)));
            }

            const Graph::Id scaled = g.scale(acc, inv_div);
            if (keep_logits) out.logits[t].push_back(scaled);
            const Graph::Id sm = g.softmax_rows(scaled);
            head_outs.push_back(g.matmul(sm, vc_h));
        }
        out.per_stream.push_back(spec.heads == 1 ? head_outs[0] : g.concat_cols(head_outs));
    }

    Graph::Id sum = out.per_stream[0];
    for (int t = 1; t < T; ++t) sum = g.add(sum, out.per_stream[t]);
    out.aggregated = T == 1 ? sum : g.scale(sum, 1.0 / T);
    return out;
}

AttentionOutput ablate_components(const std::vector<Tensor>& streams,
                                  const AttentionParams& params, const AttnMask& mask,
                                  bool keep_logits) {
    Graph g;
    std::vector<Graph::Id> ids;
    std::map<std::string, Tensor> bindings;
    for (size_t t = 0; t < streams.size(); ++t) {
        const std::string name = "z" + std::to_string(t);
        ids.push_back(g.input(name, streams[t].rows, streams[t].cols));
        bindings[name] = streams[t];
    }
    const TamGraphOut tam = build_tam(g, ids, params, mask, "attn.", keep_logits);
    g.mark_output("H", tam.aggregated);
    for (size_t t = 0; t < tam.per_stream.size(); ++t)
        g.mark_output("H" + std::to_string(t), tam.per_stream[t]);
    if (keep_logits)
        for (size_t t = 0; t < tam.logits.size(); ++t)
            for (size_t h = 0; h < tam.logits[t].size(); ++h)
                g.mark_output("A" + std::to_string(t) + "_" + std::to_string(h), tam.logits[t][h]);
    auto values = g.forward(bindings);

    AttentionOutput out;
    out.aggregated = values.at("H");
    for (size_t t = 0; t < streams.size(); ++t)
        out.per_stream.push_back(values.at("H" + std::to_string(t)));
    if (keep_logits) {
        out.logits.resize(streams.size());
        for (size_t t = 0; t < streams.size(); ++t)
            for (int h = 0; h < params.spec.heads; ++h)
                out.logits[t].push_back(values.at("A" + std::to_string(t) + "_" + std::to_string(h)));
    }
    return out;
}

AttentionOutput tam_forward(const std::vector<Tensor>& streams, const AttentionParams& params,
                            bool include_cross, bool keep_logits) {
    AttnMask mask;
    mask.cross_c2c = include_cross && params.spec.streams > 1;
    return ablate_components(streams, params, mask, keep_logits);
}

}  // namespace dakd
