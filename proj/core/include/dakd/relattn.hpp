#pragma once

#include <string>
#include <vector>

#include "dakd/graph.hpp"
#include "dakd/rng.hpp"
#include "dakd/tensor.hpp"

namespace dakd {

// Which logit terms participate in the attention computation.
struct AttnMask {
    bool self_c2c = true;
    bool cross_c2c = true;
    bool c2p = true;
    bool p2c = true;

    bool any() const { return self_c2c || cross_c2c || c2p || p2c; }
};

struct AttnSpec {
    int streams = 1;        // T
    int dim = 512;          // d, shared width after projection
    int heads = 8;          // h, must divide dim
    int bucket_cap = 25;    // k
    bool include_cross = true;
    bool train_rel_embed = true;

    void validate() const;
    // Number of logit term groups entering the softmax divisor sqrt(m*d):
    // self=1, cross=T-1, C2P=1, P2C=1 for the enabled terms.
    int divisor_terms(const AttnMask& mask) const;
};

// Content/position projections and the shared relative embedding table.
struct AttentionParams {
    AttnSpec spec;
    std::vector<Tensor> w_q_c, w_k_c, w_v_c;  // per stream, d x d
    Tensor w_q_r, w_k_r;                      // shared, d x d
    Tensor rel_embed;                         // shared, 2k x d

    static AttentionParams init(const AttnSpec& spec, Rng& rng);
};

struct AttentionOutput {
    std::vector<Tensor> per_stream;       // H_t, n_s x d
    Tensor aggregated;                    // H = mean_t H_t
    std::vector<std::vector<Tensor>> logits;  // [stream][head], n_s x n_s (pre-softmax, scaled)
};

// Relative distance bucket of Eq. family: 0 if i-j <= -k, 2k-1 if i-j >= k,
// i-j+k otherwise.
int relative_bucket(int i, int j, int k);

// Bucket index matrix B[i][j] = relative_bucket(i, j, k) for i, j in [0, n).
std::vector<std::vector<int>> bucket_matrix(int n, int k);

// Handles to the subgraph built by build_tam.
struct TamGraphOut {
    std::vector<Graph::Id> per_stream;
    Graph::Id aggregated;
    std::vector<std::vector<Graph::Id>> logits;  // [stream][head]
};

// Builds the disentangled multi-stream attention into `g`. `streams` are
// node ids of the projected inputs, each n_s x d. Parameters are registered
// under `prefix` ("<prefix>w_q_c0", ..., "<prefix>rel_embed"); when
// params.spec.train_rel_embed is false the table enters as a constant.
TamGraphOut build_tam(Graph& g, const std::vector<Graph::Id>& streams,
                      const AttentionParams& params, const AttnMask& mask,
                      const std::string& prefix, bool keep_logits = false);

// Convenience immediate-mode evaluation (builds a throwaway graph).
AttentionOutput tam_forward(const std::vector<Tensor>& streams, const AttentionParams& params,
                            bool include_cross, bool keep_logits = false);

// tam_forward with an explicit component mask (Table-style ablations).
AttentionOutput ablate_components(const std::vector<Tensor>& streams,
                                  const AttentionParams& params, const AttnMask& mask,
                                  bool keep_logits = false);

}  // namespace dakd
