#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dakd/relattn.hpp"

namespace dakd {

// Architecture of a teacher (T streams) or student (one stream, no cross
// content-to-content term).
struct ModelSpec {
    std::vector<int> stream_dims;  // input width d_t per stream
    int dim = 512;                 // shared width after projection
    int heads = 8;
    int bucket_cap = 25;
    int ffn_hidden = 1024;
    int head_hidden1 = 512;        // first scoring-head hidden width; 0 = use dim
    int head_hidden2 = 32;
    bool include_cross = true;
    bool use_tam = true;           // false = mean-pooling fallback (attention off)
    bool train_rel_embed = true;
    AttnMask attn_mask;            // component ablations

    int streams() const { return static_cast<int>(stream_dims.size()); }
    int head_h1() const { return head_hidden1 > 0 ? head_hidden1 : dim; }
    void validate() const;
    AttnSpec attn_spec() const;
};

using ParamMap = std::map<std::string, Tensor>;

// Glorot-uniform weights, zero biases, deterministic in `seed`.
ParamMap init_params(const ModelSpec& spec, uint64_t seed);

// Handles into a model forward subgraph.
struct ModelGraphOut {
    std::vector<Graph::Id> inputs;  // z0..z{T-1}, n_s x d_t
    Graph::Id scores;               // n_s x 1, in (0,1)
    Graph::Id representation;       // H after the TAM block, n_s x dim
};

// Builds projection MLPs, the TAM block (attention + residual + positionwise
// feedforward) and the scoring head. Inputs are named `<input_prefix>z<t>`;
// parameters are registered unprefixed and shared across repeated builds in
// the same graph.
ModelGraphOut build_model(Graph& g, const ModelSpec& spec, const ParamMap& params,
                          const std::string& input_prefix, int n_s);

struct ForwardResult {
    std::vector<double> scores;  // length n_s
    Tensor representation;       // n_s x dim
};

// A reusable forward evaluator: one graph per (spec, n_s), rebindable
// parameters and inputs.
class ModelRunner {
public:
    ModelRunner(const ModelSpec& spec, const ParamMap& params, int n_s);

    ForwardResult forward(const std::vector<Tensor>& streams);
    void set_params(const ParamMap& params);
    const ModelSpec& spec() const { return spec_; }

private:
    ModelSpec spec_;
    Graph graph_;
    ModelGraphOut handles_;
};

ForwardResult teacher_forward(const ModelSpec& spec, const ParamMap& params,
                              const std::vector<Tensor>& streams);
ForwardResult student_forward(const ModelSpec& spec, const ParamMap& params,
                              const Tensor& stream);

// Spec constructors mirroring the paper-scale defaults.
ModelSpec make_teacher_spec(std::vector<int> stream_dims, int dim, int heads, int bucket_cap);
ModelSpec make_student_spec(int stream_dim, int dim, int heads, int bucket_cap);

}  // namespace dakd
