#pragma once

#include <map>
#include <string>
#include <vector>

#include "dakd/tensor.hpp"

namespace dakd {

// Reverse-mode differentiable computation graph over matrices.
//
// Nodes are appended in topological order at build time; shapes are
// inferred and checked on construction. forward() evaluates with fresh
// input bindings, backward() accumulates gradients for every parameter.
// A graph instance is reusable: rebind inputs or overwrite parameter
// values between calls.
class Graph {
public:
    using Id = int;

    // -- leaves ------------------------------------------------------------
    Id parameter(const std::string& name, Tensor init);
    // Returns the existing parameter when the name is already registered
    // (shape-checked); used to share weights across repeated subgraphs.
    Id get_or_parameter(const std::string& name, const Tensor& init);
    Id input(const std::string& name, int rows, int cols);
    Id constant(Tensor value);

    // -- primitives ----------------------------------------------------------
    Id matmul(Id a, Id b);
    Id transpose(Id a);
    Id add(Id a, Id b);            // same shape
    Id sub(Id a, Id b);            // same shape
    Id mul(Id a, Id b);            // elementwise, same shape
    Id div(Id a, Id b);            // elementwise, same shape
    Id scale(Id a, double s);
    Id add_rowvec(Id mat, Id row);         // broadcast 1 x m bias over rows
    Id div_colvec(Id mat, Id col);         // divide each row i by col[i]
    Id relu(Id a);
    Id sigmoid(Id a);
    Id softmax_rows(Id a);
    Id log(Id a);
    Id sqrt(Id a);
    Id clamp(Id a, double lo, double hi);
    Id sum_all(Id a);              // -> 1 x 1
    Id mean_all(Id a);             // -> 1 x 1
    Id sum_rows(Id a);             // n x m -> n x 1
    Id topk_mean(Id a, int k);     // mean of k largest entries -> 1 x 1
    Id gather_rows(Id a, std::vector<int> index);
    // out[i][j] = a[i][index[i][j]]; index is rows x out_cols.
    Id gather_cols(Id a, std::vector<std::vector<int>> index);
    Id concat_rows(const std::vector<Id>& parts);
    Id concat_cols(const std::vector<Id>& parts);
    Id slice_rows(Id a, int start, int len);
    Id slice_cols(Id a, int start, int len);

    void mark_output(const std::string& name, Id id);

    // -- execution -----------------------------------------------------------
    std::map<std::string, Tensor> forward(const std::map<std::string, Tensor>& inputs);
    // Seeds the named output with `seed` and returns one gradient per parameter.
    std::map<std::string, Tensor> backward(const std::string& output, const Tensor& seed);
    // Convenience for a single scalar output: seed 1.
    std::map<std::string, Tensor> backward();

    void set_parameter(const std::string& name, Tensor value);
    const Tensor& parameter_value(const std::string& name) const;
    std::map<std::string, Tensor> parameters() const;
    const std::vector<std::string>& parameter_names() const { return param_names_; }
    const Tensor& output_value(const std::string& name) const;
    const Tensor& node_value(Id id) const;

    int rows(Id id) const { return nodes_[id].rows; }
    int cols(Id id) const { return nodes_[id].cols; }

    struct GradCheckReport {
        bool passed = false;
        double max_rel_error = 0.0;
        std::string worst_parameter;
        std::map<std::string, double> per_parameter;
    };

    // Central finite differences (step h) against backward() on the single
    // scalar output; relative error denominator floored at 1e-6.
    GradCheckReport grad_check(const std::map<std::string, Tensor>& inputs, double rel_tol,
                               double h = 1e-5);

private:
    enum class Op {
        Parameter, Input, Constant,
        MatMul, Transpose, Add, Sub, Mul, Div, Scale, AddRowVec, DivColVec,
        Relu, Sigmoid, SoftmaxRows, Log, Sqrt, Clamp,
        SumAll, MeanAll, SumRows, TopKMean,
        GatherRows, GatherCols, ConcatRows, ConcatCols, SliceRows, SliceCols,
    };

    struct Node {
        Op op;
        std::vector<Id> args;
        int rows = 0, cols = 0;
        double p0 = 0.0, p1 = 0.0;  // scale factor / clamp bounds
        int k = 0;                  // top-k count / slice start
        int len = 0;                // slice length
        std::vector<int> index;
        std::vector<std::vector<int>> index2;
        std::string name;
        Tensor value;
        Tensor grad;
    };

    Id push(Node n);
    void check_arg(Id id) const;
    void eval_node(Node& n);
    void backprop_node(Node& n);

    std::vector<Node> nodes_;
    std::map<std::string, Id> params_;
    std::vector<std::string> param_names_;
    std::map<std::string, Id> inputs_;
    std::map<std::string, Id> outputs_;
    bool forward_done_ = false;
};

}  // namespace dakd
