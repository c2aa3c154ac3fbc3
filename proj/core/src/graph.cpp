#include "dakd/graph.hpp"

#include <algorithm>
#include <cmath>

namespace dakd {

Graph::Id Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    forward_done_ = false;
    return static_cast<Id>(nodes_.size()) - 1;
}

void Graph::check_arg(Id id) const {
    if (id < 0 || id >= static_cast<Id>(nodes_.size())) throw ShapeError("graph: bad node id");
}

Graph::Id Graph::parameter(const std::string& name, Tensor init) {
    if (params_.count(name)) throw ShapeError("graph: duplicate parameter " + name);
    Node n;
    n.op = Op::Parameter;
    n.rows = init.rows;
    n.cols = init.cols;
    n.name = name;
    n.value = std::move(init);
    Id id = push(std::move(n));
    params_[name] = id;
    param_names_.push_back(name);
    return id;
}

Graph::Id Graph::get_or_parameter(const std::string& name, const Tensor& init) {
    auto it = params_.find(name);
    if (it != params_.end()) {
        const Node& n = nodes_[it->second];
        if (n.rows != init.rows || n.cols != init.cols)
            throw ShapeError("graph: parameter " + name + " re-registered with a different shape");
        return it->second;
    }
    return parameter(name, init);
}

Graph::Id Graph::input(const std::string& name, int rows, int cols) {
    if (inputs_.count(name)) throw ShapeError("graph: duplicate input " + name);
    Node n;
    n.op = Op::Input;
    n.rows = rows;
    n.cols = cols;
    n.name = name;
    Id id = push(std::move(n));
    inputs_[name] = id;
    return id;
}

Graph::Id Graph::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.rows = value.rows;
    n.cols = value.cols;
    n.value = std::move(value);
    return push(std::move(n));
}

Graph::Id Graph::matmul(Id a, Id b) {
    check_arg(a);
    check_arg(b);
    if (nodes_[a].cols != nodes_[b].rows)
        throw ShapeError("matmul: inner extents differ (" + std::to_string(nodes_[a].cols) + " vs " +
                         std::to_string(nodes_[b].rows) + ")");
    Node n;
    n.op = Op::MatMul;
    n.args = {a, b};
    n.rows = nodes_[a].rows;
    n.cols = nodes_[b].cols;
    return push(std::move(n));
}

Graph::Id Graph::transpose(Id a) {
    check_arg(a);
    Node n;
    n.op = Op::Transpose;
    n.args = {a};
    n.rows = nodes_[a].cols;
    n.cols = nodes_[a].rows;
    return push(std::move(n));
}

static void require_same(const int r1, const int c1, const int r2, const int c2, const char* what) {
    if (r1 != r2 || c1 != c2) throw ShapeError(std::string(what) + ": shape mismatch");
}

Graph::Id Graph::add(Id a, Id b) {
    check_arg(a);
    check_arg(b);
    require_same(nodes_[a].rows, nodes_[a].cols, nodes_[b].rows, nodes_[b].cols, "add");
    Node n;
    n.op = Op::Add;
    n.args = {a, b};
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::sub(Id a, Id b) {
    check_arg(a);
    check_arg(b);
    require_same(nodes_[a].rows, nodes_[a].cols, nodes_[b].rows, nodes_[b].cols, "sub");
    Node n;
    n.op = Op::Sub;
    n.args = {a, b};
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::mul(Id a, Id b) {
    check_arg(a);
    check_arg(b);
    require_same(nodes_[a].rows, nodes_[a].cols, nodes_[b].rows, nodes_[b].cols, "mul");
    Node n;
    n.op = Op::Mul;
    n.args = {a, b};
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::div(Id a, Id b) {
    check_arg(a);
    check_arg(b);
    require_same(nodes_[a].rows, nodes_[a].cols, nodes_[b].rows, nodes_[b].cols, "div");
    Node n;
    n.op = Op::Div;
    n.args = {a, b};
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::scale(Id a, double s) {
    check_arg(a);
    Node n;
    n.op = Op::Scale;
    n.args = {a};
    n.p0 = s;
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::add_rowvec(Id mat, Id row) {
    check_arg(mat);
    check_arg(row);
    if (nodes_[row].rows != 1 || nodes_[row].cols != nodes_[mat].cols)
        throw ShapeError("add_rowvec: bias must be 1 x cols(mat)");
    Node n;
    n.op = Op::AddRowVec;
    n.args = {mat, row};
    n.rows = nodes_[mat].rows;
    n.cols = nodes_[mat].cols;
    return push(std::move(n));
}

Graph::Id Graph::div_colvec(Id mat, Id col) {
    check_arg(mat);
    check_arg(col);
    if (nodes_[col].cols != 1 || nodes_[col].rows != nodes_[mat].rows)
        throw ShapeError("div_colvec: divisor must be rows(mat) x 1");
    Node n;
    n.op = Op::DivColVec;
    n.args = {mat, col};
    n.rows = nodes_[mat].rows;
    n.cols = nodes_[mat].cols;
    return push(std::move(n));
}

Graph::Id Graph::relu(Id a) {
    check_arg(a);
    Node n;
    n.op = Op::Relu;
    n.args = {a};
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::sigmoid(Id a) {
    check_arg(a);
    Node n;
    n.op = Op::Sigmoid;
    n.args = {a};
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::softmax_rows(Id a) {
    check_arg(a);
    Node n;
    n.op = Op::SoftmaxRows;
    n.args = {a};
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::log(Id a) {
    check_arg(a);
    Node n;
    n.op = Op::Log;
    n.args = {a};
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::sqrt(Id a) {
    check_arg(a);
    Node n;
    n.op = Op::Sqrt;
    n.args = {a};
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::clamp(Id a, double lo, double hi) {
    check_arg(a);
    if (!(lo < hi)) throw ShapeError("clamp: lo must be < hi");
    Node n;
    n.op = Op::Clamp;
    n.args = {a};
    n.p0 = lo;
    n.p1 = hi;
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::sum_all(Id a) {
    check_arg(a);
    Node n;
    n.op = Op::SumAll;
    n.args = {a};
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

Graph::Id Graph::mean_all(Id a) {
    check_arg(a);
    Node n;
    n.op = Op::MeanAll;
    n.args = {a};
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

Graph::Id Graph::sum_rows(Id a) {
    check_arg(a);
    Node n;
    n.op = Op::SumRows;
    n.args = {a};
    n.rows = nodes_[a].rows;
    n.cols = 1;
    return push(std::move(n));
}

Graph::Id Graph::topk_mean(Id a, int k) {
    check_arg(a);
    const int total = nodes_[a].rows * nodes_[a].cols;
    if (k < 1 || k > total) throw ShapeError("topk_mean: k out of range");
    Node n;
    n.op = Op::TopKMean;
    n.args = {a};
    n.k = k;
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

Graph::Id Graph::gather_rows(Id a, std::vector<int> index) {
    check_arg(a);
    if (index.empty()) throw ShapeError("gather_rows: empty index");
    for (int i : index)
        if (i < 0 || i >= nodes_[a].rows) throw ShapeError("gather_rows: index out of range");
    Node n;
    n.op = Op::GatherRows;
    n.args = {a};
    n.rows = static_cast<int>(index.size());
    n.cols = nodes_[a].cols;
    n.index = std::move(index);
    return push(std::move(n));
}

Graph::Id Graph::gather_cols(Id a, std::vector<std::vector<int>> index) {
    check_arg(a);
    if (static_cast<int>(index.size()) != nodes_[a].rows)
        throw ShapeError("gather_cols: index rows must match input rows");
    const size_t out_cols = index.empty() ? 0 : index[0].size();
    if (out_cols == 0) throw ShapeError("gather_cols: empty index");
    for (const auto& row : index) {
        if (row.size() != out_cols) throw ShapeError("gather_cols: ragged index");
        for (int j : row)
            if (j < 0 || j >= nodes_[a].cols) throw ShapeError("gather_cols: index out of range");
    }
    Node n;
    n.op = Op::GatherCols;
    n.args = {a};
    n.rows = nodes_[a].rows;
    n.cols = static_cast<int>(out_cols);
    n.index2 = std::move(index);
    return push(std::move(n));
}

Graph::Id Graph::concat_rows(const std::vector<Id>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    int rows = 0;
    const int cols = nodes_[parts[0]].cols;
    for (Id p : parts) {
        check_arg(p);
        if (nodes_[p].cols != cols) throw ShapeError("concat_rows: column mismatch");
        rows += nodes_[p].rows;
    }
    Node n;
    n.op = Op::ConcatRows;
    n.args = parts;
    n.rows = rows;
    n.cols = cols;
    return push(std::move(n));
}

Graph::Id Graph::concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    int cols = 0;
    const int rows = nodes_[parts[0]].rows;
    for (Id p : parts) {
        check_arg(p);
        if (nodes_[p].rows != rows) throw ShapeError("concat_cols: row mismatch");
        cols += nodes_[p].cols;
    }
    Node n;
    n.op = Op::ConcatCols;
    n.args = parts;
    n.rows = rows;
    n.cols = cols;
    return push(std::move(n));
}

Graph::Id Graph::slice_rows(Id a, int start, int len) {
    check_arg(a);
    if (start < 0 || len < 1 || start + len > nodes_[a].rows) throw ShapeError("slice_rows: range out of bounds");
    Node n;
    n.op = Op::SliceRows;
    n.args = {a};
    n.k = start;
    n.len = len;
    n.rows = len;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

Graph::Id Graph::slice_cols(Id a, int start, int len) {
    check_arg(a);
    if (start < 0 || len < 1 || start + len > nodes_[a].cols) throw ShapeError("slice_cols: range out of bounds");
    Node n;
    n.op = Op::SliceCols;
    n.args = {a};
    n.k = start;
    n.len = len;
    n.rows = nodes_[a].rows;
    n.cols = len;
    return push(std::move(n));
}

void Graph::mark_output(const std::string& name, Id id) {
    check_arg(id);
    outputs_[name] = id;
}

void Graph::eval_node(Node& n) {
    auto& v = n.value;
    switch (n.op) {
        case Op::Parameter:
        case Op::Input:
        case Op::Constant:
            return;
        case Op::MatMul:
            matmul_into(nodes_[n.args[0]].value, nodes_[n.args[1]].value, v);
            break;
        case Op::Transpose: {
            const Tensor& a = nodes_[n.args[0]].value;
            v = Tensor(n.rows, n.cols);
            for (int i = 0; i < a.rows; ++i)
                for (int j = 0; j < a.cols; ++j) v.at(j, i) = a.at(i, j);
            break;
        }
        case Op::Add: {
            const Tensor& a = nodes_[n.args[0]].value;
            const Tensor& b = nodes_[n.args[1]].value;
            v = a;
            for (size_t i = 0; i < v.size(); ++i) v.data[i] += b.data[i];
            break;
        }
        case Op::Sub: {
            const Tensor& a = nodes_[n.args[0]].value;
            const Tensor& b = nodes_[n.args[1]].value;
            v = a;
            for (size_t i = 0; i < v.size(); ++i) v.data[i] -= b.data[i];
            break;
        }
        case Op::Mul: {
            const Tensor& a = nodes_[n.args[0]].value;
            const Tensor& b = nodes_[n.args[1]].value;
            v = a;
            for (size_t i = 0; i < v.size(); ++i) v.data[i] *= b.data[i];
            break;
        }
        case Op::Div: {
            const Tensor& a = nodes_[n.args[0]].value;
            const Tensor& b = nodes_[n.args[1]].value;
            v = a;
            for (size_t i = 0; i < v.size(); ++i) v.data[i] /= b.data[i];
            break;
        }
        case Op::Scale: {
            v = nodes_[n.args[0]].value;
            for (double& x : v.data) x *= n.p0;
            break;
        }
        case Op::AddRowVec: {
            const Tensor& a = nodes_[n.args[0]].value;
            const Tensor& b = nodes_[n.args[1]].value;
            v = a;
            for (int i = 0; i < v.rows; ++i)
                for (int j = 0; j < v.cols; ++j) v.at(i, j) += b.data[j];
            break;
        }
        case Op::DivColVec: {
            const Tensor& a = nodes_[n.args[0]].value;
            const Tensor& c = nodes_[n.args[1]].value;
            v = a;
            for (int i = 0; i < v.rows; ++i)
                for (int j = 0; j < v.cols; ++j) v.at(i, j) /= c.data[i];
            break;
        }
        case Op::Relu: {
            v = nodes_[n.args[0]].value;
            for (double& x : v.data) x = x > 0.0 ? x : 0.0;
            break;
        }
        case Op::Sigmoid: {
            v = nodes_[n.args[0]].value;
            for (double& x : v.data) x = 1.0 / (1.0 + std::exp(-x));
            break;
        }
        case Op::SoftmaxRows: {
            const Tensor& a = nodes_[n.args[0]].value;
            v = a;
            for (int i = 0; i < v.rows; ++i) {
                double* row = &v.data[static_cast<size_t>(i) * v.cols];
                double mx = row[0];
                for (int j = 1; j < v.cols; ++j) mx = std::max(mx, row[j]);
                double sum = 0.0;
                for (int j = 0; j < v.cols; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                for (int j = 0; j < v.cols; ++j) row[j] /= sum;
            }
            break;
        }
        case Op::Log: {
            v = nodes_[n.args[0]].value;
            for (double& x : v.data) x = std::log(x);
            break;
        }
        case Op::Sqrt: {
            v = nodes_[n.args[0]].value;
            for (double& x : v.data) x = std::sqrt(x);
            break;
        }
        case Op::Clamp: {
            v = nodes_[n.args[0]].value;
            for (double& x : v.data) x = std::min(n.p1, std::max(n.p0, x));
            break;
        }
        case Op::SumAll: {
            const Tensor& a = nodes_[n.args[0]].value;
            double s = 0.0;
            for (double x : a.data) s += x;
            v = Tensor::scalar(s);
            break;
        }
        case Op::MeanAll: {
            const Tensor& a = nodes_[n.args[0]].value;
            double s = 0.0;
            for (double x : a.data) s += x;
            v = Tensor::scalar(s / static_cast<double>(a.size()));
            break;
        }
        case Op::SumRows: {
            const Tensor& a = nodes_[n.args[0]].value;
            v = Tensor(a.rows, 1);
            for (int i = 0; i < a.rows; ++i) {
                double s = 0.0;
                for (int j = 0; j < a.cols; ++j) s += a.at(i, j);
                v.data[i] = s;
            }
            break;
        }
        case Op::TopKMean: {
            const Tensor& a = nodes_[n.args[0]].value;
            std::vector<int> order(a.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            std::stable_sort(order.begin(), order.end(),
                             [&](int x, int y) { return a.data[x] > a.data[y]; });
            double s = 0.0;
            for (int i = 0; i < n.k; ++i) s += a.data[order[i]];
            v = Tensor::scalar(s / n.k);
            break;
        }
        case Op::GatherRows: {
            const Tensor& a = nodes_[n.args[0]].value;
            v = Tensor(n.rows, n.cols);
            for (int i = 0; i < n.rows; ++i)
                for (int j = 0; j < n.cols; ++j) v.at(i, j) = a.at(n.index[i], j);
            break;
        }
        case Op::GatherCols: {
            const Tensor& a = nodes_[n.args[0]].value;
            v = Tensor(n.rows, n.cols);
            for (int i = 0; i < n.rows; ++i)
                for (int j = 0; j < n.cols; ++j) v.at(i, j) = a.at(i, n.index2[i][j]);
            break;
        }
        case Op::ConcatRows: {
            v = Tensor(n.rows, n.cols);
            int r = 0;
            for (Id p : n.args) {
                const Tensor& a = nodes_[p].value;
                std::copy(a.data.begin(), a.data.end(), v.data.begin() + static_cast<size_t>(r) * n.cols);
                r += a.rows;
            }
            break;
        }
        case Op::ConcatCols: {
            v = Tensor(n.rows, n.cols);
            int c0 = 0;
            for (Id p : n.args) {
                const Tensor& a = nodes_[p].value;
                for (int i = 0; i < a.rows; ++i)
                    for (int j = 0; j < a.cols; ++j) v.at(i, c0 + j) = a.at(i, j);
                c0 += a.cols;
            }
            break;
        }
        case Op::SliceRows: {
            const Tensor& a = nodes_[n.args[0]].value;
            v = Tensor(n.rows, n.cols);
            for (int i = 0; i < n.rows; ++i)
                for (int j = 0; j < n.cols; ++j) v.at(i, j) = a.at(n.k + i, j);
            break;
        }
        case Op::SliceCols: {
            const Tensor& a = nodes_[n.args[0]].value;
            v = Tensor(n.rows, n.cols);
            for (int i = 0; i < n.rows; ++i)
                for (int j = 0; j < n.cols; ++j) v.at(i, j) = a.at(i, n.k + j);
            break;
        }
    }
}

std::map<std::string, Tensor> Graph::forward(const std::map<std::string, Tensor>& inputs) {
    for (const auto& [name, id] : inputs_) {
        auto it = inputs.find(name);
        if (it == inputs.end()) throw ShapeError("forward: missing input " + name);
        if (it->second.rows != nodes_[id].rows || it->second.cols != nodes_[id].cols)
            throw ShapeError("forward: input " + name + " has shape " + it->second.shape_str() +
                             ", expected " + std::to_string(nodes_[id].rows) + "x" +
                             std::to_string(nodes_[id].cols));
        nodes_[id].value = it->second;
    }
    for (auto& n : nodes_) {
        eval_node(n);
        if (!n.value.all_finite()) throw NumericError("forward: non-finite intermediate value");
    }
    forward_done_ = true;
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : outputs_) out[name] = nodes_[id].value;
    return out;
}

void Graph::backprop_node(Node& n) {
    const Tensor& g = n.grad;
    auto& in0 = n.args.empty() ? n : nodes_[n.args[0]];
    switch (n.op) {
        case Op::Parameter:
        case Op::Input:
        case Op::Constant:
            return;
        case Op::MatMul: {
            Node& a = nodes_[n.args[0]];
            Node& b = nodes_[n.args[1]];
            // dA += g * B^T ; dB += A^T * g
            for (int i = 0; i < a.rows; ++i)
                for (int k = 0; k < a.cols; ++k) {
                    double s = 0.0;
                    for (int j = 0; j < b.cols; ++j) s += g.at(i, j) * b.value.at(k, j);
                    a.grad.at(i, k) += s;
                }
            for (int k = 0; k < b.rows; ++k)
                for (int j = 0; j < b.cols; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < a.rows; ++i) s += a.value.at(i, k) * g.at(i, j);
                    b.grad.at(k, j) += s;
                }
            break;
        }
        case Op::Transpose:
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) in0.grad.at(j, i) += g.at(i, j);
            break;
        case Op::Add:
            for (size_t i = 0; i < g.size(); ++i) nodes_[n.args[0]].grad.data[i] += g.data[i];
            for (size_t i = 0; i < g.size(); ++i) nodes_[n.args[1]].grad.data[i] += g.data[i];
            break;
        case Op::Sub:
            for (size_t i = 0; i < g.size(); ++i) nodes_[n.args[0]].grad.data[i] += g.data[i];
            for (size_t i = 0; i < g.size(); ++i) nodes_[n.args[1]].grad.data[i] -= g.data[i];
            break;
        case Op::Mul: {
            Node& a = nodes_[n.args[0]];
            Node& b = nodes_[n.args[1]];
            for (size_t i = 0; i < g.size(); ++i) {
                a.grad.data[i] += g.data[i] * b.value.data[i];
                b.grad.data[i] += g.data[i] * a.value.data[i];
            }
            break;
        }
        case Op::Div: {
            Node& a = nodes_[n.args[0]];
            Node& b = nodes_[n.args[1]];
            for (size_t i = 0; i < g.size(); ++i) {
                const double bi = b.value.data[i];
                a.grad.data[i] += g.data[i] / bi;
                b.grad.data[i] -= g.data[i] * a.value.data[i] / (bi * bi);
            }
            break;
        }
        case Op::Scale:
            for (size_t i = 0; i < g.size(); ++i) in0.grad.data[i] += g.data[i] * n.p0;
            break;
        case Op::AddRowVec: {
            Node& a = nodes_[n.args[0]];
            Node& b = nodes_[n.args[1]];
            for (size_t i = 0; i < g.size(); ++i) a.grad.data[i] += g.data[i];
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) b.grad.data[j] += g.at(i, j);
            break;
        }
        case Op::DivColVec: {
            Node& a = nodes_[n.args[0]];
            Node& c = nodes_[n.args[1]];
            for (int i = 0; i < g.rows; ++i) {
                const double ci = c.value.data[i];
                double s = 0.0;
                for (int j = 0; j < g.cols; ++j) {
                    a.grad.at(i, j) += g.at(i, j) / ci;
                    s += g.at(i, j) * a.value.at(i, j);
                }
                c.grad.data[i] -= s / (ci * ci);
            }
            break;
        }
        case Op::Relu:
            for (size_t i = 0; i < g.size(); ++i)
                if (in0.value.data[i] > 0.0) in0.grad.data[i] += g.data[i];
            break;
        case Op::Sigmoid:
            for (size_t i = 0; i < g.size(); ++i) {
                const double y = n.value.data[i];
                in0.grad.data[i] += g.data[i] * y * (1.0 - y);
            }
            break;
        case Op::SoftmaxRows: {
            for (int i = 0; i < g.rows; ++i) {
                double dot = 0.0;
                for (int j = 0; j < g.cols; ++j) dot += g.at(i, j) * n.value.at(i, j);
                for (int j = 0; j < g.cols; ++j)
                    in0.grad.at(i, j) += n.value.at(i, j) * (g.at(i, j) - dot);
            }
            break;
        }
        case Op::Log:
            for (size_t i = 0; i < g.size(); ++i) in0.grad.data[i] += g.data[i] / in0.value.data[i];
            break;
        case Op::Sqrt:
            for (size_t i = 0; i < g.size(); ++i) in0.grad.data[i] += g.data[i] * 0.5 / n.value.data[i];
            break;
        case Op::Clamp:
            for (size_t i = 0; i < g.size(); ++i) {
                const double x = in0.value.data[i];
                if (x > n.p0 && x < n.p1) in0.grad.data[i] += g.data[i];
            }
            break;
        case Op::SumAll:
            for (size_t i = 0; i < in0.grad.size(); ++i) in0.grad.data[i] += g.data[0];
            break;
        case Op::MeanAll: {
            const double inv = 1.0 / static_cast<double>(in0.grad.size());
            for (size_t i = 0; i < in0.grad.size(); ++i) in0.grad.data[i] += g.data[0] * inv;
            break;
        }
        case Op::SumRows:
            for (int i = 0; i < in0.grad.rows; ++i)
                for (int j = 0; j < in0.grad.cols; ++j) in0.grad.at(i, j) += g.data[i];
            break;
        case Op::TopKMean: {
            std::vector<int> order(in0.value.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            std::stable_sort(order.begin(), order.end(),
                             [&](int x, int y) { return in0.value.data[x] > in0.value.data[y]; });
            const double w = g.data[0] / n.k;
            for (int i = 0; i < n.k; ++i) in0.grad.data[order[i]] += w;
            break;
        }
        case Op::GatherRows:
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) in0.grad.at(n.index[i], j) += g.at(i, j);
            break;
        case Op::GatherCols:
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) in0.grad.at(i, n.index2[i][j]) += g.at(i, j);
            break;
        case Op::ConcatRows: {
            int r = 0;
            for (Id p : n.args) {
                Node& a = nodes_[p];
                for (int i = 0; i < a.grad.rows; ++i)
                    for (int j = 0; j < a.grad.cols; ++j) a.grad.at(i, j) += g.at(r + i, j);
                r += a.grad.rows;
            }
            break;
        }
        case Op::ConcatCols: {
            int c0 = 0;
            for (Id p : n.args) {
                Node& a = nodes_[p];
                for (int i = 0; i < a.grad.rows; ++i)
                    for (int j = 0; j < a.grad.cols; ++j) a.grad.at(i, j) += g.at(i, c0 + j);
                c0 += a.grad.cols;
            }
            break;
        }
        case Op::SliceRows:
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) in0.grad.at(n.k + i, j) += g.at(i, j);
            break;
        case Op::SliceCols:
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) in0.grad.at(i, n.k + j) += g.at(i, j);
            break;
    }
}

std::map<std::string, Tensor> Graph::backward(const std::string& output, const Tensor& seed) {
    if (!forward_done_) throw ShapeError("backward: forward has not been evaluated");
    auto it = outputs_.find(output);
    if (it == outputs_.end()) throw ShapeError("backward: unknown output " + output);
    Node& out = nodes_[it->second];
    if (seed.rows != out.rows || seed.cols != out.cols)
        throw ShapeError("backward: seed shape mismatch");
    for (auto& n : nodes_) n.grad = Tensor(n.rows, n.cols, 0.0);
    out.grad = seed;
    for (auto rit = nodes_.rbegin(); rit != nodes_.rend(); ++rit) backprop_node(*rit);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, id] : params_) {
        if (!nodes_[id].grad.all_finite()) throw NumericError("backward: non-finite gradient for " + name);
        grads[name] = nodes_[id].grad;
    }
    return grads;
}

std::map<std::string, Tensor> Graph::backward() {
    if (outputs_.size() != 1) throw ShapeError("backward: graph must have exactly one output");
    const auto& [name, id] = *outputs_.begin();
    if (nodes_[id].rows != 1 || nodes_[id].cols != 1)
        throw ShapeError("backward: output is not scalar");
    return backward(name, Tensor::scalar(1.0));
}

void Graph::set_parameter(const std::string& name, Tensor value) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("set_parameter: unknown parameter " + name);
    Node& n = nodes_[it->second];
    if (value.rows != n.rows || value.cols != n.cols)
        throw ShapeError("set_parameter: shape mismatch for " + name);
    n.value = std::move(value);
    forward_done_ = false;
}

const Tensor& Graph::parameter_value(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("parameter_value: unknown parameter " + name);
    return nodes_[it->second].value;
}

std::map<std::string, Tensor> Graph::parameters() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : params_) out[name] = nodes_[id].value;
    return out;
}

const Tensor& Graph::output_value(const std::string& name) const {
    auto it = outputs_.find(name);
    if (it == outputs_.end()) throw ShapeError("output_value: unknown output " + name);
    return nodes_[it->second].value;
}

const Tensor& Graph::node_value(Id id) const {
    if (id < 0 || id >= static_cast<Id>(nodes_.size())) throw ShapeError("node_value: bad node id");
    return nodes_[id].value;
}

Graph::GradCheckReport Graph::grad_check(const std::map<std::string, Tensor>& inputs,
                                         double rel_tol, double h) {
    if (outputs_.size() != 1) throw ShapeError("grad_check: graph must have exactly one output");
    const Id out_id = outputs_.begin()->second;
    if (nodes_[out_id].rows != 1 || nodes_[out_id].cols != 1)
        throw ShapeError("grad_check: output is not scalar");

    forward(inputs);
    const auto analytic = backward();

    GradCheckReport report;
    for (const auto& [name, id] : params_) {
        Node& p = nodes_[id];
        double worst = 0.0;
        for (size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value.data[i];
            p.value.data[i] = orig + h;
            forward_done_ = false;
            forward(inputs);
            const double fp = nodes_[out_id].value.data[0];
            p.value.data[i] = orig - h;
            forward(inputs);
            const double fm = nodes_[out_id].value.data[0];
            p.value.data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic.at(name).data[i];
            // Floor keeps finite-difference roundoff (~1e-11 absolute at
            // h=1e-5) from dominating the ratio on near-zero gradients.
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
        report.per_parameter[name] = worst;
        if (worst > report.max_rel_error) {
            report.max_rel_error = worst;
            report.worst_parameter = name;
        }
    }
    forward(inputs);  // leave values consistent with unperturbed parameters
    report.passed = report.max_rel_error <= rel_tol;
    return report;
}

}  // namespace dakd
