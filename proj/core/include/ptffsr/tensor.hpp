#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "ptffsr/errors.hpp"

namespace ptffsr {

// Dense row-major tensor of 64-bit floats. The whole stack is double
// precision: models here are desk-scale and tight gradient / probability-ratio
// checks matter more than footprint.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> shp, std::vector<double> values);

    static Tensor zeros(std::vector<int> shp);
    static Tensor full(std::vector<int> shp, double v);
    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
    static Tensor row(std::vector<double> values);

    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    std::size_t size() const { return data.size(); }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

// Trainable parameter: a value plus a persistent gradient accumulator that
// backward passes write into across tapes.
struct Param {
    Tensor value;
    Tensor grad;

    explicit Param(Tensor v) : value(std::move(v)), grad(Tensor::zeros(value.shape)) {}
    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

class Tape;

// Handle into a Tape's node arena.
struct Var {
    Tape* tape = nullptr;
    std::int32_t id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

enum class OpKind : std::uint8_t {
    constant,
    param,
    add,
    sub,
    mul,
    scale,
    matmul,
    transpose,
    add_row_vec,
    sigmoid,
    tanh_fn,
    relu,
    exp_fn,
    log_fn,
    log_sigmoid,
    softmax_rows,
    layer_norm_rows,
    sum_all,
    gather_rows,
    slice_rows,
    row_at,
    stack_rows,
    cosine_sim,
};

// Reverse-mode tape. Nodes are appended in construction order, which is a
// topological order by definition, so backward() is a single reverse sweep
// that visits each node exactly once. Gradients on param leaves accumulate
// into the bound Param; calling backward twice accumulates additively.
class Tape {
  public:
    Var constant(Tensor t);
    Var param(Param& p);

    void backward(Var root);

    // Reference into the node arena: creating more nodes may invalidate it,
    // so copy anything you hold across further op calls.
    const Tensor& value(Var v) const;
    // Gradient buffer of a non-param node (param grads live on the Param).
    const Tensor& grad(Var v) const;

    std::size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        OpKind op;
        bool needs_grad = false;
        Tensor value;
        Tensor grad;                      // lazily sized in backward
        Param* bound = nullptr;           // for OpKind::param
        std::int32_t p0 = -1, p1 = -1;    // parent node ids
        std::vector<std::int32_t> aux;    // gather ids / stack parents / slice range
        double scalar0 = 0.0;             // scale factor, cosine guard flag, ...
        double scalar1 = 0.0;
    };

    std::vector<Node> nodes_;
    std::unordered_map<Param*, std::int32_t> param_nodes_;  // one leaf per Param per tape

    Var push(Node n);
    Node& node(Var v);
    const Node& node(Var v) const;
    Var unary(Var a, OpKind kind, double (*f)(double));
    Tensor& grad_buf(std::int32_t id);
    void add_grad(std::int32_t id, const Tensor& g);
    void backprop(std::int32_t id);

    friend Var add(Var a, Var b);
    friend Var sub(Var a, Var b);
    friend Var mul(Var a, Var b);
    friend Var scale(Var a, double c);
    friend Var matmul(Var a, Var b);
    friend Var transpose(Var a);
    friend Var add_row_vec(Var a, Var v);
    friend Var sigmoid(Var a);
    friend Var tanh_op(Var a);
    friend Var relu(Var a);
    friend Var exp_op(Var a);
    friend Var log_op(Var a);
    friend Var log_sigmoid(Var a);
    friend Var softmax_rows(Var a);
    friend Var layer_norm_rows(Var x, Var gain, Var bias);
    friend Var sum_all(Var a);
    friend Var gather_rows(Var table, std::span<const std::int32_t> ids);
    friend Var slice_rows(Var a, int begin, int end);
    friend Var row_at(Var a, int r);
    friend Var stack_rows(std::span<const Var> rows);
    friend Var cosine_sim(Var a, Var b);
};

// ---- graph ops ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double c);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add_row_vec(Var a, Var v);  // broadcast a [1 x m] vector over rows
Var sigmoid(Var a);
Var tanh_op(Var a);
Var relu(Var a);
Var exp_op(Var a);
Var log_op(Var a);
Var log_sigmoid(Var a);  // numerically stable log(sigmoid(x))
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias);
Var sum_all(Var a);  // -> [1 x 1]
Var gather_rows(Var table, std::span<const std::int32_t> ids);
Var slice_rows(Var a, int begin, int end);  // rows [begin, end)
Var row_at(Var a, int r);                   // -> [1 x cols]
Var stack_rows(std::span<const Var> rows);  // n vectors [1 x m] -> [n x m]
// a.b / (|a||b|); 0 when either norm < 1e-12 so degenerate inputs cannot
// inject NaN into downstream losses.
Var cosine_sim(Var a, Var b);

void backward(Var root);

// ---- value-level kernels (shared by graph ops and non-graph callers) ----
namespace kernel {
double sigmoid(double x);
double log_sigmoid(double x);
Tensor matmul(const Tensor& a, const Tensor& b);
void softmax_row_inplace(std::span<double> row);
double cosine_sim(std::span<const double> a, std::span<const double> b);
}  // namespace kernel

}  // namespace ptffsr
