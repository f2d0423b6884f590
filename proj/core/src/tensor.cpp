#include "ptffsr/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <numeric>

namespace ptffsr {

namespace {

std::size_t shape_size(const std::vector<int>& shp) {
    std::size_t n = 1;
    for (int e : shp) {
        if (e < 0) throw DimensionError("negative tensor extent");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

void require_2d(const Tensor& t, const char* what) {
    if (t.shape.size() != 2) throw DimensionError(std::string(what) + ": expected a 2-d tensor");
}

#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw Error(std::string("non-finite value produced by ") + op);
}
#else
void debug_check_finite(const Tensor&, const char*) {}
#endif

}  // namespace

Tensor::Tensor(std::vector<int> shp, std::vector<double> values)
    : shape(std::move(shp)), data(std::move(values)) {
    if (shape_size(shape) != data.size()) throw DimensionError("tensor data does not match shape");
}

Tensor Tensor::zeros(std::vector<int> shp) {
    std::size_t n = shape_size(shp);
    return Tensor(std::move(shp), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> shp, double v) {
    std::size_t n = shape_size(shp);
    return Tensor(std::move(shp), std::vector<double>(n, v));
}

Tensor Tensor::row(std::vector<double> values) {
    int n = static_cast<int>(values.size());
    return Tensor({1, n}, std::move(values));
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

// ---- value-level kernels ----

namespace kernel {

double sigmoid(double x) {
    // Split on sign so exp never overflows.
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double log_sigmoid(double x) {
    // log(1/(1+e^-x)) = -log1p(e^-x) for x>=0, x - log1p(e^x) otherwise.
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul lhs");
    require_2d(b, "matmul rhs");
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions disagree");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = a.data.data() + static_cast<std::size_t>(i) * k;
        double* orow = out.data.data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b.data.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

void softmax_row_inplace(std::span<double> row) {
    if (row.empty()) throw InputError("softmax of an empty vector");
    double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : row) v /= sum;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("cosine_sim: length mismatch");
    if (a.empty()) throw InputError("cosine_sim of empty vectors");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    return dot / (na * nb);
}

}  // namespace kernel

// ---- tape plumbing ----

Var Tape::push(Node n) {
    debug_check_finite(n.value, "tape op");
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
const Tape::Node& Tape::node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

Var Tape::constant(Tensor t) {
    Node n;
    n.op = OpKind::constant;
    n.value = std::move(t);
    n.needs_grad = false;
    return push(std::move(n));
}

Var Tape::param(Param& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{this, it->second};
    Node n;
    n.op = OpKind::param;
    n.value = p.value;  // copy: keeps nodes self-contained if the param steps later
    n.bound = &p;
    n.needs_grad = true;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id);
    return v;
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.op == OpKind::param) return n.bound->grad;
    return n.grad;
}

Tensor& Tape::grad_buf(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == OpKind::param) return n.bound->grad;
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

void Tape::add_grad(std::int32_t id, const Tensor& g) {
    Tensor& dst = grad_buf(id);
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

void Tape::backward(Var root) {
    const Node& r = node(root);
    if (r.value.size() != 1) throw InputError("backward: root must be a scalar");
    grad_buf(root.id).data[0] += 1.0;
    for (std::int32_t id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.op == OpKind::param || n.op == OpKind::constant) continue;
        if (n.grad.data.empty()) continue;  // not on any path to the root
        backprop(id);
        // Intermediate grads are consumed top-down; free them so repeated
        // backward calls on shared subgraphs restart from zero.
        n.grad = Tensor();
    }
}

void backward(Var root) { root.tape->backward(root); }

// ---- op constructors ----

namespace {

Tape* same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw InputError("op arguments belong to different tapes");
    return a.tape;
}

}  // namespace

Var add(Var a, Var b) {
    Tape* t = same_tape(a, b);
    const Tensor& av = t->value(a);
    const Tensor& bv = t->value(b);
    if (!av.same_shape(bv)) throw DimensionError("add: shape mismatch");
    Tape::Node n;
    n.op = OpKind::add;
    n.p0 = a.id;
    n.p1 = b.id;
    n.needs_grad = t->node(a).needs_grad || t->node(b).needs_grad;
    n.value = av;
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += bv.data[i];
    return t->push(std::move(n));
}

Var sub(Var a, Var b) {
    Tape* t = same_tape(a, b);
    const Tensor& av = t->value(a);
    const Tensor& bv = t->value(b);
    if (!av.same_shape(bv)) throw DimensionError("sub: shape mismatch");
    Tape::Node n;
    n.op = OpKind::sub;
    n.p0 = a.id;
    n.p1 = b.id;
    n.needs_grad = t->node(a).needs_grad || t->node(b).needs_grad;
    n.value = av;
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= bv.data[i];
    return t->push(std::move(n));
}

Var mul(Var a, Var b) {
    Tape* t = same_tape(a, b);
    const Tensor& av = t->value(a);
    const Tensor& bv = t->value(b);
    if (!av.same_shape(bv)) throw DimensionError("mul: shape mismatch");
    Tape::Node n;
    n.op = OpKind::mul;
    n.p0 = a.id;
    n.p1 = b.id;
    n.needs_grad = t->node(a).needs_grad || t->node(b).needs_grad;
    n.value = av;
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= bv.data[i];
    return t->push(std::move(n));
}

Var scale(Var a, double c) {
    Tape* t = a.tape;
    Tape::Node n;
    n.op = OpKind::scale;
    n.p0 = a.id;
    n.scalar0 = c;
    n.needs_grad = t->node(a).needs_grad;
    n.value = t->value(a);
    for (double& v : n.value.data) v *= c;
    return t->push(std::move(n));
}

Var matmul(Var a, Var b) {
    Tape* t = same_tape(a, b);
    Tape::Node n;
    n.op = OpKind::matmul;
    n.p0 = a.id;
    n.p1 = b.id;
    n.needs_grad = t->node(a).needs_grad || t->node(b).needs_grad;
    n.value = kernel::matmul(t->value(a), t->value(b));
    return t->push(std::move(n));
}

Var transpose(Var a) {
    Tape* t = a.tape;
    const Tensor& av = t->value(a);
    require_2d(av, "transpose");
    Tape::Node n;
    n.op = OpKind::transpose;
    n.p0 = a.id;
    n.needs_grad = t->node(a).needs_grad;
    n.value = Tensor::zeros({av.cols(), av.rows()});
    for (int i = 0; i < av.rows(); ++i)
        for (int j = 0; j < av.cols(); ++j) n.value.at(j, i) = av.at(i, j);
    return t->push(std::move(n));
}

Var add_row_vec(Var a, Var v) {
    Tape* t = same_tape(a, v);
    const Tensor& av = t->value(a);
    const Tensor& vv = t->value(v);
    if (vv.rows() != 1 || vv.cols() != av.cols())
        throw DimensionError("add_row_vec: vector must be [1 x cols]");
    Tape::Node n;
    n.op = OpKind::add_row_vec;
    n.p0 = a.id;
    n.p1 = v.id;
    n.needs_grad = t->node(a).needs_grad || t->node(v).needs_grad;
    n.value = av;
    for (int i = 0; i < av.rows(); ++i)
        for (int j = 0; j < av.cols(); ++j) n.value.at(i, j) += vv.data[static_cast<std::size_t>(j)];
    return t->push(std::move(n));
}

Var Tape::unary(Var a, OpKind kind, double (*f)(double)) {
    Node n;
    n.op = kind;
    n.p0 = a.id;
    n.needs_grad = node(a).needs_grad;
    n.value = value(a);
    for (double& v : n.value.data) v = f(v);
    return push(std::move(n));
}

Var sigmoid(Var a) {
    return a.tape->unary(a, OpKind::sigmoid, [](double x) { return kernel::sigmoid(x); });
}
Var tanh_op(Var a) {
    return a.tape->unary(a, OpKind::tanh_fn, [](double x) { return std::tanh(x); });
}
Var relu(Var a) {
    return a.tape->unary(a, OpKind::relu, [](double x) { return x > 0.0 ? x : 0.0; });
}
Var exp_op(Var a) {
    return a.tape->unary(a, OpKind::exp_fn, [](double x) { return std::exp(x); });
}
Var log_op(Var a) {
    return a.tape->unary(a, OpKind::log_fn, [](double x) { return std::log(x); });
}
Var log_sigmoid(Var a) {
    return a.tape->unary(a, OpKind::log_sigmoid, [](double x) { return kernel::log_sigmoid(x); });
}

Var softmax_rows(Var a) {
    Tape* t = a.tape;
    const Tensor& av = t->value(a);
    require_2d(av, "softmax_rows");
    if (av.cols() < 1) throw InputError("softmax_rows: empty rows");
    Tape::Node n;
    n.op = OpKind::softmax_rows;
    n.p0 = a.id;
    n.needs_grad = t->node(a).needs_grad;
    n.value = av;
    for (int i = 0; i < av.rows(); ++i) {
        std::span<double> row(n.value.data.data() + static_cast<std::size_t>(i) * av.cols(),
                              static_cast<std::size_t>(av.cols()));
        kernel::softmax_row_inplace(row);
    }
    return t->push(std::move(n));
}

Var layer_norm_rows(Var x, Var gain, Var bias) {
    Tape* t = same_tape(x, gain);
    same_tape(x, bias);
    const Tensor& xv = t->value(x);
    const Tensor& gv = t->value(gain);
    const Tensor& bv = t->value(bias);
    require_2d(xv, "layer_norm_rows");
    if (gv.rows() != 1 || gv.cols() != xv.cols() || bv.rows() != 1 || bv.cols() != xv.cols())
        throw DimensionError("layer_norm_rows: gain/bias must be [1 x cols]");
    Tape::Node n;
    n.op = OpKind::layer_norm_rows;
    n.p0 = x.id;
    n.p1 = gain.id;
    n.aux.push_back(bias.id);
    n.needs_grad =
        t->node(x).needs_grad || t->node(gain).needs_grad || t->node(bias).needs_grad;
    const int m = xv.cols();
    n.value = Tensor::zeros(xv.shape);
    constexpr double eps = 1e-8;
    for (int i = 0; i < xv.rows(); ++i) {
        double mean = 0.0;
        for (int j = 0; j < m; ++j) mean += xv.at(i, j);
        mean /= m;
        double var = 0.0;
        for (int j = 0; j < m; ++j) {
            double d = xv.at(i, j) - mean;
            var += d * d;
        }
        var /= m;
        double inv_sd = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < m; ++j)
            n.value.at(i, j) = (xv.at(i, j) - mean) * inv_sd * gv.data[static_cast<std::size_t>(j)] +
                               bv.data[static_cast<std::size_t>(j)];
    }
    return t->push(std::move(n));
}

Var sum_all(Var a) {
    Tape* t = a.tape;
    const Tensor& av = t->value(a);
    Tape::Node n;
    n.op = OpKind::sum_all;
    n.p0 = a.id;
    n.needs_grad = t->node(a).needs_grad;
    n.value = Tensor::scalar(std::accumulate(av.data.begin(), av.data.end(), 0.0));
    return t->push(std::move(n));
}

Var gather_rows(Var table, std::span<const std::int32_t> ids) {
    Tape* t = table.tape;
    const Tensor& tv = t->value(table);
    require_2d(tv, "gather_rows");
    Tape::Node n;
    n.op = OpKind::gather_rows;
    n.p0 = table.id;
    n.needs_grad = t->node(table).needs_grad;
    n.aux.assign(ids.begin(), ids.end());
    const int m = tv.cols();
    n.value = Tensor::zeros({static_cast<int>(ids.size()), m});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tv.rows()) throw InputError("gather_rows: row id out of range");
        std::copy_n(tv.data.data() + static_cast<std::size_t>(ids[i]) * m, m,
                    n.value.data.data() + i * static_cast<std::size_t>(m));
    }
    return t->push(std::move(n));
}

Var slice_rows(Var a, int begin, int end) {
    Tape* t = a.tape;
    const Tensor& av = t->value(a);
    require_2d(av, "slice_rows");
    if (begin < 0 || end > av.rows() || begin >= end)
        throw InputError("slice_rows: bad row range");
    Tape::Node n;
    n.op = OpKind::slice_rows;
    n.p0 = a.id;
    n.needs_grad = t->node(a).needs_grad;
    n.aux = {begin, end};
    const int m = av.cols();
    n.value = Tensor::zeros({end - begin, m});
    std::copy_n(av.data.data() + static_cast<std::size_t>(begin) * m,
                static_cast<std::size_t>(end - begin) * m, n.value.data.data());
    return t->push(std::move(n));
}

Var row_at(Var a, int r) { return slice_rows(a, r, r + 1); }

Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) throw InputError("stack_rows: no rows");
    Tape* t = rows[0].tape;
    const int m = t->value(rows[0]).cols();
    Tape::Node n;
    n.op = OpKind::stack_rows;
    n.needs_grad = false;
    n.value = Tensor::zeros({static_cast<int>(rows.size()), m});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        same_tape(rows[0], rows[i]);
        const Tensor& rv = t->value(rows[i]);
        if (rv.rows() != 1 || rv.cols() != m) throw DimensionError("stack_rows: row shape mismatch");
        n.needs_grad = n.needs_grad || t->node(rows[i]).needs_grad;
        n.aux.push_back(rows[i].id);
        std::copy_n(rv.data.data(), m, n.value.data.data() + i * static_cast<std::size_t>(m));
    }
    return t->push(std::move(n));
}

Var cosine_sim(Var a, Var b) {
    Tape* t = same_tape(a, b);
    const Tensor& av = t->value(a);
    const Tensor& bv = t->value(b);
    if (!av.same_shape(bv)) throw DimensionError("cosine_sim: shape mismatch");
    Tape::Node n;
    n.op = OpKind::cosine_sim;
    n.p0 = a.id;
    n.p1 = b.id;
    n.needs_grad = t->node(a).needs_grad || t->node(b).needs_grad;
    double c = kernel::cosine_sim(av.data, bv.data);
    double na = 0.0, nb = 0.0;
    for (double v : av.data) na += v * v;
    for (double v : bv.data) nb += v * v;
    n.scalar0 = (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) ? 0.0 : 1.0;  // guard flag
    n.value = Tensor::scalar(c);
    return t->push(std::move(n));
}

// ---- backward rules ----

void Tape::backprop(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = n.grad;

    auto parent_needs = [&](std::int32_t pid) {
        return pid >= 0 && nodes_[static_cast<std::size_t>(pid)].needs_grad;
    };
    auto pval = [&](std::int32_t pid) -> const Tensor& {
        return nodes_[static_cast<std::size_t>(pid)].value;
    };

    switch (n.op) {
        case OpKind::constant:
        case OpKind::param:
            break;
        case OpKind::add: {
            if (parent_needs(n.p0)) add_grad(n.p0, g);
            if (parent_needs(n.p1)) add_grad(n.p1, g);
            break;
        }
        case OpKind::sub: {
            if (parent_needs(n.p0)) add_grad(n.p0, g);
            if (parent_needs(n.p1)) {
                Tensor& dst = grad_buf(n.p1);
                for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] -= g.data[i];
            }
            break;
        }
        case OpKind::mul: {
            const Tensor& a = pval(n.p0);
            const Tensor& b = pval(n.p1);
            if (parent_needs(n.p0)) {
                Tensor& dst = grad_buf(n.p0);
                for (std::size_t i = 0; i < dst.data.size(); ++i)
                    dst.data[i] += g.data[i] * b.data[i];
            }
            if (parent_needs(n.p1)) {
                Tensor& dst = grad_buf(n.p1);
                for (std::size_t i = 0; i < dst.data.size(); ++i)
                    dst.data[i] += g.data[i] * a.data[i];
            }
            break;
        }
        case OpKind::scale: {
            if (parent_needs(n.p0)) {
                Tensor& dst = grad_buf(n.p0);
                for (std::size_t i = 0; i < dst.data.size(); ++i)
                    dst.data[i] += g.data[i] * n.scalar0;
            }
            break;
        }
        case OpKind::matmul: {
            const Tensor& a = pval(n.p0);
            const Tensor& b = pval(n.p1);
            const int m = a.rows(), k = a.cols(), nc = b.cols();
            if (parent_needs(n.p0)) {
                // dA += dC . B^T
                Tensor& da = grad_buf(n.p0);
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        for (int j = 0; j < nc; ++j) acc += g.at(i, j) * b.at(kk, j);
                        da.at(i, kk) += acc;
                    }
            }
            if (parent_needs(n.p1)) {
                // dB += A^T . dC
                Tensor& db = grad_buf(n.p1);
                for (int i = 0; i < m; ++i) {
                    for (int kk = 0; kk < k; ++kk) {
                        const double av = a.at(i, kk);
                        if (av == 0.0) continue;
                        for (int j = 0; j < nc; ++j) db.at(kk, j) += av * g.at(i, j);
                    }
                }
            }
            break;
        }
        case OpKind::transpose: {
            if (parent_needs(n.p0)) {
                Tensor& dst = grad_buf(n.p0);
                for (int i = 0; i < n.value.rows(); ++i)
                    for (int j = 0; j < n.value.cols(); ++j) dst.at(j, i) += g.at(i, j);
            }
            break;
        }
        case OpKind::add_row_vec: {
            if (parent_needs(n.p0)) add_grad(n.p0, g);
            if (parent_needs(n.p1)) {
                Tensor& dv = grad_buf(n.p1);
                for (int i = 0; i < n.value.rows(); ++i)
                    for (int j = 0; j < n.value.cols(); ++j)
                        dv.data[static_cast<std::size_t>(j)] += g.at(i, j);
            }
            break;
        }
        case OpKind::sigmoid: {
            if (parent_needs(n.p0)) {
                Tensor& dst = grad_buf(n.p0);
                for (std::size_t i = 0; i < dst.data.size(); ++i) {
                    double y = n.value.data[i];
                    dst.data[i] += g.data[i] * y * (1.0 - y);
                }
            }
            break;
        }
        case OpKind::tanh_fn: {
            if (parent_needs(n.p0)) {
                Tensor& dst = grad_buf(n.p0);
                for (std::size_t i = 0; i < dst.data.size(); ++i) {
                    double y = n.value.data[i];
                    dst.data[i] += g.data[i] * (1.0 - y * y);
                }
            }
            break;
        }
        case OpKind::relu: {
            if (parent_needs(n.p0)) {
                const Tensor& x = pval(n.p0);
                Tensor& dst = grad_buf(n.p0);
                for (std::size_t i = 0; i < dst.data.size(); ++i)
                    if (x.data[i] > 0.0) dst.data[i] += g.data[i];
            }
            break;
        }
        case OpKind::exp_fn: {
            if (parent_needs(n.p0)) {
                Tensor& dst = grad_buf(n.p0);
                for (std::size_t i = 0; i < dst.data.size(); ++i)
                    dst.data[i] += g.data[i] * n.value.data[i];
            }
            break;
        }
        case OpKind::log_fn: {
            if (parent_needs(n.p0)) {
                const Tensor& x = pval(n.p0);
                Tensor& dst = grad_buf(n.p0);
                for (std::size_t i = 0; i < dst.data.size(); ++i)
                    dst.data[i] += g.data[i] / x.data[i];
            }
            break;
        }
        case OpKind::log_sigmoid: {
            if (parent_needs(n.p0)) {
                const Tensor& x = pval(n.p0);
                Tensor& dst = grad_buf(n.p0);
                for (std::size_t i = 0; i < dst.data.size(); ++i)
                    dst.data[i] += g.data[i] * kernel::sigmoid(-x.data[i]);
            }
            break;
        }
        case OpKind::softmax_rows: {
            if (parent_needs(n.p0)) {
                Tensor& dst = grad_buf(n.p0);
                const int m = n.value.cols();
                for (int i = 0; i < n.value.rows(); ++i) {
                    double dot = 0.0;
                    for (int j = 0; j < m; ++j) dot += g.at(i, j) * n.value.at(i, j);
                    for (int j = 0; j < m; ++j)
                        dst.at(i, j) += n.value.at(i, j) * (g.at(i, j) - dot);
                }
            }
            break;
        }
        case OpKind::layer_norm_rows: {
            const Tensor& x = pval(n.p0);
            const Tensor& gain = pval(n.p1);
            const std::int32_t bias_id = n.aux[0];
            const int m = x.cols();
            constexpr double eps = 1e-8;
            for (int i = 0; i < x.rows(); ++i) {
                double mean = 0.0;
                for (int j = 0; j < m; ++j) mean += x.at(i, j);
                mean /= m;
                double var = 0.0;
                for (int j = 0; j < m; ++j) {
                    double d = x.at(i, j) - mean;
                    var += d * d;
                }
                var /= m;
                double inv_sd = 1.0 / std::sqrt(var + eps);
                // dxhat = g * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) / sd
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (int j = 0; j < m; ++j) {
                    double xhat = (x.at(i, j) - mean) * inv_sd;
                    double dxhat = g.at(i, j) * gain.data[static_cast<std::size_t>(j)];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat;
                }
                mean_dxhat /= m;
                mean_dxhat_xhat /= m;
                if (parent_needs(n.p0)) {
                    Tensor& dx = grad_buf(n.p0);
                    for (int j = 0; j < m; ++j) {
                        double xhat = (x.at(i, j) - mean) * inv_sd;
                        double dxhat = g.at(i, j) * gain.data[static_cast<std::size_t>(j)];
                        dx.at(i, j) += (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_sd;
                    }
                }
                if (parent_needs(n.p1)) {
                    Tensor& dg = grad_buf(n.p1);
                    for (int j = 0; j < m; ++j) {
                        double xhat = (x.at(i, j) - mean) * inv_sd;
                        dg.data[static_cast<std::size_t>(j)] += g.at(i, j) * xhat;
                    }
                }
                if (parent_needs(bias_id)) {
                    Tensor& db = grad_buf(bias_id);
                    for (int j = 0; j < m; ++j)
                        db.data[static_cast<std::size_t>(j)] += g.at(i, j);
                }
            }
            break;
        }
        case OpKind::sum_all: {
            if (parent_needs(n.p0)) {
                Tensor& dst = grad_buf(n.p0);
                const double gv = g.data[0];
                for (double& v : dst.data) v += gv;
            }
            break;
        }
        case OpKind::gather_rows: {
            if (parent_needs(n.p0)) {
                Tensor& dst = grad_buf(n.p0);
                const int m = n.value.cols();
                for (std::size_t i = 0; i < n.aux.size(); ++i) {
                    double* drow = dst.data.data() + static_cast<std::size_t>(n.aux[i]) * m;
                    const double* grow = g.data.data() + i * static_cast<std::size_t>(m);
                    for (int j = 0; j < m; ++j) drow[j] += grow[j];
                }
            }
            break;
        }
        case OpKind::slice_rows: {
            if (parent_needs(n.p0)) {
                Tensor& dst = grad_buf(n.p0);
                const int m = n.value.cols();
                const int begin = n.aux[0];
                for (int i = 0; i < n.value.rows(); ++i)
                    for (int j = 0; j < m; ++j) dst.at(begin + i, j) += g.at(i, j);
            }
            break;
        }
        case OpKind::stack_rows: {
            const int m = n.value.cols();
            for (std::size_t i = 0; i < n.aux.size(); ++i) {
                if (!parent_needs(n.aux[i])) continue;
                Tensor& dst = grad_buf(n.aux[i]);
                const double* grow = g.data.data() + i * static_cast<std::size_t>(m);
                for (int j = 0; j < m; ++j) dst.data[static_cast<std::size_t>(j)] += grow[j];
            }
            break;
        }
        case OpKind::cosine_sim: {
            if (n.scalar0 == 0.0) break;  // zero-guarded output: zero gradient
            const Tensor& a = pval(n.p0);
            const Tensor& b = pval(n.p1);
            double dot = 0.0, na2 = 0.0, nb2 = 0.0;
            for (std::size_t i = 0; i < a.data.size(); ++i) {
                dot += a.data[i] * b.data[i];
                na2 += a.data[i] * a.data[i];
                nb2 += b.data[i] * b.data[i];
            }
            const double na = std::sqrt(na2), nb = std::sqrt(nb2);
            const double c = dot / (na * nb);
            const double gv = g.data[0];
            if (parent_needs(n.p0)) {
                Tensor& da = grad_buf(n.p0);
                for (std::size_t i = 0; i < a.data.size(); ++i)
                    da.data[i] += gv * (b.data[i] / (na * nb) - c * a.data[i] / na2);
            }
            if (parent_needs(n.p1)) {
                Tensor& db = grad_buf(n.p1);
                for (std::size_t i = 0; i < b.data.size(); ++i)
                    db.data[i] += gv * (a.data[i] / (na * nb) - c * b.data[i] / nb2);
            }
            break;
        }
    }
}

}  // namespace ptffsr
