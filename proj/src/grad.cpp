#include "rlfr/grad.hpp"

#include <cmath>
#include <string>

#include "rlfr/errors.hpp"

namespace rlfr {

// ------------------------------------------------------------------- tensor

Tensor::Tensor(std::int64_t r, std::int64_t c, double fill)
    : rows(r), cols(c), values(static_cast<std::size_t>(r * c), fill) {
    if (r < 0 || c < 0) throw ContractError("tensor dims must be non-negative");
}

Tensor Tensor::scalar(double v) {
    Tensor t(1, 1);
    t.values[0] = v;
    return t;
}

Tensor Tensor::row(std::vector<double> v) {
    Tensor t;
    t.rows = 1;
    t.cols = static_cast<std::int64_t>(v.size());
    t.values = std::move(v);
    return t;
}

double& Tensor::at(std::int64_t r, std::int64_t c) {
    return values[static_cast<std::size_t>(r * cols + c)];
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
    return values[static_cast<std::size_t>(r * cols + c)];
}

void Tensor::set_requires_grad(bool on) {
    requires_grad = on;
    if (on) {
        grad.assign(values.size(), 0.0);
    } else {
        grad.clear();
    }
}

void Tensor::zero_grad() {
    if (requires_grad) grad.assign(values.size(), 0.0);
}

// --------------------------------------------------------------------- tape

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
    throw ContractError(std::string(op) + ": bad shape (" + std::to_string(a.rows) + "x" +
                        std::to_string(a.cols) + ")");
}

[[noreturn]] void shape_error2(const char* op, const Tensor& a, const Tensor& b) {
    throw ContractError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                        std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                        std::to_string(b.cols) + ")");
}

#ifndef NDEBUG
void check_finite(const Tensor& t, const char* op) {
    for (double v : t.values) {
        if (!std::isfinite(v)) throw ContractError(std::string(op) + ": non-finite output");
    }
}
#define RLFR_CHECK_FINITE(t, op) check_finite((t), (op))
#else
#define RLFR_CHECK_FINITE(t, op) ((void)0)
#endif

}  // namespace

void Tape::check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.idx) >= nodes_.size())
        throw ContractError("var does not belong to this tape (detached graph?)");
}

const Tensor& Tape::val(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.idx)];
    return n.external ? *n.external : n.value;
}

const Tensor& Tape::value(Var v) const {
    check(v);
    return val(v);
}

Tape::Node& Tape::node(Var v) { return nodes_[static_cast<std::size_t>(v.idx)]; }

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor& param) {
    if (!param.requires_grad || param.grad.size() != param.values.size())
        throw ContractError("leaf: tensor must have requires_grad set");
    Node n;
    n.op = Op::leaf;
    n.external = &param;
    return push(std::move(n));
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::affine(Var x, Var w, Var b) {
    check(x);
    check(w);
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    if (xv.cols != wv.rows) shape_error2("affine", xv, wv);
    Node n;
    n.op = Op::affine;
    n.a = x;
    n.b = w;
    n.value = Tensor(xv.rows, wv.cols);
    if (b.valid()) {
        check(b);
        const Tensor& bv = val(b);
        if (bv.rows != 1 || bv.cols != wv.cols) shape_error2("affine bias", bv, wv);
        n.c = b;
        for (std::int64_t t = 0; t < xv.rows; ++t) {
            for (std::int64_t j = 0; j < wv.cols; ++j) n.value.at(t, j) = bv.values[static_cast<std::size_t>(j)];
        }
    }
    for (std::int64_t t = 0; t < xv.rows; ++t) {
        const double* xrow = &xv.values[static_cast<std::size_t>(t * xv.cols)];
        double* yrow = &n.value.values[static_cast<std::size_t>(t * wv.cols)];
        for (std::int64_t m = 0; m < xv.cols; ++m) {
            const double xv_m = xrow[m];
            if (xv_m == 0.0) continue;
            const double* wrow = &wv.values[static_cast<std::size_t>(m * wv.cols)];
            for (std::int64_t j = 0; j < wv.cols; ++j) yrow[j] += xv_m * wrow[j];
        }
    }
    RLFR_CHECK_FINITE(n.value, "affine");
    return push(std::move(n));
}

Var Tape::embed(const std::vector<int>& ids, Var table) {
    check(table);
    const Tensor& tv = val(table);
    Node n;
    n.op = Op::embed;
    n.a = table;
    n.ids = ids;
    n.value = Tensor(static_cast<std::int64_t>(ids.size()), tv.cols);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const int id = ids[t];
        if (id < 0 || id >= tv.rows)
            throw ContractError("embed: id out of range: " + std::to_string(id));
        for (std::int64_t j = 0; j < tv.cols; ++j)
            n.value.at(static_cast<std::int64_t>(t), j) = tv.at(id, j);
    }
    return push(std::move(n));
}

Var Tape::tanh_op(Var x) {
    check(x);
    Node n;
    n.op = Op::tanh_;
    n.a = x;
    n.value = val(x);
    for (double& v : n.value.values) v = std::tanh(v);
    RLFR_CHECK_FINITE(n.value, "tanh");
    return push(std::move(n));
}

Var Tape::sigmoid_op(Var x) {
    check(x);
    Node n;
    n.op = Op::sigmoid_;
    n.a = x;
    n.value = val(x);
    for (double& v : n.value.values) v = 1.0 / (1.0 + std::exp(-v));
    RLFR_CHECK_FINITE(n.value, "sigmoid");
    return push(std::move(n));
}

Var Tape::softmax_rows(Var x) {
    check(x);
    Node n;
    n.op = Op::softmax_rows;
    n.a = x;
    n.value = val(x);
    Tensor& y = n.value;
    if (y.cols < 1) shape_error("softmax_rows", y);
    for (std::int64_t t = 0; t < y.rows; ++t) {
        double* row = &y.values[static_cast<std::size_t>(t * y.cols)];
        double mx = row[0];
        for (std::int64_t j = 1; j < y.cols; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < y.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (std::int64_t j = 0; j < y.cols; ++j) row[j] /= z;
    }
    RLFR_CHECK_FINITE(n.value, "softmax_rows");
    return push(std::move(n));
}

Var Tape::log_softmax_rows(Var x) {
    check(x);
    Node n;
    n.op = Op::log_softmax_rows;
    n.a = x;
    n.value = val(x);
    Tensor& y = n.value;
    if (y.cols < 1) shape_error("log_softmax_rows", y);
    for (std::int64_t t = 0; t < y.rows; ++t) {
        double* row = &y.values[static_cast<std::size_t>(t * y.cols)];
        double mx = row[0];
        for (std::int64_t j = 1; j < y.cols; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < y.cols; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (std::int64_t j = 0; j < y.cols; ++j) row[j] -= lse;
    }
    RLFR_CHECK_FINITE(n.value, "log_softmax_rows");
    return push(std::move(n));
}

Var Tape::gather_rows(Var x, std::vector<int> idx) {
    check(x);
    const Tensor& xv = val(x);
    if (static_cast<std::int64_t>(idx.size()) != xv.rows)
        throw ContractError("gather_rows: index count must equal row count");
    Node n;
    n.op = Op::gather_rows;
    n.a = x;
    n.ids = std::move(idx);
    n.value = Tensor(xv.rows, 1);
    for (std::int64_t t = 0; t < xv.rows; ++t) {
        const int j = n.ids[static_cast<std::size_t>(t)];
        if (j < 0 || j >= xv.cols)
            throw ContractError("gather_rows: column index out of range: " + std::to_string(j));
        n.value.at(t, 0) = xv.at(t, j);
    }
    return push(std::move(n));
}

Var Tape::sum_all(Var x) {
    check(x);
    const Tensor& xv = val(x);
    Node n;
    n.op = Op::sum_all;
    n.a = x;
    double s = 0.0;
    for (double v : xv.values) s += v;
    n.value = Tensor::scalar(s);
    RLFR_CHECK_FINITE(n.value, "sum_all");
    return push(std::move(n));
}

Var Tape::scale_add(Var acc, double c, Var x) {
    check(acc);
    check(x);
    const Tensor& av = val(acc);
    const Tensor& xv = val(x);
    if (av.rows != xv.rows || av.cols != xv.cols) shape_error2("scale_add", av, xv);
    Node n;
    n.op = Op::scale_add;
    n.a = acc;
    n.b = x;
    n.cscale = c;
    n.value = av;
    for (std::size_t i = 0; i < n.value.values.size(); ++i) n.value.values[i] += c * xv.values[i];
    RLFR_CHECK_FINITE(n.value, "scale_add");
    return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.rows != bv.rows || av.cols != bv.cols) shape_error2("hadamard", av, bv);
    Node n;
    n.op = Op::hadamard;
    n.a = a;
    n.b = b;
    n.value = av;
    for (std::size_t i = 0; i < n.value.values.size(); ++i) n.value.values[i] *= bv.values[i];
    RLFR_CHECK_FINITE(n.value, "hadamard");
    return push(std::move(n));
}

Var Tape::slice_cols(Var x, std::int64_t begin, std::int64_t len) {
    check(x);
    const Tensor& xv = val(x);
    if (begin < 0 || len < 1 || begin + len > xv.cols)
        throw ContractError("slice_cols: window out of range");
    Node n;
    n.op = Op::slice_cols;
    n.a = x;
    n.i0 = begin;
    n.i1 = len;
    n.value = Tensor(xv.rows, len);
    for (std::int64_t t = 0; t < xv.rows; ++t) {
        for (std::int64_t j = 0; j < len; ++j) n.value.at(t, j) = xv.at(t, begin + j);
    }
    return push(std::move(n));
}

Var Tape::scale(Var x, double c) {
    check(x);
    Node n;
    n.op = Op::scale;
    n.a = x;
    n.cscale = c;
    n.value = val(x);
    for (double& v : n.value.values) v *= c;
    RLFR_CHECK_FINITE(n.value, "scale");
    return push(std::move(n));
}

double* Tape::grad_ptr(Var v) {
    Node& n = node(v);
    if (n.op == Op::constant) return nullptr;
    if (n.op == Op::leaf) return n.external->grad.data();
    if (n.grad.empty()) n.grad.assign(n.value.values.size(), 0.0);
    return n.grad.data();
}

void Tape::add_grad(Var v, const double* g, std::int64_t count) {
    double* dst = grad_ptr(v);
    if (!dst) return;
    for (std::int64_t i = 0; i < count; ++i) dst[i] += g[i];
}

void Tape::backprop(Node& n) {
    const std::vector<double>& g = n.grad;
    switch (n.op) {
        case Op::leaf:
        case Op::constant:
            return;
        case Op::affine: {
            const Tensor& xv = val(n.a);
            const Tensor& wv = val(n.b);
            const std::int64_t T = xv.rows, M = xv.cols, N = wv.cols;
            double* dx = grad_ptr(n.a);
            double* dw = grad_ptr(n.b);
            for (std::int64_t t = 0; t < T; ++t) {
                const double* grow = &g[static_cast<std::size_t>(t * N)];
                const double* xrow = &xv.values[static_cast<std::size_t>(t * M)];
                for (std::int64_t m = 0; m < M; ++m) {
                    const double* wrow = &wv.values[static_cast<std::size_t>(m * N)];
                    if (dx) {
                        double acc = 0.0;
                        for (std::int64_t j = 0; j < N; ++j) acc += grow[j] * wrow[j];
                        dx[t * M + m] += acc;
                    }
                    if (dw) {
                        const double x_m = xrow[m];
                        if (x_m != 0.0) {
                            double* dwrow = &dw[m * N];
                            for (std::int64_t j = 0; j < N; ++j) dwrow[j] += x_m * grow[j];
                        }
                    }
                }
            }
            if (n.c.valid()) {
                double* db = grad_ptr(n.c);
                if (db) {
                    for (std::int64_t t = 0; t < T; ++t) {
                        const double* grow = &g[static_cast<std::size_t>(t * N)];
                        for (std::int64_t j = 0; j < N; ++j) db[j] += grow[j];
                    }
                }
            }
            return;
        }
        case Op::embed: {
            const Tensor& tv = val(n.a);
            double* dt = grad_ptr(n.a);
            if (!dt) return;
            const std::int64_t D = tv.cols;
            for (std::size_t t = 0; t < n.ids.size(); ++t) {
                const double* grow = &g[t * static_cast<std::size_t>(D)];
                double* drow = &dt[n.ids[t] * D];
                for (std::int64_t j = 0; j < D; ++j) drow[j] += grow[j];
            }
            return;
        }
        case Op::tanh_: {
            double* dx = grad_ptr(n.a);
            if (!dx) return;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double y = n.value.values[i];
                dx[i] += g[i] * (1.0 - y * y);
            }
            return;
        }
        case Op::sigmoid_: {
            double* dx = grad_ptr(n.a);
            if (!dx) return;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double y = n.value.values[i];
                dx[i] += g[i] * y * (1.0 - y);
            }
            return;
        }
        case Op::softmax_rows: {
            double* dx = grad_ptr(n.a);
            if (!dx) return;
            const std::int64_t C = n.value.cols;
            for (std::int64_t t = 0; t < n.value.rows; ++t) {
                const double* y = &n.value.values[static_cast<std::size_t>(t * C)];
                const double* gr = &g[static_cast<std::size_t>(t * C)];
                double dot = 0.0;
                for (std::int64_t j = 0; j < C; ++j) dot += gr[j] * y[j];
                for (std::int64_t j = 0; j < C; ++j) dx[t * C + j] += y[j] * (gr[j] - dot);
            }
            return;
        }
        case Op::log_softmax_rows: {
            double* dx = grad_ptr(n.a);
            if (!dx) return;
            const std::int64_t C = n.value.cols;
            for (std::int64_t t = 0; t < n.value.rows; ++t) {
                const double* y = &n.value.values[static_cast<std::size_t>(t * C)];
                const double* gr = &g[static_cast<std::size_t>(t * C)];
                double gsum = 0.0;
                for (std::int64_t j = 0; j < C; ++j) gsum += gr[j];
                for (std::int64_t j = 0; j < C; ++j) dx[t * C + j] += gr[j] - std::exp(y[j]) * gsum;
            }
            return;
        }
        case Op::gather_rows: {
            const Tensor& xv = val(n.a);
            double* dx = grad_ptr(n.a);
            if (!dx) return;
            for (std::int64_t t = 0; t < n.value.rows; ++t)
                dx[t * xv.cols + n.ids[static_cast<std::size_t>(t)]] += g[static_cast<std::size_t>(t)];
            return;
        }
        case Op::sum_all: {
            const Tensor& xv = val(n.a);
            double* dx = grad_ptr(n.a);
            if (!dx) return;
            const double g0 = g[0];
            for (std::int64_t i = 0; i < xv.size(); ++i) dx[i] += g0;
            return;
        }
        case Op::scale_add: {
            add_grad(n.a, g.data(), static_cast<std::int64_t>(g.size()));
            double* db = grad_ptr(n.b);
            if (db) {
                for (std::size_t i = 0; i < g.size(); ++i) db[i] += n.cscale * g[i];
            }
            return;
        }
        case Op::hadamard: {
            const Tensor& av = val(n.a);
            const Tensor& bv = val(n.b);
            double* da = grad_ptr(n.a);
            double* db = grad_ptr(n.b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (da) da[i] += g[i] * bv.values[i];
                if (db) db[i] += g[i] * av.values[i];
            }
            return;
        }
        case Op::slice_cols: {
            const Tensor& xv = val(n.a);
            double* dx = grad_ptr(n.a);
            if (!dx) return;
            for (std::int64_t t = 0; t < n.value.rows; ++t) {
                for (std::int64_t j = 0; j < n.i1; ++j)
                    dx[t * xv.cols + n.i0 + j] += g[static_cast<std::size_t>(t * n.i1 + j)];
            }
            return;
        }
        case Op::scale: {
            double* dx = grad_ptr(n.a);
            if (!dx) return;
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += n.cscale * g[i];
            return;
        }
    }
}

void Tape::backward(Var loss) {
    check(loss);
    const Tensor& lv = val(loss);
    if (lv.size() != 1) throw ContractError("backward: loss must be a 1x1 tensor");
    Node& ln = node(loss);
    if (ln.op == Op::leaf) {
        ln.external->grad[0] += 1.0;
        return;
    }
    if (ln.op == Op::constant) return;
    // Reset adjoints from a possible earlier backward; leaves keep theirs so
    // repeated calls accumulate (documented: two calls double leaf grads).
    for (auto& n : nodes_) n.grad.clear();
    ln.grad.assign(1, 1.0);
    for (std::int32_t i = loss.idx; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.empty()) continue;
        backprop(n);
    }
}

void Tape::clear() { nodes_.clear(); }

// ------------------------------------------------------------ optimizer bits

double global_grad_norm(const std::vector<Tensor*>& params) {
    double sq = 0.0;
    for (const Tensor* p : params) {
        for (double g : p->grad) sq += g * g;
    }
    return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<Tensor*>& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (Tensor* p : params) {
            for (double& g : p->grad) g *= s;
        }
    }
    return norm;
}

void sgd_step(const std::vector<Tensor*>& params, double lr, bool ascend) {
    const double step = ascend ? lr : -lr;
    for (Tensor* p : params) {
        for (std::size_t i = 0; i < p->values.size(); ++i) p->values[i] += step * p->grad[i];
    }
}

void zero_grads(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) p->zero_grad();
}

void scale_grads(const std::vector<Tensor*>& params, double c) {
    for (Tensor* p : params) {
        for (double& g : p->grad) g *= c;
    }
}

}  // namespace rlfr
