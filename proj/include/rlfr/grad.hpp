#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace rlfr {

// Row-major 2-D tensor of doubles. Scalars are 1x1, row vectors 1xN. The
// gradient buffer exists iff requires_grad is set.
struct Tensor {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(std::int64_t r, std::int64_t c, double fill = 0.0);

    static Tensor scalar(double v);
    static Tensor row(std::vector<double> v);

    std::int64_t size() const { return rows * cols; }
    std::array<std::int64_t, 2> shape() const { return {rows, cols}; }

    double& at(std::int64_t r, std::int64_t c);
    double at(std::int64_t r, std::int64_t c) const;

    void set_requires_grad(bool on);
    void zero_grad();
};

// Handle to a node on a Tape. Valid only for the tape that created it.
struct Var {
    std::int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

// Define-by-run reverse-mode tape. A fresh graph is recorded per training
// step; backward() walks it once in reverse creation order and accumulates
// into the grad buffers of the requires-grad leaves.
//
// Repeated backward() calls are allowed and ADD into leaf gradients (two
// calls double them); callers zero leaf grads between steps.
class Tape {
public:
    // Leaf over an external parameter; requires_grad must already be set and
    // the tensor must outlive the tape.
    Var leaf(Tensor& param);

    // Constant input; never receives gradient.
    Var constant(Tensor value);

    // y = x * W (+ b broadcast over rows). x: TxM, W: MxN, b: 1xN (optional).
    Var affine(Var x, Var w, Var b = {});

    // Row t of the result is table[ids[t]]. table: VxD -> result: TxD.
    Var embed(const std::vector<int>& ids, Var table);

    Var tanh_op(Var x);
    Var sigmoid_op(Var x);
    Var softmax_rows(Var x);
    Var log_softmax_rows(Var x);

    // y[t][0] = x[t][idx[t]]. x: TxC -> y: Tx1.
    Var gather_rows(Var x, std::vector<int> idx);

    // Sum of all entries -> 1x1.
    Var sum_all(Var x);

    // acc + c * x, elementwise; shapes must match.
    Var scale_add(Var acc, double c, Var x);

    Var add(Var a, Var b) { return scale_add(a, 1.0, b); }

    // Elementwise product; shapes must match.
    Var hadamard(Var a, Var b);

    // Column window [begin, begin+len) of every row.
    Var slice_cols(Var x, std::int64_t begin, std::int64_t len);

    // c * x.
    Var scale(Var x, double c);

    const Tensor& value(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    // loss must be a 1x1 node of this tape.
    void backward(Var loss);

    // Drops all nodes but keeps allocated capacity for reuse.
    void clear();

private:
    enum class Op : std::uint8_t {
        leaf,
        constant,
        affine,
        embed,
        tanh_,
        sigmoid_,
        softmax_rows,
        log_softmax_rows,
        gather_rows,
        sum_all,
        scale_add,
        hadamard,
        slice_cols,
        scale,
    };

    struct Node {
        Op op = Op::constant;
        Tensor value;               // unused for leaves
        Tensor* external = nullptr; // leaf parameter
        std::vector<double> grad;   // adjoint buffer for non-leaf nodes
        Var a, b, c;                // inputs
        double cscale = 0.0;
        std::int64_t i0 = 0, i1 = 0;
        std::vector<int> ids;
    };

    const Tensor& val(Var v) const;
    Node& node(Var v);
    Var push(Node n);
    void check(Var v) const;
    void backprop(Node& n);
    void add_grad(Var v, const double* g, std::int64_t count);
    double* grad_ptr(Var v);

    std::vector<Node> nodes_;
};

// ------------------------------------------------------------ optimizer bits

double global_grad_norm(const std::vector<Tensor*>& params);

// Scales gradients in place so the global norm is at most max_norm; returns
// the pre-clip norm. max_norm <= 0 disables clipping.
double clip_grad_norm(const std::vector<Tensor*>& params, double max_norm);

// Plain SGD: theta -= lr * grad (descend) or theta += lr * grad (ascend).
void sgd_step(const std::vector<Tensor*>& params, double lr, bool ascend);

void zero_grads(const std::vector<Tensor*>& params);

// Scales all gradients by c (e.g. 1/N after accumulating a batch of sums).
void scale_grads(const std::vector<Tensor*>& params, double c);

}  // namespace rlfr
