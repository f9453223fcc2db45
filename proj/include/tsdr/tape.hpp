#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape is a growing arena of nodes recorded during the forward pass and
// replayed in reverse by backward(). Tapes are rebuilt per mini-batch, so
// graphs may change shape freely between batches. Values are cheap handles
// (tape pointer + index) and never outlive their tape.
//
// Gradients accumulate additively across fan-out; backward() never mutates
// forward values; running backward() again restarts from zero gradients.

#include <cstdint>
#include <functional>
#include <vector>

#include "tsdr/matrix.hpp"

namespace tsdr::ad {

class Tape;

struct Value {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    const Matrix& val() const;
    const Matrix& grad() const;
    double scalar() const; // 1x1 only
};

class Tape {
public:
    // --- leaves -----------------------------------------------------------
    Value leaf(Matrix m, bool requires_grad);
    Value constant(Matrix m) { return leaf(std::move(m), false); }
    Value constant_scalar(double x) { return leaf(Matrix::scalar(x), false); }
    Value param(const Matrix& m) { return leaf(m, true); }

    // --- primitives ---------------------------------------------------------
    Value matmul(Value a, Value b);               // (m,k)x(k,n)
    Value add(Value a, Value b);                  // same shape
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);                  // elementwise
    Value add_rowvec(Value a, Value b);           // (m,n) + (1,n) broadcast
    Value scale(Value a, double alpha);
    Value add_scalar(Value a, double alpha);
    Value sigmoid(Value a);
    Value tanh_(Value a);
    Value log_(Value a);
    Value softplus(Value a);
    Value square(Value a);
    Value clamp(Value a, double lo, double hi);   // gradient passes strictly inside
    Value sum_all(Value a);                       // -> 1x1
    Value mean_all(Value a);                      // -> 1x1
    Value row_sum(Value a);                       // (m,n) -> (m,1)
    Value col_sum(Value a);                       // (m,n) -> (1,n)
    Value concat_cols(Value a, Value b);          // (m,n1)|(m,n2) -> (m,n1+n2)
    Value select_rows(Value table, std::vector<std::uint32_t> idx); // gather rows

    // binary cross-entropy against a constant 0/1 target, elementwise;
    // predictions clamped to [1e-7, 1-1e-7] before the logs
    Value bce(Value target, Value pred);

    // --- execution ----------------------------------------------------------
    // loss must be 1x1; computes d(loss)/d(node) for every contributing node
    void backward(Value loss);

    const Matrix& value(Value v) const { return nodes_[v.id].out; }
    // allocates a zero gradient on first query if backward never touched it
    const Matrix& grad(Value v);
    bool requires_grad(Value v) const { return nodes_[v.id].requires_grad; }

    std::size_t size() const { return nodes_.size(); }

    static constexpr double kProbClampLo = 1e-7;
    static constexpr double kProbClampHi = 1.0 - 1e-7;

private:
    enum class Op : std::uint8_t {
        Leaf, MatMul, Add, Sub, Mul, AddRowVec, Scale, AddScalar,
        Sigmoid, Tanh, Log, Softplus, Square, Clamp,
        SumAll, MeanAll, RowSum, ColSum, ConcatCols, SelectRows,
    };

    struct Node {
        Op op = Op::Leaf;
        std::uint32_t a = 0;
        std::uint32_t b = 0;
        bool requires_grad = false;
        double x0 = 0.0; // scale factor / clamp lo
        double x1 = 0.0; // clamp hi
        std::vector<std::uint32_t> idx; // SelectRows only
        Matrix out;
        Matrix grad; // empty until touched by backward
    };

    Value push(Node n);
    Matrix& grad_of(std::uint32_t id); // allocate-on-touch
    void check_same_tape(Value v) const;

    std::vector<Node> nodes_;
};

} // namespace tsdr::ad
