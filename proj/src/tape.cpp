#include "tsdr/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "tsdr/kernels.hpp"

namespace tsdr::ad {

namespace {

[[noreturn]] void shape_error(const char* prim, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(std::string(prim) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

} // namespace

const Matrix& Value::val() const { return tape->value(*this); }
const Matrix& Value::grad() const { return tape->grad(*this); }

double Value::scalar() const {
    const Matrix& m = tape->value(*this);
    if (m.rows != 1 || m.cols != 1)
        throw std::logic_error("Value::scalar: not a 1x1 value, got " + m.shape_str());
    return m.data[0];
}

void Tape::check_same_tape(Value v) const {
    if (v.tape != this)
        throw std::logic_error("Tape: value belongs to a different tape");
    if (v.id >= nodes_.size())
        throw std::logic_error("Tape: dangling value handle");
}

Value Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Value Tape::leaf(Matrix m, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.out = std::move(m);
    return push(std::move(n));
}

Value Tape::matmul(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    const Matrix& A = nodes_[a.id].out;
    const Matrix& B = nodes_[b.id].out;
    if (A.cols != B.rows) shape_error("matmul", A, B);
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.out = Matrix(A.rows, B.cols);
    kern::active().matmul_nn(n.out.ptr(), A.ptr(), B.ptr(), A.rows, A.cols, B.cols);
    return push(std::move(n));
}

Value Tape::add(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    const Matrix& A = nodes_[a.id].out;
    const Matrix& B = nodes_[b.id].out;
    if (!A.same_shape(B)) shape_error("add", A, B);
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    kern::active().add(n.out.ptr(), A.ptr(), B.ptr(), A.size());
    return push(std::move(n));
}

Value Tape::sub(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    const Matrix& A = nodes_[a.id].out;
    const Matrix& B = nodes_[b.id].out;
    if (!A.same_shape(B)) shape_error("sub", A, B);
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    kern::active().sub(n.out.ptr(), A.ptr(), B.ptr(), A.size());
    return push(std::move(n));
}

Value Tape::mul(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    const Matrix& A = nodes_[a.id].out;
    const Matrix& B = nodes_[b.id].out;
    if (!A.same_shape(B)) shape_error("mul", A, B);
    Node n;
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    kern::active().mul(n.out.ptr(), A.ptr(), B.ptr(), A.size());
    return push(std::move(n));
}

Value Tape::add_rowvec(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    const Matrix& A = nodes_[a.id].out;
    const Matrix& B = nodes_[b.id].out;
    if (B.rows != 1 || B.cols != A.cols) shape_error("add_rowvec", A, B);
    Node n;
    n.op = Op::AddRowVec;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    for (std::size_t i = 0; i < A.rows; ++i)
        kern::active().add(n.out.row(i), A.row(i), B.ptr(), A.cols);
    return push(std::move(n));
}

Value Tape::scale(Value a, double alpha) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.x0 = alpha;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    kern::active().scale(n.out.ptr(), A.ptr(), alpha, A.size());
    return push(std::move(n));
}

Value Tape::add_scalar(Value a, double alpha) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::AddScalar;
    n.a = a.id;
    n.x0 = alpha;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.out.data[i] = A.data[i] + alpha;
    return push(std::move(n));
}

Value Tape::sigmoid(Value a) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::Sigmoid;
    n.a = a.id;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.out.data[i] = stable_sigmoid(A.data[i]);
    return push(std::move(n));
}

Value Tape::tanh_(Value a) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::Tanh;
    n.a = a.id;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.out.data[i] = std::tanh(A.data[i]);
    return push(std::move(n));
}

Value Tape::log_(Value a) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::Log;
    n.a = a.id;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.out.data[i] = std::log(A.data[i]);
    return push(std::move(n));
}

Value Tape::softplus(Value a) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::Softplus;
    n.a = a.id;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.out.data[i] = stable_softplus(A.data[i]);
    return push(std::move(n));
}

Value Tape::square(Value a) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::Square;
    n.a = a.id;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    kern::active().mul(n.out.ptr(), A.ptr(), A.ptr(), A.size());
    return push(std::move(n));
}

Value Tape::clamp(Value a, double lo, double hi) {
    check_same_tape(a);
    if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be < hi");
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::Clamp;
    n.a = a.id;
    n.x0 = lo;
    n.x1 = hi;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) {
        const double x = A.data[i];
        n.out.data[i] = x < lo ? lo : (x > hi ? hi : x);
    }
    return push(std::move(n));
}

Value Tape::sum_all(Value a) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::SumAll;
    n.a = a.id;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix::scalar(kern::active().sum(A.ptr(), A.size()));
    return push(std::move(n));
}

Value Tape::mean_all(Value a) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    if (A.size() == 0) throw std::invalid_argument("mean: empty input");
    Node n;
    n.op = Op::MeanAll;
    n.a = a.id;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix::scalar(kern::active().sum(A.ptr(), A.size()) /
                           static_cast<double>(A.size()));
    return push(std::move(n));
}

Value Tape::row_sum(Value a) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::RowSum;
    n.a = a.id;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix(A.rows, 1);
    for (std::size_t i = 0; i < A.rows; ++i)
        n.out.data[i] = kern::active().sum(A.row(i), A.cols);
    return push(std::move(n));
}

Value Tape::col_sum(Value a) {
    check_same_tape(a);
    const Matrix& A = nodes_[a.id].out;
    Node n;
    n.op = Op::ColSum;
    n.a = a.id;
    n.requires_grad = nodes_[a.id].requires_grad;
    n.out = Matrix(1, A.cols);
    for (std::size_t i = 0; i < A.rows; ++i)
        kern::active().acc(n.out.ptr(), A.row(i), A.cols);
    return push(std::move(n));
}

Value Tape::concat_cols(Value a, Value b) {
    check_same_tape(a);
    check_same_tape(b);
    const Matrix& A = nodes_[a.id].out;
    const Matrix& B = nodes_[b.id].out;
    if (A.rows != B.rows) shape_error("concat_cols", A, B);
    Node n;
    n.op = Op::ConcatCols;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.out = Matrix(A.rows, A.cols + B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        double* dst = n.out.row(i);
        const double* sa = A.row(i);
        const double* sb = B.row(i);
        for (std::size_t j = 0; j < A.cols; ++j) dst[j] = sa[j];
        for (std::size_t j = 0; j < B.cols; ++j) dst[A.cols + j] = sb[j];
    }
    return push(std::move(n));
}

Value Tape::select_rows(Value table, std::vector<std::uint32_t> idx) {
    check_same_tape(table);
    const Matrix& T = nodes_[table.id].out;
    for (const std::uint32_t r : idx) {
        if (r >= T.rows)
            throw std::out_of_range("select_rows: row " + std::to_string(r) +
                                    " out of range for " + T.shape_str());
    }
    Node n;
    n.op = Op::SelectRows;
    n.a = table.id;
    n.requires_grad = nodes_[table.id].requires_grad;
    n.out = Matrix(idx.size(), T.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* src = T.row(idx[i]);
        double* dst = n.out.row(i);
        for (std::size_t j = 0; j < T.cols; ++j) dst[j] = src[j];
    }
    n.idx = std::move(idx);
    return push(std::move(n));
}

Value Tape::bce(Value target, Value pred) {
    const Matrix& T = nodes_[target.id].out;
    const Matrix& P = nodes_[pred.id].out;
    if (!T.same_shape(P)) shape_error("bce", T, P);
    const Value cp = clamp(pred, kProbClampLo, kProbClampHi);
    const Value term_pos = mul(target, log_(cp));
    const Value one_minus_pred = add_scalar(scale(pred, -1.0), 1.0);
    const Value cq = clamp(one_minus_pred, kProbClampLo, kProbClampHi);
    const Value one_minus_target = add_scalar(scale(target, -1.0), 1.0);
    const Value term_neg = mul(one_minus_target, log_(cq));
    return scale(add(term_pos, term_neg), -1.0);
}

Matrix& Tape::grad_of(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && n.out.size() > 0) n.grad = Matrix(n.out.rows, n.out.cols);
    return n.grad;
}

const Matrix& Tape::grad(Value v) {
    check_same_tape(v);
    return grad_of(v.id);
}

void Tape::backward(Value loss) {
    check_same_tape(loss);
    const Matrix& L = nodes_[loss.id].out;
    if (L.rows != 1 || L.cols != 1)
        throw std::invalid_argument("backward: loss must be 1x1, got " + L.shape_str());

    for (Node& n : nodes_) n.grad = Matrix();
    grad_of(loss.id).data[0] = 1.0;

    const kern::Ops& k = kern::active();

    // nodes are recorded in topological order, so one reverse sweep suffices
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.grad.empty() || n.op == Op::Leaf) continue;
        const Matrix& g = n.grad;
        Node& na = nodes_[n.a];

        switch (n.op) {
        case Op::MatMul: {
            Node& nb = nodes_[n.b];
            if (na.requires_grad) {
                k.matmul_nt(grad_of(n.a).ptr(), g.ptr(), nb.out.ptr(),
                            g.rows, g.cols, na.out.cols);
            }
            if (nb.requires_grad) {
                k.matmul_tn(grad_of(n.b).ptr(), na.out.ptr(), g.ptr(),
                            nb.out.rows, na.out.rows, g.cols);
            }
            break;
        }
        case Op::Add: {
            Node& nb = nodes_[n.b];
            if (na.requires_grad) k.acc(grad_of(n.a).ptr(), g.ptr(), g.size());
            if (nb.requires_grad) k.acc(grad_of(n.b).ptr(), g.ptr(), g.size());
            break;
        }
        case Op::Sub: {
            Node& nb = nodes_[n.b];
            if (na.requires_grad) k.acc(grad_of(n.a).ptr(), g.ptr(), g.size());
            if (nb.requires_grad) k.axpy(grad_of(n.b).ptr(), -1.0, g.ptr(), g.size());
            break;
        }
        case Op::Mul: {
            Node& nb = nodes_[n.b];
            if (na.requires_grad)
                k.acc_mul(grad_of(n.a).ptr(), g.ptr(), nb.out.ptr(), g.size());
            if (nb.requires_grad)
                k.acc_mul(grad_of(n.b).ptr(), g.ptr(), na.out.ptr(), g.size());
            break;
        }
        case Op::AddRowVec: {
            Node& nb = nodes_[n.b];
            if (na.requires_grad) k.acc(grad_of(n.a).ptr(), g.ptr(), g.size());
            if (nb.requires_grad) {
                Matrix& gb = grad_of(n.b);
                for (std::size_t i = 0; i < g.rows; ++i)
                    k.acc(gb.ptr(), g.row(i), g.cols);
            }
            break;
        }
        case Op::Scale:
            if (na.requires_grad) k.axpy(grad_of(n.a).ptr(), n.x0, g.ptr(), g.size());
            break;
        case Op::AddScalar:
            if (na.requires_grad) k.acc(grad_of(n.a).ptr(), g.ptr(), g.size());
            break;
        case Op::Sigmoid:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.out.data[i];
                    ga.data[i] += g.data[i] * y * (1.0 - y);
                }
            }
            break;
        case Op::Tanh:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.out.data[i];
                    ga.data[i] += g.data[i] * (1.0 - y * y);
                }
            }
            break;
        case Op::Log:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga.data[i] += g.data[i] / na.out.data[i];
            }
            break;
        case Op::Softplus:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga.data[i] += g.data[i] * stable_sigmoid(na.out.data[i]);
            }
            break;
        case Op::Square:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga.data[i] += 2.0 * g.data[i] * na.out.data[i];
            }
            break;
        case Op::Clamp:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double x = na.out.data[i];
                    if (x > n.x0 && x < n.x1) ga.data[i] += g.data[i];
                }
            }
            break;
        case Op::SumAll:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                const double s = g.data[0];
                for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += s;
            }
            break;
        case Op::MeanAll:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                const double s = g.data[0] / static_cast<double>(na.out.size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += s;
            }
            break;
        case Op::RowSum:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                for (std::size_t i = 0; i < ga.rows; ++i) {
                    const double s = g.data[i];
                    double* gr = ga.row(i);
                    for (std::size_t j = 0; j < ga.cols; ++j) gr[j] += s;
                }
            }
            break;
        case Op::ColSum:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                for (std::size_t i = 0; i < ga.rows; ++i)
                    k.acc(ga.row(i), g.ptr(), ga.cols);
            }
            break;
        case Op::ConcatCols: {
            Node& nb = nodes_[n.b];
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                for (std::size_t i = 0; i < ga.rows; ++i)
                    k.acc(ga.row(i), g.row(i), ga.cols);
            }
            if (nb.requires_grad) {
                Matrix& gb = grad_of(n.b);
                for (std::size_t i = 0; i < gb.rows; ++i)
                    k.acc(gb.row(i), g.row(i) + na.out.cols, gb.cols);
            }
            break;
        }
        case Op::SelectRows:
            if (na.requires_grad) {
                Matrix& ga = grad_of(n.a);
                for (std::size_t i = 0; i < n.idx.size(); ++i)
                    k.acc(ga.row(n.idx[i]), g.row(i), ga.cols);
            }
            break;
        case Op::Leaf:
            break;
        }
    }
}

} // namespace tsdr::ad
