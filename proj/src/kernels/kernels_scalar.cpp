// Scalar reference kernels. These define the semantics; the vector variants
// are checked against them.

#include "tsdr/kernels.hpp"

namespace tsdr::kern {
namespace {

void s_add(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(double* out, const double* a, double alpha, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * alpha;
}

void s_acc(double* dst, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += x[i];
}

void s_axpy(double* dst, double alpha, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += alpha * x[i];
}

void s_acc_mul(double* dst, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += a[i] * b[i];
}

double s_sum(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double s_dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double s_sqsum(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * a[i];
    return acc;
}

// i-k-j order keeps the inner loop contiguous over b and c rows.
void s_matmul_nn(double* c, const double* a, const double* b,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// c(m,n) += a(m,k) * b(n,k)^T: rows of a against rows of b.
void s_matmul_nt(double* c, const double* a, const double* b,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[i * n + j] += acc;
        }
    }
}

// c(m,n) += a(k,m)^T * b(k,n): rank-1 updates over the shared k dimension.
void s_matmul_tn(double* c, const double* a, const double* b,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double api = ap[i];
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

const Ops kScalarOps = {
    s_add, s_sub, s_mul, s_scale, s_acc, s_axpy, s_acc_mul,
    s_sum, s_dot, s_sqsum,
    s_matmul_nn, s_matmul_nt, s_matmul_tn,
    "scalar",
};

} // namespace

const Ops& scalar_ops() { return kScalarOps; }

} // namespace tsdr::kern
