#pragma once

// Dense double-precision kernels behind the tensor engine.
//
// Two implementations of the same table: a portable scalar reference and an
// AVX2 variant. The active table is picked once at startup from CPU support,
// overridable with TSDR_KERNELS=scalar|avx2.
//
// Contract between the variants:
//   - elementwise kernels produce bit-identical results (no FMA, no
//     reassociation),
//   - reductions and matmul may differ in the last bits (lane partial sums,
//     fused multiply-add); equivalence tests pin them to ~1e-12 relative.

#include <cstddef>

namespace tsdr::kern {

struct Ops {
    // elementwise over arrays of length n; out may alias a or b
    void (*add)(double* out, const double* a, const double* b, std::size_t n);
    void (*sub)(double* out, const double* a, const double* b, std::size_t n);
    void (*mul)(double* out, const double* a, const double* b, std::size_t n);
    void (*scale)(double* out, const double* a, double alpha, std::size_t n);
    void (*acc)(double* dst, const double* x, std::size_t n);                    // dst += x
    void (*axpy)(double* dst, double alpha, const double* x, std::size_t n);     // dst += alpha*x
    void (*acc_mul)(double* dst, const double* a, const double* b, std::size_t n); // dst += a.*b

    // reductions
    double (*sum)(const double* a, std::size_t n);
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sqsum)(const double* a, std::size_t n);

    // row-major matmul, accumulating into c
    // nn: c(m,n) += a(m,k) * b(k,n)
    // nt: c(m,n) += a(m,k) * b(n,k)^T
    // tn: c(m,n) += a(k,m)^T * b(k,n)
    void (*matmul_nn)(double* c, const double* a, const double* b,
                      std::size_t m, std::size_t k, std::size_t n);
    void (*matmul_nt)(double* c, const double* a, const double* b,
                      std::size_t m, std::size_t k, std::size_t n);
    void (*matmul_tn)(double* c, const double* a, const double* b,
                      std::size_t m, std::size_t k, std::size_t n);

    const char* name;
};

const Ops& scalar_ops();

// True when the CPU (and this build) can run the AVX2 table.
bool avx2_available();
const Ops& avx2_ops(); // only valid if avx2_available()

// Table selected at first use; stable for the lifetime of the process.
const Ops& active();

} // namespace tsdr::kern
