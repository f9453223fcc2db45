// AVX2 kernel variants. This translation unit is the only one compiled with
// -mavx2 -mfma; it must not be entered unless avx2_available() said yes.
//
// Elementwise kernels use plain add/mul so they round exactly like the scalar
// reference. Reductions and matmul keep 4-lane partials and FMA, which is why
// the equivalence contract for them is tolerance-based.

#include "tsdr/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

namespace tsdr::kern {
namespace {

void v_add(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale(double* out, const double* a, double alpha, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), va));
    }
    for (; i < n; ++i) out[i] = a[i] * alpha;
}

void v_acc(double* dst, const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i),
                                                _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) dst[i] += x[i];
}

// mul then add, not FMA: keeps bit parity with the scalar reference.
void v_axpy(double* dst, double alpha, const double* x, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), prod));
    }
    for (; i < n; ++i) dst[i] += alpha * x[i];
}

void v_acc_mul(double* dst, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                           _mm256_loadu_pd(b + i));
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), prod));
    }
    for (; i < n; ++i) dst[i] += a[i] * b[i];
}

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s2 = _mm_add_pd(lo, hi);
    const __m128d s1 = _mm_add_sd(s2, _mm_unpackhi_pd(s2, s2));
    return _mm_cvtsd_f64(s1);
}

double v_sum(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    double r = hsum(acc);
    for (; i < n; ++i) r += a[i];
    return r;
}

double v_dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    }
    double r = hsum(acc);
    for (; i < n; ++i) r += a[i] * b[i];
    return r;
}

double v_sqsum(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d x = _mm256_loadu_pd(a + i);
        acc = _mm256_fmadd_pd(x, x, acc);
    }
    double r = hsum(acc);
    for (; i < n; ++i) r += a[i] * a[i];
    return r;
}

void v_matmul_nn(double* c, const double* a, const double* b,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const __m256d va = _mm256_set1_pd(aip);
            const double* bp = b + p * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                const __m256d cj = _mm256_loadu_pd(ci + j);
                _mm256_storeu_pd(ci + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(bp + j), cj));
            }
            for (; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void v_matmul_nt(double* c, const double* a, const double* b,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            __m256d acc = _mm256_setzero_pd();
            std::size_t p = 0;
            for (; p + 4 <= k; p += 4) {
                acc = _mm256_fmadd_pd(_mm256_loadu_pd(ai + p),
                                      _mm256_loadu_pd(bj + p), acc);
            }
            double r = hsum(acc);
            for (; p < k; ++p) r += ai[p] * bj[p];
            c[i * n + j] += r;
        }
    }
}

void v_matmul_tn(double* c, const double* a, const double* b,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const __m256d va = _mm256_set1_pd(ap[i]);
            double* ci = c + i * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                const __m256d cj = _mm256_loadu_pd(ci + j);
                _mm256_storeu_pd(ci + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(bp + j), cj));
            }
            for (; j < n; ++j) ci[j] += ap[i] * bp[j];
        }
    }
}

const Ops kAvx2Ops = {
    v_add, v_sub, v_mul, v_scale, v_acc, v_axpy, v_acc_mul,
    v_sum, v_dot, v_sqsum,
    v_matmul_nn, v_matmul_nt, v_matmul_tn,
    "avx2",
};

} // namespace

const Ops& avx2_ops() { return kAvx2Ops; }

} // namespace tsdr::kern

#endif // __AVX2__
