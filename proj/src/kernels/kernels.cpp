// Runtime kernel selection. Detection follows the usual cpuid dance on x86;
// everything else falls back to the scalar reference.

#include "tsdr/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#if defined(__x86_64__) || defined(_M_X64)
#if defined(_MSC_VER)
#include <intrin.h>
#else
#include <cpuid.h>
#endif
#endif

namespace tsdr::kern {

#if !defined(TSDR_HAVE_AVX2_TU)
// No AVX2 translation unit in this build; keep the symbol defined so callers
// can link, but it must never be reached.
const Ops& avx2_ops() { throw std::logic_error("avx2_ops: not built"); }
#endif

bool avx2_available() {
#if defined(TSDR_HAVE_AVX2_TU) && (defined(__x86_64__) || defined(_M_X64))
#if defined(_MSC_VER)
    int info[4] = {0, 0, 0, 0};
    __cpuidex(info, 7, 0);
    const bool avx2 = (info[1] & (1 << 5)) != 0;
    __cpuid(info, 1);
    const bool fma = (info[2] & (1 << 12)) != 0;
    return avx2 && fma;
#else
    unsigned eax = 0, ebx = 0, ecx = 0, edx = 0;
    if (!__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) return false;
    const bool avx2 = (ebx & (1u << 5)) != 0;
    if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
    const bool fma = (ecx & (1u << 12)) != 0;
    return avx2 && fma;
#endif
#else
    return false;
#endif
}

namespace {

const Ops& pick() {
    const char* env = std::getenv("TSDR_KERNELS");
    if (env != nullptr && *env != '\0') {
        const std::string want(env);
        if (want == "scalar") return scalar_ops();
        if (want == "avx2") {
            if (!avx2_available())
                throw std::runtime_error("TSDR_KERNELS=avx2 but AVX2 is unavailable");
            return avx2_ops();
        }
        if (want != "auto")
            throw std::runtime_error("TSDR_KERNELS: unknown value '" + want + "'");
    }
    return avx2_available() ? avx2_ops() : scalar_ops();
}

} // namespace

const Ops& active() {
    static const Ops& ops = pick();
    return ops;
}

} // namespace tsdr::kern
