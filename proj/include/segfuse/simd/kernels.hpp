#pragma once

// Inner-loop arithmetic kernels. Every kernel has a portable scalar reference
// implementation and, on x86-64, an AVX2+FMA variant. The variant in use is
// picked once at startup from CPU features and may be overridden with the
// SEGFUSE_ISA environment variable ("scalar" or "avx2") or set_active_isa().

#include <cstddef>
#include <string_view>

namespace segfuse::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Best instruction set supported by the running CPU.
Isa detected_isa();

/// Instruction set the dispatched kernels currently use.
Isa active_isa();

/// Throws std::invalid_argument if the CPU does not support `isa`.
void set_active_isa(Isa isa);

bool isa_supported(Isa isa);

template <typename T>
struct KernelTable {
    // C[m x n] += A[m x k] * B[k x n], all row-major with leading dimensions.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                 const T* b, std::size_t ldb, T* c, std::size_t ldc);
    // y += alpha * x
    void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
    // y = max(x, 0)
    void (*relu)(std::size_t n, const T* x, T* y);
    // gx += gy where x > 0
    void (*relu_backward)(std::size_t n, const T* x, const T* gy, T* gx);
    // sum of x
    T (*sum)(std::size_t n, const T* x);
};

template <typename T>
const KernelTable<T>& kernels();

template <typename T>
const KernelTable<T>& kernels(Isa isa);

namespace scalar {
template <typename T>
const KernelTable<T>& table();
}  // namespace scalar

namespace avx2 {
// Only valid to call when isa_supported(Isa::avx2).
template <typename T>
const KernelTable<T>& table();
}  // namespace avx2

}  // namespace segfuse::simd
