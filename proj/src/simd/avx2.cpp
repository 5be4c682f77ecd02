// Compiled with -mavx2 -mfma. Nothing in here may run before the dispatcher
// has confirmed CPU support.

#include "segfuse/simd/kernels.hpp"

#include <immintrin.h>

namespace segfuse::simd::avx2 {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr std::size_t width = 8;
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg set1(float v) { return _mm256_set1_ps(v); }
    static reg zero() { return _mm256_setzero_ps(); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
    static reg max(reg a, reg b) { return _mm256_max_ps(a, b); }
    static reg gt_mask(reg a, reg b) { return _mm256_cmp_ps(a, b, _CMP_GT_OQ); }
    static reg and_(reg a, reg b) { return _mm256_and_ps(a, b); }
    static float hsum(reg v) {
        alignas(32) float lanes[8];
        _mm256_store_ps(lanes, v);
        float acc = 0;
        for (float l : lanes) acc += l;
        return acc;
    }
};

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr std::size_t width = 4;
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg set1(double v) { return _mm256_set1_pd(v); }
    static reg zero() { return _mm256_setzero_pd(); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static reg max(reg a, reg b) { return _mm256_max_pd(a, b); }
    static reg gt_mask(reg a, reg b) { return _mm256_cmp_pd(a, b, _CMP_GT_OQ); }
    static reg and_(reg a, reg b) { return _mm256_and_pd(a, b); }
    static double hsum(reg v) {
        alignas(32) double lanes[4];
        _mm256_store_pd(lanes, v);
        return ((lanes[0] + lanes[1]) + lanes[2]) + lanes[3];
    }
};

// Register-blocked micro kernel: RowsN rows of C by two vector widths of
// columns, accumulating over the full k range in registers.
template <typename T, std::size_t RowsN>
inline void gemm_block(std::size_t j, std::size_t k, const T* a, std::size_t lda, const T* b,
                       std::size_t ldb, T* c, std::size_t ldc) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    typename V::reg acc0[RowsN];
    typename V::reg acc1[RowsN];
    for (std::size_t r = 0; r < RowsN; ++r) {
        acc0[r] = V::load(c + r * ldc + j);
        acc1[r] = V::load(c + r * ldc + j + w);
    }
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * ldb + j;
        const auto b0 = V::load(brow);
        const auto b1 = V::load(brow + w);
        for (std::size_t r = 0; r < RowsN; ++r) {
            const auto av = V::set1(a[r * lda + p]);
            acc0[r] = V::fma(av, b0, acc0[r]);
            acc1[r] = V::fma(av, b1, acc1[r]);
        }
    }
    for (std::size_t r = 0; r < RowsN; ++r) {
        V::store(c + r * ldc + j, acc0[r]);
        V::store(c + r * ldc + j + w, acc1[r]);
    }
}

template <typename T, std::size_t RowsN>
inline void gemm_rows(std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                      std::size_t ldb, T* c, std::size_t ldc) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    std::size_t j = 0;
    for (; j + 2 * w <= n; j += 2 * w) {
        gemm_block<T, RowsN>(j, k, a, lda, b, ldb, c, ldc);
    }
    for (; j + w <= n; j += w) {
        for (std::size_t r = 0; r < RowsN; ++r) {
            auto acc = V::load(c + r * ldc + j);
            for (std::size_t p = 0; p < k; ++p) {
                acc = V::fma(V::set1(a[r * lda + p]), V::load(b + p * ldb + j), acc);
            }
            V::store(c + r * ldc + j, acc);
        }
    }
    for (; j < n; ++j) {
        for (std::size_t r = 0; r < RowsN; ++r) {
            T acc = c[r * ldc + j];
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[r * lda + p] * b[p * ldb + j];
            }
            c[r * ldc + j] = acc;
        }
    }
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc) {
    // Column panels keep the B panel resident in L1/L2 across row blocks.
    constexpr std::size_t panel = 256;
    for (std::size_t j0 = 0; j0 < n; j0 += panel) {
        const std::size_t nj = (n - j0 < panel) ? n - j0 : panel;
        const T* bp = b + j0;
        T* cp = c + j0;
        std::size_t i = 0;
        for (; i + 4 <= m; i += 4) {
            gemm_rows<T, 4>(nj, k, a + i * lda, lda, bp, ldb, cp + i * ldc, ldc);
        }
        for (; i < m; ++i) {
            gemm_rows<T, 1>(nj, k, a + i * lda, lda, bp, ldb, cp + i * ldc, ldc);
        }
    }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    using V = Vec<T>;
    const auto av = V::set1(alpha);
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        V::store(y + i, V::fma(av, V::load(x + i), V::load(y + i)));
    }
    for (; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

template <typename T>
void relu(std::size_t n, const T* x, T* y) {
    using V = Vec<T>;
    const auto z = V::zero();
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        V::store(y + i, V::max(V::load(x + i), z));
    }
    for (; i < n; ++i) {
        y[i] = x[i] > T(0) ? x[i] : T(0);
    }
}

template <typename T>
void relu_backward(std::size_t n, const T* x, const T* gy, T* gx) {
    using V = Vec<T>;
    const auto z = V::zero();
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        const auto mask = V::gt_mask(V::load(x + i), z);
        V::store(gx + i, V::add(V::load(gx + i), V::and_(mask, V::load(gy + i))));
    }
    for (; i < n; ++i) {
        if (x[i] > T(0)) {
            gx[i] += gy[i];
        }
    }
}

template <typename T>
T sum(std::size_t n, const T* x) {
    using V = Vec<T>;
    auto acc = V::zero();
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        acc = V::add(acc, V::load(x + i));
    }
    T total = V::hsum(acc);
    for (; i < n; ++i) {
        total += x[i];
    }
    return total;
}

}  // namespace

template <typename T>
const KernelTable<T>& table() {
    static const KernelTable<T> t{&gemm<T>, &axpy<T>, &relu<T>, &relu_backward<T>, &sum<T>};
    return t;
}

template const KernelTable<float>& table<float>();
template const KernelTable<double>& table<double>();

}  // namespace segfuse::simd::avx2
