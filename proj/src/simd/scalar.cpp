#include "segfuse/simd/kernels.hpp"

namespace segfuse::simd::scalar {
namespace {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        const T* arow = a + i * lda;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

template <typename T>
void relu(std::size_t n, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = x[i] > T(0) ? x[i] : T(0);
    }
}

template <typename T>
void relu_backward(std::size_t n, const T* x, const T* gy, T* gx) {
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > T(0)) {
            gx[i] += gy[i];
        }
    }
}

template <typename T>
T sum(std::size_t n, const T* x) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += x[i];
    }
    return acc;
}

}  // namespace

template <typename T>
const KernelTable<T>& table() {
    static const KernelTable<T> t{&gemm<T>, &axpy<T>, &relu<T>, &relu_backward<T>, &sum<T>};
    return t;
}

template const KernelTable<float>& table<float>();
template const KernelTable<double>& table<double>();

}  // namespace segfuse::simd::scalar
