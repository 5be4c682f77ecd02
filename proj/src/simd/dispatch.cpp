#include "segfuse/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace segfuse::simd {
namespace {

Isa initial_isa() {
    const Isa best = detected_isa();
    if (const char* env = std::getenv("SEGFUSE_ISA")) {
        const std::string_view want(env);
        if (want == "scalar") return Isa::scalar;
        if (want == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
    }
    return best;
}

std::atomic<Isa>& active() {
    static std::atomic<Isa> isa{initial_isa()};
    return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return "scalar";
        case Isa::avx2:
            return "avx2";
    }
    return "unknown";
}

bool isa_supported(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
#if SEGFUSE_HAVE_AVX2
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
    }
    return false;
}

Isa detected_isa() { return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
    if (!isa_supported(isa)) {
        throw std::invalid_argument("instruction set not supported on this CPU: " +
                                    std::string(isa_name(isa)));
    }
    active().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelTable<T>& kernels(Isa isa) {
#if SEGFUSE_HAVE_AVX2
    if (isa == Isa::avx2) return avx2::table<T>();
#endif
    (void)isa;
    return scalar::table<T>();
}

template <typename T>
const KernelTable<T>& kernels() {
    return kernels<T>(active_isa());
}

template const KernelTable<float>& kernels<float>(Isa);
template const KernelTable<double>& kernels<double>(Isa);
template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();

}  // namespace segfuse::simd
