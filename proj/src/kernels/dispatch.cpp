#include "plural/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

namespace plural::kernels {

#if defined(PLURAL_HAVE_AVX2)
namespace detail {
const KernelTable& avx2_table_unchecked();
}
#endif

namespace {

bool cpu_has_avx2() {
#if defined(PLURAL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable& select() {
    const KernelTable* fast = avx2_table();
    if (const char* env = std::getenv("PLURAL_KERNELS")) {
        const std::string_view want{env};
        if (want == "scalar") return scalar_table();
        if (want == "avx2" && fast) return *fast;
    }
    return fast ? *fast : scalar_table();
}

std::atomic<const KernelTable*> g_forced{nullptr};

}  // namespace

const KernelTable* avx2_table() {
#if defined(PLURAL_HAVE_AVX2)
    static const bool ok = cpu_has_avx2();
    return ok ? &detail::avx2_table_unchecked() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable& active() {
    if (const KernelTable* f = g_forced.load(std::memory_order_relaxed)) return *f;
    static const KernelTable& chosen = select();
    return chosen;
}

void force(const KernelTable* table) { g_forced.store(table, std::memory_order_relaxed); }

}  // namespace plural::kernels
