#include <atomic>
#include <cstdlib>
#include <string>

#include "promptreg/kernels.hpp"

namespace promptreg::kernels {

#ifdef PROMPTREG_HAVE_AVX2
const KernelTable& avx2_table_unchecked();
#endif

namespace {

const KernelTable* initial_table() {
  if (const char* forced = std::getenv("PROMPTREG_SIMD")) {
    if (std::string(forced) == "scalar") return &scalar_table();
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable* avx2_table() {
#ifdef PROMPTREG_HAVE_AVX2
  static const bool supported =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  if (supported) return &avx2_table_unchecked();
#endif
  return nullptr;
}

const KernelTable& active_table() { return *active().load(std::memory_order_relaxed); }

bool select(std::string_view name) {
  if (name == "scalar") {
    active().store(&scalar_table());
    return true;
  }
  if (name == "avx2") {
    if (const KernelTable* t = avx2_table()) {
      active().store(t);
      return true;
    }
  }
  return false;
}

}  // namespace promptreg::kernels
