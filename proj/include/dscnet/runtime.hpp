// Thread control and the optional multiply-accumulate instrumentation hook.
#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <string>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace dscnet {

inline void set_num_threads(int n) {
#if defined(_OPENMP)
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline int num_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// DSC_THREADS, when set to a positive integer, else the runtime default.
inline int default_threads_from_env() {
  if (const char* v = std::getenv("DSC_THREADS")) {
    try {
      int n = std::stoi(v);
      if (n > 0) return n;
    } catch (...) {
    }
  }
  return num_threads();
}

namespace instrument {

inline std::atomic<bool> g_enabled{false};
inline std::atomic<std::uint64_t> g_macs{0};

inline void add_macs(std::uint64_t n) {
  if (g_enabled.load(std::memory_order_relaxed)) g_macs.fetch_add(n, std::memory_order_relaxed);
}

// Counts kernel multiply-adds executed by conv2d/linear forward calls while
// alive. Zero-padding taps are counted as executed multiply-adds.
class MacCountScope {
 public:
  MacCountScope() {
    g_macs = 0;
    g_enabled = true;
  }
  ~MacCountScope() { g_enabled = false; }
  MacCountScope(const MacCountScope&) = delete;
  MacCountScope& operator=(const MacCountScope&) = delete;

  std::uint64_t count() const { return g_macs.load(); }
};

}  // namespace instrument
}  // namespace dscnet
