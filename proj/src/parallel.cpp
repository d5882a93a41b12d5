#include "lgc/parallel.hpp"

#include <cstdlib>
#include <string>

namespace lgc {

std::size_t thread_budget() {
  if (const char* env = std::getenv("LGC_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace lgc
