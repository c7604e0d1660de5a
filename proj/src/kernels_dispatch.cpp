// Backend selection: auto-detect once, allow explicit pinning for tests and
// the CLI, allow GLOSSGEN_SIMD=scalar|avx2 as an environment override.

#include <atomic>
#include <cstdlib>
#include <string>

#include "gloss/common.hpp"
#include "gloss/kernels.hpp"

namespace gloss::kern {

namespace {

constexpr int kUnset = -1;

std::atomic<int> g_forced{kUnset};

Backend detect() {
  if (const char* env = std::getenv("GLOSSGEN_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Backend::scalar;
    if (v == "avx2") {
      require(backend_supported(Backend::avx2), Errc::unsupported,
              "GLOSSGEN_SIMD=avx2 but this CPU or build lacks AVX2");
      return Backend::avx2;
    }
    fail(Errc::config_error, "GLOSSGEN_SIMD must be 'scalar' or 'avx2', got '" + v + "'");
  }
  return backend_supported(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

}  // namespace

bool backend_supported(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if GLOSSGEN_HAVE_AVX2_TU
      return detail::avx2_runtime_ok();
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() {
  const int forced = g_forced.load(std::memory_order_relaxed);
  if (forced != kUnset) return static_cast<Backend>(forced);
  static const Backend detected = detect();
  return detected;
}

void force_backend(Backend b) {
  require(backend_supported(b), Errc::unsupported,
          std::string("backend not supported on this host: ") + std::string(backend_name(b)));
  g_forced.store(static_cast<int>(b), std::memory_order_relaxed);
}

void reset_backend() { g_forced.store(kUnset, std::memory_order_relaxed); }

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
  }
  return "unknown";
}

template <typename T>
const OpTable<T>& ops() {
  switch (active_backend()) {
    case Backend::scalar:
      return detail::scalar_table<T>();
    case Backend::avx2:
#if GLOSSGEN_HAVE_AVX2_TU
      return detail::avx2_table<T>();
#else
      break;
#endif
  }
  return detail::scalar_table<T>();
}

template const OpTable<float>& ops<float>();
template const OpTable<double>& ops<double>();

}  // namespace gloss::kern
