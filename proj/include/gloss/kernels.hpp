#pragma once
// Data-parallel math kernels behind a runtime-dispatched backend table.
//
// Backend contract:
//  - `scalar` is the reference implementation; it is always available.
//  - `avx2` must match scalar bitwise for the elementwise ops and reduce_max
//    (those kernels avoid FMA contraction and keep per-element operation
//    order), and match within accumulation tolerance for matmul / dot /
//    reduce_sum (FMA plus tree reduction reassociate the sums).
// Selection: auto-detect at first use, overridable with force_backend() or
// the GLOSSGEN_SIMD environment variable ("scalar" or "avx2").

#include <cstddef>
#include <string_view>

namespace gloss::kern {

enum class Backend { scalar = 0, avx2 = 1 };

template <typename T>
struct OpTable {
  // Matmul family, row-major, accumulating: C(M,N) += A*B. Callers zero C
  // first when they want a plain product. matmul_nt takes B as (N,K) and uses
  // its rows as columns; matmul_tn takes A as (K,M) and uses its columns as
  // rows. Those two exist so transposed operands never get materialized.
  void (*matmul_nn)(T* c, const T* a, const T* b, int m, int n, int k);
  void (*matmul_nt)(T* c, const T* a, const T* b, int m, int n, int k);
  void (*matmul_tn)(T* c, const T* a, const T* b, int m, int n, int k);

  void (*add)(T* out, const T* a, const T* b, size_t n);    // out = a + b
  void (*sub)(T* out, const T* a, const T* b, size_t n);    // out = a - b
  void (*mul)(T* out, const T* a, const T* b, size_t n);    // out = a * b
  void (*axpy)(T* y, T alpha, const T* x, size_t n);        // y += alpha * x
  void (*scale)(T* x, T alpha, size_t n);                   // x *= alpha
  void (*relu)(T* out, const T* x, size_t n);               // out = max(x, 0)

  T (*dot)(const T* a, const T* b, size_t n);
  T (*reduce_sum)(const T* x, size_t n);
  T (*reduce_max)(const T* x, size_t n);  // requires n >= 1
};

Backend active_backend();
bool backend_supported(Backend b);
// Pins the backend for this process; throws Errc::unsupported if the host
// cannot run it. Used by the equivalence tests and the CLI --simd flag.
void force_backend(Backend b);
// Returns to auto-detection (environment override still applies).
void reset_backend();
std::string_view backend_name(Backend b);

template <typename T>
const OpTable<T>& ops();

extern template const OpTable<float>& ops<float>();
extern template const OpTable<double>& ops<double>();

namespace detail {
template <typename T>
const OpTable<T>& scalar_table();
#if GLOSSGEN_HAVE_AVX2_TU
template <typename T>
const OpTable<T>& avx2_table();
bool avx2_runtime_ok();
#endif
}  // namespace detail

}  // namespace gloss::kern
