// AVX2 kernel variants. This is the only translation unit compiled with
// -mavx2 -mfma; it exposes nothing but an op table and a runtime CPU check,
// and the dispatcher only installs the table after that check passes.
//
// Numeric contract (tested): add/sub/mul/axpy/scale/relu and reduce_max are
// bitwise-identical to the scalar reference (same per-element expression, no
// FMA contraction); matmul / dot / reduce_sum use FMA and lane-parallel
// accumulators, so they agree with scalar only up to rounding.

#include "gloss/kernels.hpp"

#if GLOSSGEN_HAVE_AVX2_TU

#include <immintrin.h>

namespace gloss::kern::detail {

namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehl_ps(lo, lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_shuffle_ps(lo, lo, 0x1);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  lo = _mm_add_sd(lo, sh);
  return _mm_cvtsd_f64(lo);
}

inline float hmax(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_max_ps(lo, hi);
  __m128 sh = _mm_movehl_ps(lo, lo);
  lo = _mm_max_ps(lo, sh);
  sh = _mm_shuffle_ps(lo, lo, 0x1);
  lo = _mm_max_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

inline double hmax(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_max_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  lo = _mm_max_sd(lo, sh);
  return _mm_cvtsd_f64(lo);
}

// Thin wrappers so one template body serves float and double.
struct F32 {
  using V = __m256;
  static constexpr int W = 8;
  static V load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, V v) { _mm256_storeu_ps(p, v); }
  static V set1(float x) { return _mm256_set1_ps(x); }
  static V zero() { return _mm256_setzero_ps(); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static V sub(V a, V b) { return _mm256_sub_ps(a, b); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V max(V a, V b) { return _mm256_max_ps(a, b); }
};

struct F64 {
  using V = __m256d;
  static constexpr int W = 4;
  static V load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, V v) { _mm256_storeu_pd(p, v); }
  static V set1(double x) { return _mm256_set1_pd(x); }
  static V zero() { return _mm256_setzero_pd(); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static V sub(V a, V b) { return _mm256_sub_pd(a, b); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V max(V a, V b) { return _mm256_max_pd(a, b); }
};

template <typename W, typename T>
void matmul_nn_v(T* c, const T* a, const T* b, int m, int n, int k) {
  const int nv = n - n % W::W;
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<size_t>(i) * k + p];
      const T* brow = b + static_cast<size_t>(p) * n;
      const auto vav = W::set1(av);
      int j = 0;
      for (; j < nv; j += W::W) {
        W::store(crow + j, W::fma(vav, W::load(brow + j), W::load(crow + j)));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename W, typename T>
void matmul_nt_v(T* c, const T* a, const T* b, int m, int n, int k) {
  const int kv = k - k % (2 * W::W);
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<size_t>(j) * k;
      auto acc0 = W::zero();
      auto acc1 = W::zero();
      int p = 0;
      for (; p < kv; p += 2 * W::W) {
        acc0 = W::fma(W::load(arow + p), W::load(brow + p), acc0);
        acc1 = W::fma(W::load(arow + p + W::W), W::load(brow + p + W::W), acc1);
      }
      T acc = hsum(W::add(acc0, acc1));
      for (; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

template <typename W, typename T>
void matmul_tn_v(T* c, const T* a, const T* b, int m, int n, int k) {
  const int nv = n - n % W::W;
  for (int p = 0; p < k; ++p) {
    const T* arow = a + static_cast<size_t>(p) * m;
    const T* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      const auto vav = W::set1(av);
      T* crow = c + static_cast<size_t>(i) * n;
      int j = 0;
      for (; j < nv; j += W::W) {
        W::store(crow + j, W::fma(vav, W::load(brow + j), W::load(crow + j)));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename W, typename T>
void add_v(T* out, const T* a, const T* b, size_t n) {
  size_t i = 0;
  for (; i + W::W <= n; i += W::W) W::store(out + i, W::add(W::load(a + i), W::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename W, typename T>
void sub_v(T* out, const T* a, const T* b, size_t n) {
  size_t i = 0;
  for (; i + W::W <= n; i += W::W) W::store(out + i, W::sub(W::load(a + i), W::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename W, typename T>
void mul_v(T* out, const T* a, const T* b, size_t n) {
  size_t i = 0;
  for (; i + W::W <= n; i += W::W) W::store(out + i, W::mul(W::load(a + i), W::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

// No FMA here on purpose: y + alpha*x must round exactly like the scalar loop.
template <typename W, typename T>
void axpy_v(T* y, T alpha, const T* x, size_t n) {
  const auto va = W::set1(alpha);
  size_t i = 0;
  for (; i + W::W <= n; i += W::W) {
    W::store(y + i, W::add(W::load(y + i), W::mul(va, W::load(x + i))));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

template <typename W, typename T>
void scale_v(T* x, T alpha, size_t n) {
  const auto va = W::set1(alpha);
  size_t i = 0;
  for (; i + W::W <= n; i += W::W) W::store(x + i, W::mul(W::load(x + i), va));
  for (; i < n; ++i) x[i] *= alpha;
}

template <typename W, typename T>
void relu_v(T* out, const T* x, size_t n) {
  const auto z = W::zero();
  size_t i = 0;
  for (; i + W::W <= n; i += W::W) W::store(out + i, W::max(W::load(x + i), z));
  for (; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename W, typename T>
T dot_v(const T* a, const T* b, size_t n) {
  auto acc0 = W::zero();
  auto acc1 = W::zero();
  size_t i = 0;
  for (; i + 2 * W::W <= n; i += 2 * W::W) {
    acc0 = W::fma(W::load(a + i), W::load(b + i), acc0);
    acc1 = W::fma(W::load(a + i + W::W), W::load(b + i + W::W), acc1);
  }
  T acc = hsum(W::add(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename W, typename T>
T reduce_sum_v(const T* x, size_t n) {
  auto acc = W::zero();
  size_t i = 0;
  for (; i + W::W <= n; i += W::W) acc = W::add(acc, W::load(x + i));
  T s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

template <typename W, typename T>
T reduce_max_v(const T* x, size_t n) {
  T best = x[0];
  size_t i = 1;
  if (n >= static_cast<size_t>(W::W) + 1) {
    auto acc = W::load(x + 1);
    i = 1 + W::W;
    for (; i + W::W <= n; i += W::W) acc = W::max(acc, W::load(x + i));
    const T lane_best = hmax(acc);
    if (lane_best > best) best = lane_best;
  }
  for (; i < n; ++i) {
    if (x[i] > best) best = x[i];
  }
  return best;
}

template <typename W, typename T>
OpTable<T> make_avx2_table() {
  OpTable<T> t;
  t.matmul_nn = matmul_nn_v<W, T>;
  t.matmul_nt = matmul_nt_v<W, T>;
  t.matmul_tn = matmul_tn_v<W, T>;
  t.add = add_v<W, T>;
  t.sub = sub_v<W, T>;
  t.mul = mul_v<W, T>;
  t.axpy = axpy_v<W, T>;
  t.scale = scale_v<W, T>;
  t.relu = relu_v<W, T>;
  t.dot = dot_v<W, T>;
  t.reduce_sum = reduce_sum_v<W, T>;
  t.reduce_max = reduce_max_v<W, T>;
  return t;
}

}  // namespace

bool avx2_runtime_ok() {
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

template <>
const OpTable<float>& avx2_table<float>() {
  static const OpTable<float> table = make_avx2_table<F32, float>();
  return table;
}

template <>
const OpTable<double>& avx2_table<double>() {
  static const OpTable<double> table = make_avx2_table<F64, double>();
  return table;
}

}  // namespace gloss::kern::detail

#endif  // GLOSSGEN_HAVE_AVX2_TU
