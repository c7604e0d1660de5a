// Reference kernels. Deliberately simple loops: these define the numeric
// semantics that SIMD variants are tested against.

#include "gloss/kernels.hpp"

namespace gloss::kern::detail {

namespace {

template <typename T>
void matmul_nn_s(T* c, const T* a, const T* b, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<size_t>(i) * k + p];
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// B arrives as (N, K); C[i,j] += dot(A_row_i, B_row_j).
template <typename T>
void matmul_nt_s(T* c, const T* a, const T* b, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<size_t>(j) * k;
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// A arrives as (K, M); C[i,j] += sum_p A[p,i] * B[p,j].
template <typename T>
void matmul_tn_s(T* c, const T* a, const T* b, int m, int n, int k) {
  for (int p = 0; p < k; ++p) {
    const T* arow = a + static_cast<size_t>(p) * m;
    const T* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void add_s(T* out, const T* a, const T* b, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub_s(T* out, const T* a, const T* b, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul_s(T* out, const T* a, const T* b, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void axpy_s(T* y, T alpha, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

template <typename T>
void scale_s(T* x, T alpha, size_t n) {
  for (size_t i = 0; i < n; ++i) x[i] *= alpha;
}

template <typename T>
void relu_s(T* out, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
T dot_s(const T* a, const T* b, size_t n) {
  T acc = 0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T reduce_sum_s(const T* x, size_t n) {
  T acc = 0;
  for (size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <typename T>
T reduce_max_s(const T* x, size_t n) {
  T best = x[0];
  for (size_t i = 1; i < n; ++i) {
    if (x[i] > best) best = x[i];
  }
  return best;
}

template <typename T>
OpTable<T> make_scalar_table() {
  OpTable<T> t;
  t.matmul_nn = matmul_nn_s<T>;
  t.matmul_nt = matmul_nt_s<T>;
  t.matmul_tn = matmul_tn_s<T>;
  t.add = add_s<T>;
  t.sub = sub_s<T>;
  t.mul = mul_s<T>;
  t.axpy = axpy_s<T>;
  t.scale = scale_s<T>;
  t.relu = relu_s<T>;
  t.dot = dot_s<T>;
  t.reduce_sum = reduce_sum_s<T>;
  t.reduce_max = reduce_max_s<T>;
  return t;
}

}  // namespace

template <typename T>
const OpTable<T>& scalar_table() {
  static const OpTable<T> table = make_scalar_table<T>();
  return table;
}

template const OpTable<float>& scalar_table<float>();
template const OpTable<double>& scalar_table<double>();

}  // namespace gloss::kern::detail
