#include "gloss/tape.hpp"

#include <algorithm>
#include <cmath>

#include "gloss/kernels.hpp"

namespace gloss {

namespace {

// Materializes a permuted copy; used by permute forward and (with the inverse
// permutation) its backward.
template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<int>& perm) {
  const int nd = x.ndim();
  Shape out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = x.shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];

  std::vector<int64_t> in_stride(static_cast<size_t>(nd), 1);
  for (int i = nd - 2; i >= 0; --i)
    in_stride[static_cast<size_t>(i)] = in_stride[static_cast<size_t>(i + 1)] * x.shape[static_cast<size_t>(i + 1)];

  Tensor<T> out = Tensor<T>::zeros(out_shape);
  if (out.numel() == 0) return out;
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  for (int64_t o = 0;; ++o) {
    int64_t in_off = 0;
    for (int d = 0; d < nd; ++d)
      in_off += idx[static_cast<size_t>(d)] * in_stride[static_cast<size_t>(perm[static_cast<size_t>(d)])];
    out.data[static_cast<size_t>(o)] = x.data[static_cast<size_t>(in_off)];
    int d = nd - 1;
    for (; d >= 0; --d) {
      if (++idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
      idx[static_cast<size_t>(d)] = 0;
    }
    if (d < 0) break;
  }
  return out;
}

struct MatShape {
  int64_t batch, m, n, k;
};

}  // namespace

template <typename T>
typename Tape<T>::Id Tape<T>::push(Node n, const char* op) {
  n.op = op;
  if (check_finite_ && !n.value.all_finite())
    fail(Errc::numeric_error, std::string("non-finite values produced by op '") + op + "'");
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
void Tape<T>::check_id(Id id) const {
  require(id >= 0 && static_cast<size_t>(id) < nodes_.size(), Errc::invalid_argument,
          "tape id out of range");
}

template <typename T>
const Tensor<T>& Tape<T>::val(Id id) const {
  check_id(id);
  return nodes_[static_cast<size_t>(id)].value;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buf(Id id) {
  auto& g = grads_[static_cast<size_t>(id)];
  if (g.data.empty() && v(id).numel() > 0) g = Tensor<T>::zeros(v(id).shape);
  return g;
}

template <typename T>
void Tape<T>::acc_grad(Id id, const Tensor<T>& t) {
  Tensor<T>& g = grad_buf(id);
  kern::ops<T>().axpy(g.ptr(), T(1), t.ptr(), t.data.size());
}

template <typename T>
typename Tape<T>::Id Tape<T>::leaf(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n), "leaf");
}

template <typename T>
typename Tape<T>::Id Tape<T>::param(Parameter<T>& p) {
  require_same_shape(p.value, p.grad, "param");
  Node n;
  n.value = p.value;  // copy; the tape owns a snapshot for this forward pass
  n.param = &p;
  return push(std::move(n), "param");
}

// --- elementwise -------------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::add(Id a, Id b) {
  check_id(a);
  check_id(b);
  require_same_shape(v(a), v(b), "add");
  Node n;
  n.value = Tensor<T>::zeros(v(a).shape);
  kern::ops<T>().add(n.value.ptr(), v(a).ptr(), v(b).ptr(), n.value.data.size());
  n.parents = {a, b};
  Id id = push(std::move(n), "add");
  nodes_.back().back = [this, id, a, b] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    acc_grad(a, g);
    acc_grad(b, g);
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::sub(Id a, Id b) {
  check_id(a);
  check_id(b);
  require_same_shape(v(a), v(b), "sub");
  Node n;
  n.value = Tensor<T>::zeros(v(a).shape);
  kern::ops<T>().sub(n.value.ptr(), v(a).ptr(), v(b).ptr(), n.value.data.size());
  n.parents = {a, b};
  Id id = push(std::move(n), "sub");
  nodes_.back().back = [this, id, a, b] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    acc_grad(a, g);
    kern::ops<T>().axpy(grad_buf(b).ptr(), T(-1), g.ptr(), g.data.size());
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul(Id a, Id b) {
  check_id(a);
  check_id(b);
  require_same_shape(v(a), v(b), "mul");
  Node n;
  n.value = Tensor<T>::zeros(v(a).shape);
  kern::ops<T>().mul(n.value.ptr(), v(a).ptr(), v(b).ptr(), n.value.data.size());
  n.parents = {a, b};
  Id id = push(std::move(n), "mul");
  nodes_.back().back = [this, id, a, b] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    Tensor<T> tmp = Tensor<T>::zeros(g.shape);
    kern::ops<T>().mul(tmp.ptr(), g.ptr(), v(b).ptr(), g.data.size());
    acc_grad(a, tmp);
    kern::ops<T>().mul(tmp.ptr(), g.ptr(), v(a).ptr(), g.data.size());
    acc_grad(b, tmp);
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::relu(Id a) {
  check_id(a);
  Node n;
  n.value = Tensor<T>::zeros(v(a).shape);
  kern::ops<T>().relu(n.value.ptr(), v(a).ptr(), n.value.data.size());
  n.parents = {a};
  Id id = push(std::move(n), "relu");
  nodes_.back().back = [this, id, a] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    const Tensor<T>& x = v(a);
    Tensor<T>& ga = grad_buf(a);
    for (size_t i = 0; i < g.data.size(); ++i)
      if (x.data[i] > T(0)) ga.data[i] += g.data[i];
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::scale(Id a, T c) {
  check_id(a);
  Node n;
  n.value = v(a);
  kern::ops<T>().scale(n.value.ptr(), c, n.value.data.size());
  n.parents = {a};
  Id id = push(std::move(n), "scale");
  nodes_.back().back = [this, id, a, c] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    kern::ops<T>().axpy(grad_buf(a).ptr(), c, g.ptr(), g.data.size());
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::add_rowvec(Id a, Id b) {
  check_id(a);
  check_id(b);
  const Tensor<T>& x = v(a);
  const Tensor<T>& r = v(b);
  require(r.ndim() == 1, Errc::shape_mismatch, "add_rowvec: vector operand must be 1-D");
  require(x.ndim() >= 1 && x.shape.back() == r.shape[0], Errc::shape_mismatch,
          "add_rowvec: trailing dim mismatch " + shape_str(x.shape) + " vs " + shape_str(r.shape));
  const int64_t d = r.shape[0];
  const int64_t rows = d == 0 ? 0 : x.numel() / d;
  Node n;
  n.value = Tensor<T>::zeros(x.shape);
  for (int64_t i = 0; i < rows; ++i)
    kern::ops<T>().add(n.value.ptr() + i * d, x.ptr() + i * d, r.ptr(), static_cast<size_t>(d));
  n.parents = {a, b};
  Id id = push(std::move(n), "add_rowvec");
  nodes_.back().back = [this, id, a, b, rows, d] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    acc_grad(a, g);
    Tensor<T>& gb = grad_buf(b);
    for (int64_t i = 0; i < rows; ++i)
      kern::ops<T>().axpy(gb.ptr(), T(1), g.ptr() + i * d, static_cast<size_t>(d));
  };
  return id;
}

// --- matmul ------------------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::matmul(Id a, Id b, bool trans_a, bool trans_b) {
  check_id(a);
  check_id(b);
  require(!(trans_a && trans_b), Errc::invalid_argument, "matmul: trans_a && trans_b unsupported");
  const Tensor<T>& A = v(a);
  const Tensor<T>& B = v(b);
  require(A.ndim() >= 2 && B.ndim() == A.ndim(), Errc::shape_mismatch,
          "matmul: operands need equal rank >= 2, got " + shape_str(A.shape) + " and " +
              shape_str(B.shape));
  const int nd = A.ndim();
  for (int i = 0; i < nd - 2; ++i)
    require(A.shape[static_cast<size_t>(i)] == B.shape[static_cast<size_t>(i)],
            Errc::shape_mismatch, "matmul: batch dims differ");

  const int64_t a0 = A.shape[static_cast<size_t>(nd - 2)], a1 = A.shape[static_cast<size_t>(nd - 1)];
  const int64_t b0 = B.shape[static_cast<size_t>(nd - 2)], b1 = B.shape[static_cast<size_t>(nd - 1)];
  const int64_t m = trans_a ? a1 : a0;
  const int64_t k = trans_a ? a0 : a1;
  const int64_t k2 = trans_b ? b1 : b0;
  const int64_t nn = trans_b ? b0 : b1;
  require(k == k2, Errc::shape_mismatch,
          "matmul: inner dims differ, " + shape_str(A.shape) + (trans_a ? "^T" : "") + " x " +
              shape_str(B.shape) + (trans_b ? "^T" : ""));

  int64_t batch = 1;
  Shape out_shape;
  for (int i = 0; i < nd - 2; ++i) {
    batch *= A.shape[static_cast<size_t>(i)];
    out_shape.push_back(A.shape[static_cast<size_t>(i)]);
  }
  out_shape.push_back(m);
  out_shape.push_back(nn);

  Node n;
  n.value = Tensor<T>::zeros(out_shape);
  const auto& ops = kern::ops<T>();
  const int64_t a_sz = a0 * a1, b_sz = b0 * b1, c_sz = m * nn;
  for (int64_t s = 0; s < batch; ++s) {
    T* c = n.value.ptr() + s * c_sz;
    const T* ap = A.ptr() + s * a_sz;
    const T* bp = B.ptr() + s * b_sz;
    if (!trans_a && !trans_b)
      ops.matmul_nn(c, ap, bp, static_cast<int>(m), static_cast<int>(nn), static_cast<int>(k));
    else if (trans_b)
      ops.matmul_nt(c, ap, bp, static_cast<int>(m), static_cast<int>(nn), static_cast<int>(k));
    else
      ops.matmul_tn(c, ap, bp, static_cast<int>(m), static_cast<int>(nn), static_cast<int>(k));
  }
  n.parents = {a, b};
  Id id = push(std::move(n), "matmul");
  nodes_.back().back = [this, id, a, b, trans_a, trans_b, batch, m, nn, k, a_sz, b_sz, c_sz] {
    const auto& ops = kern::ops<T>();
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    const Tensor<T>& A = v(a);
    const Tensor<T>& B = v(b);
    Tensor<T>& ga = grad_buf(a);
    Tensor<T>& gb = grad_buf(b);
    const int mi = static_cast<int>(m), ni = static_cast<int>(nn), ki = static_cast<int>(k);
    for (int64_t s = 0; s < batch; ++s) {
      const T* gp = g.ptr() + s * c_sz;
      const T* ap = A.ptr() + s * a_sz;
      const T* bp = B.ptr() + s * b_sz;
      T* gap = ga.ptr() + s * a_sz;
      T* gbp = gb.ptr() + s * b_sz;
      if (!trans_a && !trans_b) {
        // dA += g . B^T ; dB += A^T . g
        ops.matmul_nt(gap, gp, bp, mi, ki, ni);
        ops.matmul_tn(gbp, ap, gp, ki, ni, mi);
      } else if (trans_b) {
        // B stored (N, K): dA += g . B ; dB += g^T . A
        ops.matmul_nn(gap, gp, bp, mi, ki, ni);
        ops.matmul_tn(gbp, gp, ap, ni, ki, mi);
      } else {
        // A stored (K, M): dA += B . g^T ; dB += A . g
        ops.matmul_nt(gap, bp, gp, ki, mi, ni);
        ops.matmul_nn(gbp, ap, gp, ki, ni, mi);
      }
    }
  };
  return id;
}

// --- shape ops ----------------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::reshape(Id a, Shape shape) {
  check_id(a);
  require(shape_numel(shape) == v(a).numel(), Errc::shape_mismatch,
          "reshape: " + shape_str(v(a).shape) + " -> " + shape_str(shape) +
              " changes element count");
  Node n;
  n.value = v(a);
  n.value.shape = std::move(shape);
  n.parents = {a};
  Id id = push(std::move(n), "reshape");
  nodes_.back().back = [this, id, a] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    kern::ops<T>().axpy(grad_buf(a).ptr(), T(1), g.ptr(), g.data.size());
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::permute(Id a, std::vector<int> perm) {
  check_id(a);
  const int nd = v(a).ndim();
  require(static_cast<int>(perm.size()) == nd, Errc::invalid_argument, "permute: rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  for (int p : perm) {
    require(p >= 0 && p < nd && !seen[static_cast<size_t>(p)], Errc::invalid_argument,
            "permute: not a permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  Node n;
  n.value = permute_tensor(v(a), perm);
  n.parents = {a};
  Id id = push(std::move(n), "permute");
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
  nodes_.back().back = [this, id, a, inv] {
    acc_grad(a, permute_tensor(grads_[static_cast<size_t>(id)], inv));
  };
  return id;
}

// --- softmax / masking ---------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::softmax_lastdim(Id a) {
  check_id(a);
  const Tensor<T>& x = v(a);
  require(x.ndim() >= 1 && x.shape.back() > 0, Errc::shape_mismatch,
          "softmax: empty trailing dim");
  const int64_t d = x.shape.back();
  const int64_t rows = x.numel() / d;
  Node n;
  n.value = Tensor<T>::zeros(x.shape);
  const auto& ops = kern::ops<T>();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * d;
    T* yr = n.value.ptr() + r * d;
    const T mx = ops.reduce_max(xr, static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) yr[i] = std::exp(xr[i] - mx);
    const T s = ops.reduce_sum(yr, static_cast<size_t>(d));
    ops.scale(yr, T(1) / s, static_cast<size_t>(d));
  }
  n.parents = {a};
  Id id = push(std::move(n), "softmax");
  nodes_.back().back = [this, id, a, rows, d] {
    const auto& ops = kern::ops<T>();
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    const Tensor<T>& y = v(id);
    Tensor<T>& ga = grad_buf(a);
    for (int64_t r = 0; r < rows; ++r) {
      const T* gr = g.ptr() + r * d;
      const T* yr = y.ptr() + r * d;
      T* gar = ga.ptr() + r * d;
      const T dot = ops.dot(gr, yr, static_cast<size_t>(d));
      for (int64_t i = 0; i < d; ++i) gar[i] += yr[i] * (gr[i] - dot);
    }
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::masked_fill(Id scores, const std::vector<uint8_t>& allow, T fill) {
  check_id(scores);
  const Tensor<T>& x = v(scores);
  require(x.ndim() == 4, Errc::shape_mismatch, "masked_fill: expected (B,H,Q,K) scores");
  const int64_t b = x.shape[0], h = x.shape[1], q = x.shape[2], kk = x.shape[3];
  require(static_cast<int64_t>(allow.size()) == b * q * kk, Errc::shape_mismatch,
          "masked_fill: mask size does not match (B,Q,K)");
  Node n;
  n.value = x;
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t hi = 0; hi < h; ++hi)
      for (int64_t qi = 0; qi < q; ++qi) {
        const uint8_t* arow = allow.data() + (bi * q + qi) * kk;
        T* row = n.value.ptr() + ((bi * h + hi) * q + qi) * kk;
        for (int64_t ki = 0; ki < kk; ++ki)
          if (!arow[ki]) row[ki] = fill;
      }
  n.parents = {scores};
  Id id = push(std::move(n), "masked_fill");
  // The mask is captured by value: caller-side buffers may not outlive backward.
  nodes_.back().back = [this, id, scores, allow, b, h, q, kk] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    Tensor<T>& ga = grad_buf(scores);
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t hi = 0; hi < h; ++hi)
        for (int64_t qi = 0; qi < q; ++qi) {
          const uint8_t* arow = allow.data() + (bi * q + qi) * kk;
          const T* grow = g.ptr() + ((bi * h + hi) * q + qi) * kk;
          T* garow = ga.ptr() + ((bi * h + hi) * q + qi) * kk;
          for (int64_t ki = 0; ki < kk; ++ki)
            if (arow[ki]) garow[ki] += grow[ki];
        }
  };
  return id;
}

// --- gather / norm / pooling ----------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::embedding(Id table, const std::vector<int32_t>& ids) {
  check_id(table);
  const Tensor<T>& tab = v(table);
  require(tab.ndim() == 2, Errc::shape_mismatch, "embedding: table must be 2-D");
  const int64_t vocab = tab.shape[0], d = tab.shape[1];
  for (int32_t idx : ids)
    require(idx >= 0 && idx < vocab, Errc::invalid_argument,
            "embedding: id " + std::to_string(idx) + " outside vocab of " + std::to_string(vocab));
  const int64_t rows = static_cast<int64_t>(ids.size());
  Node n;
  n.value = Tensor<T>::zeros({rows, d});
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(tab.ptr() + static_cast<int64_t>(ids[static_cast<size_t>(r)]) * d,
                static_cast<size_t>(d), n.value.ptr() + r * d);
  n.parents = {table};
  Id id = push(std::move(n), "embedding");
  nodes_.back().back = [this, id, table, ids, d] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    Tensor<T>& gt = grad_buf(table);
    for (size_t r = 0; r < ids.size(); ++r)
      kern::ops<T>().axpy(gt.ptr() + static_cast<int64_t>(ids[r]) * d, T(1),
                          g.ptr() + static_cast<int64_t>(r) * d, static_cast<size_t>(d));
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::layer_norm(Id x, Id gain, Id bias, T eps) {
  check_id(x);
  check_id(gain);
  check_id(bias);
  const Tensor<T>& xv = v(x);
  const Tensor<T>& gv = v(gain);
  const Tensor<T>& bv = v(bias);
  require(xv.ndim() >= 1, Errc::shape_mismatch, "layer_norm: rank 0 input");
  const int64_t d = xv.shape.back();
  require(gv.ndim() == 1 && gv.shape[0] == d && bv.ndim() == 1 && bv.shape[0] == d,
          Errc::shape_mismatch, "layer_norm: gain/bias must be (D)");
  require(eps > T(0), Errc::invalid_argument, "layer_norm: eps must be positive");
  const int64_t rows = xv.numel() / d;

  Node n;
  n.value = Tensor<T>::zeros(xv.shape);
  Tensor<T> xhat = Tensor<T>::zeros(xv.shape);
  Tensor<T> inv_std = Tensor<T>::zeros({rows});
  const auto& ops = kern::ops<T>();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * d;
    const T mean = ops.reduce_sum(xr, static_cast<size_t>(d)) / static_cast<T>(d);
    T var = 0;
    for (int64_t i = 0; i < d; ++i) {
      const T c = xr[i] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std.data[static_cast<size_t>(r)] = inv;
    T* hr = xhat.ptr() + r * d;
    T* yr = n.value.ptr() + r * d;
    for (int64_t i = 0; i < d; ++i) {
      hr[i] = (xr[i] - mean) * inv;
      yr[i] = hr[i] * gv.ptr()[i] + bv.ptr()[i];
    }
  }
  n.parents = {x, gain, bias};
  Id id = push(std::move(n), "layer_norm");
  auto xhat_p = std::make_shared<Tensor<T>>(std::move(xhat));
  auto inv_p = std::make_shared<Tensor<T>>(std::move(inv_std));
  nodes_.back().back = [this, id, x, gain, bias, rows, d, xhat_p, inv_p] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    const Tensor<T>& gv = v(gain);
    Tensor<T>& gx = grad_buf(x);
    Tensor<T>& gg = grad_buf(gain);
    Tensor<T>& gb = grad_buf(bias);
    for (int64_t r = 0; r < rows; ++r) {
      const T* gr = g.ptr() + r * d;
      const T* hr = xhat_p->ptr() + r * d;
      const T inv = inv_p->data[static_cast<size_t>(r)];
      T* gxr = gx.ptr() + r * d;
      T mean_gh = 0, mean_ghh = 0;
      for (int64_t i = 0; i < d; ++i) {
        const T gh = gr[i] * gv.ptr()[i];
        mean_gh += gh;
        mean_ghh += gh * hr[i];
        gg.ptr()[i] += gr[i] * hr[i];
        gb.ptr()[i] += gr[i];
      }
      mean_gh /= static_cast<T>(d);
      mean_ghh /= static_cast<T>(d);
      for (int64_t i = 0; i < d; ++i) {
        const T gh = gr[i] * gv.ptr()[i];
        gxr[i] += inv * (gh - mean_gh - hr[i] * mean_ghh);
      }
    }
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::masked_mean_rows(Id x, const std::vector<uint8_t>& keep) {
  check_id(x);
  const Tensor<T>& xv = v(x);
  require(xv.ndim() == 3, Errc::shape_mismatch, "masked_mean_rows: expected (B,T,D)");
  const int64_t b = xv.shape[0], t = xv.shape[1], d = xv.shape[2];
  require(static_cast<int64_t>(keep.size()) == b * t, Errc::shape_mismatch,
          "masked_mean_rows: mask size does not match (B,T)");
  Node n;
  n.value = Tensor<T>::zeros({b, d});
  std::vector<T> inv_cnt(static_cast<size_t>(b), T(0));
  const auto& ops = kern::ops<T>();
  for (int64_t bi = 0; bi < b; ++bi) {
    int64_t cnt = 0;
    T* out = n.value.ptr() + bi * d;
    for (int64_t ti = 0; ti < t; ++ti) {
      if (!keep[static_cast<size_t>(bi * t + ti)]) continue;
      ++cnt;
      ops.axpy(out, T(1), xv.ptr() + (bi * t + ti) * d, static_cast<size_t>(d));
    }
    require(cnt > 0, Errc::invalid_argument,
            "masked_mean_rows: batch row " + std::to_string(bi) + " keeps no positions");
    inv_cnt[static_cast<size_t>(bi)] = T(1) / static_cast<T>(cnt);
    ops.scale(out, inv_cnt[static_cast<size_t>(bi)], static_cast<size_t>(d));
  }
  n.parents = {x};
  Id id = push(std::move(n), "masked_mean_rows");
  nodes_.back().back = [this, id, x, keep, b, t, d, inv_cnt] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    Tensor<T>& gx = grad_buf(x);
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t ti = 0; ti < t; ++ti) {
        if (!keep[static_cast<size_t>(bi * t + ti)]) continue;
        kern::ops<T>().axpy(gx.ptr() + (bi * t + ti) * d, inv_cnt[static_cast<size_t>(bi)],
                            g.ptr() + bi * d, static_cast<size_t>(d));
      }
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::cross_entropy(Id logits, const std::vector<int32_t>& targets,
                                            int32_t ignore_id) {
  check_id(logits);
  const Tensor<T>& lv = v(logits);
  require(lv.ndim() == 2, Errc::shape_mismatch, "cross_entropy: expected (R,V) logits");
  const int64_t rows = lv.shape[0], vocab = lv.shape[1];
  require(static_cast<int64_t>(targets.size()) == rows, Errc::shape_mismatch,
          "cross_entropy: target count does not match rows");

  auto probs = std::make_shared<Tensor<T>>(Tensor<T>::zeros(lv.shape));
  const auto& ops = kern::ops<T>();
  double total = 0;
  int64_t counted = 0;
  for (int64_t r = 0; r < rows; ++r) {
    const int32_t tgt = targets[static_cast<size_t>(r)];
    if (tgt == ignore_id) continue;
    require(tgt >= 0 && tgt < vocab, Errc::invalid_argument,
            "cross_entropy: target " + std::to_string(tgt) + " outside vocab");
    const T* xr = lv.ptr() + r * vocab;
    T* pr = probs->ptr() + r * vocab;
    const T mx = ops.reduce_max(xr, static_cast<size_t>(vocab));
    for (int64_t i = 0; i < vocab; ++i) pr[i] = std::exp(xr[i] - mx);
    const T s = ops.reduce_sum(pr, static_cast<size_t>(vocab));
    ops.scale(pr, T(1) / s, static_cast<size_t>(vocab));
    total += -(static_cast<double>(xr[tgt]) - static_cast<double>(mx) -
               std::log(static_cast<double>(s)));
    ++counted;
  }
  require(counted > 0, Errc::invalid_argument, "cross_entropy: no rows contribute to the loss");

  Node n;
  n.value = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(counted)));
  n.parents = {logits};
  Id id = push(std::move(n), "cross_entropy");
  nodes_.back().back = [this, id, logits, targets, ignore_id, probs, vocab, counted] {
    const T gscale = grads_[static_cast<size_t>(id)].data[0] / static_cast<T>(counted);
    Tensor<T>& gl = grad_buf(logits);
    for (int64_t r = 0; r < static_cast<int64_t>(targets.size()); ++r) {
      const int32_t tgt = targets[static_cast<size_t>(r)];
      if (tgt == ignore_id) continue;
      const T* pr = probs->ptr() + r * vocab;
      T* gr = gl.ptr() + r * vocab;
      for (int64_t i = 0; i < vocab; ++i) gr[i] += gscale * pr[i];
      gr[tgt] -= gscale;
    }
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::sum(Id a) {
  check_id(a);
  Node n;
  n.value = Tensor<T>::scalar(kern::ops<T>().reduce_sum(v(a).ptr(), v(a).data.size()));
  n.parents = {a};
  Id id = push(std::move(n), "sum");
  nodes_.back().back = [this, id, a] {
    const T g = grads_[static_cast<size_t>(id)].data[0];
    Tensor<T>& ga = grad_buf(a);
    for (auto& x : ga.data) x += g;
  };
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::dropout(Id a, double rate, Rng& rng, bool enabled) {
  check_id(a);
  require(rate >= 0.0 && rate < 1.0, Errc::invalid_argument, "dropout rate must be in [0, 1)");
  if (!enabled || rate == 0.0) return a;
  const T inv_keep = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<Tensor<T>>(Tensor<T>::zeros(v(a).shape));
  for (auto& m : mask->data) m = rng.uniform() >= rate ? inv_keep : T(0);
  Node n;
  n.value = Tensor<T>::zeros(v(a).shape);
  kern::ops<T>().mul(n.value.ptr(), v(a).ptr(), mask->ptr(), n.value.data.size());
  n.parents = {a};
  Id id = push(std::move(n), "dropout");
  nodes_.back().back = [this, id, a, mask] {
    const Tensor<T>& g = grads_[static_cast<size_t>(id)];
    Tensor<T> tmp = Tensor<T>::zeros(g.shape);
    kern::ops<T>().mul(tmp.ptr(), g.ptr(), mask->ptr(), g.data.size());
    acc_grad(a, tmp);
  };
  return id;
}

// --- backward -------------------------------------------------------------------

template <typename T>
void Tape<T>::backward(Id root) {
  check_id(root);
  require(v(root).numel() == 1, Errc::invalid_argument,
          "backward needs a scalar root, got shape " + shape_str(v(root).shape));

  grads_.assign(nodes_.size(), Tensor<T>{});
  std::vector<bool> reachable(nodes_.size(), false);
  reachable[static_cast<size_t>(root)] = true;
  for (Id i = root; i >= 0; --i) {
    if (!reachable[static_cast<size_t>(i)]) continue;
    for (Id p : nodes_[static_cast<size_t>(i)].parents) reachable[static_cast<size_t>(p)] = true;
  }

  grads_[static_cast<size_t>(root)] = Tensor<T>::full(v(root).shape, T(1));
  for (Id i = root; i >= 0; --i) {
    auto& node = nodes_[static_cast<size_t>(i)];
    if (!reachable[static_cast<size_t>(i)] || !node.back) continue;
    if (grads_[static_cast<size_t>(i)].data.empty()) continue;  // no gradient flowed here
    node.back();
  }

  // Flush into parameters.
  for (size_t i = 0; i < nodes_.size(); ++i) {
    auto& node = nodes_[i];
    if (!node.param || !reachable[i] || grads_[i].data.empty()) continue;
    kern::ops<T>().axpy(node.param->grad.ptr(), T(1), grads_[i].ptr(), grads_[i].data.size());
  }
  grads_.clear();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace gloss
