#pragma once
// Tensor-level reverse-mode autodiff. A Tape records one forward computation;
// backward() walks it in reverse and accumulates gradients into the Parameter
// objects that were registered on it. Templated on the scalar type so the
// same graph code runs in float for training and double for finite-difference
// gradient checking.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gloss/common.hpp"
#include "gloss/tensor.hpp"

namespace gloss {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value; accumulates until zeroed
};

template <typename T>
class ParamSet {
 public:
  Parameter<T>& add(const std::string& name, Shape shape) {
    require(!index_.count(name), Errc::invalid_argument, "duplicate parameter: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>::zeros(shape);
    p->grad = Tensor<T>::zeros(std::move(shape));
    index_[name] = items_.size();
    items_.push_back(std::move(p));
    return *items_.back();
  }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), Errc::invalid_argument, "unknown parameter: " + name);
    return *items_[it->second];
  }

  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }

  // Insertion order; this is the canonical iteration order everywhere
  // (optimizer steps, checkpoints), which keeps runs reproducible.
  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(p.get());
    return out;
  }
  std::vector<const Parameter<T>*> all() const {
    std::vector<const Parameter<T>*> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(p.get());
    return out;
  }

  size_t count() const { return items_.size(); }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : items_) std::fill(p->grad.data.begin(), p->grad.data.end(), T(0));
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
  std::map<std::string, size_t> index_;
};

template <typename T>
class Tape {
 public:
  using Id = int32_t;

  // check_finite: validate every op output and fail fast with numeric_error.
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Id leaf(Tensor<T> value);
  Id param(Parameter<T>& p);
  const Tensor<T>& val(Id id) const;
  size_t node_count() const { return nodes_.size(); }

  // Elementwise, identical shapes.
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id relu(Id a);
  Id scale(Id a, T c);

  // a has shape (..., N), b has shape (N); b is added to every row.
  Id add_rowvec(Id a, Id b);

  // 2-D or batched matmul. Both operands 2-D, or both with identical leading
  // (batch) dims. trans_a / trans_b transpose the last two dims logically,
  // without materializing: a stored (.., K, M) with trans_a, b stored
  // (.., N, K) with trans_b. trans_a && trans_b is not supported.
  Id matmul(Id a, Id b, bool trans_a = false, bool trans_b = false);

  Id reshape(Id a, Shape shape);
  Id permute(Id a, std::vector<int> perm);

  Id softmax_lastdim(Id a);

  // scores (B, H, Q, K); allow is a row-major (B, Q, K) byte mask shared
  // across heads. Entries with allow == 0 are replaced by `fill`.
  Id masked_fill(Id scores, const std::vector<uint8_t>& allow, T fill);

  // table (V, D), ids.size() rows out: (rows, D). Validates ids against V.
  Id embedding(Id table, const std::vector<int32_t>& ids);

  // Normalizes the last dim; gain and bias have shape (D).
  Id layer_norm(Id x, Id gain, Id bias, T eps);

  // x (B, T, D), keep (B*T) bytes; per batch row the mean over kept
  // positions -> (B, D). Every batch row needs at least one kept position.
  Id masked_mean_rows(Id x, const std::vector<uint8_t>& keep);

  // logits (R, V), targets (R). Mean negative log-likelihood over rows whose
  // target != ignore_id; requires at least one contributing row.
  Id cross_entropy(Id logits, const std::vector<int32_t>& targets, int32_t ignore_id);

  Id sum(Id a);  // -> scalar

  // Inverted dropout (kept activations scaled by 1/keep). Identity when
  // disabled or rate == 0; masks are drawn from `rng` in call order.
  Id dropout(Id a, double rate, Rng& rng, bool enabled);

  // root must be scalar. Gradients accumulate into registered Parameters
  // (repeated backward calls keep accumulating until ParamSet::zero_grads).
  void backward(Id root);

 private:
  struct Node {
    Tensor<T> value;
    std::vector<Id> parents;
    std::function<void()> back;  // null for leaves/params
    Parameter<T>* param = nullptr;
    const char* op = "leaf";
  };

  Id push(Node n, const char* op);
  const Tensor<T>& v(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor<T>& grad_buf(Id id);
  void acc_grad(Id id, const Tensor<T>& t);
  void check_id(Id id) const;

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  bool check_finite_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace gloss
