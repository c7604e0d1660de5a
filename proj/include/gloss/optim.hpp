#pragma once
// AdamW with decoupled weight decay, global-norm gradient clipping, and the
// linear learning-rate schedule used by both training stages.

#include <cstdint>

#include "gloss/tape.hpp"

namespace gloss {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// base * (1 - step/total_steps); step counts from 0 and may equal total_steps
// (where the rate reaches exactly zero). No warmup.
double linear_lr(double base, int64_t step, int64_t total_steps);

template <typename T>
class AdamW {
 public:
  AdamW(ParamSet<T>& params, AdamWConfig cfg);

  // Applies one update with the given absolute learning rate (callers pass
  // linear_lr(...)), then zeroes the gradients. Update per element, with m/v
  // bias correction and weight decay applied to the pre-update value:
  //   x <- x - lr * mhat / (sqrt(vhat) + eps) - lr * wd * x
  // Returns the pre-clip global L2 gradient norm.
  double step(double lr);

  int64_t steps_taken() const { return t_; }

 private:
  ParamSet<T>* params_;
  AdamWConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  int64_t t_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace gloss
