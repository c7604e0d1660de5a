#include "gloss/optim.hpp"

#include <cmath>

namespace gloss {

double linear_lr(double base, int64_t step, int64_t total_steps) {
  require(total_steps > 0, Errc::invalid_argument, "linear_lr: total_steps must be positive");
  require(step >= 0 && step <= total_steps, Errc::invalid_argument,
          "linear_lr: step " + std::to_string(step) + " outside [0, " +
              std::to_string(total_steps) + "]");
  return base * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

template <typename T>
AdamW<T>::AdamW(ParamSet<T>& params, AdamWConfig cfg) : params_(&params), cfg_(cfg) {
  require(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1,
          Errc::invalid_argument, "AdamW: betas must lie in [0, 1)");
  require(cfg.eps > 0, Errc::invalid_argument, "AdamW: eps must be positive");
  for (auto* p : params.all()) {
    m_.push_back(Tensor<T>::zeros(p->value.shape));
    v_.push_back(Tensor<T>::zeros(p->value.shape));
  }
}

template <typename T>
double AdamW<T>::step(double lr) {
  auto all = params_->all();
  require(all.size() == m_.size(), Errc::invalid_argument,
          "AdamW: parameter set changed size after construction");

  double norm_sq = 0;
  for (auto* p : all)
    for (T g : p->grad.data) norm_sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(norm_sq);
  require(std::isfinite(norm), Errc::numeric_error, "AdamW: non-finite gradient norm");

  double clip_scale = 1.0;
  if (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  for (size_t pi = 0; pi < all.size(); ++pi) {
    auto* p = all[pi];
    auto& m = m_[pi];
    auto& v = v_[pi];
    require_same_shape(p->value, m, "AdamW::step");
    for (size_t i = 0; i < p->value.data.size(); ++i) {
      const double g = static_cast<double>(p->grad.data[i]) * clip_scale;
      const double mi = cfg_.beta1 * static_cast<double>(m.data[i]) + (1.0 - cfg_.beta1) * g;
      const double vi = cfg_.beta2 * static_cast<double>(v.data[i]) + (1.0 - cfg_.beta2) * g * g;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double x = static_cast<double>(p->value.data[i]);
      p->value.data[i] =
          static_cast<T>(x - lr * mhat / (std::sqrt(vhat) + cfg_.eps) - lr * cfg_.weight_decay * x);
    }
  }
  params_->zero_grads();
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace gloss
