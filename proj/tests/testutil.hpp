#pragma once
// Shared helpers for the test binaries.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

#include "doctest.h"
#include "gloss/common.hpp"
#include "gloss/tape.hpp"
#include "gloss/tensor.hpp"

namespace gloss::testutil {

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (auto& x : t.data) x = lo + (hi - lo) * rng.uniform();
  return t;
}

// Checks analytic gradients of `build` (which must register every parameter
// of `params` on the tape it is given) against central finite differences.
// rel = |analytic - fd| / max(|analytic|, |fd|, 1) must stay below tol.
//
// When the primary stencil fails, the element is re-measured at h/8 and h/64:
// truncation error shrinks quadratically and a relu kink inside the stencil
// window leaves it entirely, while a genuine backward bug keeps the error
// pinned at every step size. An element passes only if some rung meets tol.
inline void gradcheck(ParamSet<double>& params,
                      const std::function<Tape<double>::Id(Tape<double>&)>& build,
                      double h = 1e-3, double tol = 1e-4) {
  params.zero_grads();
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }
  auto eval = [&] {
    Tape<double> tape;
    return tape.val(build(tape)).data[0];
  };
  for (auto* p : params.all()) {
    for (size_t i = 0; i < p->value.data.size(); ++i) {
      const double orig = p->value.data[i];
      const double got = p->grad.data[i];
      double best_rel = 1e300, fd = 0;
      for (double step : {h, h / 8, h / 64}) {
        p->value.data[i] = orig + step;
        const double lp = eval();
        p->value.data[i] = orig - step;
        const double lm = eval();
        p->value.data[i] = orig;
        fd = (lp - lm) / (2 * step);
        const double denom = std::max({std::fabs(got), std::fabs(fd), 1.0});
        best_rel = std::min(best_rel, std::fabs(got - fd) / denom);
        if (best_rel < tol) break;
      }
      INFO(p->name, "[", i, "] analytic=", got, " fd=", fd);
      CHECK(best_rel < tol);
    }
  }
}

// Healthy-variance parameter values for behavioural tests: the 0.02 training
// init leaves an untrained net nearly input-oblivious, which makes argmax
// behaviour degenerate and finite differences ill-conditioned.
template <typename T>
void randomize_params(ParamSet<T>& ps, Rng& rng, double scale) {
  for (auto* p : ps.all())
    for (size_t i = 0; i < p->value.data.size(); ++i) {
      const double u = rng.uniform() * 2.0 - 1.0;
      const bool gain = p->name.find("ln") != std::string::npos && p->name.back() == 'g';
      p->value.data[i] = static_cast<T>(gain ? 1.0 + 0.2 * u : scale * u);
    }
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto candidate = base / (tag + "-" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate.string();
        return;
      }
    }
    fail(Errc::io_error, "could not create temp dir for tag " + tag);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

}  // namespace gloss::testutil
