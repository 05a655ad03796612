#pragma once

// Central finite-difference gradient checker. The relative error uses
// max(1, |analytic|, |numeric|) as denominator so tiny gradients are judged
// on an absolute scale.

#include <cmath>
#include <functional>
#include <vector>

#include "mdphom/tensor.hpp"

namespace oracles {

inline double fd_gradient_max_rel_error(
    const std::function<mdphom::Tensor(const std::vector<mdphom::Tensor>&)>& f,
    std::vector<mdphom::Tensor>& leaves, double h = 1e-4) {
  mdphom::Tensor y = f(leaves);
  y.backward();
  double worst = 0.0;
  for (auto& leaf : leaves) {
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      const double saved = leaf.value()[i];
      leaf.value()[i] = saved + h;
      const double up = f(leaves).item();
      leaf.value()[i] = saved - h;
      const double down = f(leaves).item();
      leaf.value()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = leaf.grad()[i];
      const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

}  // namespace oracles
