#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "refcomp/autograd.hpp"

namespace refcomp::testing {

/// Largest relative error between analytic and central-difference gradients
/// of sum(build(inputs) .* probe), over all inputs.
inline double max_gradient_error(std::vector<nn::Mat>& inputs, const nn::Mat& probe,
                                 const std::function<nn::Var(const std::vector<nn::Var>&)>& build,
                                 double h = 1e-4) {
  auto loss_value = [&]() {
    nn::Graph g(false);
    std::vector<nn::Var> vars;
    for (auto& m : inputs) vars.push_back(g.constant(m));
    return (build(vars).value().array() * probe.array()).sum();
  };
  nn::Graph g(true);
  std::vector<nn::Var> vars;
  for (auto& m : inputs) vars.push_back(g.leaf(m));
  g.backward(nn::sum(nn::mul(build(vars), g.constant(probe))));
  double worst = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const nn::Mat analytic =
        g.grad(vars[k]).size() ? g.grad(vars[k]) : nn::Mat::Zero(inputs[k].rows(), inputs[k].cols());
    nn::Mat numeric(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double keep = inputs[k].data()[i];
      inputs[k].data()[i] = keep + h;
      const double up = loss_value();
      inputs[k].data()[i] = keep - h;
      const double down = loss_value();
      inputs[k].data()[i] = keep;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double denom = std::max({analytic.norm(), numeric.norm(), 1e-12});
    worst = std::max(worst, (analytic - numeric).norm() / denom);
  }
  return worst;
}

}  // namespace refcomp::testing
