#ifndef QSATTN_GRADCHECK_HPP
#define QSATTN_GRADCHECK_HPP

#include <vector>

#include "qsattn/tensor.hpp"

namespace qsattn {

// Central finite-difference verification hook for differentiable ops.
//
// `fn` maps the input tensors to a scalar tensor. Returns the worst
// discrepancy between the taped gradient and the central difference,
// normalized by max(1, |analytic|, |numeric|) per element.
template <class Fn>
double gradcheck(Fn fn, std::vector<Tensor<double>> inputs, double step = 1e-5) {
  for (auto& t : inputs) t.set_requires_grad(true);

  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    Tensor<double> loss = fn(inputs);
    tape.backward(loss);
  }

  double worst = 0.0;
  for (auto& t : inputs) {
    const std::vector<double> analytic =
        t.has_grad() ? t.grad() : std::vector<double>(static_cast<size_t>(t.numel()), 0.0);
    auto& data = t.mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double fp = fn(inputs).item();
      data[i] = saved - step;
      const double fm = fn(inputs).item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

// Same check but sampling individual parameter components, for networks whose
// full parameter count makes an exhaustive sweep impractical.
template <class Fn>
double gradcheck_sampled(Fn fn, std::vector<Tensor<double>> params, int samples_per_tensor, Rng& rng,
                         double step = 1e-5) {
  for (auto& t : params) t.set_requires_grad(true);

  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    Tensor<double> loss = fn();
    tape.backward(loss);
  }

  double worst = 0.0;
  for (auto& t : params) {
    const std::vector<double> analytic =
        t.has_grad() ? t.grad() : std::vector<double>(static_cast<size_t>(t.numel()), 0.0);
    auto& data = t.mutable_data();
    for (int s = 0; s < samples_per_tensor; ++s) {
      const size_t i = static_cast<size_t>(rng.uniform_index(t.numel()));
      const double saved = data[i];
      data[i] = saved + step;
      const double fp = fn().item();
      data[i] = saved - step;
      const double fm = fn().item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace qsattn

#endif  // QSATTN_GRADCHECK_HPP
