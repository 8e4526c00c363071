#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "layout.hpp"

namespace escq::detail {

// tanh hidden layers, linear scalar head.
template <typename Real>
class MlpModel {
 public:
  MlpModel(const MlpLayout& layout, std::span<const Real> weights) : L_(layout), w_(weights) {}

  // Fills per-layer activations (acts[0] is the input) and returns the output.
  Real forward(std::span<const double> x, std::vector<std::vector<Real>>& acts) const {
    acts.resize(L_.layers.size());
    acts[0].assign(x.begin(), x.end());
    Real out = 0;
    for (std::size_t l = 0; l < L_.layers.size(); ++l) {
      const MlpLayerOffsets& layer = L_.layers[l];
      const bool last = l + 1 == L_.layers.size();
      const std::vector<Real>& in = acts[l];
      for (std::size_t r = 0; r < layer.out; ++r) {
        const Real* wr = w_.data() + layer.w + r * layer.in;
        Real s = w_[layer.b + r];
        for (std::size_t c = 0; c < layer.in; ++c) s += wr[c] * in[c];
        if (last) {
          out = s;
        } else {
          if (r == 0) acts[l + 1].assign(layer.out, Real(0));
          acts[l + 1][r] = std::tanh(s);
        }
      }
    }
    return out;
  }

  Real value(std::span<const double> x) const {
    std::vector<std::vector<Real>> acts;
    return forward(x, acts);
  }

  // grad += scale * d(output)/dweights.
  Real accumulate_grad(std::span<const double> x, double scale, std::span<double> grad) const {
    std::vector<std::vector<Real>> acts;
    const Real out = forward(x, acts);
    std::vector<double> delta{scale};  // d/d(pre-activation) of the current layer
    for (std::size_t l = L_.layers.size(); l-- > 0;) {
      const MlpLayerOffsets& layer = L_.layers[l];
      const std::vector<Real>& in = acts[l];
      std::vector<double> back(layer.in, 0.0);
      for (std::size_t r = 0; r < layer.out; ++r) {
        grad[layer.b + r] += delta[r];
        const Real* wr = w_.data() + layer.w + r * layer.in;
        double* gr = grad.data() + layer.w + r * layer.in;
        for (std::size_t c = 0; c < layer.in; ++c) {
          gr[c] += delta[r] * static_cast<double>(in[c]);
          back[c] += static_cast<double>(wr[c]) * delta[r];
        }
      }
      if (l == 0) break;
      for (std::size_t c = 0; c < layer.in; ++c) {
        const double a = static_cast<double>(in[c]);
        back[c] *= 1.0 - a * a;
      }
      delta = std::move(back);
    }
    return out;
  }

 private:
  const MlpLayout& L_;
  std::span<const Real> w_;
};

}  // namespace escq::detail
