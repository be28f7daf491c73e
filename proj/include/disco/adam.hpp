#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "disco/tensor.hpp"

namespace disco {

// Named parameter collection. Ordered map keeps checkpoint layout and
// update order deterministic.
using ParamMap = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  double clip_norm = 0.0;  // 0 disables the global-norm NaN guard
  std::map<std::string, Tensor> m;  // first moments
  std::map<std::string, Tensor> v;  // second moments
};

// Standard bias-corrected Adam update; parameters without a gradient entry
// are left untouched.
inline void adam_step(AdamState& state, ParamMap& params, const GradMap& grads) {
  double scale = 1.0;
  if (state.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
      for (double x : g.vec()) sq += x * x;
    double norm = std::sqrt(sq);
    if (norm > state.clip_norm) scale = state.clip_norm / norm;
  }

  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (!g.same_shape(p))
      throw std::runtime_error("adam_step: gradient shape mismatch for '" + name + "'");
    if (!g.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient for '" + name + "'");

    Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape())).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape())).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double gi = g[i] * scale;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace disco
