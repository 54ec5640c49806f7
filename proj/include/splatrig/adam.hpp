#pragma once

#include "splatrig/core.hpp"

namespace splatrig {

// ---------------------------------------------------------------------------
// Adam with bias correction over flat parameter vectors. Each parameter
// group owns one AdamState; the step count is per group.
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  VecX m;
  VecX v;
  int64_t t = 0;

  void reset(Eigen::Index n) {
    m = VecX::Zero(n);
    v = VecX::Zero(n);
    t = 0;
  }
};

inline void adam_step(VecX& params, const VecX& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size())
    throw ValidationError("adam: gradient shape mismatch");
  if (state.m.size() != params.size()) state.reset(params.size());
  state.t += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads.cwiseProduct(grads);
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    double m_hat = state.m[i] / bc1;
    double v_hat = state.v[i] / bc2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

}  // namespace splatrig
