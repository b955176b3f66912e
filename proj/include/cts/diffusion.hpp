#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "cts/autodiff.hpp"
#include "cts/tensor.hpp"

namespace cts {

/// β_t, α_t = 1 − β_t and ᾱ_t = Π_{s≤t} α_s for t = 1..T. Index 0 of
/// alpha_bar holds ᾱ_0 = 1; index 0 of beta/alpha is unused.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  /// Throws BadRange unless every β lies in (0, 1).
  explicit NoiseSchedule(const Eigen::VectorXd& betas);

  int steps() const { return static_cast<int>(beta_.size()) - 1; }
  double beta(int t) const { return beta_[t]; }
  double alpha(int t) const { return alpha_[t]; }
  double alpha_bar(int t) const { return alpha_bar_[t]; }

 private:
  Eigen::VectorXd beta_;
  Eigen::VectorXd alpha_;
  Eigen::VectorXd alpha_bar_;
};

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end);

/// √ᾱ_t·x0 + √(1 − ᾱ_t)·ε, 1 ≤ t ≤ T.
Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

/// x_{t−1} = (x_t − β_t/√(1 − ᾱ_t)·ε̂)/√α_t + √β_t·z. Pass an empty tensor
/// for z to mean zero noise (required at t = 1).
Tensor ddpm_step(const Tensor& x_t, int t, const Tensor& eps_pred, const NoiseSchedule& s, const Tensor& z);

/// Deterministic (η = 0) DDIM update from t to t_prev, 0 ≤ t_prev < t ≤ T.
Tensor ddim_step(const Tensor& x_t, int t, int t_prev, const Tensor& eps_pred, const NoiseSchedule& s);

/// Descending visit order for an n-step DDIM chain over a T-step schedule,
/// uniform stride, ending with 0. Result has n + 1 entries: {T, ..., 0}.
std::vector<int> ddim_timesteps(int schedule_steps, int infer_steps);

/// mean((ε − ε̂)²)
Var training_loss(const Var& eps, const Var& eps_pred);
double training_loss(const Tensor& eps, const Tensor& eps_pred);

}  // namespace cts
