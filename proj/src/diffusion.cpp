#include "cts/diffusion.hpp"

#include <cmath>
#include <string>

#include "cts/errors.hpp"

namespace cts {

NoiseSchedule::NoiseSchedule(const Eigen::VectorXd& betas) {
  const Eigen::Index n = betas.size();
  if (n < 1) throw BadRange("schedule needs at least one step");
  beta_.setZero(n + 1);
  alpha_.setOnes(n + 1);
  alpha_bar_.setOnes(n + 1);
  for (Eigen::Index t = 1; t <= n; ++t) {
    const double b = betas[t - 1];
    if (!(b > 0.0 && b < 1.0)) throw BadRange("beta_" + std::to_string(t) + " = " + std::to_string(b));
    beta_[t] = b;
    alpha_[t] = 1.0 - b;
    alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
  }
}

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw BadRange("steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw BadRange("need 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) + ", " +
                   std::to_string(beta_end));
  Eigen::VectorXd betas(steps);
  for (int i = 0; i < steps; ++i)
    betas[i] = steps == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
  return NoiseSchedule(betas);
}

namespace {

void check_t(int t, const NoiseSchedule& s, int lo) {
  if (t < lo || t > s.steps())
    throw BadTimestep("t = " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                      std::to_string(s.steps()) + "]");
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) throw ShapeMismatch(std::string(what) + " shape differs from x");
}

}  // namespace

Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
  check_t(t, s, 1);
  check_same(x0, eps, "eps");
  const double ab = s.alpha_bar(t);
  return Tensor(x0.shape(), std::sqrt(ab) * x0.data() + std::sqrt(1.0 - ab) * eps.data());
}

Tensor ddpm_step(const Tensor& x_t, int t, const Tensor& eps_pred, const NoiseSchedule& s, const Tensor& z) {
  check_t(t, s, 1);
  check_same(x_t, eps_pred, "eps_pred");
  const double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  Eigen::VectorXd mean = (x_t.data() - coef * eps_pred.data()) / std::sqrt(s.alpha(t));
  if (z.size() > 0) {
    check_same(x_t, z, "z");
    mean += std::sqrt(s.beta(t)) * z.data();
  }
  return Tensor(x_t.shape(), std::move(mean));
}

Tensor ddim_step(const Tensor& x_t, int t, int t_prev, const Tensor& eps_pred, const NoiseSchedule& s) {
  check_t(t, s, 1);
  check_t(t_prev, s, 0);
  if (t_prev >= t) throw BadTimestep("t_prev must be below t");
  check_same(x_t, eps_pred, "eps_pred");
  const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t_prev);
  const Eigen::VectorXd x0 = (x_t.data() - std::sqrt(1.0 - ab) * eps_pred.data()) / std::sqrt(ab);
  return Tensor(x_t.shape(), std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps_pred.data());
}

std::vector<int> ddim_timesteps(int schedule_steps, int infer_steps) {
  if (infer_steps < 1 || infer_steps > schedule_steps)
    throw BadRange("infer_steps must lie in [1, " + std::to_string(schedule_steps) + "]");
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(infer_steps) + 1);
  for (int i = infer_steps; i >= 0; --i)
    ts.push_back(static_cast<int>(static_cast<long long>(i) * schedule_steps / infer_steps));
  return ts;
}

Var training_loss(const Var& eps, const Var& eps_pred) {
  if (eps.shape() != eps_pred.shape()) throw ShapeMismatch("training_loss: eps and eps_pred differ");
  return mse(eps, eps_pred);
}

double training_loss(const Tensor& eps, const Tensor& eps_pred) {
  if (eps.shape() != eps_pred.shape()) throw ShapeMismatch("training_loss: eps and eps_pred differ");
  return (eps.data() - eps_pred.data()).squaredNorm() / static_cast<double>(eps.size());
}

}  // namespace cts
