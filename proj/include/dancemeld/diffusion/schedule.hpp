#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dancemeld/autograd/tensor.hpp"

namespace dancemeld::diffusion {

inline constexpr std::size_t kDefaultSteps = 1000;
inline constexpr double kCosineOffset = 0.008;

// Forward-process noise levels. alpha_bar[t] is the signal fraction after
// step t, so step 0 already adds a little noise and step T-1 leaves almost none.
struct NoiseSchedule {
  std::size_t T = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
};

inline NoiseSchedule build_cosine_schedule(std::size_t T = kDefaultSteps) {
  DM_THROW_IF(T < 2, InvalidSteps, "schedule needs at least 2 steps, got " + std::to_string(T));
  const double s = kCosineOffset;
  auto f = [&](double u) {
    const double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule out;
  out.T = T;
  out.beta.resize(T);
  out.alpha_bar.resize(T);
  double prod = 1.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double b = 1.0 - f(double(t + 1) / double(T)) / f(double(t) / double(T));
    out.beta[t] = std::clamp(b, 1e-8, 0.999);
    prod *= 1.0 - out.beta[t];
    out.alpha_bar[t] = prod;
  }
  return out;
}

inline void check_step(const NoiseSchedule& s, std::size_t t) {
  DM_THROW_IF(t >= s.T, StepOutOfRange, "step " + std::to_string(t) + " outside [0, " + std::to_string(s.T) + ")");
}

// Closed-form marginal of the forward chain at step t.
template <typename T>
Tensor<T> q_sample(const NoiseSchedule& s, const Tensor<T>& h0, std::size_t t, const Tensor<T>& noise) {
  check_step(s, t);
  DM_THROW_IF(!h0.same_shape(noise), ShapeMismatch, "noise shape differs from h0");
  const T a = T(std::sqrt(s.alpha_bar[t])), b = T(std::sqrt(1.0 - s.alpha_bar[t]));
  Tensor<T> out(h0.rows(), h0.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * h0[i] + b * noise[i];
  return out;
}

template <typename T, typename Rng>
Tensor<T> gaussian_like(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<T> out(rows, cols);
  for (auto& v : out.storage()) v = T(n(rng));
  return out;
}

// Evenly spaced, strictly increasing subsequence of [0, T) ending at T-1;
// num_steps = T gives every step.
inline std::vector<std::size_t> ddim_steps(const NoiseSchedule& s, std::size_t num_steps) {
  DM_THROW_IF(num_steps == 0 || num_steps > s.T, InvalidStepCount,
              "sampling steps must lie in [1, " + std::to_string(s.T) + "], got " + std::to_string(num_steps));
  if (num_steps == 1) return {s.T - 1};
  std::vector<std::size_t> out(num_steps);
  const double d = double(s.T - 1) / double(num_steps - 1);
  for (std::size_t i = 0; i < num_steps; ++i) out[i] = std::size_t(std::llround(double(i) * d));
  return out;
}

// Deterministic move from step t to step prev given the clean estimate.
// prev = npos means the chain ends and the clean estimate is returned.
template <typename T>
Tensor<T> ddim_step(const NoiseSchedule& s, const Tensor<T>& h_t, const Tensor<T>& h0_hat, std::size_t t,
                    std::size_t prev) {
  check_step(s, t);
  if (prev == std::size_t(-1)) return h0_hat;
  check_step(s, prev);
  const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[prev];
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
  Tensor<T> out(h_t.rows(), h_t.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eps = (double(h_t[i]) - sa * double(h0_hat[i])) / sb;
    out[i] = T(pa * double(h0_hat[i]) + pb * eps);
  }
  return out;
}

// DDIM with eta = 0: start from unit noise at the last step and walk the step
// list backwards. `denoise(h, t)` returns the clean estimate.
template <typename T, typename Denoise, typename Rng>
Tensor<T> ddim_sample(const NoiseSchedule& s, std::size_t rows, std::size_t cols, std::size_t num_steps,
                      Denoise&& denoise, Rng& rng) {
  const auto steps = ddim_steps(s, num_steps);
  Tensor<T> h = gaussian_like<T>(rows, cols, rng);
  for (std::size_t i = steps.size(); i-- > 0;) {
    const Tensor<T> h0_hat = denoise(h, steps[i]);
    h = ddim_step(s, h, h0_hat, steps[i], i == 0 ? std::size_t(-1) : steps[i - 1]);
  }
  return h;
}

}  // namespace dancemeld::diffusion
