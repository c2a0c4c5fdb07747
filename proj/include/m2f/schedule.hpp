#pragma once

#include <vector>

#include "m2f/rng.hpp"
#include "m2f/tensor.hpp"

namespace m2f::diffusion {

// Cumulative-alpha table over T steps: alpha_bar[0] = 1, strictly decreasing,
// alpha_bar[T] ~ 0.
struct NoiseSchedule {
  int T = 500;
  std::vector<double> alpha_bar;  // T+1 entries

  double at(int t) const { return alpha_bar[size_t(t)]; }
};

// alpha_bar(t) = f(t/T)/f(0), f(u) = cos^2((u+s)/(1+s) * pi/2), s = 0.008.
NoiseSchedule cosine_schedule(int T = 500);

// Table injected directly; used by tests pinning specific alpha values.
NoiseSchedule schedule_from_alpha_bar(std::vector<double> alpha_bar);

// x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps
core::Tensor forward_diffuse(const NoiseSchedule& ns, const core::Tensor& x0,
                             int t, const core::Tensor& eps);

// Strided DDIM time sequence: steps+1 values from 0 up to T.
std::vector<int> ddim_times(int T, int steps);

}  // namespace m2f::diffusion
