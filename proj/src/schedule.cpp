#include "m2f/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace m2f::diffusion {

using core::Tensor;

NoiseSchedule cosine_schedule(int T) {
  if (T < 1) throw core::ValueError("schedule: T must be >= 1");
  NoiseSchedule ns;
  ns.T = T;
  ns.alpha_bar.resize(size_t(T) + 1);
  const double s = 0.008;
  auto f = [&](double u) {
    const double c = std::cos((u + s) / (1.0 + s) * M_PI / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  for (int t = 0; t <= T; ++t)
    ns.alpha_bar[size_t(t)] = f(double(t) / T) / f0;
  ns.alpha_bar[0] = 1.0;
  return ns;
}

NoiseSchedule schedule_from_alpha_bar(std::vector<double> alpha_bar) {
  if (alpha_bar.size() < 2 || alpha_bar.front() != 1.0)
    throw core::ValueError("schedule: table must start at 1");
  for (size_t i = 1; i < alpha_bar.size(); ++i)
    if (!(alpha_bar[i] < alpha_bar[i - 1]) || alpha_bar[i] < 0.0)
      throw core::ValueError("schedule: table must be strictly decreasing, >= 0");
  NoiseSchedule ns;
  ns.T = int(alpha_bar.size()) - 1;
  ns.alpha_bar = std::move(alpha_bar);
  return ns;
}

Tensor forward_diffuse(const NoiseSchedule& ns, const Tensor& x0, int t,
                       const Tensor& eps) {
  if (t < 0 || t > ns.T) throw core::ValueError("forward_diffuse: t out of range");
  if (!x0.same_shape(eps))
    throw core::ShapeError("forward_diffuse: x0/eps shape mismatch " +
                           x0.shape_str() + " vs " + eps.shape_str());
  const double a = ns.at(t);
  const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
  Tensor out(x0.shape());
  for (size_t i = 0; i < x0.size(); ++i)
    out.at(i) = sa * x0.at(i) + sn * eps.at(i);
  return out;
}

std::vector<int> ddim_times(int T, int steps) {
  if (steps < 1 || steps > T)
    throw core::ValueError("ddim: steps must be in [1, T]");
  std::vector<int> times(size_t(steps) + 1);
  for (int i = 0; i <= steps; ++i)
    times[size_t(i)] = int(std::lround(double(T) * i / steps));
  for (size_t i = 1; i < times.size(); ++i)
    if (times[i] <= times[i - 1]) times[i] = times[i - 1] + 1;
  return times;
}

}  // namespace m2f::diffusion
