#include "m2f/editing.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

namespace m2f::editing {

using namespace m2f::core;
using namespace m2f::diffusion;

void EditSpec::validate(int total_frames, int d_x) const {
  std::set<int> seen;
  for (const auto& kf : keyframes) {
    if (kf.frame < 0 || kf.frame >= total_frames)
      throw ValueError("edit spec: keyframe index " + std::to_string(kf.frame) +
                       " outside [0," + std::to_string(total_frames) + ")");
    if (!seen.insert(kf.frame).second)
      throw ValueError("edit spec: duplicate keyframe index " +
                       std::to_string(kf.frame));
    if (kf.weight < 0.0 || kf.weight > 1.0)
      throw ValueError("edit spec: weight must be in [0,1]");
    if (int(kf.state.size()) != d_x)
      throw ValueError("edit spec: state must have " + std::to_string(d_x) +
                       " channels");
    for (double v : kf.state)
      if (!std::isfinite(v)) throw ValueError("edit spec: non-finite target");
  }
  if (resample < 1) throw ValueError("edit spec: resample must be >= 1");
}

namespace {

InpaintTargets to_targets(const EditSpec& spec, int d_x) {
  InpaintTargets t;
  t.resample = spec.resample;
  t.states = Tensor({std::max<int>(1, int(spec.keyframes.size())), d_x});
  for (size_t k = 0; k < spec.keyframes.size(); ++k) {
    t.frames.push_back(spec.keyframes[k].frame);
    t.weights.push_back(spec.keyframes[k].weight);
    for (int j = 0; j < d_x; ++j)
      t.states.at(int(k), j) = spec.keyframes[k].state[size_t(j)];
  }
  return t;
}

std::vector<EngineWindow> plan_to_windows(const sched::WindowPlan& plan,
                                          const Tensor& features) {
  std::vector<EngineWindow> out;
  const int d_a = features.cols();
  for (size_t w = 0; w < plan.starts.size(); ++w) {
    EngineWindow win;
    win.start = plan.starts[w];
    const int len = plan.lengths[w];
    win.features = Tensor({len, d_a});
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < d_a; ++j)
        win.features.at(i, j) = features.at(win.start + i, j);
    win.taper = plan.tapers[w];
    out.push_back(std::move(win));
  }
  return out;
}

}  // namespace

Tensor inpaint_keyframes(const DenoiseBackend& den, const NoiseSchedule& ns,
                         const Tensor& features,
                         const cond::PromptEmbedding& prompt,
                         const EditSpec& spec, int window, int overlap,
                         const SampleConfig& cfg, const Normalizer& norm) {
  const int L = features.rows();
  spec.validate(L, den.d_x());
  auto plan = sched::plan_windows(L, window, overlap);
  auto windows = plan_to_windows(plan, features);
  for (auto& w : windows) {
    PromptLayer layer;
    layer.prompt = prompt;
    layer.weights.assign(size_t(w.len()), 1.0);
    w.prompts.push_back(std::move(layer));
  }
  if (spec.keyframes.empty())
    return run_windows(den, ns, windows, L, cfg, norm);
  InpaintTargets targets = to_targets(spec, den.d_x());
  return run_windows(den, ns, windows, L, cfg, norm, &targets);
}

std::vector<std::vector<double>> StyleTrack::layer_weights(int L) const {
  if (segments.empty()) throw ValueError("style track: no segments");
  const double R = std::max(1, ramp_frames);
  std::vector<std::vector<double>> w(segments.size());
  for (size_t k = 0; k < segments.size(); ++k) {
    const auto& seg = segments[k];
    if (seg.start < 0 || seg.end > L || seg.start >= seg.end)
      throw ValueError("style track: segment range invalid");
    w[k].assign(size_t(L), 0.0);
    for (int i = 0; i < L; ++i) {
      // trapezoid: full inside, linear ramp at interior boundaries
      double rise = seg.start == 0 ? 1.0
                                   : (double(i) - (seg.start - R / 2) + 0.5) / R;
      double fall = seg.end == L ? 1.0
                                 : ((seg.end + R / 2) - double(i) - 0.5) / R;
      w[k][size_t(i)] = std::clamp(std::min(rise, fall), 0.0, 1.0);
    }
  }
  bool renormalized = false;
  for (int i = 0; i < L; ++i) {
    double sum = 0;
    for (auto& lw : w) sum += lw[size_t(i)];
    if (sum <= 0.0)
      throw ValueError("style track: frame " + std::to_string(i) +
                       " not covered by any segment");
    if (std::fabs(sum - 1.0) > 1e-9) renormalized = true;
    for (auto& lw : w) lw[size_t(i)] /= sum;
  }
  if (renormalized)
    std::cerr << "warning: style track weights renormalized to sum 1\n";
  return w;
}

Tensor style_inbetween(const DenoiseBackend& den, const NoiseSchedule& ns,
                       const Tensor& features, const StyleTrack& track,
                       int window, int overlap, const SampleConfig& cfg,
                       const Normalizer& norm,
                       std::vector<Tensor>* step_outputs) {
  const int L = features.rows();
  auto weights = track.layer_weights(L);
  auto plan = sched::plan_windows(L, window, overlap);
  auto windows = plan_to_windows(plan, features);
  for (auto& w : windows) {
    for (size_t k = 0; k < track.segments.size(); ++k) {
      PromptLayer layer;
      layer.prompt = track.segments[k].prompt;
      layer.weights.resize(size_t(w.len()));
      double mass = 0;
      for (int i = 0; i < w.len(); ++i) {
        layer.weights[size_t(i)] = weights[k][size_t(w.start + i)];
        mass += layer.weights[size_t(i)];
      }
      if (mass > 0.0) w.prompts.push_back(std::move(layer));
    }
    if (w.prompts.empty())
      throw ValueError("style track: window has no active prompts");
  }
  return run_windows(den, ns, windows, L, cfg, norm, nullptr, step_outputs);
}

Tensor compose_sequential(const DenoiseBackend& den, const NoiseSchedule& ns,
                          const std::vector<ComposeSegment>& segments,
                          int overlap, const SampleConfig& cfg,
                          const Normalizer& norm) {
  if (segments.empty())
    throw ValueError("compose: need at least one segment");
  std::vector<int> starts, lengths;
  int pos = 0;
  for (size_t s = 0; s < segments.size(); ++s) {
    const int len = segments[s].features.rows();
    if (len <= 0) throw ValueError("compose: zero-length segment");
    if (len > den.max_window())
      throw ValueError("compose: segment longer than the window");
    if (s > 0 && overlap >= std::min(len, lengths.back()))
      throw ValueError("compose: overlap must be shorter than both segments");
    if (s > 0) pos -= overlap;
    starts.push_back(pos);
    lengths.push_back(len);
    pos += len;
  }
  const int L = pos;

  // cosine tapers at the shared boundaries, normalized per frame
  std::vector<std::vector<double>> raw(segments.size());
  for (size_t s = 0; s < segments.size(); ++s) {
    raw[s].assign(size_t(lengths[s]), 1.0);
    const int ramp = std::min(overlap, lengths[s]);
    if (s > 0)
      for (int j = 0; j < ramp; ++j)
        raw[s][size_t(j)] = 0.5 * (1.0 - std::cos(M_PI * (j + 1) / (ramp + 1)));
    if (s + 1 < segments.size())
      for (int j = 0; j < ramp; ++j)
        raw[s][size_t(lengths[s] - 1 - j)] =
            0.5 * (1.0 - std::cos(M_PI * (j + 1) / (ramp + 1)));
  }
  std::vector<double> total(size_t(L), 0.0);
  for (size_t s = 0; s < segments.size(); ++s)
    for (int j = 0; j < lengths[s]; ++j)
      total[size_t(starts[s] + j)] += raw[s][size_t(j)];

  std::vector<EngineWindow> windows;
  for (size_t s = 0; s < segments.size(); ++s) {
    EngineWindow win;
    win.start = starts[s];
    win.features = segments[s].features;
    PromptLayer layer;
    layer.prompt = segments[s].prompt;
    layer.weights.assign(size_t(lengths[s]), 1.0);
    win.prompts.push_back(std::move(layer));
    win.taper.resize(size_t(lengths[s]));
    for (int j = 0; j < lengths[s]; ++j)
      win.taper[size_t(j)] = raw[s][size_t(j)] / total[size_t(starts[s] + j)];
    windows.push_back(std::move(win));
  }
  return run_windows(den, ns, windows, L, cfg, norm);
}

}  // namespace m2f::editing
