#include "m2f/scheduler.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace m2f::sched {

using namespace m2f::core;
using namespace m2f::diffusion;

WindowPlan plan_windows(int total_frames, int window, int overlap) {
  if (total_frames < 1 || window < 1)
    throw ValueError("plan_windows: total frames and window must be >= 1");
  if (overlap < 0 || overlap >= window)
    throw ValueError("plan_windows: need 0 <= overlap < window");
  WindowPlan p;
  p.total_frames = total_frames;
  p.window = window;
  p.overlap = overlap;

  if (total_frames <= window) {
    p.starts = {0};
    p.lengths = {total_frames};
  } else {
    const int stride = window - overlap;
    for (int s = 0;; s += stride) {
      if (s + window >= total_frames) {
        p.starts.push_back(total_frames - window);  // right-aligned tail
        break;
      }
      p.starts.push_back(s);
    }
    p.lengths.assign(p.starts.size(), window);
  }

  // raw cosine ramps of length O at overlapped edges, then per-frame
  // normalization for an exact partition of unity
  const int n_win = int(p.starts.size());
  std::vector<std::vector<double>> raw(static_cast<size_t>(n_win));
  for (int w = 0; w < n_win; ++w) {
    raw[size_t(w)].assign(size_t(p.lengths[size_t(w)]), 1.0);
    const int len = p.lengths[size_t(w)];
    const int ramp = std::min(overlap, len);
    if (w > 0)  // ramp in
      for (int j = 0; j < ramp; ++j)
        raw[size_t(w)][size_t(j)] =
            0.5 * (1.0 - std::cos(M_PI * (j + 1) / (ramp + 1)));
    if (w + 1 < n_win)  // ramp out
      for (int j = 0; j < ramp; ++j)
        raw[size_t(w)][size_t(len - 1 - j)] =
            0.5 * (1.0 - std::cos(M_PI * (j + 1) / (ramp + 1)));
  }
  std::vector<double> total(size_t(total_frames), 0.0);
  for (int w = 0; w < n_win; ++w)
    for (int j = 0; j < p.lengths[size_t(w)]; ++j)
      total[size_t(p.starts[size_t(w)] + j)] += raw[size_t(w)][size_t(j)];
  p.tapers.resize(size_t(n_win));
  for (int w = 0; w < n_win; ++w) {
    p.tapers[size_t(w)].resize(size_t(p.lengths[size_t(w)]));
    for (int j = 0; j < p.lengths[size_t(w)]; ++j)
      p.tapers[size_t(w)][size_t(j)] =
          raw[size_t(w)][size_t(j)] / total[size_t(p.starts[size_t(w)] + j)];
  }
  return p;
}

namespace {

std::vector<EngineWindow> windows_from_plan(const WindowPlan& plan,
                                            const Tensor& features,
                                            const cond::PromptEmbedding& prompt) {
  std::vector<EngineWindow> out;
  const int d_a = features.cols();
  for (size_t w = 0; w < plan.starts.size(); ++w) {
    EngineWindow win;
    win.start = plan.starts[w];
    const int len = plan.lengths[w];
    win.features = Tensor({len, d_a});
    std::memcpy(win.features.data(),
                features.data() + size_t(win.start) * d_a,
                win.features.size() * sizeof(double));
    PromptLayer layer;
    layer.prompt = prompt;
    layer.weights.assign(size_t(len), 1.0);
    win.prompts.push_back(std::move(layer));
    win.taper = plan.tapers[w];
    out.push_back(std::move(win));
  }
  return out;
}

}  // namespace

Tensor denoise_long(const DenoiseBackend& den, const NoiseSchedule& ns,
                    const Tensor& features, const cond::PromptEmbedding& prompt,
                    int window, int overlap, const SampleConfig& cfg,
                    const Normalizer& norm) {
  const auto plan = plan_windows(features.rows(), window, overlap);
  const auto windows = windows_from_plan(plan, features, prompt);
  return run_windows(den, ns, windows, features.rows(), cfg, norm);
}

// ---- streaming ------------------------------------------------------------------

StreamSession::StreamSession(const DenoiseBackend& den, const NoiseSchedule& ns,
                             const cond::PromptEmbedding& prompt, int overlap,
                             const SampleConfig& cfg, const Normalizer& norm)
    : den_(den), ns_(ns), prompt_(prompt), overlap_(overlap), cfg_(cfg),
      norm_(norm) {
  if (overlap_ < 0) throw ValueError("stream: overlap must be >= 0");
}

void StreamSession::push_window(const Tensor& features) {
  if (finished_) throw ValueError("stream: push after finish");
  const int len = features.rows();
  if (len <= overlap_ && window_index_ > 0)
    throw ValueError("stream: window shorter than the overlap");

  // each arriving window gets its own ddim pass; the head frames are pinned
  // to the previous window's prediction over the shared overlap
  SampleConfig cfg = cfg_;
  cfg.seed = cfg_.seed ^ (0x9e3779b97f4a7c15ull * uint64_t(window_index_ + 1));

  std::optional<InpaintTargets> pin;
  if (window_index_ > 0) {
    pin.emplace();
    pin->frames.resize(size_t(overlap_));
    pin->weights.assign(size_t(overlap_), 1.0);
    pin->states = prev_tail_x0_.clone();
    for (int i = 0; i < overlap_; ++i) pin->frames[size_t(i)] = i;
  }

  EngineWindow win;
  win.start = 0;
  win.features = features;
  PromptLayer layer;
  layer.prompt = prompt_;
  layer.weights.assign(size_t(len), 1.0);
  win.prompts.push_back(std::move(layer));
  win.taper.assign(size_t(len), 1.0);

  Tensor out = run_windows(den_, ns_, {win}, len, cfg, norm_,
                           pin ? &*pin : nullptr);

  // commit everything except the trailing overlap; remember the tail for the
  // next window's pin
  const int commit = std::max(len - overlap_, 0);
  for (int i = 0; i < commit; ++i) {
    Tensor row({1, out.cols()});
    std::memcpy(row.data(), out.data() + size_t(i) * out.cols(),
                row.size() * sizeof(double));
    ready_.push_back(std::move(row));
  }
  emitted_ += commit;
  if (overlap_ > 0 && len > overlap_) {
    pending_tail_ = Tensor({overlap_, out.cols()});
    std::memcpy(pending_tail_.data(), out.data() + size_t(commit) * out.cols(),
                pending_tail_.size() * sizeof(double));
    prev_tail_x0_ = pending_tail_.clone();
  }
  ++window_index_;
  stalled_ = false;
}

void StreamSession::finish() {
  if (finished_) return;
  finished_ = true;
  if (pending_tail_.defined()) {
    for (int i = 0; i < pending_tail_.rows(); ++i) {
      Tensor row({1, pending_tail_.cols()});
      std::memcpy(row.data(),
                  pending_tail_.data() + size_t(i) * pending_tail_.cols(),
                  row.size() * sizeof(double));
      ready_.push_back(std::move(row));
    }
    emitted_ += pending_tail_.rows();
    pending_tail_ = Tensor();
  }
}

std::vector<Tensor> StreamSession::drain() {
  std::vector<Tensor> out(ready_.begin(), ready_.end());
  ready_.clear();
  if (out.empty() && !finished_) {
    stalled_ = true;
    std::cerr << "warning: stream stalled waiting for the next window\n";
  }
  return out;
}

// ---- bench ---------------------------------------------------------------------

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = {{"total_frames", config.total_frames},
                 {"window", config.window},
                 {"overlap", config.overlap},
                 {"ddim_steps", config.ddim_steps},
                 {"batch_sizes", config.batch_sizes},
                 {"thread_counts", config.thread_counts}};
  j["hardware_threads"] = hardware_threads;
  j["sequential_seconds"] = sequential_seconds;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : entries)
    j["entries"].push_back({{"mode", e.mode},
                            {"batch", e.batch},
                            {"threads", e.threads},
                            {"seconds", e.seconds},
                            {"frames_per_second", e.frames_per_second},
                            {"speedup_vs_sequential", e.speedup_vs_sequential}});
  return j.dump(2);
}

BenchReport bench_throughput(const DenoiseBackend& den, const NoiseSchedule& ns,
                             const Tensor& features,
                             const cond::PromptEmbedding& prompt,
                             const BenchConfig& cfg, const Normalizer& norm) {
  BenchReport rep;
  rep.config = cfg;
  rep.hardware_threads = int(std::thread::hardware_concurrency());
  const auto plan =
      plan_windows(cfg.total_frames, cfg.window, cfg.overlap);
  const auto windows = windows_from_plan(plan, features, prompt);

  SampleConfig scfg;
  scfg.ddim_steps = cfg.ddim_steps;
  scfg.seed = cfg.seed;

  // sequential fallback: one full ddim pass per window, final-output blend
  {
    const double t0 = now_s();
    Tensor blended({cfg.total_frames, den.d_x()});
    for (const auto& win : windows) {
      Tensor out = run_windows(den, ns, {EngineWindow{
                                   0, win.features, win.prompts,
                                   std::vector<double>(size_t(win.len()), 1.0)}},
                               win.len(), scfg, norm);
      for (int i = 0; i < win.len(); ++i)
        for (int j = 0; j < out.cols(); ++j)
          blended.at(win.start + i, j) +=
              win.taper[size_t(i)] * out.at(i, j);
    }
    rep.sequential_seconds = now_s() - t0;
    BenchEntry e;
    e.mode = "sequential";
    e.batch = 1;
    e.threads = 1;
    e.seconds = rep.sequential_seconds;
    e.frames_per_second = cfg.total_frames / e.seconds;
    e.speedup_vs_sequential = 1.0;
    rep.entries.push_back(e);
  }

  for (int threads : cfg.thread_counts)
    for (int batch : cfg.batch_sizes) {
      SampleConfig bcfg = scfg;
      bcfg.threads = threads;
      bcfg.sub_batch = batch;
      const double t0 = now_s();
      (void)run_windows(den, ns, windows, cfg.total_frames, bcfg, norm);
      const double dt = now_s() - t0;
      BenchEntry e;
      e.mode = "batched";
      e.batch = batch;
      e.threads = threads;
      e.seconds = dt;
      e.frames_per_second = cfg.total_frames / dt;
      e.speedup_vs_sequential = rep.sequential_seconds / dt;
      rep.entries.push_back(e);
    }
  return rep;
}

}  // namespace m2f::sched
