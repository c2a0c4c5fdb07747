#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "m2f/diffusion.hpp"

namespace m2f::sched {

// Overlapped window cover of [0, L): starts at multiples of N-O with the
// final window right-aligned (its overlap may exceed O). Taper weights use
// cosine ramps of length O at overlapped edges, normalized per frame to an
// exact partition of unity.
struct WindowPlan {
  int total_frames = 0;
  int window = 0;
  int overlap = 0;
  std::vector<int> starts;
  std::vector<int> lengths;
  std::vector<std::vector<double>> tapers;  // per window, per local frame
};

WindowPlan plan_windows(int total_frames, int window, int overlap);

// Long-form sampling: slices the aligned features into the plan's windows and
// runs the shared engine. Bitwise identical to diffusion::sample_ddim when
// total frames <= window.
core::Tensor denoise_long(const diffusion::DenoiseBackend& den,
                          const diffusion::NoiseSchedule& ns,
                          const core::Tensor& features,
                          const cond::PromptEmbedding& prompt, int window,
                          int overlap, const diffusion::SampleConfig& cfg,
                          const core::Normalizer& norm);

// Real-time windowed mode: feature windows arrive in order with overlap O;
// each window's non-overlapped prefix is committed once denoised. Overlap
// frames of the next window are re-noised from the previous window's
// prediction trajectory so the seam stays coherent. Committed frames never
// change.
class StreamSession {
 public:
  StreamSession(const diffusion::DenoiseBackend& den,
                const diffusion::NoiseSchedule& ns,
                const cond::PromptEmbedding& prompt, int overlap,
                const diffusion::SampleConfig& cfg,
                const core::Normalizer& norm);

  // feature window (len, d_a), len <= backend window; lengths may vary
  void push_window(const core::Tensor& features);
  void finish();  // commits the pending tail
  // drains committed frames; empty when none are ready
  std::vector<core::Tensor> drain();
  // true when drain() was called with nothing ready and no finish() yet
  bool stalled() const { return stalled_; }
  int emitted() const { return emitted_; }

 private:
  const diffusion::DenoiseBackend& den_;
  const diffusion::NoiseSchedule& ns_;
  cond::PromptEmbedding prompt_;
  int overlap_;
  diffusion::SampleConfig cfg_;
  core::Normalizer norm_;
  int window_index_ = 0;
  int emitted_ = 0;
  bool stalled_ = false;
  bool finished_ = false;
  core::Tensor pending_tail_;        // raw-unit frames awaiting the next window
  core::Tensor prev_tail_x0_;        // normalized X0 estimate over the overlap
  std::deque<core::Tensor> ready_;   // committed frames (1, d_x each)
};

// Wall-clock comparison of sequential per-window denoising (fallback: blend
// final outputs only) vs batched windows per step, across batch sizes and
// thread counts.
struct BenchConfig {
  int total_frames = 1200;
  int window = 60;
  int overlap = 15;
  std::vector<int> batch_sizes = {1, 8};
  std::vector<int> thread_counts = {1};
  int ddim_steps = 8;
  uint64_t seed = 9;
};

struct BenchEntry {
  std::string mode;  // "sequential" or "batched"
  int batch = 0;
  int threads = 0;
  double seconds = 0;
  double frames_per_second = 0;
  double speedup_vs_sequential = 0;
};

struct BenchReport {
  BenchConfig config;
  int hardware_threads = 0;
  double sequential_seconds = 0;
  std::vector<BenchEntry> entries;
  std::string to_json() const;
};

BenchReport bench_throughput(const diffusion::DenoiseBackend& den,
                             const diffusion::NoiseSchedule& ns,
                             const core::Tensor& features,
                             const cond::PromptEmbedding& prompt,
                             const BenchConfig& cfg,
                             const core::Normalizer& norm);

}  // namespace m2f::sched
