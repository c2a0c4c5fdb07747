#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "m2f/conditioning.hpp"
#include "m2f/denoiser.hpp"
#include "m2f/nn.hpp"
#include "m2f/schedule.hpp"
#include "m2f/tensor.hpp"

namespace m2f::diffusion {

// ---- training losses ---------------------------------------------------------

enum class SmoothForm {
  SecondDifference,  // ||x[3:] - 2 x[2:-1] + x[1:-2]||^2, zero on linear ramps
  PrintedForm        // ||x[3:] + x[1:-2] - x[2:-1]||^2
};

struct LossWeights {
  double simple = 1.0;
  double velocity = 1.0;
  double smooth = 0.01;
  SmoothForm form = SmoothForm::SecondDifference;
};

struct LossBreakdown {
  double simple = 0, velocity = 0, smooth = 0, total = 0;
};

// Mean-squared terms over all frames and channels; tape-recorded so training
// can backprop through the prediction. N >= 3 required when smooth > 0.
core::Tensor training_loss(const core::Tensor& x0, const core::Tensor& x0_hat,
                           const LossWeights& w, LossBreakdown* breakdown);

// ---- guidance ------------------------------------------------------------------

struct GuidanceConfig {
  double s_a = 2.5;
  double s_p = 1.5;
};

// (1 - s_a - s_p) uncond + s_a audio + s_p full. Terms with an exactly-zero
// coefficient are skipped and their tensor may be left undefined.
core::Tensor cfg_combine(const core::Tensor& uncond, const core::Tensor& audio,
                         const core::Tensor& full, double s_a, double s_p);

// ---- sampling engine ------------------------------------------------------------

// Backend the sampler drives; the transformer and test toys both implement it.
class DenoiseBackend {
 public:
  virtual ~DenoiseBackend() = default;
  virtual core::Tensor predict_x0(const core::Tensor& x_t, int t,
                                  const core::Tensor& features,
                                  const cond::PromptEmbedding& prompt,
                                  Branch branch) const = 0;
  virtual int d_x() const = 0;
  virtual int max_window() const = 0;
};

class TransformerBackend : public DenoiseBackend {
 public:
  explicit TransformerBackend(const Denoiser& den) : den_(den) {}
  core::Tensor predict_x0(const core::Tensor& x_t, int t,
                          const core::Tensor& features,
                          const cond::PromptEmbedding& prompt,
                          Branch branch) const override {
    return den_.predict(x_t, t, features, prompt, branch);
  }
  int d_x() const override { return den_.preset().d_x(); }
  int max_window() const override { return den_.preset().window; }

 private:
  const Denoiser& den_;
};

struct SampleConfig {
  GuidanceConfig guidance;
  bool no_cfg = false;  // conditional branch only, guidance bypassed
  int ddim_steps = 50;
  uint64_t seed = 0;
  int threads = 1;
  int sub_batch = 0;  // window chunk size; 0 = all at once. Never affects output.
};

// One prompt plus its per-frame blend weights within a window.
struct PromptLayer {
  cond::PromptEmbedding prompt;
  std::vector<double> weights;  // size = window length; >= 0
};

struct EngineWindow {
  int start = 0;                      // absolute frame index
  core::Tensor features;              // (len, d_a)
  std::vector<PromptLayer> prompts;   // per-frame weights sum to 1 across layers
  std::vector<double> taper;          // partition of unity across windows

  int len() const { return features.rows(); }
};

// Temporal-domain inpainting targets in raw (denormalized) units.
struct InpaintTargets {
  std::vector<int> frames;
  core::Tensor states;           // (n, d_x)
  std::vector<double> weights;   // [0,1] per keyframe
  int resample = 1;              // >1 re-noises and repeats each step
};

// Deterministic DDIM (eta = 0) over one global length-L trajectory. Every
// window denoises its slice each step; X0 estimates are taper-blended per
// absolute frame; the update derives the implied noise from the blended
// estimate, so overlapping windows stay in agreement. Output is denormalized
// and rotation channels are clamped to [-pi, pi].
core::Tensor run_windows(const DenoiseBackend& den, const NoiseSchedule& ns,
                         const std::vector<EngineWindow>& windows,
                         int total_frames, const SampleConfig& cfg,
                         const core::Normalizer& norm,
                         const InpaintTargets* inpaint = nullptr,
                         std::vector<core::Tensor>* step_outputs = nullptr);

// Single-window sampling: N = features.rows() <= backend window.
core::Tensor sample_ddim(const DenoiseBackend& den, const NoiseSchedule& ns,
                         const core::Tensor& features,
                         const cond::PromptEmbedding& prompt,
                         const SampleConfig& cfg, const core::Normalizer& norm);

// ---- training -------------------------------------------------------------------

struct TrainItem {
  core::Tensor features;  // (N_clip, d_a)
  cond::PromptEmbedding prompt;
  core::Tensor traj;      // (N_clip, d_x) raw units
};

struct DiffTrainConfig {
  int steps = 2000;
  int batch = 4;
  double lr = 1e-3;
  int warmup_steps = 100;
  double final_lr_frac = 0.1;  // cosine decay floor; 1.0 = constant lr
  double weight_decay = 1e-4;
  double p_prompt = 0.1;
  double p_all = 0.1;
  LossWeights loss;
  uint64_t seed = 1;
  bool no_cfg_masking = false;  // train only the full-condition branch
  int log_every = 100;
};

struct DiffCurves {
  std::vector<double> simple, velocity, smooth, total;
};

core::Normalizer fit_normalizer(const std::vector<TrainItem>& data);

DiffCurves train_denoiser(Denoiser& den, const NoiseSchedule& ns,
                          const std::vector<TrainItem>& data,
                          const core::Normalizer& norm,
                          const DiffTrainConfig& cfg);

}  // namespace m2f::diffusion
