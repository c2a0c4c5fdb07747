#pragma once

#include <string>
#include <vector>

#include "m2f/conditioning.hpp"
#include "m2f/diffusion.hpp"
#include "m2f/scheduler.hpp"

namespace m2f::editing {

// Keyframe constraints in the diffused state space (latent + pose, raw
// units). weight 1 pins the frame; weights in (0,1) soft-blend.
struct Keyframe {
  int frame = 0;
  double weight = 1.0;
  std::vector<double> state;  // d_x values
};

struct EditSpec {
  std::vector<Keyframe> keyframes;
  int resample = 1;  // repaint-style resampling count per step

  // JSON: {"resample": 1, "keyframes": [{"frame": 30, "weight": 1.0,
  //        "latent": [...], "pose": [...]}, ...]}
  // A "blendshape" array may replace "latent"; the caller maps it through M
  // before building the spec.
  void validate(int total_frames, int d_x) const;
};

// Per-frame style prompts blended with gradient masks.
struct StyleSegment {
  int start = 0, end = 0;  // [start, end)
  cond::PromptEmbedding prompt;
  std::string token;  // informational
};

struct StyleTrack {
  std::vector<StyleSegment> segments;
  int ramp_frames = 20;

  // Per-segment weights over [0, L): trapezoids with linear cross-fades of
  // ramp_frames at interior boundaries, normalized to sum 1 per frame
  // (renormalization beyond fp noise warns).
  std::vector<std::vector<double>> layer_weights(int total_frames) const;
};

core::Tensor inpaint_keyframes(const diffusion::DenoiseBackend& den,
                               const diffusion::NoiseSchedule& ns,
                               const core::Tensor& features,
                               const cond::PromptEmbedding& prompt,
                               const EditSpec& spec, int window, int overlap,
                               const diffusion::SampleConfig& cfg,
                               const core::Normalizer& norm);

core::Tensor style_inbetween(const diffusion::DenoiseBackend& den,
                             const diffusion::NoiseSchedule& ns,
                             const core::Tensor& features,
                             const StyleTrack& track, int window, int overlap,
                             const diffusion::SampleConfig& cfg,
                             const core::Normalizer& norm,
                             std::vector<core::Tensor>* step_outputs = nullptr);

struct ComposeSegment {
  core::Tensor features;  // (len, d_a), len <= backend window
  cond::PromptEmbedding prompt;
};

// Segments denoised jointly; consecutive segments share `overlap` frames
// blended with the scheduler's tapers. Total length = sum(len) - (n-1)*O.
core::Tensor compose_sequential(const diffusion::DenoiseBackend& den,
                                const diffusion::NoiseSchedule& ns,
                                const std::vector<ComposeSegment>& segments,
                                int overlap,
                                const diffusion::SampleConfig& cfg,
                                const core::Normalizer& norm);

}  // namespace m2f::editing
