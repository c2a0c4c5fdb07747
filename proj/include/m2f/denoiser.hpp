#pragma once

#include <string>

#include "m2f/conditioning.hpp"
#include "m2f/nn.hpp"
#include "m2f/tensor.hpp"

namespace m2f::diffusion {

// Denoiser branch under multi-conditioning guidance: fully unconditional
// (second-stage mask), audio only (prompt masked), or audio+prompt.
enum class Branch { Uncond, AudioOnly, Full };

struct DenoiserPreset {
  std::string name = "toy";
  int layers = 4;
  int heads = 4;
  int model_dim = 64;
  int window = 60;  // positional table length
  int d_z = 16;
  int d_a = 32;
  int d_p = 64;
  int T = 500;
  int ffn_mult = 4;
  bool bypass_latent = false;  // diffuse blendshape weights + pose directly
  int K = 24;                  // weight count when bypassing the latent space

  int d_x() const { return (bypass_latent ? K : d_z) + 6; }

  static DenoiserPreset toy();
  static DenoiserPreset full();
  static DenoiserPreset by_name(const std::string& name);
};

// Transformer decoder over the noisy animation window: self-attention,
// cross-attention to the condition tokens (prompt token prepended to the
// per-frame audio tokens), position-wise feed-forward; predicts X0 directly.
class Denoiser {
 public:
  Denoiser(DenoiserPreset preset, uint64_t init_seed);
  explicit Denoiser(core::ParamStore params);  // from checkpoint

  const DenoiserPreset& preset() const { return preset_; }
  core::ParamStore& params() { return params_; }
  const core::ParamStore& params() const { return params_; }

  // x_t: (N, d_x), N <= preset.window. Masks resolved here against the
  // learned null embeddings; with mask_all the whole condition collapses to
  // one learned token, so the prompt is unreachable.
  core::Tensor predict(const core::Tensor& x_t, int t,
                       const cond::ConditionBundle& cond) const;
  core::Tensor predict(const core::Tensor& x_t, int t,
                       const core::Tensor& features,
                       const cond::PromptEmbedding& prompt,
                       Branch branch) const;

  void save(const std::string& path, const core::Normalizer& norm) const;
  static struct LoadedDenoiser load(const std::string& path);

 private:
  DenoiserPreset preset_;
  core::ParamStore params_;
};

struct LoadedDenoiser {
  Denoiser denoiser;
  core::Normalizer norm;
};

}  // namespace m2f::diffusion
