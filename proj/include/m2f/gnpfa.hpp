#pragma once

#include <optional>
#include <string>
#include <vector>

#include "m2f/nn.hpp"
#include "m2f/rig.hpp"
#include "m2f/tensor.hpp"

namespace m2f::gnpfa {

// Expression latent space over the synthetic linear rig: geometry VAE
// (encoder on vertex deltas, decoder conditioned on the neutral) plus the
// blendshape mapping networks M (weights -> latent) and M' (latent ->
// weights), trained jointly.
struct VaeConfig {
  int d_z = 16;
  int hidden = 256;
  int map_hidden = 64;
  double beta = 1e-4;       // KL weight
  double geom_scale = 0.01; // loss preconditioning for meter-scale targets
  int V = 512;
  int K = 24;
};

struct VaeTrainConfig {
  int steps = 3000;
  int batch = 16;
  double lr = 2e-3;
  double weight_decay = 0.0;
  uint64_t seed = 1;
  int num_identities = 4;
  int log_every = 200;
};

struct EncodeResult {
  core::Tensor mean;     // (1, d_z)
  core::Tensor log_var;  // (1, d_z)
  core::Tensor z;        // (1, d_z); == mean in eval mode
};

class GeometryVae {
 public:
  GeometryVae(VaeConfig cfg, uint64_t init_seed);
  explicit GeometryVae(core::ParamStore params);  // from checkpoint

  const VaeConfig& config() const { return cfg_; }
  core::ParamStore& params() { return params_; }
  const core::ParamStore& params() const { return params_; }

  // geometry and neutral are (V,3) and must share a rig
  EncodeResult encode(const core::Tensor& geometry,
                      const core::Tensor& neutral, bool sample,
                      Rng* rng) const;
  core::Tensor decode(const core::Tensor& neutral, const core::Tensor& z) const;
  // batched decode: z (N, d_z) against one neutral -> N geometries (N, 3V)
  core::Tensor decode_batch(const core::Tensor& neutral,
                            const core::Tensor& z) const;

  // mapping networks; inputs outside [0,1] are clamped with a warning
  core::Tensor map_blendshape_to_latent(const std::vector<double>& w) const;
  std::vector<double> map_latent_to_blendshape(const core::Tensor& z) const;

  void save(const std::string& path) const;
  static GeometryVae load(const std::string& path);

  // tape-friendly internals used by the trainer
  core::Tensor enc_forward(const core::Tensor& delta_flat) const;  // (1, 2d_z)
  core::Tensor dec_forward(const core::Tensor& neutral_flat,
                           const core::Tensor& z) const;           // (1, 3V)
  core::Tensor m_forward(const core::Tensor& w) const;             // (1, d_z)
  core::Tensor mprime_forward(const core::Tensor& z) const;        // (1, K)

 private:
  VaeConfig cfg_;
  core::ParamStore params_;
};

struct TrainCurves {
  std::vector<double> total, recon_real, recon_blend, kl;
};

// Joint VAE + mapping-network training on one or more identities of the
// synthetic rig. rigs[0] is the primary identity.
TrainCurves train_vae(GeometryVae& vae, const std::vector<rig::LinearRig>& rigs,
                      const VaeTrainConfig& tcfg);

}  // namespace m2f::gnpfa
