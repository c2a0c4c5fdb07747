#pragma once

#include <string>
#include <vector>

#include "m2f/audio.hpp"
#include "m2f/conditioning.hpp"
#include "m2f/tensor.hpp"

namespace m2f::corpus {

// Synthetic ground-truth oracle: latents are affine in the smoothed audio
// features with seed-derived per-style maps; head poses are style-scaled
// nod/shake oscillations whose phase advances with feature energy.
struct CorpusSample {
  std::string id;
  std::string wav_file;  // relative to the dataset dir
  std::string style;
  std::string split;  // train | val | test
  int n_frames = 0;
  int d_a = 0, d_z = 0;
  std::vector<float> features;  // n * d_a
  std::vector<float> latent;    // n * d_z
  std::vector<float> pose;      // n * 6

  core::Tensor features_t() const;
  core::Tensor latent_t() const;
  core::Tensor pose_t() const;
  core::Tensor traj_t() const;  // (n, d_z + 6)
};

struct CorpusConfig {
  int n_clips = 200;
  double dur_min = 2.2;
  double dur_max = 4.0;
  uint64_t seed = 7;
  int d_a = 32;
  int d_z = 16;
  int fps = 30;
  std::vector<std::string> styles;  // empty -> builtin vocabulary
};

// 5-frame centered moving average (shrinking window at the edges).
core::Tensor smooth_features(const core::Tensor& features);

// Z[i] = W_style smooth(A)[i] + c_style; Theta = nod/shake oscillations
// phase-locked to the feature energy. Deterministic in (style, seed).
void synth_oracle(const core::Tensor& features, const std::string& style,
                  uint64_t seed, int d_z, core::Tensor* latent,
                  core::Tensor* pose, int fps = 30);

// Pure function of clip id and seed: 80/10/10.
std::string split_of(const std::string& clip_id, uint64_t seed);

// Synthesizes burst audio, extracts features, runs the oracle and writes
// wav + fp32 blobs + manifest.json. Same seed -> byte-identical directory.
void generate_corpus(const std::string& dir, const CorpusConfig& cfg);

// Validated samples; malformed blobs are skipped with a warning. An empty /
// absent dataset yields an empty list with a warning.
std::vector<CorpusSample> load_corpus(const std::string& dir);

}  // namespace m2f::corpus
