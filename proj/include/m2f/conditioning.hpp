#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "m2f/audio.hpp"
#include "m2f/rng.hpp"
#include "m2f/tensor.hpp"

namespace m2f::cond {

// ---- audio features ---------------------------------------------------------

// Log-mel energies: 25 ms window / 10 ms hop over 16 kHz mono, d_a bands,
// then linear interpolation onto the 30 fps animation clock. Stands in for a
// pretrained speech encoder behind the AudioEncoder interface.
struct FeatureConfig {
  int d_a = 32;
  int sample_rate = 16000;
  int win = 400;   // 25 ms
  int hop = 160;   // 10 ms
  int fft = 512;
  int fps = 30;
  double log_floor = 1e-10;
  bool allow_resample = true;
};

class AudioEncoder {
 public:
  virtual ~AudioEncoder() = default;
  // (frames, d_a) at the encoder's own frame rate
  virtual core::Tensor encode(const audio::WavData& clip) const = 0;
  virtual double frame_rate() const = 0;
  virtual int feature_dim() const = 0;
};

class LogMelEncoder : public AudioEncoder {
 public:
  explicit LogMelEncoder(FeatureConfig cfg = {}) : cfg_(cfg) {}
  core::Tensor encode(const audio::WavData& clip) const override;
  double frame_rate() const override {
    return double(cfg_.sample_rate) / cfg_.hop;
  }
  int feature_dim() const override { return cfg_.d_a; }
  // Band edges in Hz (d_a+2 points); exposed so tests can locate bands.
  std::vector<double> band_edges_hz() const;

 private:
  FeatureConfig cfg_;
};

// Linear interpolation of (frames, d) onto n uniform points spanning the
// clip; first/last rows are preserved exactly.
core::Tensor align_features(const core::Tensor& raw, int n);

// Full pipeline: raw encoder frames aligned to round(duration * fps).
core::Tensor extract_audio_features(const audio::WavData& clip,
                                    const AudioEncoder& enc,
                                    const FeatureConfig& cfg = {});
int frame_count(double duration_s, int fps = 30);

// ---- prompts ----------------------------------------------------------------

enum class PromptSource { Text, ImageStub, Null };

struct PromptEmbedding {
  std::vector<double> values;  // unit L2 norm unless null
  PromptSource source = PromptSource::Null;
  bool is_null() const { return source == PromptSource::Null; }
};

// token -> seed table kept in a JSON file so embeddings are stable across runs
class StyleVocab {
 public:
  static StyleVocab builtin();
  static StyleVocab load(const std::string& path);
  void save(const std::string& path) const;

  bool has(const std::string& token) const { return seeds_.count(token) > 0; }
  uint64_t seed_for(const std::string& token) const;
  std::vector<std::string> tokens() const;

 private:
  std::map<std::string, uint64_t> seeds_;
};

class PromptEncoder {
 public:
  virtual ~PromptEncoder() = default;
  virtual PromptEmbedding embed(const std::string& token) const = 0;
  virtual int dim() const = 0;
};

// Seed-hashed unit vector per token; vocabulary tokens use their pinned
// seeds, unknown tokens fall back to a hash of the string.
class HashPromptEncoder : public PromptEncoder {
 public:
  HashPromptEncoder(StyleVocab vocab, int d_p = 64)
      : vocab_(std::move(vocab)), d_p_(d_p) {}
  PromptEmbedding embed(const std::string& token) const override;
  int dim() const override { return d_p_; }
  const StyleVocab& vocab() const { return vocab_; }

 private:
  StyleVocab vocab_;
  int d_p_;
};

PromptEmbedding null_prompt(int d_p);

// ---- condition masking --------------------------------------------------------

// Masking state for multi-conditioning classifier-free guidance. The learned
// null embeddings live in the denoiser; this records which substitutions it
// must apply. mask_all overrides mask_prompt by construction.
struct ConditionBundle {
  core::Tensor features;  // (N, d_a)
  PromptEmbedding prompt;
  bool mask_prompt = false;
  bool mask_all = false;

  bool effectively_unconditional() const { return mask_all; }
};

ConditionBundle apply_condition_masks(const core::Tensor& features,
                                      const PromptEmbedding& prompt, Rng& rng,
                                      double p_prompt, double p_all);

}  // namespace m2f::cond
