#include "m2f/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace m2f::cond {

using core::Tensor;

namespace {

constexpr double kPi = 3.141592653589793;

// Iterative radix-2 FFT, in place. n must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

// ---- LogMelEncoder ------------------------------------------------------------

std::vector<double> LogMelEncoder::band_edges_hz() const {
  const double mel_max = hz_to_mel(double(cfg_.sample_rate) / 2.0);
  std::vector<double> edges(size_t(cfg_.d_a) + 2);
  for (size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_max * double(i) / double(edges.size() - 1));
  return edges;
}

Tensor LogMelEncoder::encode(const audio::WavData& clip) const {
  if (clip.samples.empty()) throw std::runtime_error("features: empty clip");
  audio::WavData wav = clip;
  if (wav.sample_rate != cfg_.sample_rate) {
    if (!cfg_.allow_resample)
      throw std::runtime_error("features: unsupported sample rate " +
                               std::to_string(wav.sample_rate));
    wav = audio::resample(wav, cfg_.sample_rate);
  }

  const int n_samples = int(wav.samples.size());
  const int n_frames =
      n_samples >= cfg_.win ? 1 + (n_samples - cfg_.win) / cfg_.hop : 1;

  // Hann window
  std::vector<double> window(size_t(cfg_.win));
  for (int i = 0; i < cfg_.win; ++i)
    window[size_t(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (cfg_.win - 1));

  // triangular mel filterbank over fft/2+1 power bins
  const auto edges = band_edges_hz();
  const int n_bins = cfg_.fft / 2 + 1;
  const double bin_hz = double(cfg_.sample_rate) / cfg_.fft;
  std::vector<std::vector<double>> filters(size_t(cfg_.d_a),
                                           std::vector<double>(size_t(n_bins), 0.0));
  for (int b = 0; b < cfg_.d_a; ++b) {
    const double lo = edges[size_t(b)], mid = edges[size_t(b) + 1],
                 hi = edges[size_t(b) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f >= lo && f <= mid && mid > lo)
        w = (f - lo) / (mid - lo);
      else if (f > mid && f <= hi && hi > mid)
        w = (hi - f) / (hi - mid);
      filters[size_t(b)][size_t(k)] = w;
    }
  }

  Tensor out({n_frames, cfg_.d_a});
  std::vector<std::complex<double>> buf(size_t(cfg_.fft));
  for (int fr = 0; fr < n_frames; ++fr) {
    const int start = fr * cfg_.hop;
    for (int i = 0; i < cfg_.fft; ++i) {
      const int s = start + i;
      const double v = (i < cfg_.win && s < n_samples)
                           ? double(wav.samples[size_t(s)]) * window[size_t(i)]
                           : 0.0;
      buf[size_t(i)] = {v, 0.0};
    }
    fft(buf);
    for (int b = 0; b < cfg_.d_a; ++b) {
      double e = 0.0;
      for (int k = 0; k < n_bins; ++k) {
        const double w = filters[size_t(b)][size_t(k)];
        if (w > 0.0) e += w * std::norm(buf[size_t(k)]);
      }
      out.at(fr, b) = std::log(std::max(e, cfg_.log_floor));
    }
  }
  return out;
}

// ---- alignment ------------------------------------------------------------------

Tensor align_features(const Tensor& raw, int n) {
  if (n <= 0) throw std::runtime_error("align: target length must be positive");
  if (raw.rank() != 2 || raw.rows() < 1)
    throw std::runtime_error("align: need at least one raw frame");
  const int src = raw.rows(), d = raw.cols();
  Tensor out({n, d});
  if (src == 1) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) out.at(i, j) = raw.at(0, j);
    return out;
  }
  const double step = n == 1 ? 0.0 : double(src - 1) / double(n - 1);
  for (int i = 0; i < n; ++i) {
    const double p = double(i) * step;
    int i0 = std::min(int(p), src - 1);
    const double f = p - double(i0);
    const int i1 = std::min(i0 + 1, src - 1);
    for (int j = 0; j < d; ++j)
      out.at(i, j) = raw.at(i0, j) + f * (raw.at(i1, j) - raw.at(i0, j));
  }
  return out;
}

int frame_count(double duration_s, int fps) {
  return std::max(1, int(std::lround(duration_s * fps)));
}

Tensor extract_audio_features(const audio::WavData& clip,
                              const AudioEncoder& enc,
                              const FeatureConfig& cfg) {
  Tensor raw = enc.encode(clip);
  return align_features(raw, frame_count(clip.duration(), cfg.fps));
}

// ---- prompts ----------------------------------------------------------------------

StyleVocab StyleVocab::builtin() {
  // Seeds pinned after checking the pairwise-cosine bound on the embeddings.
  static const std::pair<const char*, uint64_t> kTokens[] = {
      {"neutral", 101}, {"happy", 102},     {"sad", 103},   {"angry", 104},
      {"surprised", 105}, {"calm", 106},    {"excited", 107}, {"fearful", 108},
  };
  StyleVocab v;
  for (const auto& [tok, seed] : kTokens) v.seeds_[tok] = seed;
  return v;
}

StyleVocab StyleVocab::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("style vocab: cannot open " + path);
  nlohmann::json j;
  is >> j;
  StyleVocab v;
  for (auto& [tok, seed] : j.at("tokens").items())
    v.seeds_[tok] = seed.get<uint64_t>();
  return v;
}

void StyleVocab::save(const std::string& path) const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json toks;
  for (const auto& [tok, seed] : seeds_) toks[tok] = seed;
  j["tokens"] = toks;
  std::ofstream os(path);
  os << j.dump(2) << "\n";
}

uint64_t StyleVocab::seed_for(const std::string& token) const {
  auto it = seeds_.find(token);
  if (it == seeds_.end())
    throw std::runtime_error("style vocab: unknown token '" + token + "'");
  return it->second;
}

std::vector<std::string> StyleVocab::tokens() const {
  std::vector<std::string> out;
  for (const auto& [tok, seed] : seeds_) out.push_back(tok);
  return out;
}

PromptEmbedding HashPromptEncoder::embed(const std::string& token) const {
  const uint64_t seed = vocab_.has(token)
                            ? vocab_.seed_for(token)
                            : (hash64(token) ^ 0x9e3779b97f4a7c15ull);
  Rng rng(seed);
  rng.next_u64();
  PromptEmbedding p;
  p.source = PromptSource::Text;
  p.values.resize(size_t(d_p_));
  double norm2 = 0.0;
  for (auto& v : p.values) {
    v = rng.normal();
    norm2 += v * v;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& v : p.values) v *= inv;
  return p;
}

PromptEmbedding null_prompt(int d_p) {
  PromptEmbedding p;
  p.source = PromptSource::Null;
  p.values.assign(size_t(d_p), 0.0);
  return p;
}

// ---- condition masks -----------------------------------------------------------------

ConditionBundle apply_condition_masks(const Tensor& features,
                                      const PromptEmbedding& prompt, Rng& rng,
                                      double p_prompt, double p_all) {
  if (p_prompt < 0 || p_prompt > 1 || p_all < 0 || p_all > 1)
    throw std::runtime_error("condition masks: probabilities must be in [0,1]");
  ConditionBundle b;
  b.features = features;
  b.prompt = prompt;
  // First stage masks the prompt, second stage the whole concatenation; the
  // draws are independent and both recorded so training covers all three
  // denoiser variants.
  b.mask_prompt = rng.uniform() < p_prompt;
  b.mask_all = rng.uniform() < p_all;
  return b;
}

}  // namespace m2f::cond
