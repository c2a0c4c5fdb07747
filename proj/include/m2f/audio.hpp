#pragma once

#include <string>
#include <vector>

namespace m2f::audio {

// Mono PCM held as float in [-1,1]. File format is RIFF WAVE, PCM16.
struct WavData {
  std::vector<float> samples;
  int sample_rate = 16000;

  double duration() const {
    return double(samples.size()) / double(sample_rate);
  }
};

WavData read_wav(const std::string& path);
void write_wav(const std::string& path, const WavData& wav);

// Linear resampler (endpoint-preserving).
WavData resample(const WavData& in, int target_rate);

}  // namespace m2f::audio
