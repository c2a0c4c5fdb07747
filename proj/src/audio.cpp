#include "m2f/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace m2f::audio {

namespace {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw std::runtime_error("wav: " + path + ": " + why);
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  char riff[4], wave[4];
  uint32_t riff_size;
  is.read(riff, 4);
  is.read(reinterpret_cast<char*>(&riff_size), 4);
  is.read(wave, 4);
  if (!is || std::memcmp(riff, "RIFF", 4) || std::memcmp(wave, "WAVE", 4))
    fail(path, "not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<int16_t> pcm;
  bool got_fmt = false, got_data = false;
  while (is && !(got_fmt && got_data)) {
    char id[4];
    uint32_t size;
    is.read(id, 4);
    is.read(reinterpret_cast<char*>(&size), 4);
    if (!is) break;
    if (!std::memcmp(id, "fmt ", 4)) {
      uint32_t byte_rate;
      uint16_t block_align;
      is.read(reinterpret_cast<char*>(&format), 2);
      is.read(reinterpret_cast<char*>(&channels), 2);
      is.read(reinterpret_cast<char*>(&rate), 4);
      is.read(reinterpret_cast<char*>(&byte_rate), 4);
      is.read(reinterpret_cast<char*>(&block_align), 2);
      is.read(reinterpret_cast<char*>(&bits), 2);
      if (size > 16) is.seekg(size - 16, std::ios::cur);
      got_fmt = true;
    } else if (!std::memcmp(id, "data", 4)) {
      pcm.resize(size / 2);
      is.read(reinterpret_cast<char*>(pcm.data()), std::streamsize(size));
      got_data = true;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (!got_fmt || !got_data) fail(path, "missing fmt or data chunk");
  if (format != 1 || bits != 16) fail(path, "only PCM16 supported");
  if (channels != 1) fail(path, "only mono supported");
  if (pcm.empty()) fail(path, "empty clip");

  WavData wav;
  wav.sample_rate = int(rate);
  wav.samples.resize(pcm.size());
  for (size_t i = 0; i < pcm.size(); ++i)
    wav.samples[i] = float(pcm[i]) / 32768.0f;
  return wav;
}

void write_wav(const std::string& path, const WavData& wav) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(path, "cannot open for write");
  const uint32_t data_size = uint32_t(wav.samples.size() * 2);
  os.write("RIFF", 4);
  put<uint32_t>(os, 36 + data_size);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put<uint32_t>(os, 16);
  put<uint16_t>(os, 1);  // PCM
  put<uint16_t>(os, 1);  // mono
  put<uint32_t>(os, uint32_t(wav.sample_rate));
  put<uint32_t>(os, uint32_t(wav.sample_rate * 2));
  put<uint16_t>(os, 2);
  put<uint16_t>(os, 16);
  os.write("data", 4);
  put<uint32_t>(os, data_size);
  for (float s : wav.samples) {
    const long q = std::lrint(double(s) * 32768.0);
    const int16_t v = int16_t(std::clamp<long>(q, -32768, 32767));
    put<int16_t>(os, v);
  }
  if (!os) fail(path, "write failed");
}

WavData resample(const WavData& in, int target_rate) {
  if (in.sample_rate == target_rate) return in;
  if (in.samples.empty()) throw std::runtime_error("wav: empty clip");
  WavData out;
  out.sample_rate = target_rate;
  const size_t n_out = size_t(
      std::llround(double(in.samples.size()) * target_rate / in.sample_rate));
  out.samples.resize(std::max<size_t>(n_out, 1));
  const double step = double(in.samples.size() - 1) /
                      double(std::max<size_t>(out.samples.size() - 1, 1));
  for (size_t i = 0; i < out.samples.size(); ++i) {
    const double p = double(i) * step;
    const size_t i0 = std::min(size_t(p), in.samples.size() - 1);
    const size_t i1 = std::min(i0 + 1, in.samples.size() - 1);
    const double f = p - double(i0);
    out.samples[i] = float((1.0 - f) * in.samples[i0] + f * in.samples[i1]);
  }
  return out;
}

}  // namespace m2f::audio
