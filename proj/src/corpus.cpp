#include "m2f/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace m2f::corpus {

using core::Tensor;
namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 6.283185307179586;
// fixed energy window for pose phase accumulation (log-mel floor .. 0)
constexpr double kEnergyFloor = -23.025850929940457;  // ln(1e-10)

Tensor from_f32(const std::vector<float>& v, int rows, int cols) {
  Tensor t({rows, cols});
  for (size_t i = 0; i < v.size(); ++i) t.at(i) = double(v[i]);
  return t;
}

std::vector<float> to_f32(const Tensor& t) {
  std::vector<float> v(t.size());
  for (size_t i = 0; i < t.size(); ++i) v[i] = float(t.at(i));
  return v;
}

void write_blob(const std::string& path, const std::vector<float>& v) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("corpus: cannot write " + path);
  os.write(reinterpret_cast<const char*>(v.data()),
           std::streamsize(v.size() * 4));
}

bool read_blob(const std::string& path, size_t expect, std::vector<float>* out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return false;
  is.seekg(0, std::ios::end);
  const size_t bytes = size_t(is.tellg());
  if (bytes != expect * 4) return false;
  is.seekg(0);
  out->resize(expect);
  is.read(reinterpret_cast<char*>(out->data()), std::streamsize(bytes));
  return bool(is);
}

}  // namespace

Tensor CorpusSample::features_t() const { return from_f32(features, n_frames, d_a); }
Tensor CorpusSample::latent_t() const { return from_f32(latent, n_frames, d_z); }
Tensor CorpusSample::pose_t() const { return from_f32(pose, n_frames, 6); }

Tensor CorpusSample::traj_t() const {
  Tensor t({n_frames, d_z + 6});
  for (int i = 0; i < n_frames; ++i) {
    for (int j = 0; j < d_z; ++j)
      t.at(i, j) = double(latent[size_t(i * d_z + j)]);
    for (int j = 0; j < 6; ++j)
      t.at(i, d_z + j) = double(pose[size_t(i * 6 + j)]);
  }
  return t;
}

Tensor smooth_features(const Tensor& f) {
  const int n = f.rows(), d = f.cols();
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - 2), hi = std::min(n - 1, i + 2);
    for (int j = 0; j < d; ++j) {
      double acc = 0;
      for (int k = lo; k <= hi; ++k) acc += f.at(k, j);
      out.at(i, j) = acc / (hi - lo + 1);
    }
  }
  return out;
}

void synth_oracle(const Tensor& features, const std::string& style,
                  uint64_t seed, int d_z, Tensor* latent, Tensor* pose,
                  int fps) {
  if (features.rank() != 2 || features.rows() < 1)
    throw core::ShapeError("oracle: features must be (N, d_a)");
  const int n = features.rows(), d_a = features.cols();

  // per-style affine map, seed-derived; no input centering so the map stays
  // exactly affine in the features
  Rng style_rng = Rng(seed).fork(hash64(style) ^ 0xfeedbeefull);
  const double w_scale = 0.10 / std::sqrt(double(d_a));
  Tensor w({d_z, d_a});
  for (size_t i = 0; i < w.size(); ++i) w.at(i) = style_rng.normal() * w_scale;
  std::vector<double> c(size_t(d_z), 0.0);
  for (auto& v : c) v = style_rng.normal() * 0.4;
  const double s_style = style_rng.uniform(0.6, 1.5);
  const double psi = style_rng.uniform(0.0, kTwoPi);
  const double phase0 = style_rng.uniform(0.0, kTwoPi);

  Tensor sm = smooth_features(features);
  *latent = Tensor({n, d_z});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d_z; ++k) {
      double acc = c[size_t(k)];
      for (int j = 0; j < d_a; ++j) acc += w.at(k, j) * sm.at(i, j);
      latent->at(i, k) = acc;
    }

  // nod/shake oscillations; the phase advances faster around energy peaks so
  // pose beats line up with the audio
  *pose = Tensor({n, 6});
  const double w_base = kTwoPi * 0.8 / fps;
  const double w_gain = kTwoPi * 2.2 / fps;
  const double a_nod = 0.15, a_shake = 0.10;
  double phi = phase0;
  for (int i = 0; i < n; ++i) {
    double e = 0;
    for (int j = 0; j < d_a; ++j) e += sm.at(i, j);
    e /= d_a;
    const double energy =
        std::clamp((e - kEnergyFloor) / (0.0 - kEnergyFloor), 0.0, 1.0);
    phi += w_base + w_gain * energy;
    pose->at(i, 0) = a_nod * s_style * std::sin(phi);
    pose->at(i, 1) = a_shake * s_style * std::sin(0.5 * phi + psi);
    pose->at(i, 2) = 0.3 * a_nod * s_style * std::sin(0.7 * phi + 2.0 * psi);
    // translations stay zero
  }
}

std::string split_of(const std::string& clip_id, uint64_t seed) {
  Rng r(hash64(clip_id) ^ (seed * 0x9e3779b97f4a7c15ull));
  const double u = r.uniform();
  if (u < 0.8) return "train";
  if (u < 0.9) return "val";
  return "test";
}

// ---- generation -----------------------------------------------------------------

namespace {

audio::WavData synth_audio(Rng& rng, double duration, int rate) {
  audio::WavData wav;
  wav.sample_rate = rate;
  const size_t n = size_t(duration * rate);
  std::vector<double> acc(n, 0.0);

  const int bursts = std::max(2, int(duration * rng.uniform(1.5, 3.0)));
  for (int b = 0; b < bursts; ++b) {
    const double t0 = rng.uniform(0.0, std::max(duration - 0.1, 0.1));
    const double dur = rng.uniform(0.08, 0.30);
    const double f_lo = rng.uniform(200.0, 2500.0);
    const double bw = rng.uniform(100.0, 900.0);
    const double amp = rng.uniform(0.25, 0.9);
    const int sines = 8;
    double freqs[sines], phases[sines];
    for (int s = 0; s < sines; ++s) {
      freqs[s] = f_lo + rng.uniform(0.0, bw);
      phases[s] = rng.uniform(0.0, kTwoPi);
    }
    const size_t i0 = size_t(t0 * rate);
    const size_t len = std::min(size_t(dur * rate), n - i0);
    for (size_t i = 0; i < len; ++i) {
      const double env = 0.5 - 0.5 * std::cos(kTwoPi * double(i) / double(len));
      double v = 0;
      const double t = double(i0 + i) / rate;
      for (int s = 0; s < sines; ++s)
        v += std::sin(kTwoPi * freqs[s] * t + phases[s]);
      acc[i0 + i] += amp * env * v / sines;
    }
  }
  double peak = 0;
  for (double v : acc) peak = std::max(peak, std::fabs(v));
  const double gain = peak > 0.8 ? 0.8 / peak : 1.0;
  wav.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    // quantize like the writer so stored features match a later wav read
    const long q = std::lrint(acc[i] * gain * 32768.0);
    wav.samples[i] =
        float(std::clamp<long>(q, -32768, 32767)) / 32768.0f;
  }
  return wav;
}

}  // namespace

void generate_corpus(const std::string& dir, const CorpusConfig& cfg) {
  if (cfg.n_clips < 1) throw core::ValueError("corpus: n_clips must be >= 1");
  std::vector<std::string> styles = cfg.styles;
  if (styles.empty()) styles = cond::StyleVocab::builtin().tokens();

  fs::create_directories(dir);
  fs::create_directories(dir + "/wav");
  fs::create_directories(dir + "/feat");
  fs::create_directories(dir + "/lat");
  fs::create_directories(dir + "/pose");

  cond::FeatureConfig fcfg;
  fcfg.d_a = cfg.d_a;
  cond::LogMelEncoder enc(fcfg);

  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["seed"] = cfg.seed;
  manifest["d_a"] = cfg.d_a;
  manifest["d_z"] = cfg.d_z;
  manifest["fps"] = cfg.fps;
  manifest["samples"] = nlohmann::ordered_json::array();
  int counts[3] = {0, 0, 0};

  for (int c = 0; c < cfg.n_clips; ++c) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "clip_%04d", c);
    const std::string id = idbuf;
    Rng rng = Rng(cfg.seed).fork(hash64(id));
    const double duration = rng.uniform(cfg.dur_min, cfg.dur_max);
    const std::string style =
        styles[size_t(rng.uniform_int(0, int(styles.size()) - 1))];

    audio::WavData wav = synth_audio(rng, duration, fcfg.sample_rate);
    const std::string wav_rel = "wav/" + id + ".wav";
    audio::write_wav(dir + "/" + wav_rel, wav);

    Tensor feats = cond::extract_audio_features(wav, enc, fcfg);
    Tensor lat, pose;
    synth_oracle(feats, style, cfg.seed, cfg.d_z, &lat, &pose, cfg.fps);

    write_blob(dir + "/feat/" + id + ".f32", to_f32(feats));
    write_blob(dir + "/lat/" + id + ".f32", to_f32(lat));
    write_blob(dir + "/pose/" + id + ".f32", to_f32(pose));

    const std::string split = split_of(id, cfg.seed);
    counts[split == "train" ? 0 : split == "val" ? 1 : 2]++;

    manifest["samples"].push_back({{"id", id},
                                   {"wav", wav_rel},
                                   {"style", style},
                                   {"split", split},
                                   {"n_frames", feats.rows()},
                                   {"features", "feat/" + id + ".f32"},
                                   {"latent", "lat/" + id + ".f32"},
                                   {"pose", "pose/" + id + ".f32"}});
  }
  manifest["counts"] = {{"train", counts[0]}, {"val", counts[1]},
                        {"test", counts[2]}};
  std::ofstream os(dir + "/manifest.json");
  os << manifest.dump(2) << "\n";
  if (!os) throw std::runtime_error("corpus: manifest write failed");
}

std::vector<CorpusSample> load_corpus(const std::string& dir) {
  std::vector<CorpusSample> out;
  std::ifstream is(dir + "/manifest.json");
  if (!is) {
    std::cerr << "warning: no manifest at " << dir << ", empty corpus\n";
    return out;
  }
  nlohmann::json manifest;
  is >> manifest;
  if (manifest.value("version", 0) != 1)
    throw std::runtime_error("corpus: unsupported manifest version");
  const int d_a = manifest.at("d_a");
  const int d_z = manifest.at("d_z");

  for (const auto& row : manifest.at("samples")) {
    CorpusSample s;
    s.id = row.at("id");
    s.wav_file = row.at("wav");
    s.style = row.at("style");
    s.split = row.at("split");
    s.n_frames = row.at("n_frames");
    s.d_a = d_a;
    s.d_z = d_z;
    const size_t n = size_t(s.n_frames);
    if (!read_blob(dir + "/" + row.at("features").get<std::string>(),
                   n * size_t(d_a), &s.features) ||
        !read_blob(dir + "/" + row.at("latent").get<std::string>(),
                   n * size_t(d_z), &s.latent) ||
        !read_blob(dir + "/" + row.at("pose").get<std::string>(), n * 6,
                   &s.pose)) {
      std::cerr << "warning: corpus sample " << s.id
                << " rejected (missing or malformed blob)\n";
      continue;
    }
    bool finite = true;
    for (float v : s.features) finite = finite && std::isfinite(v);
    for (float v : s.latent) finite = finite && std::isfinite(v);
    for (float v : s.pose) finite = finite && std::isfinite(v);
    if (!finite) {
      std::cerr << "warning: corpus sample " << s.id
                << " rejected (non-finite values)\n";
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace m2f::corpus
