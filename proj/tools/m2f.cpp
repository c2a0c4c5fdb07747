// m2f: co-speech facial animation pipeline driver.
//
// Subcommands: gen-corpus, train-vae, train-diffusion, generate, edit,
// evaluate, bench. See --help on each. Exit codes: 2 missing checkpoint,
// 3 invalid audio, 4 config parse error, 1 anything else.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "m2f/audio.hpp"
#include "m2f/conditioning.hpp"
#include "m2f/corpus.hpp"
#include "m2f/diffusion.hpp"
#include "m2f/editing.hpp"
#include "m2f/gnpfa.hpp"
#include "m2f/kernels.hpp"
#include "m2f/metrics.hpp"
#include "m2f/rig.hpp"
#include "m2f/scheduler.hpp"

namespace fs = std::filesystem;
using namespace m2f;
using core::Tensor;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

struct CliError {
  int code;
  std::string msg;
};

[[noreturn]] void die(int code, const std::string& msg) {
  throw CliError{code, msg};
}

// ---- common option plumbing --------------------------------------------------

struct Common {
  std::string config_path;
  std::string preset = "toy";
  uint64_t seed = 1;
  double s_a = 2.5;
  double s_p = 1.5;
  int ddim_steps = 50;
  bool no_cfg = false;
  bool bypass_latent = false;
  int threads = 1;
  std::string kernels = "auto";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config file; flags override");
  app->add_option("--preset", c.preset, "model preset: toy|full")
      ->check(CLI::IsMember({"toy", "full"}));
  app->add_option("--seed", c.seed, "run seed");
  app->add_option("--sA", c.s_a, "audio guidance strength");
  app->add_option("--sP", c.s_p, "prompt guidance strength");
  app->add_option("--ddim-steps", c.ddim_steps, "DDIM step count");
  app->add_flag("--no-cfg", c.no_cfg, "disable classifier-free guidance");
  app->add_flag("--bypass-latent", c.bypass_latent,
                "diffuse blendshape weights + pose directly");
  app->add_option("--threads", c.threads, "worker threads");
  app->add_option("--kernels", c.kernels, "kernel backend: auto|scalar|avx2")
      ->check(CLI::IsMember({"auto", "scalar", "avx2"}));
}

// config file first, then flags override: re-parse defaults from json before
// CLI11 applies command-line values
void apply_config_file(const Common& c, json* out) {
  if (c.config_path.empty()) return;
  std::ifstream is(c.config_path);
  if (!is) die(4, "cannot open config file " + c.config_path);
  try {
    is >> *out;
  } catch (const std::exception& e) {
    die(4, std::string("config parse error: ") + e.what());
  }
}

template <class T>
void cfg_get(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

void select_kernels(const Common& c) {
  if (c.kernels == "scalar") kernels::select(kernels::Backend::Scalar);
  else if (c.kernels == "avx2") kernels::select(kernels::Backend::Avx2);
  else kernels::select(kernels::Backend::Auto);
}

diffusion::SampleConfig sample_config(const Common& c) {
  diffusion::SampleConfig s;
  s.guidance = {c.s_a, c.s_p};
  s.no_cfg = c.no_cfg;
  s.ddim_steps = c.ddim_steps;
  s.seed = c.seed;
  s.threads = c.threads;
  return s;
}

audio::WavData load_audio_or_die(const std::string& path) {
  if (!fs::exists(path)) die(3, "audio file not found: " + path);
  try {
    return audio::read_wav(path);
  } catch (const std::exception& e) {
    die(3, std::string("invalid audio: ") + e.what());
  }
}

gnpfa::GeometryVae load_vae_or_die(const std::string& dir) {
  const std::string path = dir + "/vae.ckpt";
  if (!fs::exists(path)) die(2, "missing checkpoint: " + path);
  return gnpfa::GeometryVae::load(path);
}

diffusion::LoadedDenoiser load_denoiser_or_die(const std::string& path) {
  if (!fs::exists(path)) die(2, "missing checkpoint: " + path);
  return diffusion::Denoiser::load(path);
}

cond::StyleVocab load_vocab(const std::string& path) {
  if (path.empty()) return cond::StyleVocab::builtin();
  try {
    return cond::StyleVocab::load(path);
  } catch (const std::exception& e) {
    die(4, std::string("vocab parse error: ") + e.what());
  }
}

// ---- edit file parsing ---------------------------------------------------------

editing::EditSpec parse_edit_spec(const std::string& path,
                                  const gnpfa::GeometryVae* vae, int d_x,
                                  bool bypass, int K, int d_z) {
  std::ifstream is(path);
  if (!is) die(4, "cannot open edit spec " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    die(4, std::string("edit spec parse error: ") + e.what());
  }
  editing::EditSpec spec;
  spec.resample = j.value("resample", 1);
  for (const auto& kf : j.value("keyframes", json::array())) {
    editing::Keyframe k;
    k.frame = kf.at("frame");
    k.weight = kf.value("weight", 1.0);
    std::vector<double> head;
    if (kf.contains("latent")) {
      if (bypass) die(4, "edit spec: latent keyframes need a latent-space model");
      head = kf.at("latent").get<std::vector<double>>();
      if (int(head.size()) != d_z) die(4, "edit spec: latent length != d_z");
    } else if (kf.contains("blendshape")) {
      auto w = kf.at("blendshape").get<std::vector<double>>();
      if (int(w.size()) != K) die(4, "edit spec: blendshape length != K");
      if (bypass) {
        head = w;
      } else {
        if (!vae) die(2, "edit spec: blendshape keyframes need --vae");
        Tensor z = vae->map_blendshape_to_latent(w);
        head.assign(z.data(), z.data() + z.size());
      }
    } else {
      die(4, "edit spec: keyframe needs 'latent' or 'blendshape'");
    }
    auto pose = kf.value("pose", std::vector<double>(6, 0.0));
    if (pose.size() != 6) die(4, "edit spec: pose must have 6 values");
    k.state = head;
    k.state.insert(k.state.end(), pose.begin(), pose.end());
    if (int(k.state.size()) != d_x) die(4, "edit spec: state length != d_x");
    spec.keyframes.push_back(std::move(k));
  }
  return spec;
}

editing::StyleTrack parse_style_track(const std::string& path,
                                      const cond::HashPromptEncoder& enc) {
  std::ifstream is(path);
  if (!is) die(4, "cannot open style track " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    die(4, std::string("style track parse error: ") + e.what());
  }
  editing::StyleTrack track;
  track.ramp_frames = j.value("ramp_frames", 20);
  for (const auto& seg : j.value("segments", json::array())) {
    editing::StyleSegment s;
    s.start = seg.at("start");
    s.end = seg.at("end");
    s.token = seg.at("prompt");
    s.prompt = enc.embed(s.token);
    track.segments.push_back(std::move(s));
  }
  if (track.segments.empty()) die(4, "style track: no segments");
  return track;
}

// ---- animation output -----------------------------------------------------------

void write_animation(const std::string& path, const Tensor& traj,
                     const gnpfa::GeometryVae* vae, bool bypass, int K,
                     int d_z, const Common& c, bool include_latents) {
  const int n = traj.rows();
  ojson j;
  j["fps"] = 30;
  j["frames"] = n;
  j["seed"] = c.seed;
  j["guidance"] = {{"s_a", c.s_a}, {"s_p", c.s_p}, {"no_cfg", c.no_cfg}};
  j["ddim_steps"] = c.ddim_steps;
  j["weights"] = ojson::array();
  j["pose"] = ojson::array();
  if (include_latents && !bypass) j["latents"] = ojson::array();

  const int head = bypass ? K : d_z;
  for (int i = 0; i < n; ++i) {
    std::vector<double> w;
    if (bypass) {
      w.resize(size_t(K));
      for (int k = 0; k < K; ++k)
        w[size_t(k)] = std::clamp(traj.at(i, k), 0.0, 1.0);
    } else {
      Tensor z({1, d_z});
      for (int k = 0; k < d_z; ++k) z.at(0, k) = traj.at(i, k);
      w = vae->map_latent_to_blendshape(z);
      for (auto& v : w) v = std::clamp(v, 0.0, 1.0);
    }
    j["weights"].push_back(w);
    std::vector<double> pose(6);
    for (int k = 0; k < 6; ++k) pose[size_t(k)] = traj.at(i, head + k);
    j["pose"].push_back(pose);
    if (include_latents && !bypass) {
      std::vector<double> z(size_t(d_z), 0.0);
      for (int k = 0; k < d_z; ++k) z[size_t(k)] = traj.at(i, k);
      j["latents"].push_back(z);
    }
  }
  std::ofstream os(path);
  os << j.dump(2) << "\n";
  if (!os) die(1, "cannot write animation " + path);
}

void export_objs(const std::string& dir, const Tensor& traj,
                 const gnpfa::GeometryVae& vae, const rig::LinearRig& rg,
                 bool bypass, int K, int d_z) {
  fs::create_directories(dir);
  for (int i = 0; i < traj.rows(); ++i) {
    Tensor geo;
    if (bypass) {
      std::vector<double> w(size_t(K), 0.0);
      for (int k = 0; k < K; ++k)
        w[size_t(k)] = std::clamp(traj.at(i, k), 0.0, 1.0);
      geo = rg.apply(w);
    } else {
      Tensor z({1, d_z});
      for (int k = 0; k < d_z; ++k) z.at(0, k) = traj.at(i, k);
      geo = vae.decode(rg.neutral, z);
    }
    char name[64];
    std::snprintf(name, sizeof(name), "/frame_%05d.obj", i);
    rig::export_obj(dir + name, geo, rg.nlat, rg.nlon);
  }
}

// ---- command implementations ------------------------------------------------------

int cmd_gen_corpus(const std::string& out, int clips, double dur_min,
                   double dur_max, uint64_t seed, int d_z) {
  corpus::CorpusConfig cfg;
  cfg.n_clips = clips;
  cfg.dur_min = dur_min;
  cfg.dur_max = dur_max;
  cfg.seed = seed;
  cfg.d_z = d_z;
  corpus::generate_corpus(out, cfg);
  std::cout << "corpus written to " << out << " (" << clips << " clips)\n";
  return 0;
}

int cmd_train_vae(const std::string& out, const std::string& rig_dir,
                  uint64_t seed, int steps, int batch, double lr, double beta,
                  int d_z, int hidden, int identities, int V, int K) {
  fs::create_directories(out);
  std::vector<rig::LinearRig> rigs;
  if (!rig_dir.empty()) {
    rigs.push_back(rig::load_rig(rig_dir));
    for (int i = 1; i < identities; ++i)
      rigs.push_back(rig::make_rig(rigs[0].V, rigs[0].K, rigs[0].seed, i));
  } else {
    for (int i = 0; i < std::max(identities, 1); ++i)
      rigs.push_back(rig::make_rig(V, K, seed, i));
  }
  gnpfa::VaeConfig vcfg;
  vcfg.d_z = d_z;
  vcfg.hidden = hidden;
  vcfg.beta = beta;
  vcfg.V = rigs[0].V;
  vcfg.K = rigs[0].K;
  gnpfa::GeometryVae vae(vcfg, seed);
  gnpfa::VaeTrainConfig tcfg;
  tcfg.steps = steps;
  tcfg.batch = batch;
  tcfg.lr = lr;
  tcfg.seed = seed;
  tcfg.num_identities = int(rigs.size());
  auto curves = gnpfa::train_vae(vae, rigs, tcfg);

  vae.save(out + "/vae.ckpt");
  rig::save_rig(out + "/rig", rigs[0]);
  ojson c;
  c["total"] = curves.total;
  c["recon_real"] = curves.recon_real;
  c["recon_blend"] = curves.recon_blend;
  c["kl"] = curves.kl;
  std::ofstream os(out + "/vae_curves.json");
  os << c.dump() << "\n";
  std::cout << "vae written to " << out << "/vae.ckpt (final loss "
            << (curves.total.empty() ? 0.0 : curves.total.back()) << ")\n";
  return 0;
}

std::vector<diffusion::TrainItem> corpus_items(
    const std::vector<corpus::CorpusSample>& samples,
    const cond::HashPromptEncoder& enc, const std::string& split,
    const gnpfa::GeometryVae* map_vae, int min_frames) {
  std::vector<diffusion::TrainItem> items;
  for (const auto& s : samples) {
    if (!split.empty() && s.split != split) continue;
    if (s.n_frames < min_frames) continue;
    diffusion::TrainItem it;
    it.features = s.features_t();
    it.prompt = enc.embed(s.style);
    if (map_vae) {
      // bypass path: ground truth becomes M'(z) weights + pose
      Tensor lat = s.latent_t();
      Tensor pose = s.pose_t();
      const int K = map_vae->config().K;
      it.traj = Tensor({s.n_frames, K + 6});
      for (int i = 0; i < s.n_frames; ++i) {
        Tensor z({1, s.d_z});
        for (int k = 0; k < s.d_z; ++k) z.at(0, k) = lat.at(i, k);
        auto w = map_vae->map_latent_to_blendshape(z);
        for (int k = 0; k < K; ++k)
          it.traj.at(i, k) = std::clamp(w[size_t(k)], 0.0, 1.0);
        for (int k = 0; k < 6; ++k) it.traj.at(i, K + k) = pose.at(i, k);
      }
    } else {
      it.traj = s.traj_t();
    }
    items.push_back(std::move(it));
  }
  return items;
}

int cmd_train_diffusion(const Common& c, const std::string& corpus_dir,
                        const std::string& out, const std::string& vae_dir,
                        int steps, int batch, double lr, double p_prompt,
                        double p_all, bool no_cfg_masking,
                        const std::string& vocab_path) {
  auto samples = corpus::load_corpus(corpus_dir);
  if (samples.empty()) die(1, "empty corpus at " + corpus_dir);
  cond::HashPromptEncoder enc(load_vocab(vocab_path));

  auto preset = diffusion::DenoiserPreset::by_name(c.preset);
  preset.bypass_latent = c.bypass_latent;
  std::optional<gnpfa::GeometryVae> vae;
  if (c.bypass_latent) {
    if (vae_dir.empty()) die(2, "bypass-latent training needs --vae");
    vae.emplace(load_vae_or_die(vae_dir));
    preset.K = vae->config().K;
  } else {
    preset.d_z = samples[0].d_z;
  }

  auto items = corpus_items(samples, enc, "train",
                            c.bypass_latent ? &*vae : nullptr, preset.window);
  if (items.empty()) die(1, "no training clips long enough for the window");

  diffusion::Denoiser den(preset, c.seed);
  auto ns = diffusion::cosine_schedule(preset.T);
  auto norm = diffusion::fit_normalizer(items);

  diffusion::DiffTrainConfig tcfg;
  tcfg.steps = steps;
  tcfg.batch = batch;
  tcfg.lr = lr;
  tcfg.p_prompt = p_prompt;
  tcfg.p_all = p_all;
  tcfg.no_cfg_masking = no_cfg_masking;
  tcfg.seed = c.seed;
  auto curves = diffusion::train_denoiser(den, ns, items, norm, tcfg);

  den.save(out, norm);
  ojson j;
  j["simple"] = curves.simple;
  j["velocity"] = curves.velocity;
  j["smooth"] = curves.smooth;
  j["total"] = curves.total;
  std::ofstream os(out + ".curves.json");
  os << j.dump() << "\n";
  std::cout << "denoiser written to " << out << " (final L_simple "
            << (curves.simple.empty() ? 0.0 : curves.simple.back()) << ")\n";
  return 0;
}

int cmd_generate(const Common& c, const std::string& audio_path,
                 const std::string& ckpt, const std::string& vae_dir,
                 const std::string& out, const std::string& prompt_tok,
                 const std::string& edit_spec_path,
                 const std::string& style_track_path,
                 const std::string& obj_dir, bool include_latents,
                 int overlap_flag, const std::string& vocab_path,
                 bool require_edit) {
  if (require_edit && edit_spec_path.empty() && style_track_path.empty())
    die(4, "edit needs --edit-spec or --style-track");

  auto loaded = load_denoiser_or_die(ckpt);
  const auto& preset = loaded.denoiser.preset();
  const bool bypass = preset.bypass_latent;

  std::optional<gnpfa::GeometryVae> vae;
  if (!vae_dir.empty()) vae.emplace(load_vae_or_die(vae_dir));
  if (!bypass && !vae) die(2, "generate needs --vae for the latent decoder");

  auto wav = load_audio_or_die(audio_path);
  cond::FeatureConfig fcfg;
  fcfg.d_a = preset.d_a;
  cond::LogMelEncoder enc_audio(fcfg);
  Tensor feats = cond::extract_audio_features(wav, enc_audio, fcfg);

  cond::HashPromptEncoder enc(load_vocab(vocab_path), preset.d_p);
  cond::PromptEmbedding prompt =
      prompt_tok.empty() ? cond::null_prompt(preset.d_p) : enc.embed(prompt_tok);

  diffusion::TransformerBackend backend(loaded.denoiser);
  auto ns = diffusion::cosine_schedule(preset.T);
  auto scfg = sample_config(c);
  const int window = preset.window;
  const int overlap = overlap_flag > 0 ? overlap_flag : window / 4;

  Tensor traj;
  if (!style_track_path.empty()) {
    auto track = parse_style_track(style_track_path, enc);
    traj = editing::style_inbetween(backend, ns, feats, track, window, overlap,
                                    scfg, loaded.norm);
  } else if (!edit_spec_path.empty()) {
    auto spec = parse_edit_spec(edit_spec_path, vae ? &*vae : nullptr,
                                preset.d_x(), bypass, preset.K, preset.d_z);
    traj = editing::inpaint_keyframes(backend, ns, feats, prompt, spec, window,
                                      overlap, scfg, loaded.norm);
  } else {
    traj = sched::denoise_long(backend, ns, feats, prompt, window, overlap,
                               scfg, loaded.norm);
  }

  write_animation(out, traj, vae ? &*vae : nullptr, bypass, preset.K,
                  preset.d_z, c, include_latents);
  if (!obj_dir.empty()) {
    if (vae_dir.empty()) die(2, "--obj-dir needs --vae (for the rig)");
    auto rg = rig::load_rig(vae_dir + "/rig");
    export_objs(obj_dir, traj, *vae, rg, bypass, preset.K, preset.d_z);
  }
  std::cout << "animation written to " << out << " (" << traj.rows()
            << " frames)\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& corpus_dir,
                 const std::string& ckpt, const std::string& vae_dir,
                 const std::string& split, const std::string& out,
                 bool with_baseline, bool self_check,
                 const std::string& vocab_path) {
  auto samples = corpus::load_corpus(corpus_dir);
  if (samples.empty()) die(1, "empty corpus at " + corpus_dir);
  auto vae = load_vae_or_die(vae_dir);
  auto rg = rig::load_rig(vae_dir + "/rig");

  std::vector<metrics::SequencePair> pairs;
  auto kind = metrics::PredKind::Latent;
  if (self_check) {
    // ground truth against itself: LVE = 0, FDD = 0, BA = 1
    for (const auto& s : samples) {
      if (!split.empty() && s.split != split) continue;
      metrics::SequencePair pair;
      pair.id = s.id;
      pair.gt = s.traj_t();
      pair.pred = pair.gt.clone();
      pairs.push_back(std::move(pair));
    }
  } else {
    auto loaded = load_denoiser_or_die(ckpt);
    const auto& preset = loaded.denoiser.preset();
    cond::HashPromptEncoder enc(load_vocab(vocab_path), preset.d_p);
    diffusion::TransformerBackend backend(loaded.denoiser);
    auto ns = diffusion::cosine_schedule(preset.T);
    for (const auto& s : samples) {
      if (!split.empty() && s.split != split) continue;
      auto scfg = sample_config(c);
      scfg.seed = c.seed ^ hash64(s.id);
      metrics::SequencePair pair;
      pair.id = s.id;
      pair.gt = s.traj_t();
      pair.pred = sched::denoise_long(backend, ns, s.features_t(),
                                      enc.embed(s.style), preset.window,
                                      preset.window / 4, scfg, loaded.norm);
      pairs.push_back(std::move(pair));
    }
    kind = preset.bypass_latent ? metrics::PredKind::Blendshape
                                : metrics::PredKind::Latent;
  }
  if (pairs.empty()) die(1, "no clips in split '" + split + "'");

  auto report = metrics::evaluate_sequences(pairs, vae, rg, kind);

  ojson j = json::parse(report.to_json());
  if (with_baseline) {
    // mean predictor over the train split
    Tensor mean_row;
    size_t count = 0;
    for (const auto& s : samples) {
      if (s.split != "train") continue;
      Tensor t = s.traj_t();
      if (!mean_row.defined()) mean_row = Tensor({1, t.cols()});
      for (int i = 0; i < t.rows(); ++i)
        for (int jc = 0; jc < t.cols(); ++jc)
          mean_row.at(0, jc) += t.at(i, jc);
      count += size_t(t.rows());
    }
    for (size_t i = 0; i < mean_row.size(); ++i) mean_row.at(i) /= double(count);
    std::vector<metrics::SequencePair> base_pairs;
    for (const auto& s : samples) {
      if (!split.empty() && s.split != split) continue;
      metrics::SequencePair pair;
      pair.id = s.id;
      pair.gt = s.traj_t();
      pair.pred = Tensor({s.n_frames, int(mean_row.size())});
      for (int i = 0; i < s.n_frames; ++i)
        for (int jc = 0; jc < int(mean_row.size()); ++jc)
          pair.pred.at(i, jc) = mean_row.at(size_t(jc));
      base_pairs.push_back(std::move(pair));
    }
    auto base = metrics::evaluate_sequences(base_pairs, vae, rg,
                                            metrics::PredKind::Latent);
    j["baseline"] = {{"lve_mm", base.lve_mm},
                     {"fdd_1e5m", base.fdd / 1e-5},
                     {"ba", base.ba}};
    std::cout << base.to_table("mean-predictor");
  }
  std::ofstream os(out);
  os << j.dump(2) << "\n";
  std::cout << report.to_table("model");
  std::cout << "report written to " << out << "\n";
  return 0;
}

int cmd_bench(const Common& c, const std::string& ckpt, int frames, int window,
              int overlap, const std::string& batches,
              const std::string& threads_list, const std::string& out) {
  std::optional<diffusion::LoadedDenoiser> loaded;
  std::optional<diffusion::Denoiser> fresh;
  const diffusion::Denoiser* den = nullptr;
  core::Normalizer norm;
  if (!ckpt.empty()) {
    loaded.emplace(load_denoiser_or_die(ckpt));
    den = &loaded->denoiser;
    norm = loaded->norm;
  } else {
    auto preset = diffusion::DenoiserPreset::by_name(c.preset);
    fresh.emplace(preset, c.seed);
    den = &*fresh;
    norm = core::Normalizer::identity(preset.d_x());
  }
  diffusion::TransformerBackend backend(*den);
  auto ns = diffusion::cosine_schedule(den->preset().T);

  sched::BenchConfig bc;
  bc.total_frames = frames;
  bc.window = window > 0 ? window : den->preset().window;
  bc.overlap = overlap >= 0 ? overlap : bc.window / 4;
  bc.ddim_steps = std::min(c.ddim_steps, den->preset().T);
  bc.seed = c.seed;
  bc.batch_sizes.clear();
  for (const auto& tok : CLI::detail::split(batches, ','))
    bc.batch_sizes.push_back(std::stoi(tok));
  bc.thread_counts.clear();
  for (const auto& tok : CLI::detail::split(threads_list, ','))
    bc.thread_counts.push_back(std::stoi(tok));

  Rng rng(c.seed);
  Tensor feats = Tensor::randn({bc.total_frames, den->preset().d_a}, rng);
  auto prompt = cond::HashPromptEncoder(cond::StyleVocab::builtin(),
                                        den->preset().d_p)
                    .embed("neutral");
  auto rep = sched::bench_throughput(backend, ns, feats, prompt, bc, norm);
  std::ofstream os(out);
  os << rep.to_json() << "\n";
  std::cout << rep.to_json() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"co-speech facial animation: latent diffusion pipeline"};
  app.require_subcommand(1);

  Common c;

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "synthesize a dataset");
  std::string gc_out = "corpus";
  int gc_clips = 200, gc_dz = 16;
  double gc_min = 2.2, gc_max = 4.0;
  gen->add_option("--out", gc_out, "output directory");
  gen->add_option("--clips", gc_clips, "clip count");
  gen->add_option("--dur-min", gc_min, "min duration seconds");
  gen->add_option("--dur-max", gc_max, "max duration seconds");
  gen->add_option("--dz", gc_dz, "latent dimension of the oracle");
  add_common(gen, c);

  // train-vae
  auto* tv = app.add_subcommand("train-vae", "train the expression latent space");
  std::string tv_out = "vae_out", tv_rig;
  int tv_steps = 3000, tv_batch = 16, tv_dz = 16, tv_hidden = 256,
      tv_ident = 4, tv_v = 512, tv_k = 24;
  double tv_lr = 2e-3, tv_beta = 1e-4;
  tv->add_option("--out", tv_out, "output directory");
  tv->add_option("--rig", tv_rig, "existing rig directory (else synthesized)");
  tv->add_option("--steps", tv_steps, "training steps");
  tv->add_option("--batch", tv_batch, "batch size");
  tv->add_option("--lr", tv_lr, "learning rate");
  tv->add_option("--beta", tv_beta, "KL weight");
  tv->add_option("--dz", tv_dz, "latent dimension");
  tv->add_option("--hidden", tv_hidden, "hidden width");
  tv->add_option("--identities", tv_ident, "rig identities to train on");
  tv->add_option("--vertices", tv_v, "rig vertex count");
  tv->add_option("--shapes", tv_k, "rig blendshape count");
  add_common(tv, c);

  // train-diffusion
  auto* td = app.add_subcommand("train-diffusion", "train the denoiser");
  std::string td_corpus = "corpus", td_out = "denoiser.ckpt", td_vae, td_vocab;
  int td_steps = 2000, td_batch = 4;
  double td_lr = 1e-3, td_pp = 0.1, td_pa = 0.1;
  bool td_nocfgmask = false;
  td->add_option("--corpus", td_corpus, "dataset directory");
  td->add_option("--out", td_out, "checkpoint path");
  td->add_option("--vae", td_vae, "vae directory (bypass-latent mode)");
  td->add_option("--steps", td_steps, "training steps");
  td->add_option("--batch", td_batch, "batch size");
  td->add_option("--lr", td_lr, "learning rate");
  td->add_option("--p-prompt", td_pp, "prompt mask probability");
  td->add_option("--p-all", td_pa, "full-condition mask probability");
  td->add_flag("--no-cfg-masking", td_nocfgmask,
               "train only the full-condition branch");
  td->add_option("--vocab", td_vocab, "style vocabulary JSON");
  add_common(td, c);

  // generate / edit
  std::string g_audio, g_ckpt = "denoiser.ckpt", g_vae, g_out = "anim.json";
  std::string g_prompt, g_edit, g_track, g_objdir, g_vocab;
  bool g_latents = false;
  int g_overlap = -1;
  auto add_gen_opts = [&](CLI::App* cmd, bool audio_required) {
    auto* opt = cmd->add_option("--audio", g_audio, "input WAV (PCM16 mono)");
    if (audio_required) opt->required();
    cmd->add_option("--checkpoint", g_ckpt, "denoiser checkpoint");
    cmd->add_option("--vae", g_vae, "vae directory");
    cmd->add_option("--out", g_out, "animation JSON path");
    cmd->add_option("--prompt", g_prompt, "style prompt token");
    cmd->add_option("--edit-spec", g_edit, "keyframe edit spec JSON");
    cmd->add_option("--style-track", g_track, "per-frame style track JSON");
    cmd->add_option("--obj-dir", g_objdir, "write per-frame OBJ meshes here");
    cmd->add_flag("--latents", g_latents, "include raw latents in the output");
    cmd->add_option("--overlap", g_overlap, "window overlap (default N/4)");
    cmd->add_option("--vocab", g_vocab, "style vocabulary JSON");
    add_common(cmd, c);
  };
  auto* gn = app.add_subcommand("generate", "audio to animation");
  add_gen_opts(gn, true);
  auto* ed = app.add_subcommand("edit", "generation with keyframe/style edits");
  add_gen_opts(ed, true);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a model against a corpus");
  std::string ev_corpus = "corpus", ev_ckpt = "denoiser.ckpt", ev_vae,
              ev_split = "test", ev_out = "report.json", ev_vocab;
  bool ev_baseline = false, ev_self = false;
  ev->add_option("--corpus", ev_corpus, "dataset directory");
  ev->add_option("--checkpoint", ev_ckpt, "denoiser checkpoint");
  ev->add_option("--vae", ev_vae, "vae directory")->required();
  ev->add_option("--split", ev_split, "split to score (train|val|test)");
  ev->add_option("--out", ev_out, "report JSON path");
  ev->add_flag("--baseline", ev_baseline, "include the mean-predictor row");
  ev->add_flag("--self", ev_self, "score ground truth against itself (sanity)");
  ev->add_option("--vocab", ev_vocab, "style vocabulary JSON");
  add_common(ev, c);

  // bench
  auto* bn = app.add_subcommand("bench", "overlapped-window throughput");
  std::string bn_ckpt, bn_out = "bench.json", bn_batches = "1,8",
              bn_threads = "1";
  int bn_frames = 1200, bn_window = -1, bn_overlap = -1;
  bn->add_option("--checkpoint", bn_ckpt, "denoiser checkpoint (else fresh)");
  bn->add_option("--frames", bn_frames, "total frames");
  bn->add_option("--window", bn_window, "window length (default preset)");
  bn->add_option("--overlap", bn_overlap, "overlap (default window/4)");
  bn->add_option("--batches", bn_batches, "comma list of batch sizes");
  bn->add_option("--thread-counts", bn_threads, "comma list of thread counts");
  bn->add_option("--out", bn_out, "report path");
  add_common(bn, c);

  CLI11_PARSE(app, argc, argv);

  try {
    // config file values become defaults; flags already parsed override them
    // only when explicitly given, so re-apply file values for unset options
    if (!c.config_path.empty()) {
      json file;
      apply_config_file(c, &file);
      CLI::App* sub = app.get_subcommands().front();
      auto maybe = [&](const char* key, auto* slot) {
        using T = std::decay_t<decltype(*slot)>;
        if (file.contains(key) && sub->count(std::string("--") + key) == 0)
          *slot = file.at(key).get<T>();
      };
      maybe("preset", &c.preset);
      maybe("seed", &c.seed);
      maybe("sA", &c.s_a);
      maybe("sP", &c.s_p);
      maybe("ddim-steps", &c.ddim_steps);
      maybe("threads", &c.threads);
      if (file.contains("no-cfg") && sub->count("--no-cfg") == 0)
        c.no_cfg = file.at("no-cfg").get<bool>();
    }
    select_kernels(c);

    if (gen->parsed())
      return cmd_gen_corpus(gc_out, gc_clips, gc_min, gc_max, c.seed, gc_dz);
    if (tv->parsed())
      return cmd_train_vae(tv_out, tv_rig, c.seed, tv_steps, tv_batch, tv_lr,
                           tv_beta, tv_dz, tv_hidden, tv_ident, tv_v, tv_k);
    if (td->parsed())
      return cmd_train_diffusion(c, td_corpus, td_out, td_vae, td_steps,
                                 td_batch, td_lr, td_pp, td_pa, td_nocfgmask,
                                 td_vocab);
    if (gn->parsed())
      return cmd_generate(c, g_audio, g_ckpt, g_vae, g_out, g_prompt, g_edit,
                          g_track, g_objdir, g_latents, g_overlap, g_vocab,
                          false);
    if (ed->parsed())
      return cmd_generate(c, g_audio, g_ckpt, g_vae, g_out, g_prompt, g_edit,
                          g_track, g_objdir, g_latents, g_overlap, g_vocab,
                          true);
    if (ev->parsed())
      return cmd_evaluate(c, ev_corpus, ev_ckpt, ev_vae, ev_split, ev_out,
                          ev_baseline, ev_self, ev_vocab);
    if (bn->parsed())
      return cmd_bench(c, bn_ckpt, bn_frames, bn_window, bn_overlap,
                       bn_batches, bn_threads, bn_out);
    std::cerr << "error: code=4 msg=\"no subcommand\"\n";
    return 4;
  } catch (const CliError& e) {
    std::cerr << "error: code=" << e.code << " msg=\"" << e.msg << "\"\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: code=1 msg=\"" << e.what() << "\"\n";
    return 1;
  }
}
