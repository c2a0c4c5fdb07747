// Acceptance suite: runs every gate end to end against a shared work
// directory and prints one pass/fail line per criterion. Nonzero exit when
// anything fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "m2f/corpus.hpp"
#include "m2f/diffusion.hpp"
#include "m2f/editing.hpp"
#include "m2f/gnpfa.hpp"
#include "m2f/metrics.hpp"
#include "m2f/scheduler.hpp"
#include "oracles.hpp"

using namespace m2f;
using core::Tensor;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what,
            const std::string& detail = "") {
  std::cout << "criterion " << criterion << ": " << (pass ? "PASS" : "FAIL")
            << " - " << what;
  if (!detail.empty()) std::cout << " (" << detail << ")";
  std::cout << std::endl;
  if (!pass) ++g_failures;
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---- shared state -----------------------------------------------------------

struct Pipeline {
  std::string work;
  std::string cli;
  std::vector<corpus::CorpusSample> samples;
  std::unique_ptr<gnpfa::GeometryVae> vae;       // pipeline vae, d_z = 16
  rig::LinearRig rig0;
  std::unique_ptr<diffusion::Denoiser> den;      // full model
  core::Normalizer norm;
  std::unique_ptr<diffusion::Denoiser> den_bypass;
  core::Normalizer norm_bypass;
  diffusion::DiffCurves curves;
  double train_seconds = 0;
};

constexpr uint64_t kSeed = 20240901;
constexpr int kClips = 200;

// ---- criterion 1: gradient correctness ---------------------------------------

bool gradcheck_ops() {
  using namespace m2f::core;
  Rng rng(17);
  Tensor x = Tensor::uniform({4, 6}, rng, -2, 2);
  Tensor y = Tensor::uniform({4, 6}, rng, -2, 2);
  Tensor m = Tensor::uniform({6, 3}, rng, -2, 2);
  Tensor vec = Tensor::uniform({6}, rng, -2, 2);

  auto check = [&](auto fn, const Tensor& probe) {
    Tensor p = probe.clone();
    p.set_requires_grad(true);
    Tape tape;
    double err;
    {
      TapeScope scope(tape);
      tape.backward(fn(p));
    }
    const Tensor* g = tape.grad(p);
    if (!g) return false;
    err = oracles::gradcheck(
        [&](const Tensor& v) {
          Tensor vv = v.clone();
          return fn(vv).item();
        },
        probe.clone(), *g);
    return err <= 1e-4;
  };

  bool ok = true;
  ok &= check([&](Tensor& t) { return mean_all(mul(add(t, y), sub(t, y))); }, x);
  ok &= check([&](Tensor& t) { return mean_all(matmul(t, m)); }, x);
  ok &= check([&](Tensor& t) { return mean_all(softmax_rows(t)); }, x);
  ok &= check([&](Tensor& t) { return mean_all(mul(layernorm_rows(t), y)); }, x);
  ok &= check([&](Tensor& t) { return mean_all(gelu(t)); }, x);
  ok &= check([&](Tensor& t) { return mean_all(tanh_t(t)); }, x);
  ok &= check([&](Tensor& t) { return mean_all(exp_t(scale(t, 0.3))); }, x);
  ok &= check([&](Tensor& t) { return mean_all(add_rows(x, t)); }, vec);
  ok &= check([&](Tensor& t) { return mean_all(mul_rows(x, t)); }, vec);
  ok &= check(
      [&](Tensor& t) { return mean_all(slice_cols(slice_rows(t, 1, 3), 2, 5)); },
      x);
  ok &= check([&](Tensor& t) { return mean_all(concat_cols({t, mul(t, t)})); },
              x);
  Tensor q = Tensor::uniform({4, 6}, rng, -1, 1);
  Tensor k = Tensor::uniform({5, 6}, rng, -1, 1);
  Tensor v = Tensor::uniform({5, 6}, rng, -1, 1);
  ok &= check([&](Tensor& t) { return mean_all(attention(t, k, v)); }, q);
  ok &= check([&](Tensor& t) { return mean_all(attention(q, t, v)); }, k);
  ok &= check([&](Tensor& t) { return mean_all(attention(q, k, t)); }, v);
  return ok;
}

bool gradcheck_denoiser(double* worst_out) {
  using namespace m2f::core;
  using namespace m2f::diffusion;
  DenoiserPreset p = DenoiserPreset::toy();
  p.T = 50;
  Denoiser den(p, 4242);
  // random output head so gradients reach every block
  {
    Rng rng(11);
    Tensor& w = den.params().get("out_proj.w");
    for (size_t i = 0; i < w.size(); ++i) w.at(i) = rng.normal() * 0.05;
  }
  Rng rng(1234);
  const int n = 12;
  Tensor x_t = Tensor::randn({n, p.d_x()}, rng);
  Tensor feats = Tensor::randn({n, p.d_a}, rng);
  cond::HashPromptEncoder enc(cond::StyleVocab::builtin(), p.d_p);
  auto prompt = enc.embed("happy");
  Tensor probe_v = Tensor::randn({n, p.d_x()}, rng);

  auto loss_fn = [&]() {
    Tensor out = den.predict(x_t, 7, feats, prompt, Branch::Full);
    return mean_all(mul(out, probe_v));
  };

  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(loss_fn());
  }

  // probe a random subset of coordinates in every parameter tensor
  double worst = 0;
  Rng pick(99);
  auto& ps = den.params();
  for (size_t pi = 0; pi < ps.size(); ++pi) {
    if (!ps.trainable(pi)) continue;
    Tensor& par = ps.tensor(pi);
    const Tensor* g = tape.grad(par);
    if (!g) continue;  // unused branch params (null embeddings)
    std::vector<size_t> coords;
    const int probes = par.size() < 4 ? int(par.size()) : 3;
    for (int c = 0; c < probes; ++c)
      coords.push_back(size_t(pick.next_u64() % par.size()));
    const double err = oracles::gradcheck_coords(
        [&](const Tensor& v) {
          Tensor saved = par.clone();
          for (size_t i = 0; i < par.size(); ++i) par.at(i) = v.at(i);
          const double out = loss_fn().item();
          for (size_t i = 0; i < par.size(); ++i) par.at(i) = saved.at(i);
          return out;
        },
        par.clone(), *g, coords);
    worst = std::max(worst, err);
  }
  // and the input path
  {
    Tensor probe = x_t.clone();
    probe.set_requires_grad(true);
    Tape t2;
    {
      TapeScope scope(t2);
      Tensor out = den.predict(probe, 7, feats, prompt, Branch::Full);
      t2.backward(mean_all(mul(out, probe_v)));
    }
    const Tensor* g = t2.grad(probe);
    std::vector<size_t> coords;
    Rng pick2(7);
    for (int c = 0; c < 24; ++c)
      coords.push_back(size_t(pick2.next_u64() % probe.size()));
    const double err = oracles::gradcheck_coords(
        [&](const Tensor& v) {
          Tensor vv = v.clone();
          Tensor out = den.predict(vv, 7, feats, prompt, Branch::Full);
          return mean_all(mul(out, probe_v)).item();
        },
        x_t.clone(), *g, coords);
    worst = std::max(worst, err);
  }
  *worst_out = worst;
  return worst <= 1e-4;
}

// ---- metric oracles (criterion 7) ---------------------------------------------

double lve_oracle(const Tensor& pred, const Tensor& gt,
                  const std::vector<int>& lips) {
  double total = 0;
  for (int i = 0; i < pred.rows(); ++i) {
    double mx = 0;
    for (int v : lips) {
      double e = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = pred.at(i, 3 * v + c) - gt.at(i, 3 * v + c);
        e += d * d;
      }
      mx = std::max(mx, std::sqrt(e));
    }
    total += mx;
  }
  return 1000.0 * total / pred.rows();
}

double fdd_oracle(const Tensor& pred, const Tensor& gt,
                  const std::vector<int>& mask, const Tensor& neutral) {
  const int n = pred.rows();
  double acc = 0;
  for (int v : mask) {
    double mp = 0, mg = 0;
    std::vector<double> dp(size_t(n), 0.0), dg(size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
      double a = 0, b = 0;
      for (int c = 0; c < 3; ++c) {
        const double x = pred.at(i, 3 * v + c) - neutral.at(size_t(3 * v + c));
        const double y = gt.at(i, 3 * v + c) - neutral.at(size_t(3 * v + c));
        a += x * x;
        b += y * y;
      }
      dp[size_t(i)] = std::sqrt(a);
      dg[size_t(i)] = std::sqrt(b);
      mp += dp[size_t(i)];
      mg += dg[size_t(i)];
    }
    mp /= n;
    mg /= n;
    double vp = 0, vg = 0;
    for (int i = 0; i < n; ++i) {
      vp += (dp[size_t(i)] - mp) * (dp[size_t(i)] - mp);
      vg += (dg[size_t(i)] - mg) * (dg[size_t(i)] - mg);
    }
    acc += std::fabs(std::sqrt(vp / n) - std::sqrt(vg / n));
  }
  return acc / double(mask.size());
}

double ba_oracle(const Tensor& pred, const Tensor& gt, double sigma,
                 double fps) {
  auto beats = [&](const Tensor& pose) {
    const int n = pose.rows();
    std::vector<double> speed(size_t(n), 0.0);
    for (int i = 1; i + 1 < n; ++i) {
      double s = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = (pose.at(i + 1, c) - pose.at(i - 1, c)) * fps / 2;
        s += d * d;
      }
      speed[size_t(i)] = std::sqrt(s);
    }
    double mx = 0;
    for (double s : speed) mx = std::max(mx, s);
    std::vector<double> out;
    for (int i = 2; i + 2 < n; ++i)
      if (speed[size_t(i - 1)] - speed[size_t(i)] > 1e-9 * mx &&
          speed[size_t(i + 1)] - speed[size_t(i)] > 1e-9 * mx)
        out.push_back(i / fps);
    return out;
  };
  auto pb = beats(pred), gb = beats(gt);
  if (pb.empty() || gb.empty()) return 0;
  double acc = 0;
  for (double b : gb) {
    double best = 1e18;
    for (double p : pb) best = std::min(best, std::fabs(b - p));
    acc += std::exp(-best * best / (2 * sigma * sigma));
  }
  return acc / double(gb.size());
}

// ---- evaluation helper (criterion 6) -------------------------------------------

metrics::EvalReport eval_model(Pipeline& pl, const diffusion::Denoiser& den,
                               const core::Normalizer& norm, bool no_cfg,
                               metrics::PredKind kind) {
  diffusion::TransformerBackend backend(den);
  auto ns = diffusion::cosine_schedule(den.preset().T);
  cond::HashPromptEncoder enc(cond::StyleVocab::builtin(), den.preset().d_p);
  std::vector<metrics::SequencePair> pairs;
  for (const auto& s : pl.samples) {
    if (s.split != "test") continue;
    diffusion::SampleConfig cfg;
    cfg.ddim_steps = 50;
    cfg.seed = kSeed ^ hash64(s.id);
    cfg.no_cfg = no_cfg;
    metrics::SequencePair pair;
    pair.id = s.id;
    pair.gt = s.traj_t();
    pair.pred = sched::denoise_long(backend, ns, s.features_t(),
                                    enc.embed(s.style), den.preset().window,
                                    den.preset().window / 4, cfg, norm);
    pairs.push_back(std::move(pair));
  }
  return metrics::evaluate_sequences(pairs, *pl.vae, pl.rig0, kind);
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli, work = "acceptance_work";
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--cli") cli = argv[i + 1];
    if (flag == "--work") work = argv[i + 1];
  }
  fs::create_directories(work);
  const double t_start = now_s();

  Pipeline pl;
  pl.work = work;
  pl.cli = cli;

  // ---- criterion 1: gradient correctness -----------------------------------
  {
    const double t0 = now_s();
    const bool ops_ok = gradcheck_ops();
    double worst = 0;
    const bool den_ok = gradcheck_denoiser(&worst);
    const double dt = now_s() - t0;
    report(1, ops_ok && den_ok && dt < 120.0,
           "fp64 finite-difference checks on every op and the toy denoiser",
           "worst rel err " + fmt(worst) + ", " + fmt(dt) + " s");
  }

  // ---- criterion 2: loss algebra --------------------------------------------
  {
    using namespace m2f::diffusion;
    Rng rng(3);
    Tensor x0 = Tensor::randn({6, 4}, rng);
    LossBreakdown bd{};
    (void)training_loss(x0, x0, {}, &bd);
    bool ok = bd.simple == 0.0 && bd.velocity == 0.0;

    Tensor ramp({5, 2});
    for (int i = 0; i < 5; ++i) {
      ramp.at(i, 0) = 0.2 + 0.4 * i;
      ramp.at(i, 1) = 1.0 - 0.3 * i;
    }
    (void)training_loss(Tensor::randn({5, 2}, rng), ramp, {}, &bd);
    ok = ok && bd.smooth <= 1e-24;

    Tensor a({3, 1}, {0.0, 1.0, 2.0});
    Tensor b({3, 1}, {0.0, 0.0, 0.0});
    (void)training_loss(a, b, {}, &bd);
    ok = ok && std::fabs(bd.simple - 5.0 / 3.0) <= 1e-12 &&
         std::fabs(bd.velocity - 1.0) <= 1e-12 && std::fabs(bd.smooth) <= 1e-12 &&
         std::fabs(bd.total - 8.0 / 3.0) <= 1e-12;
    report(2, ok, "loss algebra: identity zeros, ramp-zero smooth, 8/3 case");
  }

  // ---- criterion 3: cfg algebra ----------------------------------------------
  {
    using namespace m2f::diffusion;
    Tensor u({1}, {1.0}), a({1}, {0.0}), f({1}, {0.0});
    const double cu = cfg_combine(u, a, f, 2.5, 1.5).at(size_t(0));
    const double ca =
        cfg_combine(Tensor({1}, {0.0}), Tensor({1}, {1.0}), f, 2.5, 1.5)
            .at(size_t(0));
    const double cp =
        cfg_combine(Tensor({1}, {0.0}), a, Tensor({1}, {1.0}), 2.5, 1.5)
            .at(size_t(0));
    bool ok = cu == -3.0 && ca == 2.5 && cp == 1.5 &&
              std::fabs(cu + ca + cp - 1.0) <= 1e-15;

    // s_p = 0: bitwise prompt independence through the sampler
    DenoiserPreset p;
    p.layers = 1;
    p.heads = 2;
    p.model_dim = 16;
    p.window = 10;
    p.d_z = 4;
    p.d_a = 3;
    p.T = 30;
    Denoiser den(p, 7);
    TransformerBackend backend(den);
    auto ns = cosine_schedule(p.T);
    auto norm = core::Normalizer::identity(p.d_x());
    Rng rng(5);
    Tensor feats = Tensor::randn({8, p.d_a}, rng);
    cond::HashPromptEncoder enc(cond::StyleVocab::builtin(), p.d_p);
    SampleConfig cfg;
    cfg.guidance = {1.0, 0.0};
    cfg.ddim_steps = 5;
    cfg.seed = 3;
    Tensor s1 = sample_ddim(backend, ns, feats, enc.embed("happy"), cfg, norm);
    Tensor s2 = sample_ddim(backend, ns, feats, enc.embed("angry"), cfg, norm);
    for (size_t i = 0; i < s1.size(); ++i) ok = ok && s1.at(i) == s2.at(i);
    report(3, ok, "cfg coefficients (-3, 2.5, 1.5), sum 1, s_p=0 independence");
  }

  // ---- criterion 4: schedule --------------------------------------------------
  {
    auto ns = diffusion::cosine_schedule(500);
    bool ok = ns.alpha_bar[0] == 1.0 && ns.alpha_bar[500] >= 0.0 &&
              ns.alpha_bar[500] <= 1e-9;
    for (int t = 1; t <= 500; ++t)
      ok = ok && ns.alpha_bar[size_t(t)] < ns.alpha_bar[size_t(t) - 1];
    const double s = 0.008;
    auto f = [&](double u) {
      const double cc = std::cos((u + s) / (1.0 + s) * M_PI / 2.0);
      return cc * cc;
    };
    ok = ok && std::fabs(ns.at(250) - f(0.5) / f(0.0)) <= 1e-6;
    report(4, ok, "cosine schedule endpoints, monotone, midpoint vs formula",
           "alpha_bar[250] = " + fmt(ns.at(250)));
  }

  // ---- corpus + vae + denoiser training ---------------------------------------
  {
    const std::string cdir = work + "/corpus";
    if (!fs::exists(cdir + "/manifest.json")) {
      corpus::CorpusConfig cfg;
      cfg.n_clips = kClips;
      cfg.seed = kSeed;
      corpus::generate_corpus(cdir, cfg);
    }
    pl.samples = corpus::load_corpus(cdir);
    std::cout << "[setup] corpus: " << pl.samples.size() << " clips"
              << std::endl;
  }
  {
    std::cout << "[setup] training pipeline vae (d_z=16)..." << std::endl;
    std::vector<rig::LinearRig> rigs;
    for (int i = 0; i < 4; ++i) rigs.push_back(rig::make_rig(512, 24, kSeed, i));
    pl.rig0 = rigs[0];
    gnpfa::VaeConfig vcfg;  // d_z 16, beta 1e-4 defaults
    pl.vae = std::make_unique<gnpfa::GeometryVae>(vcfg, kSeed);
    gnpfa::VaeTrainConfig tcfg;
    tcfg.steps = 2500;
    tcfg.batch = 8;
    tcfg.seed = kSeed;
    tcfg.log_every = 0;
    gnpfa::train_vae(*pl.vae, rigs, tcfg);
    pl.vae->save(work + "/vae_a.ckpt");
    rig::save_rig(work + "/vae_a_rig", pl.rig0);
  }

  // ---- criterion 5: training sanity -------------------------------------------
  {
    std::cout << "[setup] training denoiser (toy preset, 2000 steps)..."
              << std::endl;
    auto preset = diffusion::DenoiserPreset::toy();
    pl.den = std::make_unique<diffusion::Denoiser>(preset, kSeed);
    cond::HashPromptEncoder enc(cond::StyleVocab::builtin(), preset.d_p);
    std::vector<diffusion::TrainItem> items;
    for (const auto& s : pl.samples) {
      if (s.split != "train" || s.n_frames < preset.window) continue;
      items.push_back({s.features_t(), enc.embed(s.style), s.traj_t()});
    }
    pl.norm = diffusion::fit_normalizer(items);
    diffusion::DiffTrainConfig tcfg;
    tcfg.steps = 2000;
    tcfg.batch = 8;
    tcfg.seed = kSeed;
    tcfg.log_every = 400;
    const double t0 = now_s();
    pl.curves = diffusion::train_denoiser(*pl.den, 
                                          diffusion::cosine_schedule(preset.T),
                                          items, pl.norm, tcfg);
    pl.train_seconds = now_s() - t0;
    pl.den->save(work + "/den_full.ckpt", pl.norm);

    double head = 0, tail = 0;
    for (int i = 0; i < 20; ++i) head += pl.curves.simple[size_t(i)];
    head /= 20;
    for (int i = 1900; i < 2000; ++i) tail += pl.curves.simple[size_t(i)];
    tail /= 100;
    const bool ok = head / tail >= 5.0 && pl.train_seconds <= 1800.0;
    report(5, ok, "toy training: L_simple drops >= 5x within 2000 steps",
           "drop " + fmt(head / tail) + "x, " + fmt(pl.train_seconds) + " s");
  }

  // ---- bypass-latent training (for criterion 6) --------------------------------
  {
    std::cout << "[setup] training bypass-latent ablation..." << std::endl;
    auto preset = diffusion::DenoiserPreset::toy();
    preset.bypass_latent = true;
    preset.K = 24;
    pl.den_bypass = std::make_unique<diffusion::Denoiser>(preset, kSeed + 1);
    cond::HashPromptEncoder enc(cond::StyleVocab::builtin(), preset.d_p);
    std::vector<diffusion::TrainItem> items;
    for (const auto& s : pl.samples) {
      if (s.split != "train" || s.n_frames < preset.window) continue;
      diffusion::TrainItem it;
      it.features = s.features_t();
      it.prompt = enc.embed(s.style);
      Tensor lat = s.latent_t();
      Tensor pose = s.pose_t();
      it.traj = Tensor({s.n_frames, preset.K + 6});
      for (int i = 0; i < s.n_frames; ++i) {
        Tensor z({1, s.d_z});
        for (int k = 0; k < s.d_z; ++k) z.at(0, k) = lat.at(i, k);
        auto w = pl.vae->map_latent_to_blendshape(z);
        for (int k = 0; k < preset.K; ++k)
          it.traj.at(i, k) = std::clamp(w[size_t(k)], 0.0, 1.0);
        for (int k = 0; k < 6; ++k) it.traj.at(i, preset.K + k) = pose.at(i, k);
      }
      items.push_back(std::move(it));
    }
    pl.norm_bypass = diffusion::fit_normalizer(items);
    diffusion::DiffTrainConfig tcfg;
    tcfg.steps = 2000;
    tcfg.batch = 8;
    tcfg.seed = kSeed + 1;
    tcfg.log_every = 400;
    diffusion::train_denoiser(*pl.den_bypass,
                              diffusion::cosine_schedule(preset.T), items,
                              pl.norm_bypass, tcfg);
    pl.den_bypass->save(work + "/den_bypass.ckpt", pl.norm_bypass);
  }

  // ---- criterion 6: generation fidelity + ablation direction -------------------
  {
    std::cout << "[eval] scoring model, ablations and baseline..." << std::endl;
    auto full = eval_model(pl, *pl.den, pl.norm, false, metrics::PredKind::Latent);
    auto nocfg =
        eval_model(pl, *pl.den, pl.norm, true, metrics::PredKind::Latent);
    auto bypass = eval_model(pl, *pl.den_bypass, pl.norm_bypass, false,
                             metrics::PredKind::Blendshape);

    // mean predictor over the train split
    Tensor mean_row({1, pl.samples[0].d_z + 6});
    size_t count = 0;
    for (const auto& s : pl.samples) {
      if (s.split != "train") continue;
      Tensor t = s.traj_t();
      for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j) mean_row.at(0, j) += t.at(i, j);
      count += size_t(t.rows());
    }
    for (size_t i = 0; i < mean_row.size(); ++i)
      mean_row.at(i) /= double(count);
    std::vector<metrics::SequencePair> base_pairs;
    for (const auto& s : pl.samples) {
      if (s.split != "test") continue;
      metrics::SequencePair pair;
      pair.id = s.id;
      pair.gt = s.traj_t();
      pair.pred = Tensor({s.n_frames, int(mean_row.size())});
      for (int i = 0; i < s.n_frames; ++i)
        for (size_t j = 0; j < mean_row.size(); ++j)
          pair.pred.at(i, int(j)) = mean_row.at(j);
      base_pairs.push_back(std::move(pair));
    }
    auto base = metrics::evaluate_sequences(base_pairs, *pl.vae, pl.rig0,
                                            metrics::PredKind::Latent);

    std::cout << base.to_table("mean-predictor") << full.to_table("full model")
              << nocfg.to_table("w/o cfg") << bypass.to_table("w/o latent");

    const bool fidelity = full.lve_mm <= 0.5 * base.lve_mm;
    const bool nocfg_degrades = nocfg.lve_mm > full.lve_mm ||
                                nocfg.fdd > full.fdd || nocfg.ba < full.ba;
    const bool bypass_degrades = bypass.lve_mm > full.lve_mm ||
                                 bypass.fdd > full.fdd || bypass.ba < full.ba;
    report(6, fidelity && nocfg_degrades && bypass_degrades,
           "fidelity vs mean predictor; ablations degrade",
           "LVE full " + fmt(full.lve_mm) + " vs baseline " + fmt(base.lve_mm) +
               "; no-cfg degrades " + (nocfg_degrades ? "yes" : "no") +
               "; bypass degrades " + (bypass_degrades ? "yes" : "no"));

    std::ofstream os(work + "/eval_tables.txt");
    os << base.to_table("mean-predictor") << full.to_table("full model")
       << nocfg.to_table("w/o cfg") << bypass.to_table("w/o latent");
  }

  // ---- criterion 7: metric oracles ---------------------------------------------
  {
    Rng rng(55);
    bool ok = true;
    for (int trial = 0; trial < 100; ++trial) {
      const int n = rng.uniform_int(2, 5);
      const int v = rng.uniform_int(2, 8);
      Tensor pred = Tensor::uniform({n, 3 * v}, rng, -0.1, 0.1);
      Tensor gt = Tensor::uniform({n, 3 * v}, rng, -0.1, 0.1);
      std::vector<int> mask;
      for (int i = 0; i < v; ++i)
        if (rng.uniform() < 0.6) mask.push_back(i);
      if (mask.empty()) mask.push_back(0);
      Tensor neutral = Tensor::uniform({1, 3 * v}, rng, -0.1, 0.1);
      ok = ok && std::fabs(metrics::lve_mm(pred, gt, mask) -
                           lve_oracle(pred, gt, mask)) <= 1e-9;
      ok = ok && std::fabs(metrics::fdd(pred, gt, mask, neutral) -
                           fdd_oracle(pred, gt, mask, neutral)) <= 1e-9;
    }
    for (int trial = 0; trial < 100; ++trial) {
      const int n = rng.uniform_int(8, 20);
      Tensor pred({n, 6}), gt({n, 6});
      for (int i = 0; i < n; ++i)
        for (int col = 0; col < 3; ++col) {
          pred.at(i, col) = rng.uniform(-0.3, 0.3);
          gt.at(i, col) = rng.uniform(-0.3, 0.3);
        }
      ok = ok && std::fabs(metrics::beat_align(pred, gt) -
                           ba_oracle(pred, gt, 0.1, 30)) <= 1e-9;
    }
    // hand cases
    Tensor gt1({1, 9}, 0.0), pr1({1, 9}, 0.0);
    pr1.at(0, 0) = 0.001;
    pr1.at(0, 3) = 0.002;
    ok = ok && std::fabs(metrics::lve_mm(pr1, gt1, {0, 1}) - 2.0) <= 1e-9;
    auto one_beat = [](int n, int at) {
      Tensor p({n, 6});
      for (int i = 0; i < n; ++i) {
        const double x = double(i - at);
        p.at(i, 0) = 0.1 * x * x * x / n;
      }
      return p;
    };
    ok = ok && std::fabs(metrics::beat_align(one_beat(31, 18), one_beat(31, 15),
                                             0.1, 30.0) -
                         std::exp(-0.5)) <= 1e-9;
    report(7, ok, "metrics match brute-force oracles and hand cases");
  }

  // ---- criterion 8: scheduler equivalence and seams ------------------------------
  {
    diffusion::TransformerBackend backend(*pl.den);
    auto ns = diffusion::cosine_schedule(pl.den->preset().T);
    cond::HashPromptEncoder enc(cond::StyleVocab::builtin(),
                                pl.den->preset().d_p);
    const int N = pl.den->preset().window;

    // bitwise single-window equivalence, on the trained model
    bool ok = true;
    {
      Rng rng(8);
      const auto& s0 = pl.samples[0];
      Tensor feats({N, s0.d_a});
      Tensor ff = s0.features_t();
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < s0.d_a; ++j) feats.at(i, j) = ff.at(i % ff.rows(), j);
      diffusion::SampleConfig cfg;
      cfg.ddim_steps = 25;
      cfg.seed = 77;
      Tensor a = diffusion::sample_ddim(backend, ns, feats, enc.embed("calm"),
                                        cfg, pl.norm);
      Tensor b = sched::denoise_long(backend, ns, feats, enc.embed("calm"), N,
                                     N / 4, cfg, pl.norm);
      for (size_t i = 0; i < a.size(); ++i) ok = ok && a.at(i) == b.at(i);
    }

    // partition of unity at 1e-12 over random plans
    Rng prng(9);
    for (int trial = 0; trial < 40; ++trial) {
      const int n = prng.uniform_int(2, 150);
      const int o = prng.uniform_int(0, n - 1);
      const int l = prng.uniform_int(1, 700);
      auto plan = sched::plan_windows(l, n, o);
      std::vector<double> cover(size_t(l), 0.0);
      for (size_t w = 0; w < plan.starts.size(); ++w)
        for (int j = 0; j < plan.lengths[w]; ++j)
          cover[size_t(plan.starts[w] + j)] += plan.tapers[w][size_t(j)];
      for (double cv : cover) ok = ok && std::fabs(cv - 1.0) <= 1e-12;
    }

    // seam property over 20 seeds: max second difference in blended regions
    // vs the 99th percentile of window-interior second differences
    std::cout << "[eval] seam property over 20 seeds..." << std::endl;
    const int L = 160, O = 15;
    auto plan = sched::plan_windows(L, N, O);
    std::vector<bool> blended(size_t(L), false);
    {
      std::vector<int> hits(size_t(L), 0);
      for (size_t w = 0; w < plan.starts.size(); ++w)
        for (int j = 0; j < plan.lengths[w]; ++j)
          hits[size_t(plan.starts[w] + j)]++;
      for (int i = 0; i < L; ++i) blended[size_t(i)] = hits[size_t(i)] > 1;
    }
    bool seams_ok = true;
    double worst_ratio = 0;
    for (int seed_i = 0; seed_i < 20; ++seed_i) {
      const auto& s = pl.samples[size_t(seed_i % int(pl.samples.size()))];
      Tensor feats({L, s.d_a});
      Tensor ff = s.features_t();
      for (int i = 0; i < L; ++i)
        for (int j = 0; j < s.d_a; ++j) feats.at(i, j) = ff.at(i % ff.rows(), j);
      diffusion::SampleConfig cfg;
      cfg.ddim_steps = 25;
      cfg.seed = 1000 + uint64_t(seed_i);
      Tensor out = sched::denoise_long(backend, ns, feats, enc.embed(s.style),
                                       N, O, cfg, pl.norm);
      // per-frame second-difference magnitude
      std::vector<double> sd(size_t(L), 0.0);
      for (int i = 1; i + 1 < L; ++i) {
        double acc = 0;
        for (int j = 0; j < out.cols(); ++j) {
          const double d =
              out.at(i + 1, j) - 2.0 * out.at(i, j) + out.at(i - 1, j);
          acc += d * d;
        }
        sd[size_t(i)] = std::sqrt(acc);
      }
      std::vector<double> interior;
      double max_blend = 0;
      for (int i = 1; i + 1 < L; ++i) {
        if (blended[size_t(i)] || blended[size_t(i) - 1] ||
            blended[size_t(i) + 1])
          max_blend = std::max(max_blend, sd[size_t(i)]);
        else
          interior.push_back(sd[size_t(i)]);
      }
      std::sort(interior.begin(), interior.end());
      const double p99 = interior[size_t(0.99 * double(interior.size() - 1))];
      worst_ratio = std::max(worst_ratio, max_blend / p99);
      seams_ok = seams_ok && max_blend <= 2.0 * p99;
    }
    ok = ok && seams_ok;
    report(8, ok, "single-window bitwise equality, tapers, seam property",
           "worst seam/interior-p99 ratio " + fmt(worst_ratio));
  }

  // ---- criterion 9: throughput ----------------------------------------------------
  {
    std::cout << "[bench] overlapped-window throughput..." << std::endl;
    diffusion::TransformerBackend backend(*pl.den);
    auto ns = diffusion::cosine_schedule(pl.den->preset().T);
    sched::BenchConfig bc;
    bc.total_frames = 1200;
    bc.window = pl.den->preset().window;
    bc.overlap = bc.window / 4;
    bc.ddim_steps = 8;
    const unsigned hw = std::thread::hardware_concurrency();
    bc.batch_sizes = {1, 8};
    bc.thread_counts = {1};
    if (hw >= 4) bc.thread_counts.push_back(int(hw));
    Rng rng(kSeed);
    Tensor feats = Tensor::randn({bc.total_frames, pl.den->preset().d_a}, rng);
    cond::HashPromptEncoder enc(cond::StyleVocab::builtin(),
                                pl.den->preset().d_p);
    auto rep = sched::bench_throughput(backend, ns, feats, enc.embed("neutral"),
                                       bc, pl.norm);
    std::ofstream os(work + "/bench.json");
    os << rep.to_json() << "\n";

    bool ok = rep.sequential_seconds > 0;
    double best_speedup = 0;
    for (const auto& e : rep.entries) {
      ok = ok && e.seconds > 0;
      if (e.mode == "batched" && e.batch == 8)
        best_speedup = std::max(best_speedup, e.speedup_vs_sequential);
      if (e.mode == "batched" && e.batch == 1 && e.threads == 1)
        ok = ok && e.seconds < 2.0 * rep.sequential_seconds;
    }
    if (hw >= 4) {
      ok = ok && best_speedup >= 2.0;
      report(9, ok, "batch-8 overlapped windows >= 2x vs sequential",
             "speedup " + fmt(best_speedup) + " on " + std::to_string(hw) +
                 " threads");
    } else {
      report(9, ok, "bench runs; speedup gate needs >= 4 cores (criterion text)",
             "have " + std::to_string(hw) + " core(s); batch-8 speedup " +
                 fmt(best_speedup) + "; batch-1 == sequential within noise");
    }
  }

  // ---- criterion 10: editing -------------------------------------------------------
  {
    diffusion::TransformerBackend backend(*pl.den);
    auto ns = diffusion::cosine_schedule(pl.den->preset().T);
    cond::HashPromptEncoder enc(cond::StyleVocab::builtin(),
                                pl.den->preset().d_p);
    const auto& s = pl.samples[2];
    Tensor feats = s.features_t();
    diffusion::SampleConfig cfg;
    cfg.ddim_steps = 25;
    cfg.seed = 2222;
    const int N = pl.den->preset().window;

    Tensor plain = sched::denoise_long(backend, ns, feats, enc.embed(s.style),
                                       N, N / 4, cfg, pl.norm);
    editing::EditSpec empty;
    Tensor via_edit =
        editing::inpaint_keyframes(backend, ns, feats, enc.embed(s.style),
                                   empty, N, N / 4, cfg, pl.norm);
    bool ok = true;
    for (size_t i = 0; i < plain.size(); ++i)
      ok = ok && plain.at(i) == via_edit.at(i);

    // weight-1 keyframe: target taken from the clip's ground truth
    Tensor gt = s.traj_t();
    editing::EditSpec spec;
    editing::Keyframe kf;
    kf.frame = 30;
    kf.weight = 1.0;
    for (int j = 0; j < gt.cols(); ++j) kf.state.push_back(gt.at(30, j));
    spec.keyframes.push_back(kf);
    Tensor pinned =
        editing::inpaint_keyframes(backend, ns, feats, enc.embed(s.style),
                                   spec, N, N / 4, cfg, pl.norm);
    double worst = 0;
    for (int j = 0; j < gt.cols(); ++j)
      worst = std::max(worst,
                       std::fabs(pinned.at(30, j) - kf.state[size_t(j)]));
    ok = ok && worst <= 1e-3;
    report(10, ok, "empty spec bitwise; weight-1 keyframe within 1e-3",
           "worst channel err " + fmt(worst));
  }

  // ---- criterion 11: vae gates ------------------------------------------------------
  {
    std::cout << "[setup] training beta=0, d_z=K vae for the gate..."
              << std::endl;
    gnpfa::VaeConfig vcfg;
    vcfg.d_z = 24;  // == K
    vcfg.beta = 0.0;
    gnpfa::GeometryVae vae_b(vcfg, kSeed + 7);
    auto rig_b = rig::make_rig(512, 24, kSeed + 7, 0);
    gnpfa::VaeTrainConfig tcfg;
    tcfg.steps = 3000;
    tcfg.batch = 8;
    tcfg.seed = kSeed + 7;
    tcfg.log_every = 0;
    gnpfa::train_vae(vae_b, {rig_b}, tcfg);

    Rng rng(kSeed + 8);
    double worst_rt = 0, recon_sum = 0;
    const int trials = 50;
    for (int trial = 0; trial < trials; ++trial) {
      auto w = rig::random_weights(24, rng);
      Tensor z = vae_b.map_blendshape_to_latent(w);
      auto wb = vae_b.map_latent_to_blendshape(z);
      for (int k = 0; k < 24; ++k)
        worst_rt = std::max(worst_rt, std::fabs(wb[size_t(k)] - w[size_t(k)]));
      Tensor g = rig_b.apply(w);
      auto encr = vae_b.encode(g, rig_b.neutral, false, nullptr);
      Tensor dec = vae_b.decode(rig_b.neutral, encr.z);
      double err = 0;
      for (int v = 0; v < rig_b.V; ++v) {
        double d2 = 0;
        for (int c = 0; c < 3; ++c) {
          const double d = dec.at(v, c) - g.at(v, c);
          d2 += d * d;
        }
        err += std::sqrt(d2);
      }
      recon_sum += err / rig_b.V;
    }
    const double recon_m = recon_sum / trials;
    const bool ok = worst_rt <= 0.05 && recon_m <= 0.0005;
    report(11, ok, "roundtrip <= 0.05; beta=0 d_z>=K recon <= 0.5 mm",
           "roundtrip " + fmt(worst_rt) + ", recon " + fmt(recon_m * 1000) +
               " mm");
  }

  // ---- criterion 12: end-to-end determinism via the cli ------------------------------
  {
    bool ok = !pl.cli.empty();
    if (ok) {
      const std::string wav = work + "/corpus/wav/clip_0002.wav";
      const std::string base = pl.cli + " generate --audio " + wav +
                               " --checkpoint " + work + "/den_full.ckpt" +
                               " --vae " + work + "/vae_a_dir" +
                               " --seed 31 --ddim-steps 25 --prompt happy";
      // assemble the vae directory layout the cli expects
      fs::create_directories(work + "/vae_a_dir");
      fs::copy_file(work + "/vae_a.ckpt", work + "/vae_a_dir/vae.ckpt",
                    fs::copy_options::overwrite_existing);
      fs::create_directories(work + "/vae_a_dir/rig");
      fs::copy(work + "/vae_a_rig", work + "/vae_a_dir/rig",
               fs::copy_options::overwrite_existing |
                   fs::copy_options::recursive);
      const std::string out1 = work + "/anim_run1.json";
      const std::string out2 = work + "/anim_run2.json";
      ok = ok && std::system((base + " --out " + out1 + " >/dev/null").c_str()) == 0;
      ok = ok && std::system((base + " --out " + out2 + " >/dev/null").c_str()) == 0;
      if (ok) {
        std::ifstream a(out1, std::ios::binary), b(out2, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), {});
        std::string sb((std::istreambuf_iterator<char>(b)), {});
        ok = !sa.empty() && sa == sb;
      }
    }
    report(12, ok, "cli generate twice with the same seed: byte-identical");
  }

  const double total_s = now_s() - t_start;
  std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES PRESENT")
            << " (" << fmt(total_s) << " s total)" << std::endl;
  return g_failures == 0 ? 0 : 1;
}
