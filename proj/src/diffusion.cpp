#include "m2f/diffusion.hpp"

#include "m2f/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>

namespace m2f::diffusion {

using namespace m2f::core;

// ---- losses ---------------------------------------------------------------

Tensor training_loss(const Tensor& x0, const Tensor& x0_hat,
                     const LossWeights& w, LossBreakdown* breakdown) {
  if (!x0.same_shape(x0_hat) || x0.rank() != 2)
    throw ShapeError("training_loss: shape mismatch " + x0.shape_str() +
                     " vs " + x0_hat.shape_str());
  const int n = x0.rows();
  if (n < 3 && w.smooth != 0.0)
    throw ShapeError("training_loss: smooth term needs N >= 3");
  if (n < 2) throw ShapeError("training_loss: N >= 2 required");

  Tensor l_simple = mse(x0, x0_hat);

  Tensor d_gt = sub(slice_rows(x0, 1, n), slice_rows(x0, 0, n - 1));
  Tensor d_hat = sub(slice_rows(x0_hat, 1, n), slice_rows(x0_hat, 0, n - 1));
  Tensor l_velocity = mse(d_gt, d_hat);

  Tensor total = add(scale(l_simple, w.simple), scale(l_velocity, w.velocity));
  double smooth_val = 0.0;
  if (w.smooth != 0.0) {
    Tensor a = slice_rows(x0_hat, 2, n);
    Tensor b = slice_rows(x0_hat, 1, n - 1);
    Tensor c = slice_rows(x0_hat, 0, n - 2);
    Tensor diff = w.form == SmoothForm::SecondDifference
                      ? sub(sub(add(a, c), b), b)
                      : sub(add(a, c), b);
    Tensor l_smooth = mean_all(square(diff));
    smooth_val = l_smooth.item();
    total = add(total, scale(l_smooth, w.smooth));
  }
  if (breakdown) {
    breakdown->simple = l_simple.item();
    breakdown->velocity = l_velocity.item();
    breakdown->smooth = smooth_val;
    breakdown->total = total.item();
  }
  return total;
}

// ---- guidance ----------------------------------------------------------------

Tensor cfg_combine(const Tensor& uncond, const Tensor& audio,
                   const Tensor& full, double s_a, double s_p) {
  const double cu = 1.0 - s_a - s_p;
  struct Term {
    double c;
    const Tensor* t;
    const char* name;
  };
  const Term terms[] = {
      {cu, &uncond, "uncond"}, {s_a, &audio, "audio"}, {s_p, &full, "full"}};

  const Tensor* shape_ref = nullptr;
  for (const auto& tm : terms) {
    if (tm.c == 0.0) continue;
    if (!tm.t->defined())
      throw ValueError(std::string("cfg_combine: ") + tm.name +
                       " prediction required for nonzero coefficient");
    if (shape_ref && !tm.t->same_shape(*shape_ref))
      throw ShapeError("cfg_combine: prediction shape mismatch");
    if (!shape_ref) shape_ref = tm.t;
  }
  if (!shape_ref) throw ValueError("cfg_combine: all coefficients zero");

  // single unit-coefficient term passes through bitwise
  int nonzero = 0;
  const Term* only = nullptr;
  for (const auto& tm : terms)
    if (tm.c != 0.0) {
      ++nonzero;
      only = &tm;
    }
  if (nonzero == 1 && only->c == 1.0) return only->t->clone();

  Tensor out(shape_ref->shape());
  for (const auto& tm : terms)
    if (tm.c != 0.0)
      m2f::kernels::active().axpy(tm.c, tm.t->data(), out.data(), out.size());
  return out;
}

// ---- engine --------------------------------------------------------------------

namespace {

struct KeyframePlan {
  std::vector<int> frames;
  Tensor states_norm;  // normalized
  std::vector<double> weights;
};

// per-window, per-step X0 prediction with guidance and per-frame prompt blend
Tensor window_x0(const DenoiseBackend& den, const Tensor& x_slice, int t,
                 const EngineWindow& win, const SampleConfig& cfg) {
  // dedupe identical prompt layers so convex blends of equal prompts reduce
  // to a single evaluation (bitwise match with the single-prompt path)
  std::vector<PromptLayer> layers;
  for (const auto& pl : win.prompts) {
    bool merged = false;
    for (auto& ex : layers) {
      if (ex.prompt.source == pl.prompt.source &&
          ex.prompt.values == pl.prompt.values) {
        for (size_t i = 0; i < ex.weights.size(); ++i)
          ex.weights[i] += pl.weights[i];
        merged = true;
        break;
      }
    }
    if (!merged) layers.push_back(pl);
  }

  Tensor uncond, audio;
  const double cu = 1.0 - cfg.guidance.s_a - cfg.guidance.s_p;
  if (!cfg.no_cfg) {
    if (cu != 0.0)
      uncond = den.predict_x0(x_slice, t, win.features, layers[0].prompt,
                              Branch::Uncond);
    if (cfg.guidance.s_a != 0.0)
      audio = den.predict_x0(x_slice, t, win.features, layers[0].prompt,
                             Branch::AudioOnly);
  }

  const int n = x_slice.rows(), d = x_slice.cols();
  Tensor acc({n, d});
  for (const auto& layer : layers) {
    Tensor out;
    if (cfg.no_cfg) {
      out = den.predict_x0(x_slice, t, win.features, layer.prompt, Branch::Full);
    } else {
      Tensor full;
      if (cfg.guidance.s_p != 0.0)
        full = den.predict_x0(x_slice, t, win.features, layer.prompt,
                              Branch::Full);
      out = cfg_combine(uncond, audio, full, cfg.guidance.s_a, cfg.guidance.s_p);
    }
    for (int i = 0; i < n; ++i) {
      const double w = layer.weights[size_t(i)];
      if (w == 0.0) continue;
      m2f::kernels::active().axpy(w, out.data() + size_t(i) * d,
                             acc.data() + size_t(i) * d, size_t(d));
    }
  }
  return acc;
}

void apply_keyframes_noised(Tensor& x, const KeyframePlan& plan,
                            const NoiseSchedule& ns, int t, Rng& step_rng) {
  const int d = x.cols();
  const double sa = std::sqrt(ns.at(t));
  const double sn = std::sqrt(1.0 - ns.at(t));
  for (size_t k = 0; k < plan.frames.size(); ++k) {
    const int fr = plan.frames[k];
    const double w = plan.weights[k];
    if (w == 0.0) continue;
    for (int j = 0; j < d; ++j) {
      const double noised =
          sa * plan.states_norm.at(int(k), j) + sn * step_rng.normal();
      double& cell = x.at(fr, j);
      cell = w == 1.0 ? noised : w * noised + (1.0 - w) * cell;
    }
  }
}

}  // namespace

Tensor run_windows(const DenoiseBackend& den, const NoiseSchedule& ns,
                   const std::vector<EngineWindow>& windows, int total_frames,
                   const SampleConfig& cfg, const Normalizer& norm,
                   const InpaintTargets* inpaint,
                   std::vector<Tensor>* step_outputs) {
  const int L = total_frames, d = den.d_x();
  if (windows.empty()) throw ValueError("sampler: no windows");
  {
    std::vector<double> cover(size_t(L), 0.0);
    for (const auto& w : windows) {
      if (w.len() > den.max_window())
        throw ShapeError("sampler: window exceeds positional table");
      if (w.start < 0 || w.start + w.len() > L)
        throw ShapeError("sampler: window out of range");
      if (int(w.taper.size()) != w.len() || w.prompts.empty())
        throw ShapeError("sampler: window taper/prompts malformed");
      for (const auto& pl : w.prompts)
        if (int(pl.weights.size()) != w.len())
          throw ShapeError("sampler: prompt weights malformed");
      for (int i = 0; i < w.len(); ++i) cover[size_t(w.start + i)] += w.taper[i];
    }
    for (double c : cover)
      if (std::fabs(c - 1.0) > 1e-9)
        throw ValueError("sampler: tapers do not cover every frame");
  }

  KeyframePlan plan;
  if (inpaint && !inpaint->frames.empty()) {
    plan.frames = inpaint->frames;
    plan.weights = inpaint->weights;
    plan.states_norm = norm.normalized(inpaint->states);
    for (size_t k = 0; k < plan.frames.size(); ++k)
      if (plan.frames[k] < 0 || plan.frames[k] >= L)
        throw ValueError("sampler: keyframe index out of range");
  }
  const int resample =
      (inpaint && !plan.frames.empty()) ? std::max(1, inpaint->resample) : 1;

  // initial noise, drawn per absolute frame in frame-major order
  Rng init_rng = Rng(cfg.seed).fork(hash64("init-noise"));
  Tensor x({L, d});
  for (size_t i = 0; i < x.size(); ++i) x.at(i) = init_rng.normal();

  const auto times = ddim_times(ns.T, cfg.ddim_steps);
  const int S = int(times.size()) - 1;
  std::vector<Tensor> wbuf(windows.size());

  for (int si = S; si >= 1; --si) {
    const int t = times[size_t(si)];
    const int t_next = times[size_t(si) - 1];
    for (int rep = 0; rep < resample; ++rep) {
      Rng step_rng = Rng(cfg.seed).fork(hash64("inpaint") ^
                                        (uint64_t(si) << 8) ^ uint64_t(rep));
      if (!plan.frames.empty()) apply_keyframes_noised(x, plan, ns, t, step_rng);

      // denoise all windows as one batch per step (sub-batches must not
      // change results; each window writes only its own buffer)
      const int chunk = cfg.sub_batch > 0 ? cfg.sub_batch : int(windows.size());
      for (size_t base = 0; base < windows.size(); base += size_t(chunk)) {
        const int count =
            int(std::min(windows.size() - base, size_t(chunk)));
        parallel_for(count, cfg.threads, [&](int wi) {
          const auto& win = windows[base + size_t(wi)];
          Tensor x_slice({win.len(), d});
          std::memcpy(x_slice.data(), x.data() + size_t(win.start) * d,
                      x_slice.size() * sizeof(double));
          wbuf[base + size_t(wi)] = window_x0(den, x_slice, t, win, cfg);
        });
      }

      // taper blend per absolute frame, fixed window order
      Tensor x0_blend({L, d});
      for (size_t w = 0; w < windows.size(); ++w) {
        const auto& win = windows[w];
        for (int i = 0; i < win.len(); ++i) {
          const double tw = win.taper[size_t(i)];
          m2f::kernels::active().axpy(tw, wbuf[w].data() + size_t(i) * d,
                                 x0_blend.data() + size_t(win.start + i) * d,
                                 size_t(d));
        }
      }
      if (step_outputs) step_outputs->push_back(x0_blend.clone());

      const double a_t = ns.at(t);
      const double a_n = ns.at(t_next);
      // ddim update with the implied per-frame noise of the blended estimate
      const double inv_sn = 1.0 / std::sqrt(1.0 - a_t);
      const double sa_t = std::sqrt(a_t);
      const double sa_n = std::sqrt(a_n);
      const double sn_n = std::sqrt(1.0 - a_n);
      for (size_t i = 0; i < x.size(); ++i) {
        const double eps_hat = (x.at(i) - sa_t * x0_blend.at(i)) * inv_sn;
        x.at(i) = sa_n * x0_blend.at(i) + sn_n * eps_hat;
      }
      if (rep + 1 < resample) {
        // repaint-style resampling: diffuse back up from t_next to t
        const double ratio = a_t / a_n;
        const double s_keep = std::sqrt(ratio);
        const double s_new = std::sqrt(1.0 - ratio);
        for (size_t i = 0; i < x.size(); ++i)
          x.at(i) = s_keep * x.at(i) + s_new * step_rng.normal();
      }
    }
  }

  // back to raw units; clamp rotations (columns d_x-6 .. d_x-4)
  Tensor out = norm.denormalized(x);
  const int rot0 = d - 6;
  for (int i = 0; i < L; ++i)
    for (int j = rot0; j < rot0 + 3; ++j)
      out.at(i, j) = std::clamp(out.at(i, j), -M_PI, M_PI);
  if (!out.all_finite()) throw ValueError("sampler: non-finite output");

  // weight-1 keyframes are reproduced exactly in raw units
  if (inpaint)
    for (size_t k = 0; k < plan.frames.size(); ++k) {
      const double w = plan.weights[k];
      if (w == 0.0) continue;
      for (int j = 0; j < d; ++j) {
        double& cell = out.at(plan.frames[k], j);
        const double target = inpaint->states.at(int(k), j);
        cell = w == 1.0 ? target : w * target + (1.0 - w) * cell;
      }
    }
  return out;
}

Tensor sample_ddim(const DenoiseBackend& den, const NoiseSchedule& ns,
                   const Tensor& features, const cond::PromptEmbedding& prompt,
                   const SampleConfig& cfg, const Normalizer& norm) {
  EngineWindow w;
  w.start = 0;
  w.features = features;
  PromptLayer layer;
  layer.prompt = prompt;
  layer.weights.assign(size_t(features.rows()), 1.0);
  w.prompts.push_back(std::move(layer));
  w.taper.assign(size_t(features.rows()), 1.0);
  return run_windows(den, ns, {w}, features.rows(), cfg, norm);
}

// ---- training -----------------------------------------------------------------------

Normalizer fit_normalizer(const std::vector<TrainItem>& data) {
  if (data.empty()) throw ValueError("normalizer: empty dataset");
  const int d = data[0].traj.cols();
  Normalizer n;
  n.mean.assign(size_t(d), 0.0);
  n.std.assign(size_t(d), 0.0);
  size_t count = 0;
  for (const auto& it : data) {
    for (int i = 0; i < it.traj.rows(); ++i)
      for (int j = 0; j < d; ++j) n.mean[size_t(j)] += it.traj.at(i, j);
    count += size_t(it.traj.rows());
  }
  for (auto& m : n.mean) m /= double(count);
  for (const auto& it : data)
    for (int i = 0; i < it.traj.rows(); ++i)
      for (int j = 0; j < d; ++j) {
        const double c = it.traj.at(i, j) - n.mean[size_t(j)];
        n.std[size_t(j)] += c * c;
      }
  for (auto& s : n.std) s = std::max(std::sqrt(s / double(count)), 1e-6);
  return n;
}

DiffCurves train_denoiser(Denoiser& den, const NoiseSchedule& ns,
                          const std::vector<TrainItem>& data,
                          const Normalizer& norm, const DiffTrainConfig& cfg) {
  if (data.empty()) throw ValueError("train_denoiser: empty dataset");
  const auto& preset = den.preset();
  const int n_win = preset.window, d = preset.d_x();
  for (const auto& it : data) {
    if (it.traj.cols() != d)
      throw ShapeError("train_denoiser: trajectory dim != d_x");
    if (it.traj.rows() < n_win)
      throw ShapeError("train_denoiser: clip shorter than the window");
    if (it.features.rows() != it.traj.rows())
      throw ShapeError("train_denoiser: features/trajectory length mismatch");
  }

  Rng rng(cfg.seed);
  AdamW opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  DiffCurves curves;
  double initial = -1.0;

  for (int step = 0; step < cfg.steps; ++step) {
    // linear warmup then cosine decay to final_lr_frac
    double lr = cfg.lr;
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
      lr *= double(step + 1) / cfg.warmup_steps;
    else if (cfg.final_lr_frac < 1.0 && cfg.steps > cfg.warmup_steps) {
      const double u = double(step - cfg.warmup_steps) /
                       double(cfg.steps - cfg.warmup_steps);
      lr *= cfg.final_lr_frac +
            (1.0 - cfg.final_lr_frac) * 0.5 * (1.0 + std::cos(M_PI * u));
    }
    opt.config().lr = lr;

    Tape tape;
    TapeScope scope(tape);
    Tensor loss_acc;
    LossBreakdown sum{};
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& item = data[size_t(rng.uniform_int(0, int(data.size()) - 1))];
      const int off = rng.uniform_int(0, item.traj.rows() - n_win);
      Tensor x0({n_win, d});
      for (int i = 0; i < n_win; ++i)
        for (int j = 0; j < d; ++j) x0.at(i, j) = item.traj.at(off + i, j);
      x0 = norm.normalized(x0);
      Tensor feats({n_win, preset.d_a});
      for (int i = 0; i < n_win; ++i)
        for (int j = 0; j < preset.d_a; ++j)
          feats.at(i, j) = item.features.at(off + i, j);

      cond::ConditionBundle bundle;
      if (cfg.no_cfg_masking) {
        bundle.features = feats;
        bundle.prompt = item.prompt;
      } else {
        bundle = cond::apply_condition_masks(feats, item.prompt, rng,
                                             cfg.p_prompt, cfg.p_all);
      }

      const int t = rng.uniform_int(1, preset.T);
      Tensor eps = Tensor::randn({n_win, d}, rng);
      Tensor x_t = forward_diffuse(ns, x0, t, eps);
      Tensor x0_hat = den.predict(x_t, t, bundle);
      LossBreakdown bd;
      Tensor loss = training_loss(x0, x0_hat, cfg.loss, &bd);
      sum.simple += bd.simple;
      sum.velocity += bd.velocity;
      sum.smooth += bd.smooth;
      loss_acc = loss_acc.defined() ? add(loss_acc, loss) : loss;
    }
    loss_acc = scale(loss_acc, 1.0 / cfg.batch);
    const double total = loss_acc.item();
    if (!std::isfinite(total))
      throw ValueError("train_denoiser: non-finite loss at step " +
                       std::to_string(step));
    if (initial < 0) initial = total;
    if (total > 1e3 * std::max(initial, 1e-12))
      throw ValueError("train_denoiser: diverged at step " +
                       std::to_string(step));
    tape.backward(loss_acc);
    opt.step(den.params(), tape);

    curves.simple.push_back(sum.simple / cfg.batch);
    curves.velocity.push_back(sum.velocity / cfg.batch);
    curves.smooth.push_back(sum.smooth / cfg.batch);
    curves.total.push_back(total);
    if (cfg.log_every > 0 && step % cfg.log_every == 0)
      std::cerr << "diffusion step " << step << " loss " << total
                << " (simple " << sum.simple / cfg.batch << ")\n";
  }
  return curves;
}

}  // namespace m2f::diffusion
