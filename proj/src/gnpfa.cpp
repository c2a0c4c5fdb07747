#include "m2f/gnpfa.hpp"

#include <cmath>
#include <iostream>

namespace m2f::gnpfa {

using namespace m2f::core;

namespace {

Tensor flat_row(const Tensor& vxyz) {
  return vxyz.reshaped({1, int(vxyz.size())});
}

Tensor weights_row(const std::vector<double>& w) {
  return Tensor({1, int(w.size())}, std::vector<double>(w));
}

constexpr const char* kMetaKeys[] = {"meta.d_z", "meta.hidden",
                                     "meta.map_hidden", "meta.beta",
                                     "meta.geom_scale", "meta.V", "meta.K"};

}  // namespace

GeometryVae::GeometryVae(VaeConfig cfg, uint64_t init_seed) : cfg_(cfg) {
  Rng rng(init_seed);
  const int in = cfg.V * 3;
  // encoder: delta -> (mean, logvar), with a linear skip so the linear-rig
  // solution is directly representable
  make_linear(params_, "enc.l1", in, cfg.hidden, rng);
  make_linear(params_, "enc.l2", cfg.hidden, 2 * cfg.d_z, rng);
  make_linear(params_, "enc.skip", in, 2 * cfg.d_z, rng, 0.01);
  // decoder: [neutral, z] -> delta; the skip runs from z alone, which keeps
  // the linear-rig solution representable without a (3V)^2-scale matrix
  make_linear(params_, "dec.l1", in + cfg.d_z, cfg.hidden, rng);
  make_linear(params_, "dec.l2", cfg.hidden, in, rng, 0.01);
  make_linear(params_, "dec.skip", cfg.d_z, in, rng, 0.01);
  // mapping networks
  make_linear(params_, "m.l1", cfg.K, cfg.map_hidden, rng);
  make_linear(params_, "m.l2", cfg.map_hidden, cfg.d_z, rng, 0.01);
  make_linear(params_, "m.skip", cfg.K, cfg.d_z, rng);
  make_linear(params_, "mp.l1", cfg.d_z, cfg.map_hidden, rng);
  make_linear(params_, "mp.l2", cfg.map_hidden, cfg.K, rng, 0.01);
  make_linear(params_, "mp.skip", cfg.d_z, cfg.K, rng);

  params_.add("meta.d_z", Tensor::scalar(cfg.d_z));
  params_.add("meta.hidden", Tensor::scalar(cfg.hidden));
  params_.add("meta.map_hidden", Tensor::scalar(cfg.map_hidden));
  params_.add("meta.beta", Tensor::scalar(cfg.beta));
  params_.add("meta.geom_scale", Tensor::scalar(cfg.geom_scale));
  params_.add("meta.V", Tensor::scalar(cfg.V));
  params_.add("meta.K", Tensor::scalar(cfg.K));
}

GeometryVae::GeometryVae(ParamStore params) : params_(std::move(params)) {
  for (const char* k : kMetaKeys)
    if (!params_.has(k)) throw ValueError(std::string("vae: checkpoint missing ") + k);
  cfg_.d_z = int(params_.get("meta.d_z").item());
  cfg_.hidden = int(params_.get("meta.hidden").item());
  cfg_.map_hidden = int(params_.get("meta.map_hidden").item());
  cfg_.beta = params_.get("meta.beta").item();
  cfg_.geom_scale = params_.get("meta.geom_scale").item();
  cfg_.V = int(params_.get("meta.V").item());
  cfg_.K = int(params_.get("meta.K").item());
}

Tensor GeometryVae::enc_forward(const Tensor& delta_flat) const {
  auto l1 = linear_from(params_, "enc.l1");
  auto l2 = linear_from(params_, "enc.l2");
  auto skip = linear_from(params_, "enc.skip");
  return add(l2(gelu(l1(delta_flat))), skip(delta_flat));
}

Tensor GeometryVae::dec_forward(const Tensor& neutral_flat,
                                const Tensor& z) const {
  Tensor in = concat_cols({neutral_flat, z});
  auto l1 = linear_from(params_, "dec.l1");
  auto l2 = linear_from(params_, "dec.l2");
  auto skip = linear_from(params_, "dec.skip");
  Tensor delta = add(l2(gelu(l1(in))), skip(z));
  return add(neutral_flat, delta);
}

Tensor GeometryVae::m_forward(const Tensor& w) const {
  auto l1 = linear_from(params_, "m.l1");
  auto l2 = linear_from(params_, "m.l2");
  auto skip = linear_from(params_, "m.skip");
  return add(l2(gelu(l1(w))), skip(w));
}

Tensor GeometryVae::mprime_forward(const Tensor& z) const {
  auto l1 = linear_from(params_, "mp.l1");
  auto l2 = linear_from(params_, "mp.l2");
  auto skip = linear_from(params_, "mp.skip");
  return add(l2(gelu(l1(z))), skip(z));
}

EncodeResult GeometryVae::encode(const Tensor& geometry, const Tensor& neutral,
                                 bool sample, Rng* rng) const {
  if (!geometry.same_shape(neutral) || geometry.rows() != cfg_.V)
    throw ShapeError("vae encode: geometry/neutral must both be (V,3), V=" +
                     std::to_string(cfg_.V));
  Tensor delta = sub(flat_row(geometry), flat_row(neutral));
  Tensor out = enc_forward(delta);
  EncodeResult r;
  r.mean = slice_cols(out, 0, cfg_.d_z);
  r.log_var = slice_cols(out, cfg_.d_z, 2 * cfg_.d_z);
  if (sample) {
    if (!rng) throw ValueError("vae encode: sampling requires an rng");
    Tensor eps = Tensor::randn({1, cfg_.d_z}, *rng);
    r.z = add(r.mean, mul(exp_t(scale(r.log_var, 0.5)), eps));
  } else {
    r.z = r.mean;
  }
  return r;
}

Tensor GeometryVae::decode(const Tensor& neutral, const Tensor& z) const {
  check_finite(z, "vae decode");
  if (neutral.rows() != cfg_.V)
    throw ShapeError("vae decode: neutral must be (V,3)");
  Tensor flat = dec_forward(flat_row(neutral), z.reshaped({1, cfg_.d_z}));
  return flat.reshaped({cfg_.V, 3}).clone();
}

Tensor GeometryVae::decode_batch(const Tensor& neutral, const Tensor& z) const {
  check_finite(z, "vae decode");
  const int n = z.rows();
  Tensor neutral_rows({n, cfg_.V * 3});
  const Tensor nf = flat_row(neutral);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < cfg_.V * 3; ++j) neutral_rows.at(i, j) = nf.at(0, j);
  auto l1 = linear_from(params_, "dec.l1");
  auto l2 = linear_from(params_, "dec.l2");
  auto skip = linear_from(params_, "dec.skip");
  Tensor in = concat_cols({neutral_rows, z});
  Tensor delta = add(l2(gelu(l1(in))), skip(z));
  return add(neutral_rows, delta);
}

Tensor GeometryVae::map_blendshape_to_latent(const std::vector<double>& w) const {
  if (int(w.size()) != cfg_.K) throw ShapeError("M: weight count != K");
  std::vector<double> c(w);
  bool clamped = false;
  for (auto& v : c) {
    if (v < 0.0 || v > 1.0) {
      v = std::clamp(v, 0.0, 1.0);
      clamped = true;
    }
  }
  if (clamped)
    std::cerr << "warning: blendshape weights outside [0,1] clamped\n";
  return m_forward(weights_row(c));
}

std::vector<double> GeometryVae::map_latent_to_blendshape(const Tensor& z) const {
  check_finite(z, "M'");
  Tensor w = mprime_forward(z.reshaped({1, cfg_.d_z}));
  std::vector<double> out(size_t(cfg_.K));
  for (int k = 0; k < cfg_.K; ++k) out[size_t(k)] = w.at(0, k);
  return out;
}

void GeometryVae::save(const std::string& path) const {
  save_checkpoint(path, params_);
}

GeometryVae GeometryVae::load(const std::string& path) {
  return GeometryVae(load_checkpoint(path));
}

// ---- training -----------------------------------------------------------------

TrainCurves train_vae(GeometryVae& vae, const std::vector<rig::LinearRig>& rigs,
                      const VaeTrainConfig& tcfg) {
  if (rigs.empty()) throw ValueError("train_vae: need at least one rig");
  const VaeConfig& cfg = vae.config();
  for (const auto& r : rigs)
    if (r.V != cfg.V || r.K != cfg.K)
      throw ShapeError("train_vae: rig dims do not match vae config");

  const double inv_s2 = 1.0 / (cfg.geom_scale * cfg.geom_scale);
  Rng rng(tcfg.seed);
  AdamW opt({.lr = tcfg.lr, .weight_decay = tcfg.weight_decay});
  TrainCurves curves;
  double initial_total = -1.0;

  std::vector<Tensor> neutral_flat;
  for (const auto& r : rigs)
    neutral_flat.push_back(r.neutral.reshaped({1, cfg.V * 3}).clone());

  for (int step = 0; step < tcfg.steps; ++step) {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss_total, loss_real_acc, loss_blend_acc, kl_acc;
    for (int b = 0; b < tcfg.batch; ++b) {
      const size_t id = size_t(rng.uniform_int(0, int(rigs.size()) - 1));
      const auto& rg = rigs[id];
      const auto w = rig::random_weights(cfg.K, rng);
      Tensor g_flat = rg.apply(w).reshaped({1, cfg.V * 3});
      Tensor delta = sub(g_flat, neutral_flat[id]);

      // real path: encode with sampling, reconstruct
      Tensor enc_out = vae.enc_forward(delta);
      Tensor mean = slice_cols(enc_out, 0, cfg.d_z);
      Tensor log_var = slice_cols(enc_out, cfg.d_z, 2 * cfg.d_z);
      Tensor eps = Tensor::randn({1, cfg.d_z}, rng);
      Tensor z = add(mean, mul(exp_t(scale(log_var, 0.5)), eps));
      Tensor g_rec = vae.dec_forward(neutral_flat[id], z);
      Tensor l_real = scale(mse(g_rec, g_flat), inv_s2);

      // kl to the unit gaussian
      Tensor kl = scale(
          sum_all(sub(add(exp_t(log_var), mul(mean, mean)),
                      add(log_var, Tensor({1, cfg.d_z}, 1.0)))),
          0.5);

      // blendshape path: M(w) must land on the encoder latent, decode and
      // map back (gradients flow through the decoder via M's latent)
      Tensor w_row = Tensor({1, cfg.K}, std::vector<double>(w));
      Tensor z_tilde = vae.m_forward(w_row);
      Tensor g_b = vae.dec_forward(neutral_flat[id], z_tilde);
      Tensor w_back = vae.mprime_forward(z_tilde);
      Tensor l_blend = add(
          add(scale(mse(g_b, g_flat), inv_s2), mse(z_tilde, mean)),
          mse(w_back, w_row));

      Tensor item = add(add(l_real, l_blend), scale(kl, cfg.beta));
      loss_total = loss_total.defined() ? add(loss_total, item) : item;
      loss_real_acc =
          loss_real_acc.defined() ? add(loss_real_acc, l_real) : l_real;
      loss_blend_acc =
          loss_blend_acc.defined() ? add(loss_blend_acc, l_blend) : l_blend;
      kl_acc = kl_acc.defined() ? add(kl_acc, kl) : kl;
    }
    loss_total = scale(loss_total, 1.0 / tcfg.batch);
    const double total = loss_total.item();
    if (!std::isfinite(total))
      throw ValueError("train_vae: non-finite loss at step " +
                       std::to_string(step));
    if (initial_total < 0) initial_total = total;
    if (total > 1e3 * std::max(initial_total, 1e-12))
      throw ValueError("train_vae: diverged at step " + std::to_string(step) +
                       " (loss " + std::to_string(total) + ")");
    tape.backward(loss_total);
    opt.step(vae.params(), tape);

    curves.total.push_back(total);
    curves.recon_real.push_back(loss_real_acc.item() / tcfg.batch);
    curves.recon_blend.push_back(loss_blend_acc.item() / tcfg.batch);
    curves.kl.push_back(kl_acc.item() / tcfg.batch);
    if (tcfg.log_every > 0 && step % tcfg.log_every == 0)
      std::cerr << "vae step " << step << " loss " << total << "\n";
  }
  return curves;
}

}  // namespace m2f::gnpfa
