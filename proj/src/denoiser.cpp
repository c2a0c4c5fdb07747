#include "m2f/denoiser.hpp"

#include <cmath>

namespace m2f::diffusion {

using namespace m2f::core;

DenoiserPreset DenoiserPreset::toy() { return DenoiserPreset{}; }

DenoiserPreset DenoiserPreset::full() {
  DenoiserPreset p;
  p.name = "full";
  p.layers = 8;
  p.heads = 4;
  p.model_dim = 512;
  p.window = 200;
  p.d_z = 128;
  return p;
}

DenoiserPreset DenoiserPreset::by_name(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "full") return full();
  throw ValueError("unknown preset '" + name + "' (toy|full)");
}

namespace {

std::string lname(int l, const char* part) {
  return "layer" + std::to_string(l) + "." + part;
}

}  // namespace

Denoiser::Denoiser(DenoiserPreset preset, uint64_t init_seed)
    : preset_(preset) {
  Rng rng(init_seed);
  const int d = preset.model_dim;
  make_linear(params_, "in_proj", preset.d_x(), d, rng);
  params_.add("pos", Tensor::randn({preset.window, d}, rng, 0.02));
  params_.add("time_emb", Tensor::randn({preset.T + 1, d}, rng, 0.02));
  params_.add("null_prompt", Tensor::randn({1, preset.d_p}, rng, 0.02));
  params_.add("null_cond", Tensor::randn({1, d}, rng, 0.02));
  make_linear(params_, "proj_a", preset.d_a, d, rng);
  make_linear(params_, "proj_p", preset.d_p, d, rng);
  for (int l = 0; l < preset.layers; ++l) {
    make_layernorm(params_, lname(l, "ln1"), d);
    make_linear(params_, lname(l, "self.q"), d, d, rng);
    make_linear(params_, lname(l, "self.k"), d, d, rng);
    make_linear(params_, lname(l, "self.v"), d, d, rng);
    make_linear(params_, lname(l, "self.o"), d, d, rng);
    make_layernorm(params_, lname(l, "ln2"), d);
    make_linear(params_, lname(l, "cross.q"), d, d, rng);
    make_linear(params_, lname(l, "cross.k"), d, d, rng);
    make_linear(params_, lname(l, "cross.v"), d, d, rng);
    make_linear(params_, lname(l, "cross.o"), d, d, rng);
    make_layernorm(params_, lname(l, "ln3"), d);
    make_linear(params_, lname(l, "ffn.fc1"), d, d * preset.ffn_mult, rng);
    make_linear(params_, lname(l, "ffn.fc2"), d * preset.ffn_mult, d, rng);
  }
  make_layernorm(params_, "ln_f", d);
  // raw log-mel features are large; normalizing the condition tokens keeps
  // cross-attention logits in range from the first step
  make_layernorm(params_, "cond_ln", d);
  // zero-init output head: the untrained net predicts X0 = 0, which keeps
  // early training stable in normalized space
  make_linear(params_, "out_proj", d, preset.d_x(), rng, 0.0);

  params_.add("meta.layers", Tensor::scalar(preset.layers));
  params_.add("meta.heads", Tensor::scalar(preset.heads));
  params_.add("meta.model_dim", Tensor::scalar(preset.model_dim));
  params_.add("meta.window", Tensor::scalar(preset.window));
  params_.add("meta.d_z", Tensor::scalar(preset.d_z));
  params_.add("meta.d_a", Tensor::scalar(preset.d_a));
  params_.add("meta.d_p", Tensor::scalar(preset.d_p));
  params_.add("meta.T", Tensor::scalar(preset.T));
  params_.add("meta.ffn_mult", Tensor::scalar(preset.ffn_mult));
  params_.add("meta.bypass_latent", Tensor::scalar(preset.bypass_latent ? 1 : 0));
  params_.add("meta.K", Tensor::scalar(preset.K));
  params_.add("meta.preset_full", Tensor::scalar(preset.name == "full" ? 1 : 0));
}

Denoiser::Denoiser(ParamStore params) : params_(std::move(params)) {
  preset_.layers = int(params_.get("meta.layers").item());
  preset_.heads = int(params_.get("meta.heads").item());
  preset_.model_dim = int(params_.get("meta.model_dim").item());
  preset_.window = int(params_.get("meta.window").item());
  preset_.d_z = int(params_.get("meta.d_z").item());
  preset_.d_a = int(params_.get("meta.d_a").item());
  preset_.d_p = int(params_.get("meta.d_p").item());
  preset_.T = int(params_.get("meta.T").item());
  preset_.ffn_mult = int(params_.get("meta.ffn_mult").item());
  preset_.bypass_latent = params_.get("meta.bypass_latent").item() != 0.0;
  preset_.K = int(params_.get("meta.K").item());
  preset_.name = params_.get("meta.preset_full").item() != 0.0 ? "full" : "toy";
}

namespace {

// column-sliced multi-head attention; q_in attends to kv_in
Tensor multihead(const ParamStore& ps, const std::string& base,
                 const Tensor& q_in, const Tensor& kv_in, int heads) {
  auto wq = linear_from(ps, base + ".q");
  auto wk = linear_from(ps, base + ".k");
  auto wv = linear_from(ps, base + ".v");
  auto wo = linear_from(ps, base + ".o");
  Tensor q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
  const int d = q.cols(), hd = d / heads;
  std::vector<Tensor> outs;
  outs.reserve(size_t(heads));
  for (int h = 0; h < heads; ++h)
    outs.push_back(attention(slice_cols(q, h * hd, (h + 1) * hd),
                             slice_cols(k, h * hd, (h + 1) * hd),
                             slice_cols(v, h * hd, (h + 1) * hd)));
  return wo(concat_cols(outs));
}

}  // namespace

Tensor Denoiser::predict(const Tensor& x_t, int t,
                         const cond::ConditionBundle& cond) const {
  const auto& p = preset_;
  if (x_t.rank() != 2 || x_t.cols() != p.d_x())
    throw ShapeError("denoise: x_t must be (N," + std::to_string(p.d_x()) +
                     "), have " + x_t.shape_str());
  const int n = x_t.rows();
  if (n > p.window)
    throw ShapeError("denoise: window " + std::to_string(n) +
                     " exceeds positional table " + std::to_string(p.window));
  if (t < 0 || t > p.T) throw ValueError("denoise: t out of range");
  check_finite(x_t, "denoise");

  // condition tokens
  auto cond_ln = layernorm_from(params_, "cond_ln");
  Tensor ctokens;
  if (cond.mask_all) {
    ctokens = cond_ln(params_.get("null_cond"));
  } else {
    if (cond.features.rank() != 2 || cond.features.rows() != n ||
        cond.features.cols() != p.d_a)
      throw ShapeError("denoise: features must be (N," + std::to_string(p.d_a) +
                       ")");
    Tensor p_row;
    if (cond.mask_prompt || cond.prompt.is_null()) {
      p_row = params_.get("null_prompt");
    } else {
      if (int(cond.prompt.values.size()) != p.d_p)
        throw ShapeError("denoise: prompt dim mismatch");
      p_row = Tensor({1, p.d_p}, std::vector<double>(cond.prompt.values));
    }
    auto proj_a = linear_from(params_, "proj_a");
    auto proj_p = linear_from(params_, "proj_p");
    ctokens = cond_ln(concat_rows({proj_p(p_row), proj_a(cond.features)}));
  }

  auto in_proj = linear_from(params_, "in_proj");
  Tensor h = add(in_proj(x_t), slice_rows(params_.get("pos"), 0, n));
  h = add_rows(h, embedding(params_.get("time_emb"), {t}));

  for (int l = 0; l < p.layers; ++l) {
    auto ln1 = layernorm_from(params_, lname(l, "ln1"));
    h = add(h, multihead(params_, lname(l, "self"), ln1(h), ln1(h), p.heads));
    auto ln2 = layernorm_from(params_, lname(l, "ln2"));
    h = add(h, multihead(params_, lname(l, "cross"), ln2(h), ctokens, p.heads));
    auto ln3 = layernorm_from(params_, lname(l, "ln3"));
    auto fc1 = linear_from(params_, lname(l, "ffn.fc1"));
    auto fc2 = linear_from(params_, lname(l, "ffn.fc2"));
    h = add(h, fc2(gelu(fc1(ln3(h)))));
  }
  auto ln_f = layernorm_from(params_, "ln_f");
  auto out_proj = linear_from(params_, "out_proj");
  return out_proj(ln_f(h));
}

Tensor Denoiser::predict(const Tensor& x_t, int t, const Tensor& features,
                         const cond::PromptEmbedding& prompt,
                         Branch branch) const {
  cond::ConditionBundle b;
  b.features = features;
  b.prompt = prompt;
  b.mask_prompt = branch == Branch::AudioOnly;
  b.mask_all = branch == Branch::Uncond;
  return predict(x_t, t, b);
}

void Denoiser::save(const std::string& path, const Normalizer& norm) const {
  ParamStore out;
  for (size_t i = 0; i < params_.size(); ++i)
    out.add(params_.name(i), params_.tensor(i).clone(), params_.trainable(i));
  const int d = preset_.d_x();
  if (int(norm.mean.size()) != d || int(norm.std.size()) != d)
    throw ShapeError("denoiser save: normalizer dim mismatch");
  out.add("norm.mean", Tensor({d}, std::vector<double>(norm.mean)), false);
  out.add("norm.std", Tensor({d}, std::vector<double>(norm.std)), false);
  save_checkpoint(path, out);
}

LoadedDenoiser Denoiser::load(const std::string& path) {
  ParamStore ps = load_checkpoint(path);
  Normalizer norm;
  {
    const Tensor& m = ps.get("norm.mean");
    const Tensor& s = ps.get("norm.std");
    norm.mean.assign(m.data(), m.data() + m.size());
    norm.std.assign(s.data(), s.data() + s.size());
  }
  return LoadedDenoiser{Denoiser(std::move(ps)), std::move(norm)};
}

}  // namespace m2f::diffusion
