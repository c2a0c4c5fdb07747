#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "m2f/editing.hpp"

using namespace m2f;
using namespace m2f::diffusion;
using core::Tensor;

namespace {

DenoiserPreset micro_preset() {
  DenoiserPreset p;
  p.layers = 1;
  p.heads = 2;
  p.model_dim = 16;
  p.window = 24;
  p.d_z = 4;
  p.d_a = 3;
  p.d_p = 64;
  p.T = 40;
  return p;
}

cond::PromptEmbedding prompt_of(const std::string& tok) {
  return cond::HashPromptEncoder(cond::StyleVocab::builtin(), 64).embed(tok);
}

// backend whose full-branch prediction is a constant derived from the prompt;
// makes per-prompt predictions known exactly for convexity checks
class PromptConstBackend : public DenoiseBackend {
 public:
  explicit PromptConstBackend(int d) : d_(d) {}
  Tensor predict_x0(const Tensor& x_t, int, const Tensor&,
                    const cond::PromptEmbedding& p, Branch branch) const override {
    double c = 0.0;
    if (branch == Branch::Full && !p.values.empty()) c = p.values[0];
    if (branch == Branch::AudioOnly) c = 0.25;
    Tensor out(x_t.shape(), c);
    return out;
  }
  int d_x() const override { return d_; }
  int max_window() const override { return 4096; }

 private:
  int d_;
};

}  // namespace

TEST_CASE("edit spec validation: duplicates, range, weights, finiteness") {
  editing::EditSpec spec;
  spec.keyframes.push_back({5, 1.0, std::vector<double>(10, 0.0)});
  spec.keyframes.push_back({5, 0.5, std::vector<double>(10, 0.0)});
  CHECK_THROWS(spec.validate(20, 10));
  spec.keyframes[1].frame = 25;
  CHECK_THROWS(spec.validate(20, 10));
  spec.keyframes[1].frame = 6;
  spec.keyframes[1].weight = 1.5;
  CHECK_THROWS(spec.validate(20, 10));
  spec.keyframes[1].weight = 0.5;
  spec.keyframes[1].state[3] = std::nan("");
  CHECK_THROWS(spec.validate(20, 10));
  spec.keyframes[1].state[3] = 0.0;
  CHECK_NOTHROW(spec.validate(20, 10));
}

TEST_CASE("empty edit spec equals unconstrained sampling bitwise") {
  auto p = micro_preset();
  Denoiser den(p, 2025);
  TransformerBackend backend(den);
  auto ns = cosine_schedule(p.T);
  auto norm = core::Normalizer::identity(p.d_x());
  Rng rng(3);
  Tensor feats = Tensor::randn({p.window, p.d_a}, rng);
  SampleConfig cfg;
  cfg.ddim_steps = 5;
  cfg.seed = 11;

  Tensor plain = sample_ddim(backend, ns, feats, prompt_of("calm"), cfg, norm);
  editing::EditSpec empty;
  Tensor edited = editing::inpaint_keyframes(backend, ns, feats,
                                             prompt_of("calm"), empty,
                                             p.window, 6, cfg, norm);
  REQUIRE(plain.shape() == edited.shape());
  for (size_t i = 0; i < plain.size(); ++i) CHECK(plain.at(i) == edited.at(i));
}

TEST_CASE("weight-0 keyframes equal unconstrained sampling bitwise") {
  auto p = micro_preset();
  Denoiser den(p, 4);
  TransformerBackend backend(den);
  auto ns = cosine_schedule(p.T);
  auto norm = core::Normalizer::identity(p.d_x());
  Rng rng(5);
  Tensor feats = Tensor::randn({20, p.d_a}, rng);
  SampleConfig cfg;
  cfg.ddim_steps = 4;
  cfg.seed = 21;

  Tensor plain = sample_ddim(backend, ns, feats, prompt_of("calm"), cfg, norm);
  editing::EditSpec spec;
  spec.keyframes.push_back({7, 0.0, std::vector<double>(size_t(p.d_x()), 0.3)});
  Tensor edited = editing::inpaint_keyframes(backend, ns, feats,
                                             prompt_of("calm"), spec,
                                             p.window, 6, cfg, norm);
  for (size_t i = 0; i < plain.size(); ++i) CHECK(plain.at(i) == edited.at(i));
}

TEST_CASE("weight-1 keyframe reproduced within 1e-3 per channel") {
  auto p = micro_preset();
  Denoiser den(p, 6);
  TransformerBackend backend(den);
  auto ns = cosine_schedule(p.T);
  auto norm = core::Normalizer::identity(p.d_x());
  Rng rng(7);
  Tensor feats = Tensor::randn({20, p.d_a}, rng);
  SampleConfig cfg;
  cfg.ddim_steps = 6;
  cfg.seed = 31;

  std::vector<double> target(size_t(p.d_x()));
  for (auto& v : target) v = rng.uniform(-0.5, 0.5);
  editing::EditSpec spec;
  spec.keyframes.push_back({9, 1.0, target});
  Tensor out = editing::inpaint_keyframes(backend, ns, feats, prompt_of("sad"),
                                          spec, p.window, 6, cfg, norm);
  for (int j = 0; j < p.d_x(); ++j)
    CHECK(std::fabs(out.at(9, j) - target[size_t(j)]) <= 1e-3);

  // all frames pinned at weight 1: output equals targets everywhere
  editing::EditSpec all;
  for (int i = 0; i < 20; ++i)
    all.keyframes.push_back({i, 1.0, target});
  Tensor pinned = editing::inpaint_keyframes(backend, ns, feats,
                                             prompt_of("sad"), all, p.window,
                                             6, cfg, norm);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < p.d_x(); ++j)
      CHECK(pinned.at(i, j) == target[size_t(j)]);
}

TEST_CASE("style track weights: trapezoids normalize to 1 per frame") {
  editing::StyleTrack track;
  track.ramp_frames = 6;
  track.segments.push_back({0, 50, prompt_of("happy"), "happy"});
  track.segments.push_back({50, 100, prompt_of("sad"), "sad"});
  auto w = track.layer_weights(100);
  REQUIRE(w.size() == 2);
  for (int i = 0; i < 100; ++i) {
    const double sum = w[0][size_t(i)] + w[1][size_t(i)];
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
  }
  CHECK(w[0][0] == 1.0);
  CHECK(w[1][99] == 1.0);
  CHECK(w[1][0] == 0.0);
  // ramp actually blends near the boundary
  CHECK(w[0][49] < 1.0);
  CHECK(w[0][49] > 0.0);

  // uncovered frame rejected
  editing::StyleTrack gap;
  gap.segments.push_back({0, 10, prompt_of("happy"), "happy"});
  CHECK_THROWS((void)gap.layer_weights(30));
}

TEST_CASE("single prompt with unit mask equals sample_ddim bitwise") {
  auto p = micro_preset();
  Denoiser den(p, 8);
  TransformerBackend backend(den);
  auto ns = cosine_schedule(p.T);
  auto norm = core::Normalizer::identity(p.d_x());
  Rng rng(9);
  Tensor feats = Tensor::randn({18, p.d_a}, rng);
  SampleConfig cfg;
  cfg.ddim_steps = 4;
  cfg.seed = 41;

  editing::StyleTrack track;
  track.segments.push_back({0, 18, prompt_of("excited"), "excited"});
  Tensor via_track = editing::style_inbetween(backend, ns, feats, track,
                                              p.window, 6, cfg, norm);
  Tensor direct = sample_ddim(backend, ns, feats, prompt_of("excited"), cfg,
                              norm);
  for (size_t i = 0; i < direct.size(); ++i)
    CHECK(via_track.at(i) == direct.at(i));
}

TEST_CASE("two identical prompts collapse to the single-prompt result") {
  auto p = micro_preset();
  Denoiser den(p, 10);
  TransformerBackend backend(den);
  auto ns = cosine_schedule(p.T);
  auto norm = core::Normalizer::identity(p.d_x());
  Rng rng(11);
  Tensor feats = Tensor::randn({16, p.d_a}, rng);
  SampleConfig cfg;
  cfg.ddim_steps = 4;
  cfg.seed = 51;

  editing::StyleTrack two;
  two.ramp_frames = 4;
  two.segments.push_back({0, 8, prompt_of("calm"), "calm"});
  two.segments.push_back({8, 16, prompt_of("calm"), "calm"});
  Tensor a = editing::style_inbetween(backend, ns, feats, two, p.window, 4,
                                      cfg, norm);
  Tensor b = sample_ddim(backend, ns, feats, prompt_of("calm"), cfg, norm);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("style blending is convex: outputs inside per-prompt hull each step") {
  // constant per-prompt predictions make the hull directly checkable
  PromptConstBackend backend(3);
  auto ns = cosine_schedule(30);
  auto norm = core::Normalizer::identity(3);
  const int L = 30;
  Tensor feats({L, 2}, 0.0);

  cond::PromptEmbedding p1 = cond::null_prompt(4), p2 = cond::null_prompt(4);
  p1.source = cond::PromptSource::Text;
  p2.source = cond::PromptSource::Text;
  p1.values = {0.6, 0, 0, 0};
  p2.values = {-0.4, 0, 0, 0};

  editing::StyleTrack track;
  track.ramp_frames = 8;
  track.segments.push_back({0, 15, p1, "a"});
  track.segments.push_back({15, 30, p2, "b"});

  SampleConfig cfg;
  cfg.ddim_steps = 6;
  cfg.seed = 61;
  cfg.no_cfg = true;  // isolate the per-prompt full-branch predictions
  std::vector<Tensor> steps;
  (void)editing::style_inbetween(backend, ns, feats, track, 4096, 0, cfg, norm,
                                 &steps);
  REQUIRE(!steps.empty());
  const double lo = std::min(0.6, -0.4), hi = std::max(0.6, -0.4);
  for (const auto& s : steps)
    for (size_t i = 0; i < s.size(); ++i) {
      CHECK(s.at(i) >= lo - 1e-12);
      CHECK(s.at(i) <= hi + 1e-12);
    }
}

TEST_CASE("compose: one segment equals sample_ddim; lengths add up") {
  auto p = micro_preset();
  Denoiser den(p, 12);
  TransformerBackend backend(den);
  auto ns = cosine_schedule(p.T);
  auto norm = core::Normalizer::identity(p.d_x());
  Rng rng(13);
  Tensor f1 = Tensor::randn({18, p.d_a}, rng);
  Tensor f2 = Tensor::randn({14, p.d_a}, rng);
  SampleConfig cfg;
  cfg.ddim_steps = 4;
  cfg.seed = 71;

  Tensor one = editing::compose_sequential(
      backend, ns, {{f1, prompt_of("happy")}}, 4, cfg, norm);
  Tensor direct = sample_ddim(backend, ns, f1, prompt_of("happy"), cfg, norm);
  for (size_t i = 0; i < one.size(); ++i) CHECK(one.at(i) == direct.at(i));

  const int O = 5;
  Tensor two = editing::compose_sequential(
      backend, ns, {{f1, prompt_of("happy")}, {f2, prompt_of("sad")}}, O, cfg,
      norm);
  CHECK(two.rows() == 18 + 14 - O);
  CHECK(two.all_finite());

  CHECK_THROWS((void)editing::compose_sequential(backend, ns, {}, 2, cfg, norm));
  Tensor zero({1, p.d_a}, 0.0);
  CHECK_THROWS((void)editing::compose_sequential(
      backend, ns, {{f1, prompt_of("a")}, {zero, prompt_of("b")}}, 2, cfg,
      norm));
}
