#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "m2f/tensor.hpp"

namespace m2f::core {

// Named parameter set with stable iteration order (declaration order), the
// unit of optimization and checkpointing.
class ParamStore {
 public:
  // Non-trainable entries (metadata, frozen stats) are checkpointed but
  // skipped by the optimizer. Names starting with "meta." or "norm." default
  // to non-trainable.
  Tensor& add(const std::string& name, Tensor t);
  Tensor& add(const std::string& name, Tensor t, bool trainable);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  size_t size() const { return tensors_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  Tensor& tensor(size_t i) { return tensors_[i]; }
  const Tensor& tensor(size_t i) const { return tensors_[i]; }
  bool trainable(size_t i) const { return trainable_[i]; }

  size_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::vector<bool> trainable_;
  std::map<std::string, size_t> index_;
};

// Binary checkpoint: magic "M2FCKPT1", u32 version, named-tensor table with
// shapes, then raw little-endian fp64 payloads in table order.
void save_checkpoint(const std::string& path, const ParamStore& params);
ParamStore load_checkpoint(const std::string& path);

// AdamW with decoupled weight decay. Moment state is per parameter slot and
// zero-initialized; a non-finite gradient skips that tensor for the step.
struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  // grads[i] may be null (treated as zero: decay still applies).
  // Returns the number of tensors skipped for non-finite gradients.
  int step(ParamStore& params, const std::vector<const Tensor*>& grads);
  int step(ParamStore& params, const Tape& tape);

  int64_t steps_taken() const { return step_; }
  AdamWConfig& config() { return cfg_; }

 private:
  AdamWConfig cfg_;
  int64_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

// ---- model building blocks --------------------------------------------------

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (out)
  Tensor operator()(const Tensor& x) const { return add_rows(matmul(x, w), b); }
};

// Registers w/b in the store under <name>.w / <name>.b.
Linear make_linear(ParamStore& ps, const std::string& name, int in, int out,
                   Rng& rng, double w_scale = -1.0 /* -1 => xavier */);
Linear linear_from(const ParamStore& ps, const std::string& name);

struct LayerNorm {
  Tensor gamma, beta;
  double eps = 1e-8;
  Tensor operator()(const Tensor& x) const {
    return add_rows(mul_rows(layernorm_rows(x, eps), gamma), beta);
  }
};
LayerNorm make_layernorm(ParamStore& ps, const std::string& name, int dim);
LayerNorm layernorm_from(const ParamStore& ps, const std::string& name);

// Per-channel affine normalizer used by the diffusion trainer.
struct Normalizer {
  std::vector<double> mean, std;
  void apply(double* row, int d) const {
    for (int j = 0; j < d; ++j) row[j] = (row[j] - mean[size_t(j)]) / std[size_t(j)];
  }
  void invert(double* row, int d) const {
    for (int j = 0; j < d; ++j) row[j] = row[j] * std[size_t(j)] + mean[size_t(j)];
  }
  Tensor normalized(const Tensor& x) const;
  Tensor denormalized(const Tensor& x) const;
  static Normalizer identity(int d);
};

// Deterministic chunked parallel map: fn(i) for i in [0,n). Results must be
// written to disjoint slots; chunk boundaries do not affect outputs.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace m2f::core
