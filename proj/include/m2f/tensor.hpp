#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "m2f/rng.hpp"

namespace m2f::core {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

// Dense fp64 tensor, value semantics over shared immutable-by-convention
// storage. Ops return fresh tensors; only the optimizer mutates parameter
// storage in place (single-writer training contract).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  size_t size() const { return data_ ? data_->size() : 0; }
  int rows() const;
  int cols() const;

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double& at(size_t i) { return (*data_)[i]; }
  double at(size_t i) const { return (*data_)[i]; }
  double& at(int r, int c) { return (*data_)[size_t(r) * cols() + c]; }
  double at(int r, int c) const { return (*data_)[size_t(r) * cols() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool v) {
    requires_grad_ = v;
    return *this;
  }

  // Storage identity: parameters are identified by their buffer.
  const void* id() const { return data_.get(); }

  Tensor clone() const;
  // Same storage under a new shape (element count must match). Do not use on
  // tape-tracked tensors: gradients key on storage identity.
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

 private:
  std::shared_ptr<std::vector<double>> data_;
  Shape shape_;
  bool requires_grad_ = false;
};

// Reverse-mode tape. Node creation order is a topological order of the
// recorded graph; backward() walks it once in reverse. Gradients are keyed by
// storage identity, so long-lived parameters can be looked up after the pass.
class Tape {
 public:
  using BackFn = std::function<void(Tape&)>;

  bool tracked(const Tensor& t) const;
  // Node id for t, registering a leaf if t requires gradients. -1 otherwise.
  int node_of(const Tensor& t);
  // Register an op output and its backward closure.
  void record(Tensor& out, BackFn fn);

  void backward(const Tensor& loss);

  // Gradient of a tensor after backward(); nullptr if none was accumulated.
  const Tensor* grad(const Tensor& t) const;

  // Accumulation buffer for a node, allocated on first touch.
  Tensor& grad_buffer(int node, const Shape& shape);
  const Tensor* node_grad(int node) const;

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    BackFn fn;  // empty for leaves
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<Tensor> pinned_;  // keeps storage alive so ids stay unique
  std::unordered_map<const void*, int> index_;
};

// Scoped "current tape": ops record onto it while one is active.
Tape* current_tape();
class TapeScope {
 public:
  explicit TapeScope(Tape& t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---- ops ------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// X(N,D) + b(D) broadcast over rows
Tensor add_rows(const Tensor& x, const Tensor& b);
// X(N,D) * g(D) broadcast over rows
Tensor mul_rows(const Tensor& x, const Tensor& g);
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);
Tensor softmax_rows(const Tensor& x);
// Normalize-only layernorm over the last axis (affine composed outside).
Tensor layernorm_rows(const Tensor& x, double eps = 1e-8);
Tensor gelu(const Tensor& x);
Tensor tanh_t(const Tensor& x);
Tensor exp_t(const Tensor& x);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
// softmax(q k^T / sqrt(d)) v over full (non-causal) windows
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

inline Tensor square(const Tensor& x) { return mul(x, x); }
inline Tensor mse(const Tensor& a, const Tensor& b) {
  return mean_all(square(sub(a, b)));
}

void check_finite(const Tensor& t, const char* what);

}  // namespace m2f::core
