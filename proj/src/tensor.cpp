#include "m2f/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "m2f/kernels.hpp"

namespace m2f::core {

namespace {

size_t shape_elems(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension");
    n *= size_t(d);
  }
  return n;
}

thread_local Tape* t_current = nullptr;

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                   " vs " + b.shape_str());
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill)
    : data_(std::make_shared<std::vector<double>>(shape_elems(shape), fill)),
      shape_(std::move(shape)) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : data_(std::make_shared<std::vector<double>>(std::move(values))),
      shape_(std::move(shape)) {
  if (shape_elems(shape_) != data_->size())
    throw ShapeError("tensor: value count does not match shape");
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : *t.data_) v = rng.normal() * stddev;
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : *t.data_) v = rng.uniform(lo, hi);
  return t;
}

int Tensor::rows() const { return shape_.empty() ? 1 : shape_[0]; }

int Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() == 2) return shape_[1];
  throw ShapeError("tensor: cols() needs rank <= 2, have " + shape_str());
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("tensor: item() on non-scalar " + shape_str());
  return (*data_)[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  if (data_) {
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    t.shape_ = shape_;
  }
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_elems(shape) != size())
    throw ShapeError("reshape: element count mismatch");
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : *data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape_.size(); ++i)
    os << shape_[i] << (i + 1 < shape_.size() ? "," : "");
  os << ')';
  return os.str();
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite())
    throw ValueError(std::string(what) + ": non-finite input rejected");
}

// ---- Tape ------------------------------------------------------------------

Tape* current_tape() { return t_current; }

TapeScope::TapeScope(Tape& t) : prev_(t_current) { t_current = &t; }
TapeScope::~TapeScope() { t_current = prev_; }

bool Tape::tracked(const Tensor& t) const {
  return t.requires_grad() || index_.count(t.id()) > 0;
}

int Tape::node_of(const Tensor& t) {
  auto it = index_.find(t.id());
  if (it != index_.end()) return it->second;
  if (!t.requires_grad()) return -1;
  int id = int(nodes_.size());
  nodes_.push_back({});
  pinned_.push_back(t);
  index_.emplace(t.id(), id);
  return id;
}

void Tape::record(Tensor& out, BackFn fn) {
  int id = int(nodes_.size());
  nodes_.push_back({std::move(fn)});
  pinned_.push_back(out);
  index_.emplace(out.id(), id);
  out.set_requires_grad(true);
}

Tensor& Tape::grad_buffer(int node, const Shape& shape) {
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  if (!grads_[size_t(node)].defined()) grads_[size_t(node)] = Tensor(shape);
  return grads_[size_t(node)];
}

const Tensor* Tape::node_grad(int node) const {
  if (node < 0 || size_t(node) >= grads_.size()) return nullptr;
  return grads_[size_t(node)].defined() ? &grads_[size_t(node)] : nullptr;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, have " + loss.shape_str());
  auto it = index_.find(loss.id());
  if (it == index_.end())
    throw ValueError("backward: loss is not recorded on this tape");
  grads_.assign(nodes_.size(), Tensor());
  grad_buffer(it->second, loss.shape()).at(size_t(0)) = 1.0;
  for (int id = int(nodes_.size()) - 1; id >= 0; --id) {
    if (!grads_[size_t(id)].defined()) continue;  // not reachable from loss
    if (nodes_[size_t(id)].fn) nodes_[size_t(id)].fn(*this);
  }
}

const Tensor* Tape::grad(const Tensor& t) const {
  auto it = index_.find(t.id());
  if (it == index_.end()) return nullptr;
  return node_grad(it->second);
}

// ---- op helpers ------------------------------------------------------------

namespace {

struct Rec {
  Tape* tape = nullptr;
  int na = -1, nb = -1;
  explicit operator bool() const { return tape != nullptr; }
};

Rec maybe_track(const Tensor& a) {
  Tape* tp = t_current;
  if (!tp || !tp->tracked(a)) return {};
  return {tp, tp->node_of(a), -1};
}

Rec maybe_track(const Tensor& a, const Tensor& b) {
  Tape* tp = t_current;
  if (!tp) return {};
  const bool ta = tp->tracked(a), tb = tp->tracked(b);
  if (!ta && !tb) return {};
  return {tp, ta ? tp->node_of(a) : -1, tb ? tp->node_of(b) : -1};
}

void accum(Tape& tp, int node, const Shape& shape, const double* src,
           size_t n) {
  Tensor& g = tp.grad_buffer(node, shape);
  kernels::active().axpy(1.0, src, g.data(), n);
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail("add", a, b);
  Tensor out(a.shape());
  kernels::active().add(a.data(), b.data(), out.data(), a.size());
  if (Rec r = maybe_track(a, b)) {
    r.tape->record(out, [out, a, b, r](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      if (r.na >= 0) accum(tp, r.na, a.shape(), go->data(), go->size());
      if (r.nb >= 0) accum(tp, r.nb, b.shape(), go->data(), go->size());
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail("sub", a, b);
  Tensor out(a.shape());
  kernels::active().sub(a.data(), b.data(), out.data(), a.size());
  if (Rec r = maybe_track(a, b)) {
    r.tape->record(out, [out, a, b, r](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      if (r.na >= 0) accum(tp, r.na, a.shape(), go->data(), go->size());
      if (r.nb >= 0) {
        Tensor& g = tp.grad_buffer(r.nb, b.shape());
        kernels::active().axpy(-1.0, go->data(), g.data(), go->size());
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail("mul", a, b);
  Tensor out(a.shape());
  kernels::active().mul(a.data(), b.data(), out.data(), a.size());
  if (Rec r = maybe_track(a, b)) {
    r.tape->record(out, [out, a, b, r](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      const size_t n = a.size();
      if (r.na >= 0) {
        Tensor& g = tp.grad_buffer(r.na, a.shape());
        for (size_t i = 0; i < n; ++i) g.at(i) += go->at(i) * b.at(i);
      }
      if (r.nb >= 0) {
        Tensor& g = tp.grad_buffer(r.nb, b.shape());
        for (size_t i = 0; i < n; ++i) g.at(i) += go->at(i) * a.at(i);
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  kernels::active().scale(s, a.data(), out.data(), a.size());
  if (Rec r = maybe_track(a)) {
    r.tape->record(out, [out, a, s, r](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, a.shape());
      kernels::active().axpy(s, go->data(), g.data(), go->size());
    });
  }
  return out;
}

Tensor add_rows(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.size() != size_t(x.cols()))
    shape_fail("add_rows", x, b);
  Tensor out(x.shape());
  const int n = x.rows(), d = x.cols();
  for (int i = 0; i < n; ++i)
    kernels::active().add(x.data() + size_t(i) * d, b.data(),
                          out.data() + size_t(i) * d, size_t(d));
  if (Rec r = maybe_track(x, b)) {
    r.tape->record(out, [out, x, b, r, n, d](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      if (r.na >= 0) accum(tp, r.na, x.shape(), go->data(), go->size());
      if (r.nb >= 0) {
        Tensor& g = tp.grad_buffer(r.nb, b.shape());
        for (int i = 0; i < n; ++i)
          kernels::active().axpy(1.0, go->data() + size_t(i) * d, g.data(),
                                 size_t(d));
      }
    });
  }
  return out;
}

Tensor mul_rows(const Tensor& x, const Tensor& gvec) {
  if (x.rank() != 2 || gvec.size() != size_t(x.cols()))
    shape_fail("mul_rows", x, gvec);
  Tensor out(x.shape());
  const int n = x.rows(), d = x.cols();
  for (int i = 0; i < n; ++i)
    kernels::active().mul(x.data() + size_t(i) * d, gvec.data(),
                          out.data() + size_t(i) * d, size_t(d));
  if (Rec r = maybe_track(x, gvec)) {
    r.tape->record(out, [out, x, gvec, r, n, d](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      if (r.na >= 0) {
        Tensor& g = tp.grad_buffer(r.na, x.shape());
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j)
            g.at(i, j) += go->at(i, j) * gvec.at(size_t(j));
      }
      if (r.nb >= 0) {
        Tensor& g = tp.grad_buffer(r.nb, gvec.shape());
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j)
            g.at(size_t(j)) += go->at(i, j) * x.at(i, j);
      }
    });
  }
  return out;
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: rank-2 operands required, have " +
                     a.shape_str() + " and " + b.shape_str());
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  const int m = trans_a ? a.cols() : a.rows();
  const int k = trans_a ? a.rows() : a.cols();
  const int kb = trans_b ? b.cols() : b.rows();
  const int n = trans_b ? b.rows() : b.cols();
  if (k != kb)
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_str() +
                     (trans_a ? "^T" : "") + " x " + b.shape_str() +
                     (trans_b ? "^T" : ""));
  Tensor out({m, n});
  const auto& K = kernels::active();
  if (!trans_a && !trans_b)
    K.matmul_nn(a.data(), b.data(), out.data(), m, k, n, false);
  else if (!trans_a && trans_b)
    K.matmul_nt(a.data(), b.data(), out.data(), m, k, n, false);
  else if (trans_a && !trans_b)
    K.matmul_tn(a.data(), b.data(), out.data(), m, k, n, false);
  else
    throw ShapeError("matmul: double-transpose form unsupported");

  if (Rec r = maybe_track(a, b)) {
    r.tape->record(out, [out, a, b, r, m, k, n, trans_a, trans_b](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      const auto& K = kernels::active();
      if (r.na >= 0) {
        Tensor& ga = tp.grad_buffer(r.na, a.shape());
        if (!trans_a && !trans_b)        // dA = G B^T
          K.matmul_nt(go->data(), b.data(), ga.data(), m, n, k, true);
        else if (!trans_a && trans_b)    // dA = G B
          K.matmul_nn(go->data(), b.data(), ga.data(), m, n, k, true);
        else                             // trans_a, !trans_b: dA = B G^T
          K.matmul_nt(b.data(), go->data(), ga.data(), k, n, m, true);
      }
      if (r.nb >= 0) {
        Tensor& gb = tp.grad_buffer(r.nb, b.shape());
        if (!trans_a && !trans_b)        // dB = A^T G
          K.matmul_tn(a.data(), go->data(), gb.data(), k, m, n, true);
        else if (!trans_a && trans_b)    // dB = G^T A
          K.matmul_tn(go->data(), a.data(), gb.data(), n, m, k, true);
        else                             // dB = A G
          K.matmul_nn(a.data(), go->data(), gb.data(), k, m, n, true);
      }
    });
  }
  return out;
}

// ---- row-wise nonlinearities -------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() > 2) throw ShapeError("softmax: rank <= 2 required");
  check_finite(x, "softmax");
  const int n = x.rank() == 2 ? x.rows() : 1;
  const int d = x.cols();
  Tensor out(x.shape());
  for (int i = 0; i < n; ++i) {
    const double* xr = x.data() + size_t(i) * d;
    double* yr = out.data() + size_t(i) * d;
    double mx = xr[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += (yr[j] = std::exp(xr[j] - mx));
    const double inv = 1.0 / s;
    for (int j = 0; j < d; ++j) yr[j] *= inv;
  }
  if (Rec r = maybe_track(x)) {
    r.tape->record(out, [out, x, r, n, d](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, x.shape());
      for (int i = 0; i < n; ++i) {
        const double* y = out.data() + size_t(i) * d;
        const double* gy = go->data() + size_t(i) * d;
        double dot = kernels::active().dot(y, gy, size_t(d));
        double* gx = g.data() + size_t(i) * d;
        for (int j = 0; j < d; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return out;
}

Tensor layernorm_rows(const Tensor& x, double eps) {
  if (x.rank() > 2) throw ShapeError("layernorm: rank <= 2 required");
  check_finite(x, "layernorm");
  const int n = x.rank() == 2 ? x.rows() : 1;
  const int d = x.cols();
  Tensor out(x.shape());
  std::vector<double> inv_std(static_cast<size_t>(n));
  std::vector<double> means(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* xr = x.data() + size_t(i) * d;
    double mu = kernels::active().sum(xr, size_t(d)) / d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    means[size_t(i)] = mu;
    inv_std[size_t(i)] = is;
    double* yr = out.data() + size_t(i) * d;
    for (int j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * is;
  }
  if (Rec r = maybe_track(x)) {
    r.tape->record(out, [out, x, r, n, d, inv_std](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, x.shape());
      for (int i = 0; i < n; ++i) {
        const double* y = out.data() + size_t(i) * d;
        const double* gy = go->data() + size_t(i) * d;
        double* gx = g.data() + size_t(i) * d;
        const double is = inv_std[size_t(i)];
        double mean_gy = kernels::active().sum(gy, size_t(d)) / d;
        double mean_gy_y = kernels::active().dot(gy, y, size_t(d)) / d;
        for (int j = 0; j < d; ++j)
          gx[j] += is * (gy[j] - mean_gy - y[j] * mean_gy_y);
      }
    });
  }
  return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  check_finite(x, "gelu");
  Tensor out(x.shape());
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) {
    const double v = x.at(i);
    out.at(i) = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  if (Rec r = maybe_track(x)) {
    r.tape->record(out, [out, x, r, n](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, x.shape());
      for (size_t i = 0; i < n; ++i) {
        const double v = x.at(i);
        const double u = kGeluC * (v + kGeluA * v * v * v);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        g.at(i) += go->at(i) * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
      }
    });
  }
  return out;
}

Tensor tanh_t(const Tensor& x) {
  Tensor out(x.shape());
  for (size_t i = 0; i < x.size(); ++i) out.at(i) = std::tanh(x.at(i));
  if (Rec r = maybe_track(x)) {
    r.tape->record(out, [out, x, r](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, x.shape());
      for (size_t i = 0; i < x.size(); ++i)
        g.at(i) += go->at(i) * (1.0 - out.at(i) * out.at(i));
    });
  }
  return out;
}

Tensor exp_t(const Tensor& x) {
  Tensor out(x.shape());
  for (size_t i = 0; i < x.size(); ++i) out.at(i) = std::exp(x.at(i));
  if (Rec r = maybe_track(x)) {
    r.tape->record(out, [out, x, r](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, x.shape());
      for (size_t i = 0; i < x.size(); ++i) g.at(i) += go->at(i) * out.at(i);
    });
  }
  return out;
}

// ---- structure -------------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input");
  const int d = parts[0].cols();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != d)
      throw ShapeError("concat_rows: column mismatch");
    total += p.rows();
  }
  Tensor out({total, d});
  int row = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + size_t(row) * d, p.data(),
                p.size() * sizeof(double));
    row += p.rows();
  }
  Tape* tp = t_current;
  bool any = false;
  if (tp)
    for (const auto& p : parts) any = any || tp->tracked(p);
  if (tp && any) {
    std::vector<int> nodes;
    std::vector<int> row_of;
    int r0 = 0;
    for (const auto& p : parts) {
      nodes.push_back(tp->tracked(p) ? tp->node_of(p) : -1);
      row_of.push_back(r0);
      r0 += p.rows();
    }
    auto shapes = parts;
    tp->record(out, [out, shapes, nodes, row_of, d](Tape& t) {
      const Tensor* go = t.grad(out);
      if (!go) return;
      for (size_t i = 0; i < shapes.size(); ++i) {
        if (nodes[i] < 0) continue;
        Tensor& g = t.grad_buffer(nodes[i], shapes[i].shape());
        kernels::active().axpy(1.0, go->data() + size_t(row_of[i]) * d,
                               g.data(), g.size());
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  const int n = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != n)
      throw ShapeError("concat_cols: row mismatch");
    total += p.cols();
  }
  Tensor out({n, total});
  int col = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < n; ++i)
      std::memcpy(out.data() + size_t(i) * total + col,
                  p.data() + size_t(i) * p.cols(),
                  size_t(p.cols()) * sizeof(double));
    col += p.cols();
  }
  Tape* tp = t_current;
  bool any = false;
  if (tp)
    for (const auto& p : parts) any = any || tp->tracked(p);
  if (tp && any) {
    std::vector<int> nodes, col_of;
    int c0 = 0;
    for (const auto& p : parts) {
      nodes.push_back(tp->tracked(p) ? tp->node_of(p) : -1);
      col_of.push_back(c0);
      c0 += p.cols();
    }
    auto shapes = parts;
    tp->record(out, [out, shapes, nodes, col_of, n, total](Tape& t) {
      const Tensor* go = t.grad(out);
      if (!go) return;
      for (size_t pi = 0; pi < shapes.size(); ++pi) {
        if (nodes[pi] < 0) continue;
        const int pc = shapes[pi].cols();
        Tensor& g = t.grad_buffer(nodes[pi], shapes[pi].shape());
        for (int i = 0; i < n; ++i)
          kernels::active().axpy(
              1.0, go->data() + size_t(i) * total + col_of[pi],
              g.data() + size_t(i) * pc, size_t(pc));
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  if (x.rank() != 2 || r0 < 0 || r1 > x.rows() || r0 >= r1)
    throw ShapeError("slice_rows: bad range");
  const int d = x.cols();
  Tensor out({r1 - r0, d});
  std::memcpy(out.data(), x.data() + size_t(r0) * d,
              out.size() * sizeof(double));
  if (Rec r = maybe_track(x)) {
    r.tape->record(out, [out, x, r, r0, d](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, x.shape());
      kernels::active().axpy(1.0, go->data(), g.data() + size_t(r0) * d,
                             go->size());
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (x.rank() != 2 || c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw ShapeError("slice_cols: bad range");
  const int n = x.rows(), d = x.cols(), w = c1 - c0;
  Tensor out({n, w});
  for (int i = 0; i < n; ++i)
    std::memcpy(out.data() + size_t(i) * w, x.data() + size_t(i) * d + c0,
                size_t(w) * sizeof(double));
  if (Rec r = maybe_track(x)) {
    r.tape->record(out, [out, x, r, c0, n, d, w](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, x.shape());
      for (int i = 0; i < n; ++i)
        kernels::active().axpy(1.0, go->data() + size_t(i) * w,
                               g.data() + size_t(i) * d + c0, size_t(w));
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::scalar(kernels::active().sum(x.data(), x.size()));
  if (Rec r = maybe_track(x)) {
    r.tape->record(out, [out, x, r](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, x.shape());
      const double gv = go->at(size_t(0));
      for (size_t i = 0; i < x.size(); ++i) g.at(i) += gv;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / double(x.size());
  Tensor out =
      Tensor::scalar(kernels::active().sum(x.data(), x.size()) * inv);
  if (Rec r = maybe_track(x)) {
    r.tape->record(out, [out, x, r, inv](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, x.shape());
      const double gv = go->at(size_t(0)) * inv;
      for (size_t i = 0; i < x.size(); ++i) g.at(i) += gv;
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2");
  const int v = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || id >= v) throw ShapeError("embedding: id out of range");
  Tensor out({int(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.data() + i * size_t(d),
                table.data() + size_t(ids[i]) * d, size_t(d) * sizeof(double));
  if (Rec r = maybe_track(table)) {
    r.tape->record(out, [out, table, r, ids, d](Tape& tp) {
      const Tensor* go = tp.grad(out);
      if (!go) return;
      Tensor& g = tp.grad_buffer(r.na, table.shape());
      for (size_t i = 0; i < ids.size(); ++i)
        kernels::active().axpy(1.0, go->data() + i * size_t(d),
                               g.data() + size_t(ids[i]) * d, size_t(d));
    });
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() ||
      k.rows() != v.rows())
    throw ShapeError("attention: incompatible shapes q" + q.shape_str() +
                     " k" + k.shape_str() + " v" + v.shape_str());
  const double inv_sqrt_d = 1.0 / std::sqrt(double(q.cols()));
  Tensor scores = scale(matmul(q, k, false, true), inv_sqrt_d);
  return matmul(softmax_rows(scores), v);
}

}  // namespace m2f::core
