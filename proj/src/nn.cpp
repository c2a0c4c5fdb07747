#include "m2f/nn.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "m2f/kernels.hpp"

namespace m2f::core {

// ---- ParamStore --------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  const bool trainable =
      name.rfind("meta.", 0) != 0 && name.rfind("norm.", 0) != 0;
  return add(name, std::move(t), trainable);
}

Tensor& ParamStore::add(const std::string& name, Tensor t, bool trainable) {
  if (index_.count(name))
    throw ValueError("params: duplicate name '" + name + "'");
  t.set_requires_grad(trainable);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(t));
  trainable_.push_back(trainable);
  return tensors_.back();
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("params: missing '" + name + "'");
  return tensors_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("params: missing '" + name + "'");
  return tensors_[it->second];
}

size_t ParamStore::total_elements() const {
  size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

// ---- checkpoint ---------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'M', '2', 'F', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T take(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValueError("checkpoint: cannot open '" + path + "' for write");
  os.write(kMagic, 8);
  put<uint32_t>(os, 1);
  put<uint32_t>(os, uint32_t(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string& n = params.name(i);
    put<uint32_t>(os, uint32_t(n.size()));
    os.write(n.data(), std::streamsize(n.size()));
    const auto& sh = params.tensor(i).shape();
    put<uint32_t>(os, uint32_t(sh.size()));
    for (int d : sh) put<uint64_t>(os, uint64_t(d));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.tensor(i);
    os.write(reinterpret_cast<const char*>(t.data()),
             std::streamsize(t.size() * sizeof(double)));
  }
  if (!os) throw ValueError("checkpoint: write failed for '" + path + "'");
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValueError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw ValueError("checkpoint: bad magic in '" + path + "'");
  const uint32_t version = take<uint32_t>(is);
  if (version != 1)
    throw ValueError("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t count = take<uint32_t>(is);
  std::vector<std::pair<std::string, Shape>> table;
  table.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = take<uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const uint32_t rank = take<uint32_t>(is);
    Shape sh(rank);
    for (uint32_t r = 0; r < rank; ++r) sh[r] = int(take<uint64_t>(is));
    table.emplace_back(std::move(name), std::move(sh));
  }
  if (!is) throw ValueError("checkpoint: truncated table in '" + path + "'");
  ParamStore ps;
  for (auto& [name, sh] : table) {
    Tensor t(sh);
    is.read(reinterpret_cast<char*>(t.data()),
            std::streamsize(t.size() * sizeof(double)));
    if (!is) throw ValueError("checkpoint: truncated payload in '" + path + "'");
    ps.add(name, std::move(t));
  }
  return ps;
}

// ---- AdamW ---------------------------------------------------------------------

int AdamW::step(ParamStore& params, const std::vector<const Tensor*>& grads) {
  if (grads.size() != params.size())
    throw ValueError("adamw: gradient list size mismatch");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i] = Tensor(params.tensor(i).shape());
      v_[i] = Tensor(params.tensor(i).shape());
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
  int skipped = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params.trainable(i)) continue;
    Tensor& w = params.tensor(i);
    const Tensor* g = grads[i];
    if (g && !g->all_finite()) {
      std::cerr << "warning: adamw skipped '" << params.name(i)
                << "': non-finite gradient\n";
      ++skipped;
      continue;
    }
    double* wd = w.data();
    double* md = m_[i].data();
    double* vd = v_[i].data();
    const size_t n = w.size();
    for (size_t j = 0; j < n; ++j) {
      const double gv = g ? g->data()[j] : 0.0;
      md[j] = cfg_.beta1 * md[j] + (1.0 - cfg_.beta1) * gv;
      vd[j] = cfg_.beta2 * vd[j] + (1.0 - cfg_.beta2) * gv * gv;
      const double mhat = md[j] / bc1;
      const double vhat = vd[j] / bc2;
      wd[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                          cfg_.weight_decay * wd[j]);
    }
  }
  return skipped;
}

int AdamW::step(ParamStore& params, const Tape& tape) {
  std::vector<const Tensor*> grads(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    grads[i] = tape.grad(params.tensor(i));
  return step(params, grads);
}

// ---- building blocks -------------------------------------------------------------

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out,
                   Rng& rng, double w_scale) {
  const double s = w_scale >= 0.0 ? w_scale : std::sqrt(2.0 / double(in + out));
  Linear l;
  l.w = ps.add(name + ".w", Tensor::randn({in, out}, rng, s));
  l.b = ps.add(name + ".b", Tensor({out}));
  return l;
}

Linear linear_from(const ParamStore& ps, const std::string& name) {
  return {ps.get(name + ".w"), ps.get(name + ".b")};
}

LayerNorm make_layernorm(ParamStore& ps, const std::string& name, int dim) {
  LayerNorm ln;
  ln.gamma = ps.add(name + ".g", Tensor({dim}, 1.0));
  ln.beta = ps.add(name + ".b", Tensor({dim}));
  return ln;
}

LayerNorm layernorm_from(const ParamStore& ps, const std::string& name) {
  return {ps.get(name + ".g"), ps.get(name + ".b")};
}

// ---- Normalizer --------------------------------------------------------------------

Tensor Normalizer::normalized(const Tensor& x) const {
  Tensor out = x.clone();
  const int d = out.cols();
  for (int i = 0; i < out.rows(); ++i) apply(out.data() + size_t(i) * d, d);
  return out;
}

Tensor Normalizer::denormalized(const Tensor& x) const {
  Tensor out = x.clone();
  const int d = out.cols();
  for (int i = 0; i < out.rows(); ++i) invert(out.data() + size_t(i) * d, d);
  return out;
}

Normalizer Normalizer::identity(int d) {
  Normalizer n;
  n.mean.assign(size_t(d), 0.0);
  n.std.assign(size_t(d), 1.0);
  return n;
}

// ---- parallel_for ------------------------------------------------------------------

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers));
  std::exception_ptr err;
  std::mutex err_mu;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace m2f::core
