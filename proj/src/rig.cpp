#include "m2f/rig.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace m2f::rig {

using core::Tensor;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.141592653589793;
constexpr double kMaxDelta = 0.028;  // per-basis displacement cap, meters

struct GridPoint {
  double phi, theta;  // phi in (0,pi) from top pole, theta in (-pi,pi], 0=front
};

GridPoint grid_point(int v, int nlat, int nlon) {
  const int i = v / nlon, j = v % nlon;
  double theta = 2.0 * kPi * j / nlon;
  if (theta > kPi) theta -= 2.0 * kPi;
  return {kPi * (i + 0.5) / nlat, theta};
}

}  // namespace

Tensor LinearRig::apply(const std::vector<double>& w) const {
  if (int(w.size()) != K)
    throw core::ShapeError("rig: weight count != K");
  Tensor g = neutral.clone();
  for (int k = 0; k < K; ++k) {
    const double wk = std::clamp(w[size_t(k)], 0.0, 1.0);
    if (wk == 0.0) continue;
    const double* b = basis[size_t(k)].data();
    double* p = g.data();
    for (size_t i = 0; i < g.size(); ++i) p[i] += wk * b[i];
  }
  return g;
}

double LinearRig::max_basis_displacement() const {
  double worst = 0.0;
  for (const auto& b : basis)
    for (int v = 0; v < V; ++v) {
      const double dx = b.at(v, 0), dy = b.at(v, 1), dz = b.at(v, 2);
      worst = std::max(worst, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
  return worst;
}

LinearRig make_rig(int V, int K, uint64_t seed, int identity_id) {
  LinearRig r;
  r.V = V;
  r.K = K;
  r.seed = seed;
  r.identity_id = identity_id;
  r.nlon = V < 256 ? 16 : 32;
  if (V % r.nlon != 0)
    throw core::ShapeError("rig: V must be divisible by the grid width");
  r.nlat = V / r.nlon;

  Rng shared(seed);                       // shared across identities
  Rng ident = shared.fork(uint64_t(identity_id) + 1);

  // neutral: head-ish ellipsoid, ~0.2 m tall, with identity-scaled radii
  const double rx = 0.075 * ident.uniform(0.9, 1.1);
  const double ry = 0.100 * ident.uniform(0.92, 1.08);
  const double rz = 0.085 * ident.uniform(0.9, 1.1);
  // gentle identity-specific asymmetry so neutrals are informative
  const double jaw = ident.uniform(-0.01, 0.01);
  r.neutral = Tensor({V, 3});
  for (int v = 0; v < V; ++v) {
    const auto [phi, theta] = grid_point(v, r.nlat, r.nlon);
    const double s = std::sin(phi);
    r.neutral.at(v, 0) = rx * s * std::sin(theta);
    r.neutral.at(v, 1) = ry * std::cos(phi) + jaw * s * s * std::cos(theta);
    r.neutral.at(v, 2) = rz * s * std::cos(theta);
  }

  // masks: forward lower band = lips, forward upper band = brows/forehead
  for (int v = 0; v < V; ++v) {
    const auto [phi, theta] = grid_point(v, r.nlat, r.nlon);
    if (phi >= 0.60 * kPi && phi <= 0.72 * kPi && std::fabs(theta) < 0.15 * kPi)
      r.lip_mask.push_back(v);
    else if (phi >= 0.25 * kPi && phi <= 0.45 * kPi &&
             std::fabs(theta) < 0.30 * kPi)
      r.upper_mask.push_back(v);
  }
  if (r.lip_mask.empty() || r.upper_mask.empty())
    throw core::ShapeError("rig: masks empty; grid too coarse");

  // basis: localized gaussian bumps; placement shared across identities,
  // amplitude/direction jittered per identity
  r.basis.reserve(size_t(K));
  for (int k = 0; k < K; ++k) {
    Rng place = shared.fork(0x1000 + uint64_t(k));
    double c_phi, c_theta;
    if (k < K / 2) {  // mouth region
      c_phi = place.uniform(0.58 * kPi, 0.74 * kPi);
      c_theta = place.uniform(-0.18 * kPi, 0.18 * kPi);
    } else if (k < 3 * K / 4) {  // upper face
      c_phi = place.uniform(0.24 * kPi, 0.46 * kPi);
      c_theta = place.uniform(-0.32 * kPi, 0.32 * kPi);
    } else {  // cheeks and jawline
      c_phi = place.uniform(0.40 * kPi, 0.70 * kPi);
      c_theta = place.uniform(-0.45 * kPi, 0.45 * kPi);
    }
    const double radius = place.uniform(0.18, 0.35);
    double dir[3] = {place.normal(), place.normal(), place.normal() + 1.0};
    const double dn =
        std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    const double amp_base = place.uniform(0.012, 1.0 * kMaxDelta);
    const double amp = std::min(amp_base * ident.uniform(0.8, 1.2), kMaxDelta);
    const double dphi_id = ident.uniform(-0.03, 0.03);
    const double dtheta_id = ident.uniform(-0.03, 0.03);

    Tensor b({V, 3});
    for (int v = 0; v < V; ++v) {
      const auto [phi, theta] = grid_point(v, r.nlat, r.nlon);
      double dth = theta - (c_theta + dtheta_id);
      if (dth > kPi) dth -= 2.0 * kPi;
      if (dth < -kPi) dth += 2.0 * kPi;
      const double dph = phi - (c_phi + dphi_id);
      const double d2 = (dph * dph + dth * dth) / (radius * radius);
      const double g = std::exp(-0.5 * d2);
      if (g < 1e-4) continue;
      b.at(v, 0) = amp * g * dir[0] / dn;
      b.at(v, 1) = amp * g * dir[1] / dn;
      b.at(v, 2) = amp * g * dir[2] / dn;
    }
    r.basis.push_back(std::move(b));
  }
  return r;
}

// ---- file format ----------------------------------------------------------

namespace {

void write_f32_blob(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("rig: cannot write " + path);
  std::vector<float> buf(t.size());
  for (size_t i = 0; i < t.size(); ++i) buf[i] = float(t.at(i));
  os.write(reinterpret_cast<const char*>(buf.data()),
           std::streamsize(buf.size() * 4));
}

Tensor read_f32_blob(const std::string& path, core::Shape shape) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("rig: cannot read " + path);
  Tensor t(shape);
  std::vector<float> buf(t.size());
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
  if (!is) throw std::runtime_error("rig: truncated blob " + path);
  for (size_t i = 0; i < t.size(); ++i) t.at(i) = double(buf[i]);
  return t;
}

}  // namespace

void save_rig(const std::string& dir, const LinearRig& rig) {
  fs::create_directories(dir);
  nlohmann::ordered_json j;
  j["V"] = rig.V;
  j["K"] = rig.K;
  j["identity_id"] = rig.identity_id;
  j["seed"] = rig.seed;
  j["nlat"] = rig.nlat;
  j["nlon"] = rig.nlon;
  j["lip_mask"] = rig.lip_mask;
  j["upper_mask"] = rig.upper_mask;
  j["files"] = {{"neutral", "neutral.f32"}, {"basis", "basis.f32"}};
  std::ofstream os(dir + "/rig.json");
  os << j.dump(2) << "\n";

  write_f32_blob(dir + "/neutral.f32", rig.neutral);
  Tensor all({rig.K, rig.V * 3});
  for (int k = 0; k < rig.K; ++k)
    for (size_t i = 0; i < rig.basis[size_t(k)].size(); ++i)
      all.at(k, int(i)) = rig.basis[size_t(k)].at(i);
  write_f32_blob(dir + "/basis.f32", all);
}

LinearRig load_rig(const std::string& dir) {
  std::ifstream is(dir + "/rig.json");
  if (!is) throw std::runtime_error("rig: cannot open " + dir + "/rig.json");
  nlohmann::json j;
  is >> j;
  LinearRig r;
  r.V = j.at("V");
  r.K = j.at("K");
  r.identity_id = j.at("identity_id");
  r.seed = j.at("seed");
  r.nlat = j.at("nlat");
  r.nlon = j.at("nlon");
  r.lip_mask = j.at("lip_mask").get<std::vector<int>>();
  r.upper_mask = j.at("upper_mask").get<std::vector<int>>();
  r.neutral = read_f32_blob(
      dir + "/" + j.at("files").at("neutral").get<std::string>(), {r.V, 3});
  Tensor all = read_f32_blob(
      dir + "/" + j.at("files").at("basis").get<std::string>(),
      {r.K, r.V * 3});
  for (int k = 0; k < r.K; ++k) {
    Tensor b({r.V, 3});
    for (size_t i = 0; i < b.size(); ++i) b.at(i) = all.at(k, int(i));
    r.basis.push_back(std::move(b));
  }
  return r;
}

void export_obj(const std::string& path, const Tensor& g, int nlat, int nlon) {
  if (g.rank() != 2 || g.cols() != 3 || g.rows() != nlat * nlon)
    throw core::ShapeError("obj export: geometry must be (nlat*nlon, 3)");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("obj export: cannot write " + path);
  os << "# synthetic head grid " << nlat << "x" << nlon << "\n";
  for (int v = 0; v < g.rows(); ++v)
    os << "v " << g.at(v, 0) << " " << g.at(v, 1) << " " << g.at(v, 2) << "\n";
  for (int i = 0; i + 1 < nlat; ++i)
    for (int j = 0; j < nlon; ++j) {
      const int a = i * nlon + j + 1;  // obj is 1-based
      const int b = i * nlon + (j + 1) % nlon + 1;
      const int c = (i + 1) * nlon + j + 1;
      const int d = (i + 1) * nlon + (j + 1) % nlon + 1;
      os << "f " << a << " " << b << " " << c << "\n";
      os << "f " << b << " " << d << " " << c << "\n";
    }
}

std::vector<double> random_weights(int K, Rng& rng) {
  std::vector<double> w(static_cast<size_t>(K), 0.0);
  for (auto& x : w) x = rng.uniform();
  return w;
}

}  // namespace m2f::rig
