#include "m2f/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace m2f::metrics {

using core::Tensor;

namespace {

double vertex_err(const Tensor& a, const Tensor& b, int frame, int v) {
  double d2 = 0;
  for (int c = 0; c < 3; ++c) {
    const double d = a.at(frame, 3 * v + c) - b.at(frame, 3 * v + c);
    d2 += d * d;
  }
  return std::sqrt(d2);
}

void check_geoms(const Tensor& pred, const Tensor& gt,
                 const std::vector<int>& mask, const char* what) {
  if (!pred.same_shape(gt) || pred.rank() != 2 || pred.cols() % 3 != 0)
    throw core::ShapeError(std::string(what) +
                           ": geometry sequences must share (N, 3V)");
  if (mask.empty())
    throw core::ValueError(std::string(what) + ": empty vertex mask");
  const int v_count = pred.cols() / 3;
  for (int v : mask)
    if (v < 0 || v >= v_count)
      throw core::ValueError(std::string(what) + ": mask index out of range");
}

}  // namespace

double lve_mm(const Tensor& pred, const Tensor& gt,
              const std::vector<int>& lip_mask) {
  check_geoms(pred, gt, lip_mask, "lve");
  const int n = pred.rows();
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    double worst = 0;
    for (int v : lip_mask) worst = std::max(worst, vertex_err(pred, gt, i, v));
    acc += worst;
  }
  return acc / n * 1000.0;
}

double fdd(const Tensor& pred, const Tensor& gt,
           const std::vector<int>& upper_mask, const Tensor& neutral) {
  check_geoms(pred, gt, upper_mask, "fdd");
  if (pred.rows() < 2) throw core::ValueError("fdd: need at least 2 frames");
  if (int(neutral.size()) != pred.cols())
    throw core::ShapeError("fdd: neutral size must equal 3V");
  const int n = pred.rows();

  auto motion_std = [&](const Tensor& seq, int v) {
    double mean = 0;
    std::vector<double> m(size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = seq.at(i, 3 * v + c) - neutral.at(size_t(3 * v + c));
        d2 += d * d;
      }
      m[size_t(i)] = std::sqrt(d2);
      mean += m[size_t(i)];
    }
    mean /= n;
    double var = 0;
    for (double x : m) var += (x - mean) * (x - mean);
    return std::sqrt(var / n);
  };

  double acc = 0;
  for (int v : upper_mask)
    acc += std::fabs(motion_std(pred, v) - motion_std(gt, v));
  return acc / double(upper_mask.size());
}

std::vector<int> pose_beats(const Tensor& pose, double fps) {
  if (pose.rank() != 2 || pose.cols() < 3)
    throw core::ShapeError("beats: pose must be (N, >=3)");
  const int n = pose.rows();
  if (n < 3) throw core::ValueError("beats: need at least 3 frames");
  std::vector<double> speed(size_t(n), 0.0);
  for (int i = 1; i + 1 < n; ++i) {
    double s2 = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = (pose.at(i + 1, c) - pose.at(i - 1, c)) * fps / 2.0;
      s2 += d * d;
    }
    speed[size_t(i)] = std::sqrt(s2);
  }
  // strictness tolerance keeps fp noise on constant-speed tracks from
  // minting beats
  double max_speed = 0;
  for (double s : speed) max_speed = std::max(max_speed, s);
  const double tol = 1e-9 * max_speed;
  std::vector<int> beats;
  for (int i = 2; i + 2 < n; ++i)
    if (speed[size_t(i) - 1] - speed[size_t(i)] > tol &&
        speed[size_t(i) + 1] - speed[size_t(i)] > tol)
      beats.push_back(i);
  return beats;
}

double beat_align(const Tensor& pred_pose, const Tensor& gt_pose,
                  double sigma_s, double fps) {
  const auto pred = pose_beats(pred_pose, fps);
  const auto gt = pose_beats(gt_pose, fps);
  if (pred.empty() || gt.empty()) return 0.0;
  double acc = 0;
  for (int b : gt) {
    double best = 1e300;
    for (int p : pred)
      best = std::min(best, std::fabs(double(b - p)) / fps);
    acc += std::exp(-best * best / (2.0 * sigma_s * sigma_s));
  }
  return acc / double(gt.size());
}

// ---- harness ---------------------------------------------------------------------

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["aggregate"] = {{"lve_mm", lve_mm},
                    {"fdd_1e5m", fdd / 1e-5},
                    {"ba", ba},
                    {"evaluated", evaluated},
                    {"skipped", skipped}};
  j["clips"] = nlohmann::ordered_json::array();
  for (const auto& c : clips) {
    nlohmann::ordered_json row = {{"id", c.id}, {"evaluated", c.evaluated}};
    if (c.evaluated) {
      row["lve_mm"] = c.lve_mm;
      row["fdd_1e5m"] = c.fdd / 1e-5;
      row["ba"] = c.ba;
    } else {
      row["note"] = c.note;
    }
    j["clips"].push_back(row);
  }
  return j.dump(2);
}

std::string EvalReport::to_table(const std::string& row_label) const {
  std::ostringstream os;
  os << "Method                    LVE(mm) v  FDD(1e-5 m) v  BA ^\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-25s %8.3f   %11.3f  %5.3f\n",
                row_label.c_str(), lve_mm, fdd / 1e-5, ba);
  os << buf;
  return os.str();
}

EvalReport evaluate_sequences(const std::vector<SequencePair>& pairs,
                              const gnpfa::GeometryVae& vae,
                              const rig::LinearRig& rig, PredKind pred_kind,
                              double sigma_s, double fps) {
  EvalReport rep;
  const int d_z = vae.config().d_z;
  for (const auto& pair : pairs) {
    ClipScores cs;
    cs.id = pair.id;
    if (!pair.has_gt) {
      cs.note = "missing ground truth";
      rep.skipped++;
      rep.clips.push_back(cs);
      continue;
    }
    const int n = pair.gt.rows();
    if (pair.pred.rows() != n) {
      cs.note = "length mismatch";
      rep.skipped++;
      rep.clips.push_back(cs);
      continue;
    }

    // decode ground truth latents through the vae
    Tensor gt_z = core::slice_cols(pair.gt, 0, d_z);
    Tensor gt_geo = vae.decode_batch(rig.neutral, gt_z);
    Tensor gt_pose = core::slice_cols(pair.gt, d_z, d_z + 6);

    Tensor pred_geo, pred_pose;
    if (pred_kind == PredKind::Latent) {
      Tensor pz = core::slice_cols(pair.pred, 0, d_z);
      pred_geo = vae.decode_batch(rig.neutral, pz);
      pred_pose = core::slice_cols(pair.pred, d_z, d_z + 6);
    } else {
      const int k = rig.K;
      if (pair.pred.cols() != k + 6)
        throw core::ShapeError("evaluate: blendshape prediction must be (N,K+6)");
      pred_geo = Tensor({n, rig.V * 3});
      std::vector<double> w(size_t(k), 0.0);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) w[size_t(j)] = pair.pred.at(i, j);
        Tensor g = rig.apply(w);
        for (size_t e = 0; e < g.size(); ++e) pred_geo.at(i, int(e)) = g.at(e);
      }
      pred_pose = core::slice_cols(pair.pred, k, k + 6);
    }

    cs.lve_mm = lve_mm(pred_geo, gt_geo, rig.lip_mask);
    cs.fdd = fdd(pred_geo, gt_geo, rig.upper_mask,
                 rig.neutral.reshaped({1, rig.V * 3}));
    cs.ba = beat_align(pred_pose, gt_pose, sigma_s, fps);
    cs.evaluated = true;
    rep.evaluated++;
    rep.lve_mm += cs.lve_mm;
    rep.fdd += cs.fdd;
    rep.ba += cs.ba;
    rep.clips.push_back(cs);
  }
  if (rep.evaluated > 0) {
    rep.lve_mm /= rep.evaluated;
    rep.fdd /= rep.evaluated;
    rep.ba /= rep.evaluated;
  }
  return rep;
}

}  // namespace m2f::metrics
