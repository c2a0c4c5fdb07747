#pragma once

#include <string>
#include <vector>

#include "m2f/gnpfa.hpp"
#include "m2f/rig.hpp"
#include "m2f/tensor.hpp"

namespace m2f::metrics {

// Geometry sequences are (N, 3V) rows of flattened vertex positions (meters).

// Per frame, the max L2 error over lip vertices; averaged over frames; mm.
double lve_mm(const core::Tensor& pred, const core::Tensor& gt,
              const std::vector<int>& lip_mask);

// Motion of a vertex = L2 displacement from the sequence's neutral; FDD =
// mean over upper-face vertices of |std_time(pred) - std_time(gt)| (meters).
double fdd(const core::Tensor& pred, const core::Tensor& gt,
           const std::vector<int>& upper_mask, const core::Tensor& neutral);

// Head-pose beats: strict local minima of the angular speed (frame-centered
// differences over the 3 rotation channels). Returns frame indices.
std::vector<int> pose_beats(const core::Tensor& pose, double fps = 30.0);

// Mean over gt beats of exp(-(dt_nearest)^2 / (2 sigma^2)); 0 when either
// side has no beats.
double beat_align(const core::Tensor& pred_pose, const core::Tensor& gt_pose,
                  double sigma_s = 0.1, double fps = 30.0);

// ---- harness -------------------------------------------------------------------

enum class PredKind { Latent, Blendshape };

struct SequencePair {
  std::string id;
  core::Tensor pred;  // (N, d_z + 6) or (N, K + 6) for bypass predictions
  core::Tensor gt;    // (N, d_z + 6)
  bool has_gt = true;
};

struct ClipScores {
  std::string id;
  double lve_mm = 0, fdd = 0, ba = 0;
  bool evaluated = false;
  std::string note;
};

struct EvalReport {
  std::vector<ClipScores> clips;
  double lve_mm = 0, fdd = 0, ba = 0;  // means over evaluated clips
  int evaluated = 0;
  int skipped = 0;

  std::string to_json() const;
  // text table mirroring the familiar layout: LVE (mm, down), FDD (1e-5 m,
  // down), BA (up)
  std::string to_table(const std::string& row_label) const;
};

// Decodes latents to geometry through the VAE against the rig's neutral
// (blendshape predictions go through the linear rig instead), then scores
// every clip. Clips without ground truth are skipped with a note.
EvalReport evaluate_sequences(const std::vector<SequencePair>& pairs,
                              const gnpfa::GeometryVae& vae,
                              const rig::LinearRig& rig, PredKind pred_kind,
                              double sigma_s = 0.1, double fps = 30.0);

}  // namespace m2f::metrics
