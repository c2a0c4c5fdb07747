#pragma once

#include <string>
#include <vector>

#include "m2f/rng.hpp"
#include "m2f/tensor.hpp"

namespace m2f::rig {

// Synthetic linear blendshape head: neutral geometry on a lat-long grid
// (canonical head about 0.2 m tall) plus K localized delta fields. Identities
// derived from the same seed share topology and masks but differ in neutral
// proportions and basis deltas.
struct LinearRig {
  int V = 512;
  int K = 24;
  int identity_id = 0;
  uint64_t seed = 0;
  int nlat = 16, nlon = 32;
  core::Tensor neutral;               // (V, 3) meters
  std::vector<core::Tensor> basis;    // K x (V, 3)
  std::vector<int> lip_mask;          // disjoint from upper_mask
  std::vector<int> upper_mask;

  // neutral + sum_k w_k * basis_k, w clamped to [0,1]
  core::Tensor apply(const std::vector<double>& w) const;
  double max_basis_displacement() const;
};

LinearRig make_rig(int V, int K, uint64_t seed, int identity_id);

// Directory layout: rig.json manifest + little-endian fp32 blobs.
void save_rig(const std::string& dir, const LinearRig& rig);
LinearRig load_rig(const std::string& dir);

// Wavefront OBJ with the grid's fixed triangulation.
void export_obj(const std::string& path, const core::Tensor& geometry,
                int nlat, int nlon);

std::vector<double> random_weights(int K, Rng& rng);

}  // namespace m2f::rig
