#include "evopose/validity.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "evopose/error.hpp"

namespace evopose {

ValidityGrid::ValidityGrid(int theta_bins, int phi_bins, int dilation)
    : theta_bins_(theta_bins), phi_bins_(phi_bins), dilation_(dilation) {
  if (theta_bins < 4 || phi_bins < 4) throw Error(ErrorCode::InvalidConfig, "validity grids need at least 4 bins per axis");
  if (dilation < 0) throw Error(ErrorCode::InvalidConfig, "dilation radius must be non-negative");
  cells_.assign(static_cast<std::size_t>(theta_bins) * static_cast<std::size_t>(phi_bins), 0);
}

std::size_t ValidityGrid::index(int t, int p) const {
  if (t < 0 || t >= theta_bins_ || p < 0 || p >= phi_bins_) {
    throw Error(ErrorCode::InvalidInput, "grid cell out of range");
  }
  return static_cast<std::size_t>(t) * static_cast<std::size_t>(phi_bins_) + static_cast<std::size_t>(p);
}

int ValidityGrid::theta_bin(double theta) const noexcept {
  const int t = static_cast<int>(std::floor(theta / std::numbers::pi * theta_bins_));
  return std::clamp(t, 0, theta_bins_ - 1);
}

int ValidityGrid::phi_bin(double phi) const noexcept {
  const int p = static_cast<int>(std::floor((phi + std::numbers::pi) / (2.0 * std::numbers::pi) * phi_bins_));
  return ((p % phi_bins_) + phi_bins_) % phi_bins_;
}

void ValidityGrid::dilate(int radius) {
  if (radius <= 0) return;
  const std::vector<std::uint8_t> source = cells_;
  for (int t = 0; t < theta_bins_; ++t) {
    for (int p = 0; p < phi_bins_; ++p) {
      if (!source[static_cast<std::size_t>(t) * static_cast<std::size_t>(phi_bins_) + static_cast<std::size_t>(p)]) continue;
      for (int dt = -radius; dt <= radius; ++dt) {
        const int tt = t + dt;
        if (tt < 0 || tt >= theta_bins_) continue;
        for (int dp = -radius; dp <= radius; ++dp) {
          const int pp = ((p + dp) % phi_bins_ + phi_bins_) % phi_bins_;
          set(tt, pp);
        }
      }
    }
  }
}

std::size_t ValidityGrid::occupied_count() const noexcept {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

ValidityModel::ValidityModel(std::vector<ValidityGrid> grids) : grids_(std::move(grids)) {}

ValidityModel ValidityModel::fit(std::span<const Pose> poses, const KinematicTree& tree,
                                 const GridShape& shape) {
  if (poses.empty()) throw Error(ErrorCode::EmptyPopulation, "cannot fit validity grids without poses");
  std::vector<ValidityGrid> grids(static_cast<std::size_t>(tree.bone_count()),
                                  ValidityGrid(shape.theta_bins, shape.phi_bins, shape.dilation));
  for (const Pose& pose : poses) {
    check_pose(pose, tree);
    const auto sph = local_spherical(pose, tree);
    for (std::size_t b = 0; b < grids.size(); ++b) grids[b].mark(sph[b].theta, sph[b].phi);
  }
  for (ValidityGrid& g : grids) g.dilate(shape.dilation);
  return ValidityModel(std::move(grids));
}

Verdict ValidityModel::check(const Pose& pose, const KinematicTree& tree) const {
  if (bone_count() != tree.bone_count()) throw Error(ErrorCode::ShapeMismatch, "validity model does not match tree");
  std::vector<SphericalBone> sph;
  try {
    check_pose(pose, tree);
    sph = local_spherical(pose, tree);
  } catch (const Error&) {
    return Verdict::Invalid;
  }
  for (std::size_t b = 0; b < grids_.size(); ++b) {
    if (!grids_[b].accepts(sph[b].theta, sph[b].phi)) return Verdict::Invalid;
  }
  return Verdict::Valid;
}

}  // namespace evopose
