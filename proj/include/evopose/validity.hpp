#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "evopose/skeleton.hpp"

namespace evopose {

struct GridShape {
  int theta_bins = 36;  // 5 degree cells over [0, pi]
  int phi_bins = 72;    // 5 degree cells over (-pi, pi]
  int dilation = 1;     // Chebyshev radius in cells
};

// Binary occupancy over the (theta, phi) sphere of one bone. Theta bins clamp
// at the poles, phi bins wrap around.
class ValidityGrid {
 public:
  ValidityGrid() = default;
  ValidityGrid(int theta_bins, int phi_bins, int dilation);

  int theta_bins() const noexcept { return theta_bins_; }
  int phi_bins() const noexcept { return phi_bins_; }
  int dilation() const noexcept { return dilation_; }

  int theta_bin(double theta) const noexcept;
  int phi_bin(double phi) const noexcept;

  bool occupied(int t, int p) const { return cells_.at(index(t, p)) != 0; }
  void set(int t, int p, bool value = true) { cells_.at(index(t, p)) = value ? 1 : 0; }
  void mark(double theta, double phi) { set(theta_bin(theta), phi_bin(phi)); }
  bool accepts(double theta, double phi) const { return occupied(theta_bin(theta), phi_bin(phi)); }

  // Grows the occupied region by `radius` cells in every direction.
  void dilate(int radius);
  std::size_t occupied_count() const noexcept;

  bool operator==(const ValidityGrid& other) const = default;

 private:
  std::size_t index(int t, int p) const;

  int theta_bins_ = 0;
  int phi_bins_ = 0;
  int dilation_ = 0;
  std::vector<std::uint8_t> cells_;
};

enum class Verdict : std::uint8_t { Valid, Invalid };

// One grid per bone, in canonical bone order.
class ValidityModel {
 public:
  ValidityModel() = default;
  explicit ValidityModel(std::vector<ValidityGrid> grids);

  static ValidityModel fit(std::span<const Pose> poses, const KinematicTree& tree,
                           const GridShape& shape = {});

  int bone_count() const noexcept { return static_cast<int>(grids_.size()); }
  const ValidityGrid& grid(int b) const { return grids_.at(static_cast<std::size_t>(b)); }
  ValidityGrid& grid(int b) { return grids_.at(static_cast<std::size_t>(b)); }
  const std::vector<ValidityGrid>& grids() const noexcept { return grids_; }

  Verdict check(const Pose& pose, const KinematicTree& tree) const;
  bool accepts(const Pose& pose, const KinematicTree& tree) const {
    return check(pose, tree) == Verdict::Valid;
  }

  bool operator==(const ValidityModel& other) const = default;

 private:
  std::vector<ValidityGrid> grids_;
};

// Score form of the prior: 0 for a valid pose, -infinity otherwise.
inline double validity(const Pose& pose, const ValidityModel& model, const KinematicTree& tree) {
  return model.accepts(pose, tree) ? 0.0 : -std::numeric_limits<double>::infinity();
}

}  // namespace evopose
