#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evopose/skeleton.hpp"

namespace evopose {

// Column j holds (u, v) of joint j in pixels.
using Keypoints = Eigen::Matrix2Xd;

// Joints closer than this (mm, camera frame) cannot be projected.
inline constexpr double kNearPlane = 100.0;

struct Intrinsics {
  double fx = 1145.0;
  double fy = 1145.0;
  double cx = 500.0;
  double cy = 500.0;
  int width = 1000;
  int height = 1000;

  // Throws InvalidConfig.
  void validate() const;
  bool contains(double u, double v) const noexcept {
    return u >= 0.0 && u < width && v >= 0.0 && v < height;
  }

  // Text key-value camera file: fx, fy, cx, cy, width, height.
  static Intrinsics parse(std::string_view text);
  static Intrinsics load(const std::filesystem::path& path);
  std::string to_text() const;

  bool operator==(const Intrinsics&) const = default;
};

Keypoints project(const Joints& joints, const Vec3& translation, const Intrinsics& K);
inline Keypoints project(const Pose& pose, const Vec3& translation, const Intrinsics& K) {
  return project(pose.joints, translation, K);
}

struct Pair2D3D {
  Keypoints keypoints;
  Pose target;
  Vec3 translation = Vec3::Zero();
};

struct PairConfig {
  double depth_min = 3000.0;
  double depth_max = 8000.0;
  // Scales the lateral offset range; 0 keeps the root on the optical axis.
  double lateral_fraction = 1.0;
  int max_attempts = 100;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Places poses in front of the camera one at a time. Target and translation
// are rounded to float precision before projecting, so pairs survive the
// f32 storage of the pair file with an unchanged reprojection.
class PairGenerator {
 public:
  PairGenerator(const Intrinsics& K, const PairConfig& config);

  // nullopt when no placement within max_attempts keeps every joint in view.
  std::optional<Pair2D3D> place(const Pose& pose);

  std::size_t emitted() const noexcept { return emitted_; }
  std::size_t skipped() const noexcept { return skipped_; }
  const Intrinsics& intrinsics() const noexcept { return K_; }

 private:
  Intrinsics K_;
  PairConfig config_;
  std::mt19937_64 rng_;
  std::size_t emitted_ = 0;
  std::size_t skipped_ = 0;
};

std::vector<Pair2D3D> generate_pairs(std::span<const Pose> poses, const Intrinsics& K,
                                     const PairConfig& config, std::size_t* skipped = nullptr);

// Rounds every coordinate to the nearest float.
Joints round_to_float(const Joints& joints);
Vec3 round_to_float(const Vec3& v);

}  // namespace evopose
