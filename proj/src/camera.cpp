#include "evopose/camera.hpp"

#include <cmath>

#include "evopose/config.hpp"
#include "evopose/error.hpp"

namespace evopose {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
    throw Error(ErrorCode::InvalidConfig, "focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidConfig, "image size must be positive");
  if (!contains(cx, cy)) throw Error(ErrorCode::InvalidConfig, "principal point must lie inside the image");
}

Intrinsics Intrinsics::parse(std::string_view text) { return read_intrinsics(KeyValueConfig::parse(text), {}); }

Intrinsics Intrinsics::load(const std::filesystem::path& path) { return read_intrinsics(KeyValueConfig::load(path), {}); }

std::string Intrinsics::to_text() const {
  KeyValueConfig kv;
  write_config(kv, *this);
  return kv.to_text();
}

Keypoints project(const Joints& joints, const Vec3& translation, const Intrinsics& K) {
  Keypoints out(2, joints.cols());
  for (Eigen::Index j = 0; j < joints.cols(); ++j) {
    const double X = joints(0, j) + translation.x();
    const double Y = joints(1, j) + translation.y();
    const double Z = joints(2, j) + translation.z();
    if (!(Z > kNearPlane)) {
      throw Error(ErrorCode::BehindCamera, "joint " + std::to_string(j) + " has depth " + std::to_string(Z) + " mm");
    }
    out(0, j) = K.fx * X / Z + K.cx;
    out(1, j) = K.fy * Y / Z + K.cy;
  }
  return out;
}

namespace {

double nearest_float(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

Joints round_to_float(const Joints& joints) { return joints.unaryExpr(&nearest_float); }

Vec3 round_to_float(const Vec3& v) { return v.unaryExpr(&nearest_float); }

void PairConfig::validate() const {
  if (!(depth_min > kNearPlane) || !(depth_max >= depth_min) || !std::isfinite(depth_max)) {
    throw Error(ErrorCode::InvalidConfig, "depth range must satisfy 100 < min <= max");
  }
  if (!(lateral_fraction >= 0.0 && lateral_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "lateral_fraction must lie in [0, 1]");
  }
  if (max_attempts < 1) throw Error(ErrorCode::InvalidConfig, "max_attempts must be >= 1");
}

PairGenerator::PairGenerator(const Intrinsics& K, const PairConfig& config)
    : K_(K), config_(config), rng_(config.rng_seed) {
  K_.validate();
  config_.validate();
}

std::optional<Pair2D3D> PairGenerator::place(const Pose& pose) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Joints target = round_to_float(pose.joints);
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    const double z = config_.depth_min + (config_.depth_max - config_.depth_min) * unit(rng_);
    // Root offsets that keep the root's own projection inside the image.
    const double x_lo = -K_.cx * z / K_.fx;
    const double x_hi = (K_.width - K_.cx) * z / K_.fx;
    const double y_lo = -K_.cy * z / K_.fy;
    const double y_hi = (K_.height - K_.cy) * z / K_.fy;
    const double tx = config_.lateral_fraction * (x_lo + (x_hi - x_lo) * unit(rng_));
    const double ty = config_.lateral_fraction * (y_lo + (y_hi - y_lo) * unit(rng_));
    const Vec3 t = round_to_float(Vec3(tx, ty, z));

    if (((target.row(2).array() + t.z()) <= kNearPlane).any()) continue;
    Keypoints kp = project(target, t, K_);
    bool inside = true;
    for (Eigen::Index j = 0; j < kp.cols() && inside; ++j) inside = K_.contains(kp(0, j), kp(1, j));
    if (!inside) continue;
    ++emitted_;
    return Pair2D3D{std::move(kp), Pose{target}, t};
  }
  ++skipped_;
  return std::nullopt;
}

std::vector<Pair2D3D> generate_pairs(std::span<const Pose> poses, const Intrinsics& K,
                                     const PairConfig& config, std::size_t* skipped) {
  PairGenerator gen(K, config);
  std::vector<Pair2D3D> out;
  out.reserve(poses.size());
  for (const Pose& p : poses) {
    if (auto pair = gen.place(p)) out.push_back(std::move(*pair));
  }
  if (skipped) *skipped = gen.skipped();
  return out;
}

}  // namespace evopose
