#pragma once

#include <span>
#include <string>
#include <vector>

#include "evopose/skeleton.hpp"

namespace evopose {

inline constexpr double kDefaultPckThreshold = 150.0;

// Mean Euclidean distance over joints.
double mpjpe(const Joints& pred, const Joints& gt);
inline double mpjpe(const Pose& pred, const Pose& gt) { return mpjpe(pred.joints, gt.joints); }

Eigen::VectorXd joint_errors(const Joints& pred, const Joints& gt);

// Similarity transform (rotation, translation and optionally uniform scale,
// no reflection) that best maps pred onto gt, applied to pred.
Joints procrustes_align(const Joints& pred, const Joints& gt, bool with_scale = true);
double procrustes_mpjpe(const Joints& pred, const Joints& gt, bool with_scale = true);
inline double procrustes_mpjpe(const Pose& pred, const Pose& gt, bool with_scale = true) {
  return procrustes_mpjpe(pred.joints, gt.joints, with_scale);
}

// Percentage of joints whose error is at most `threshold_mm`.
double pck(std::span<const Joints> preds, std::span<const Joints> gts, double threshold_mm = kDefaultPckThreshold);
// Mean PCK over `thresholds`; the default is 0..150 mm in 5 mm steps.
double auc(std::span<const Joints> preds, std::span<const Joints> gts, std::span<const double> thresholds = {});
std::vector<double> default_auc_thresholds();

enum class Protocol { P1, P2 };

struct EvalReport {
  std::size_t sample_count = 0;
  double mpjpe_mm = 0.0;
  double p_mpjpe_mm = 0.0;
  double pck_threshold_mm = kDefaultPckThreshold;
  double pck_percent = 0.0;
  double auc_percent = 0.0;
  Protocol protocol = Protocol::P1;
  std::vector<std::string> joint_names;
  std::vector<double> per_joint_mm;  // under the report's protocol

  std::string to_text() const;
  std::string to_key_values() const;
  std::string per_joint_csv() const;
};

// Errors of P1 and P2 are both filled; PCK, AUC and per-joint errors follow
// `protocol`.
EvalReport evaluate(std::span<const Joints> preds, std::span<const Joints> gts, const KinematicTree& tree,
                    Protocol protocol = Protocol::P1, double pck_threshold_mm = kDefaultPckThreshold);

}  // namespace evopose
