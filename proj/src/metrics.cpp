#include "evopose/metrics.hpp"

#include <iomanip>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "evopose/config.hpp"
#include "evopose/error.hpp"

namespace evopose {

namespace {

void check_shapes(const Joints& pred, const Joints& gt) {
  if (pred.cols() != gt.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction has " + std::to_string(pred.cols()) + " joints, ground truth " +
                                              std::to_string(gt.cols()));
  }
  if (pred.cols() == 0) throw Error(ErrorCode::EmptyEval, "no joints");
}

void check_lists(std::span<const Joints> preds, std::span<const Joints> gts) {
  if (preds.empty()) throw Error(ErrorCode::EmptyEval, "no samples to evaluate");
  if (preds.size() != gts.size()) throw Error(ErrorCode::ShapeMismatch, "prediction and ground-truth counts differ");
}

bool collinear(const Joints& pts) {
  const Joints centred = pts.colwise() - pts.rowwise().mean();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred);
  const auto s = svd.singularValues();
  return !(s[0] > 0.0) || s[1] <= 1e-9 * s[0];
}

const char* protocol_name(Protocol p) { return p == Protocol::P1 ? "p1" : "p2"; }

}  // namespace

Eigen::VectorXd joint_errors(const Joints& pred, const Joints& gt) {
  check_shapes(pred, gt);
  return (pred - gt).colwise().norm().transpose();
}

double mpjpe(const Joints& pred, const Joints& gt) { return joint_errors(pred, gt).mean(); }

Joints procrustes_align(const Joints& pred, const Joints& gt, bool with_scale) {
  check_shapes(pred, gt);
  if (pred.cols() < 3 || collinear(pred) || collinear(gt)) {
    throw Error(ErrorCode::DegenerateAlignment, "alignment needs at least 3 non-collinear joints");
  }
  const Eigen::Matrix4d T = Eigen::umeyama(pred, gt, with_scale);
  return (T.topLeftCorner<3, 3>() * pred).colwise() + T.topRightCorner<3, 1>();
}

double procrustes_mpjpe(const Joints& pred, const Joints& gt, bool with_scale) {
  return mpjpe(procrustes_align(pred, gt, with_scale), gt);
}

std::vector<double> default_auc_thresholds() {
  std::vector<double> t;
  for (int k = 0; k <= 30; ++k) t.push_back(5.0 * k);
  return t;
}

double pck(std::span<const Joints> preds, std::span<const Joints> gts, double threshold_mm) {
  check_lists(preds, gts);
  std::size_t hits = 0;
  std::size_t total = 0;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    const Eigen::VectorXd e = joint_errors(preds[n], gts[n]);
    hits += static_cast<std::size_t>((e.array() <= threshold_mm).count());
    total += static_cast<std::size_t>(e.size());
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

double auc(std::span<const Joints> preds, std::span<const Joints> gts, std::span<const double> thresholds) {
  const std::vector<double> defaults = default_auc_thresholds();
  if (thresholds.empty()) thresholds = defaults;
  check_lists(preds, gts);
  std::vector<double> errors;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    const Eigen::VectorXd e = joint_errors(preds[n], gts[n]);
    errors.insert(errors.end(), e.data(), e.data() + e.size());
  }
  double sum = 0.0;
  for (double t : thresholds) {
    std::size_t hits = 0;
    for (double e : errors) hits += e <= t ? 1 : 0;
    sum += 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
  }
  return sum / static_cast<double>(thresholds.size());
}

EvalReport evaluate(std::span<const Joints> preds, std::span<const Joints> gts, const KinematicTree& tree,
                    Protocol protocol, double pck_threshold_mm) {
  check_lists(preds, gts);
  EvalReport r;
  r.sample_count = preds.size();
  r.protocol = protocol;
  r.pck_threshold_mm = pck_threshold_mm;
  const Eigen::Index J = gts[0].cols();
  if (J != tree.joint_count()) throw Error(ErrorCode::ShapeMismatch, "evaluation data does not match the tree");
  for (int j = 0; j < J; ++j) r.joint_names.push_back(tree.joint_name(j));

  std::vector<Joints> scored;
  scored.reserve(preds.size());
  Eigen::VectorXd per_joint = Eigen::VectorXd::Zero(J);
  double p1 = 0.0;
  double p2 = 0.0;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    Joints aligned = procrustes_align(preds[n], gts[n], true);
    p1 += mpjpe(preds[n], gts[n]);
    p2 += mpjpe(aligned, gts[n]);
    scored.push_back(protocol == Protocol::P1 ? preds[n] : std::move(aligned));
    per_joint += joint_errors(scored.back(), gts[n]);
  }
  const double count = static_cast<double>(preds.size());
  r.mpjpe_mm = p1 / count;
  r.p_mpjpe_mm = p2 / count;
  per_joint /= count;
  r.per_joint_mm.assign(per_joint.data(), per_joint.data() + per_joint.size());
  r.pck_percent = pck(scored, gts, pck_threshold_mm);
  r.auc_percent = auc(scored, gts);
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  auto line = [&out](const std::string& label, const std::string& value) {
    out << std::left << std::setw(15) << label << value << "\n";
  };
  line("samples", std::to_string(sample_count));
  line("protocol", std::string(protocol_name(protocol)));
  line("MPJPE (mm)", format_double(mpjpe_mm));
  line("P-MPJPE (mm)", format_double(p_mpjpe_mm));
  line("PCK@" + format_double(pck_threshold_mm) + " (%)", format_double(pck_percent));
  line("AUC (%)", format_double(auc_percent));
  for (std::size_t j = 0; j < per_joint_mm.size(); ++j) {
    line("  " + (j < joint_names.size() ? joint_names[j] : std::to_string(j)), format_double(per_joint_mm[j]));
  }
  return out.str();
}

std::string EvalReport::to_key_values() const {
  KeyValueConfig kv;
  kv.set("samples", static_cast<std::uint64_t>(sample_count));
  kv.set("protocol", std::string(protocol_name(protocol)));
  kv.set("mpjpe_mm", mpjpe_mm);
  kv.set("p_mpjpe_mm", p_mpjpe_mm);
  kv.set("pck_threshold_mm", pck_threshold_mm);
  kv.set("pck_percent", pck_percent);
  kv.set("auc_percent", auc_percent);
  return kv.to_text();
}

std::string EvalReport::per_joint_csv() const {
  std::ostringstream out;
  out << "joint,name,error_mm\n";
  for (std::size_t j = 0; j < per_joint_mm.size(); ++j) {
    out << j << "," << (j < joint_names.size() ? joint_names[j] : "") << "," << format_double(per_joint_mm[j]) << "\n";
  }
  return out.str();
}

}  // namespace evopose
