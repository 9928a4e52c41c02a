#include "evopose/service.hpp"

#include <cmath>

#include <Eigen/Geometry>
#include <json.hpp>

#include "evopose/datastore.hpp"
#include "evopose/error.hpp"
#include "evopose/evolve.hpp"

// httplib pulls in <resolv.h>, whose _res macro breaks Eigen headers included after it.
#include <httplib.h>

namespace evopose {

using nlohmann::json;

namespace {

json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json columns_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(vec_json(m.col(c)));
  return out;
}

json intrinsics_json(const Intrinsics& K) {
  return json{{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::DegenerateFrame:
    case ErrorCode::DegeneratePose:
    case ErrorCode::ZeroBone:
    case ErrorCode::BehindCamera:
    case ErrorCode::EmptyHistory:
      return 409;
    case ErrorCode::InvalidInput:
    case ErrorCode::InvalidBone:
    case ErrorCode::InvalidConfig:
    case ErrorCode::ShapeMismatch:
      return 400;
    default:
      return 500;
  }
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", code}, {"message", message}}.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json body = json::parse(req.body);
  if (!body.is_object()) throw Error(ErrorCode::InvalidInput, "request body must be a JSON object");
  return body;
}

double finite_number(const json& body, const char* key) {
  const auto it = body.find(key);
  if (it == body.end() || !it->is_number()) {
    throw Error(ErrorCode::InvalidInput, std::string("missing numeric field '") + key + "'");
  }
  const double value = it->get<double>();
  if (!std::isfinite(value)) throw Error(ErrorCode::InvalidInput, std::string("field '") + key + "' is not finite");
  return value;
}

// Wraps a handler so that library errors become JSON error responses.
template <typename Handler>
httplib::Server::Handler guarded(Handler handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), to_string(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "InvalidInput", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "InternalError", e.what());
    }
  };
}

}  // namespace

Axis parse_axis(std::string_view name) {
  if (name == "x" || name == "X") return Axis::X;
  if (name == "y" || name == "Y") return Axis::Y;
  if (name == "z" || name == "Z") return Axis::Z;
  throw Error(ErrorCode::InvalidInput, "axis must be x, y or z");
}

AnnotationService::AnnotationService(const KinematicTree& tree, std::vector<Pose> dataset, ServiceOptions options)
    : tree_(tree), dataset_(std::move(dataset)), options_(std::move(options)) {
  options_.intrinsics.validate();
  if (!options_.translation.allFinite() || options_.translation.z() <= kNearPlane) {
    throw Error(ErrorCode::InvalidConfig, "root translation must be finite and in front of the camera");
  }
  if (options_.history_limit == 0) throw Error(ErrorCode::InvalidConfig, "history limit must be positive");
  for (const Pose& p : dataset_) check_pose(p, tree_);
}

SessionState AnnotationService::snapshot(const std::string& id, const Pose& pose, std::size_t depth,
                                         bool dirty) const {
  SessionState s;
  s.id = id;
  s.pose = pose;
  s.bones = local_spherical(pose, tree_);
  s.keypoints = project(pose, options_.translation, options_.intrinsics);
  s.intrinsics = options_.intrinsics;
  s.translation = options_.translation;
  s.history_depth = depth;
  s.dirty = dirty;
  return s;
}

SessionState AnnotationService::snapshot(const Session& session) const {
  return snapshot(session.id, session.pose, session.history.size(), session.dirty);
}

SessionState AnnotationService::create_session(std::optional<std::size_t> index) {
  Pose start;
  if (index) {
    if (*index >= dataset_.size()) {
      throw Error(ErrorCode::NotFound, "dataset index " + std::to_string(*index) + " out of range (" +
                                           std::to_string(dataset_.size()) + " poses)");
    }
    start = dataset_[*index];
  } else {
    start = rest_pose(tree_);
  }
  auto session = std::make_shared<Session>();
  session->pose = std::move(start);
  std::unique_lock lock(sessions_mutex_);
  session->id = std::to_string(next_id_);
  SessionState state = snapshot(*session);
  ++next_id_;
  sessions_.emplace(session->id, session);
  return state;
}

std::shared_ptr<AnnotationService::Session> AnnotationService::find(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "unknown session '" + id + "'");
  return it->second;
}

std::size_t AnnotationService::session_count() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

SessionState AnnotationService::state(const std::string& id) const {
  const auto session = find(id);
  std::lock_guard lock(session->mutex);
  return snapshot(*session);
}

SessionState AnnotationService::commit(Session& session, const Pose& candidate) {
  check_pose(candidate, tree_);
  SessionState next = snapshot(session.id, candidate, session.history.size() + 1, true);
  session.history.push_back(session.pose);
  if (session.history.size() > options_.history_limit) session.history.pop_front();
  session.pose = candidate;
  session.dirty = true;
  next.history_depth = session.history.size();
  return next;
}

SessionState AnnotationService::edit_bone(const std::string& id, int bone, double d_theta, double d_phi) {
  const auto session = find(id);
  std::lock_guard lock(session->mutex);
  return commit(*session, mutate_orientation(session->pose, tree_, bone, d_theta, d_phi));
}

SessionState AnnotationService::edit_global(const std::string& id, Axis axis, double d_angle) {
  if (!std::isfinite(d_angle)) throw Error(ErrorCode::InvalidInput, "rotation angle is not finite");
  const Vec3 unit = axis == Axis::X ? Vec3::UnitX() : axis == Axis::Y ? Vec3::UnitY() : Vec3::UnitZ();
  const Mat3 rotation = Eigen::AngleAxisd(d_angle, unit).toRotationMatrix();
  const auto session = find(id);
  std::lock_guard lock(session->mutex);
  return commit(*session, rotate_about_root(session->pose, rotation));
}

SessionState AnnotationService::undo(const std::string& id) {
  const auto session = find(id);
  std::lock_guard lock(session->mutex);
  if (session->history.empty()) throw Error(ErrorCode::EmptyHistory, "nothing to undo");
  session->pose = std::move(session->history.back());
  session->history.pop_back();
  session->dirty = true;
  return snapshot(*session);
}

std::filesystem::path AnnotationService::save_path(const std::string& file) const {
  const std::string name = file.empty() ? options_.default_save_file : file;
  const std::filesystem::path p(name);
  if (p.has_parent_path() || p.is_absolute() || name == "." || name == "..") {
    throw Error(ErrorCode::InvalidInput, "save file must be a plain file name");
  }
  return options_.save_dir / p;
}

SaveResult AnnotationService::save(const std::string& id, const std::string& file) {
  const std::filesystem::path path = save_path(file);
  const auto session = find(id);
  std::lock_guard lock(session->mutex);
  SaveResult result;
  result.path = path;
  {
    std::lock_guard save_lock(save_mutex_);
    append_skeleton(path, session->pose, tree_);
    SkeletonReader reader(path, tree_);
    result.index = reader.count() - 1;
  }
  session->dirty = false;
  return result;
}

std::string AnnotationService::tree_json() const {
  json joints = json::array();
  for (int j = 0; j < tree_.joint_count(); ++j) {
    const JointSpec& spec = tree_.joint(j);
    joints.push_back(json{{"name", spec.name}, {"parent", spec.parent}, {"mirror", spec.mirror}});
  }
  json bones = json::array();
  for (int b = 0; b < tree_.bone_count(); ++b) {
    bones.push_back(json{{"parent", tree_.bone_parent_joint(b)},
                         {"child", tree_.bone_child(b)},
                         {"limb", std::string(to_string(tree_.limb_class(b)))},
                         {"mirror", tree_.mirror_bone(b)}});
  }
  return json{{"root", tree_.root()}, {"joints", joints}, {"bones", bones}}.dump();
}

std::string AnnotationService::state_json(const SessionState& s, bool include_tree) const {
  json bones = json::array();
  for (const SphericalBone& b : s.bones) bones.push_back(json{{"r", b.r}, {"theta", b.theta}, {"phi", b.phi}});
  json out{{"session", s.id},
           {"joints", columns_json(s.pose.joints)},
           {"bones", bones},
           {"keypoints", columns_json(s.keypoints)},
           {"intrinsics", intrinsics_json(s.intrinsics)},
           {"translation", vec_json(s.translation)},
           {"history_depth", s.history_depth},
           {"dirty", s.dirty}};
  if (include_tree) out["tree"] = json::parse(tree_json());
  return out.dump();
}

void AnnotationService::mount(httplib::Server& server) {
  const std::string origin = options_.cors_origin;
  server.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("Vary", "Origin");
  });
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });

  auto reply = [this](httplib::Response& res, const SessionState& s, bool include_tree) {
    res.set_content(state_json(s, include_tree), "application/json");
  };

  server.Get("/skeleton/tree", guarded([this](const httplib::Request&, httplib::Response& res) {
               res.set_content(tree_json(), "application/json");
             }));
  server.Post("/session", guarded([this, reply](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                std::optional<std::size_t> index;
                if (const auto it = body.find("index"); it != body.end() && !it->is_null()) {
                  if (!it->is_number_integer() || it->get<long long>() < 0) {
                    throw Error(ErrorCode::InvalidInput, "index must be a non-negative integer");
                  }
                  index = it->get<std::size_t>();
                }
                reply(res, create_session(index), true);
              }));
  server.Get(R"(/session/([^/]+)/state)", guarded([this, reply](const httplib::Request& req, httplib::Response& res) {
               reply(res, state(req.matches[1]), false);
             }));
  server.Post(R"(/session/([^/]+)/bone)", guarded([this, reply](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                const auto it = body.find("bone");
                if (it == body.end() || !it->is_number_integer()) {
                  throw Error(ErrorCode::InvalidInput, "missing integer field 'bone'");
                }
                reply(res,
                      edit_bone(req.matches[1], it->get<int>(), finite_number(body, "d_theta"),
                                finite_number(body, "d_phi")),
                      false);
              }));
  server.Post(R"(/session/([^/]+)/global)",
              guarded([this, reply](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                const auto it = body.find("axis");
                if (it == body.end() || !it->is_string()) throw Error(ErrorCode::InvalidInput, "missing field 'axis'");
                reply(res, edit_global(req.matches[1], parse_axis(it->get<std::string>()), finite_number(body, "d_angle")),
                      false);
              }));
  server.Post(R"(/session/([^/]+)/undo)", guarded([this, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, undo(req.matches[1]), false);
              }));
  server.Post(R"(/session/([^/]+)/save)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                std::string file;
                if (const auto it = body.find("file"); it != body.end() && !it->is_null()) {
                  if (!it->is_string()) throw Error(ErrorCode::InvalidInput, "'file' must be a string");
                  file = it->get<std::string>();
                }
                const SaveResult r = save(req.matches[1], file);
                res.set_content(json{{"path", r.path.string()}, {"index", r.index}}.dump(), "application/json");
              }));

  if (!options_.static_dir.empty() && !server.set_mount_point("/static", options_.static_dir.string())) {
    throw Error(ErrorCode::IoError, "cannot serve static directory " + options_.static_dir.string());
  }
}

void serve(AnnotationService& service, const std::string& host, int port) {
  httplib::Server server;
  service.mount(server);
  if (!server.listen(host, port)) {
    throw Error(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

}  // namespace evopose
