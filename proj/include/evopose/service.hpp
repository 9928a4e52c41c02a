#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "evopose/camera.hpp"
#include "evopose/skeleton.hpp"

namespace httplib {
class Server;
}

namespace evopose {

inline constexpr std::size_t kDefaultHistoryLimit = 256;

struct ServiceOptions {
  Intrinsics intrinsics;
  Vec3 translation{0.0, 0.0, 5000.0};
  std::size_t history_limit = kDefaultHistoryLimit;
  // Saves land in this directory; a request may only name a plain file inside it.
  std::filesystem::path save_dir = ".";
  std::string default_save_file = "annotations.skel";
  std::string cors_origin = "*";
  // Optional directory served under /static.
  std::filesystem::path static_dir;
};

enum class Axis { X, Y, Z };

Axis parse_axis(std::string_view name);

// Snapshot of one session as sent to clients.
struct SessionState {
  std::string id;
  Pose pose;
  std::vector<SphericalBone> bones;
  Keypoints keypoints;
  Intrinsics intrinsics;
  Vec3 translation = Vec3::Zero();
  std::size_t history_depth = 0;
  bool dirty = false;
};

struct SaveResult {
  std::filesystem::path path;
  std::size_t index = 0;
};

// Session store behind the annotation HTTP API. All operations are
// thread-safe; mutations of one session are serialized.
class AnnotationService {
 public:
  AnnotationService(const KinematicTree& tree, std::vector<Pose> dataset, ServiceOptions options = {});

  // Starts from dataset pose `index`, or the rest pose when empty. Throws
  // NotFound for an index past the dataset.
  SessionState create_session(std::optional<std::size_t> index = std::nullopt);
  SessionState state(const std::string& id) const;
  SessionState edit_bone(const std::string& id, int bone, double d_theta, double d_phi);
  SessionState edit_global(const std::string& id, Axis axis, double d_angle);
  // Throws EmptyHistory when no edit is left to revert.
  SessionState undo(const std::string& id);
  // Appends the current pose to `file` (default_save_file when empty) in save_dir.
  SaveResult save(const std::string& id, const std::string& file = {});

  std::size_t session_count() const;
  std::size_t dataset_size() const noexcept { return dataset_.size(); }
  const KinematicTree& tree() const noexcept { return tree_; }
  const ServiceOptions& options() const noexcept { return options_; }

  // JSON documents exchanged over HTTP.
  std::string tree_json() const;
  std::string state_json(const SessionState& state, bool include_tree) const;

  // Registers every endpoint and the CORS handling on `server`.
  void mount(httplib::Server& server);

 private:
  struct Session {
    std::mutex mutex;
    std::string id;
    Pose pose;
    std::deque<Pose> history;
    bool dirty = false;
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  SessionState snapshot(const Session& session) const;
  SessionState snapshot(const std::string& id, const Pose& pose, std::size_t depth, bool dirty) const;
  SessionState commit(Session& session, const Pose& candidate);
  std::filesystem::path save_path(const std::string& file) const;

  const KinematicTree& tree_;
  std::vector<Pose> dataset_;
  ServiceOptions options_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
  std::mutex save_mutex_;
};

// Blocks serving the API on host:port until the server is stopped.
void serve(AnnotationService& service, const std::string& host, int port);

}  // namespace evopose
