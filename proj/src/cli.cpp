#include "evopose/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "evopose/camera.hpp"
#include "evopose/config.hpp"
#include "evopose/datastore.hpp"
#include "evopose/error.hpp"
#include "evopose/evolve.hpp"
#include "evopose/metrics.hpp"
#include "evopose/regressor.hpp"
#include "evopose/service.hpp"
#include "evopose/synth.hpp"
#include "evopose/validity.hpp"

namespace evopose {

namespace fs = std::filesystem;

namespace {

// Raised for malformed invocations that CLI11 cannot detect on its own.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel env_log_level() {
  const char* value = std::getenv("EVOPOSE_LOG");
  if (value == nullptr) return LogLevel::Info;
  const std::string v(value);
  if (v == "quiet" || v == "0") return LogLevel::Quiet;
  if (v == "debug" || v == "2") return LogLevel::Debug;
  return LogLevel::Info;
}

// String-valued flags named after config keys ("noise_sigma" -> --noise-sigma).
// Only flags given on the command line override the config file.
class KeyFlags {
 public:
  void add(CLI::App* app, const std::string& key, const std::string& help) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    auto [it, inserted] = values_.emplace(key, std::string());
    if (!inserted) return;
    options_.emplace_back(key, app->add_option(flag, it->second, help));
  }

  void apply(KeyValueConfig& kv) const {
    for (const auto& [key, option] : options_) {
      if (option->count() > 0) kv.set(key, values_.at(key));
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
};

void add_evolution_flags(CLI::App* app, KeyFlags& f) {
  f.add(app, "generations", "number of generations G");
  f.add(app, "noise_sigma", "orientation mutation std (rad)");
  f.add(app, "pairs_per_generation", "parent pairs sampled per generation");
  f.add(app, "mutation_probability", "probability of each mutation kind per child");
  f.add(app, "global_orientation_sigma", "yaw mutation std (rad)");
  f.add(app, "tilt_sigma", "tilt mutation std (rad)");
  f.add(app, "length_sigma", "bone length factor std");
  f.add(app, "length_clip_min", "smallest bone length factor");
  f.add(app, "length_clip_max", "largest bone length factor");
  f.add(app, "rng_seed", "random seed");
  f.add(app, "max_population", "stop at this population size (0 = no cap)");
  f.add(app, "growth", "stop at growth x seed size (0 = off)");
}

void add_grid_flags(CLI::App* app, KeyFlags& f) {
  f.add(app, "theta_bins", "validity grid polar bins");
  f.add(app, "phi_bins", "validity grid azimuth bins");
  f.add(app, "dilation", "validity grid dilation radius");
}

void add_intrinsics_flags(CLI::App* app, KeyFlags& f) {
  f.add(app, "fx", "focal length x (px)");
  f.add(app, "fy", "focal length y (px)");
  f.add(app, "cx", "principal point x (px)");
  f.add(app, "cy", "principal point y (px)");
  f.add(app, "width", "image width (px)");
  f.add(app, "height", "image height (px)");
}

void add_pair_flags(CLI::App* app, KeyFlags& f) {
  f.add(app, "depth_min", "smallest root depth (mm)");
  f.add(app, "depth_max", "largest root depth (mm)");
  f.add(app, "lateral_fraction", "scale of the lateral root offset range");
  f.add(app, "max_attempts", "placement attempts per pose");
  f.add(app, "rng_seed", "random seed");
}

void add_learner_flags(CLI::App* app, KeyFlags& f) {
  f.add(app, "width", "hidden width d");
  f.add(app, "blocks", "residual blocks R");
  f.add(app, "dropout", "dropout probability");
  f.add(app, "input_dim", "input dimension");
  f.add(app, "output_dim", "output dimension");
  f.add(app, "bn_momentum", "batch norm running-stat momentum");
  f.add(app, "bn_eps", "batch norm epsilon");
}

void add_train_flags(CLI::App* app, KeyFlags& f) {
  f.add(app, "learning_rate", "Adam learning rate");
  f.add(app, "epochs", "epochs per stage");
  f.add(app, "batch_size", "minibatch size");
  f.add(app, "beta1", "Adam beta1");
  f.add(app, "beta2", "Adam beta2");
  f.add(app, "adam_eps", "Adam epsilon");
  f.add(app, "rng_seed", "random seed");
  f.add(app, "stages", "cascade length T");
  f.add(app, "concat_prediction", "feed the current estimate to every learner (true/false)");
}

void add_synth_flags(CLI::App* app, KeyFlags& f) {
  f.add(app, "count", "number of poses");
  f.add(app, "rng_seed", "random seed");
  f.add(app, "clusters", "all, even, odd or a comma list of cluster ids");
  f.add(app, "angle_noise", "limb angle noise (rad)");
  f.add(app, "torso_noise", "torso angle noise (rad)");
  f.add(app, "yaw_range", "yaw drawn in [-range, range] (rad)");
  f.add(app, "scale_min", "smallest subject scale");
  f.add(app, "scale_max", "largest subject scale");
}

std::vector<int> parse_clusters(const std::string& text) {
  if (text == "all" || text.empty()) return {};
  if (text == "even") return even_clusters();
  if (text == "odd") return odd_clusters();
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int id = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(id);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, "bad cluster id '" + item + "'");
    }
  }
  return out;
}

std::string clusters_text(const std::string& text) { return text.empty() ? "all" : text; }

// Writes to `<target>.partial` and renames on commit; uncommitted files are removed.
class StagedFile {
 public:
  explicit StagedFile(fs::path target) : target_(std::move(target)), temp_(target_.string() + ".partial") {}
  ~StagedFile() {
    if (!committed_) {
      std::error_code ec;
      fs::remove(temp_, ec);
    }
  }
  StagedFile(const StagedFile&) = delete;
  StagedFile& operator=(const StagedFile&) = delete;

  const fs::path& path() const noexcept { return temp_; }
  const fs::path& target() const noexcept { return target_; }
  void commit() {
    fs::rename(temp_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path temp_;
  bool committed_ = false;
};

fs::path config_echo_path(const fs::path& output) { return output.string() + ".config.txt"; }

struct Context {
  std::ostream& out;
  std::ostream& err;
  LogLevel level;
  const KinematicTree& tree;

  bool info() const { return level >= LogLevel::Info; }
  bool debug() const { return level >= LogLevel::Debug; }
};

struct Common {
  std::string config_path;
  std::string tree_path;
  bool quiet = false;
  bool verbose = false;
};

KeyValueConfig layered(const Common& common, const KeyFlags& flags, const std::string& extra_file = {}) {
  KeyValueConfig kv;
  if (!common.config_path.empty()) kv = KeyValueConfig::load(common.config_path);
  if (!extra_file.empty()) kv.merge(KeyValueConfig::load(extra_file));
  flags.apply(kv);
  return kv;
}

// ---------------------------------------------------------------- commands

struct SynthArgs {
  KeyFlags flags;
  std::string output;
};

int cmd_synth(const Context& ctx, const Common& common, const SynthArgs& a) {
  const KeyValueConfig kv = layered(common, a.flags);
  SynthConfig cfg;
  const long long count = kv.get_int("count", static_cast<int>(cfg.count));
  if (count < 1) throw Error(ErrorCode::InvalidConfig, "count must be >= 1");
  cfg.count = static_cast<std::size_t>(count);
  cfg.rng_seed = kv.get_u64("rng_seed", cfg.rng_seed);
  const std::string clusters = kv.get_string("clusters", "all");
  cfg.clusters = parse_clusters(clusters);
  cfg.angle_noise = kv.get_double("angle_noise", cfg.angle_noise);
  cfg.torso_noise = kv.get_double("torso_noise", cfg.torso_noise);
  cfg.yaw_range = kv.get_double("yaw_range", cfg.yaw_range);
  cfg.scale_min = kv.get_double("scale_min", cfg.scale_min);
  cfg.scale_max = kv.get_double("scale_max", cfg.scale_max);

  const std::vector<Pose> poses = synthesize_poses(ctx.tree, cfg);

  StagedFile out(a.output);
  StagedFile echo(config_echo_path(a.output));
  save_skeletons(out.path(), poses, ctx.tree);
  KeyValueConfig effective;
  effective.set("count", static_cast<std::uint64_t>(cfg.count));
  effective.set("rng_seed", cfg.rng_seed);
  effective.set("clusters", clusters_text(clusters));
  effective.set("angle_noise", cfg.angle_noise);
  effective.set("torso_noise", cfg.torso_noise);
  effective.set("yaw_range", cfg.yaw_range);
  effective.set("scale_min", cfg.scale_min);
  effective.set("scale_max", cfg.scale_max);
  effective.save(echo.path());
  out.commit();
  echo.commit();
  if (ctx.info()) ctx.out << "wrote " << poses.size() << " poses to " << a.output << "\n";
  return kExitOk;
}

struct EvolveArgs {
  KeyFlags flags;
  std::string input;
  std::string output;
  std::string provenance;
  std::string validity;
  std::string save_validity;
};

int cmd_evolve(const Context& ctx, const Common& common, const EvolveArgs& a) {
  const KeyValueConfig kv = layered(common, a.flags);
  EvolutionConfig cfg = read_evolution_config(kv, EvolutionConfig{});
  const GridShape grid = read_grid_shape(kv, GridShape{});
  const double growth = kv.get_double("growth", 0.0);
  if (!(growth >= 0.0) || !std::isfinite(growth)) throw Error(ErrorCode::InvalidConfig, "growth must be >= 0");
  if (growth > 0.0 && kv.has("max_population") && cfg.max_population > 0) {
    throw Error(ErrorCode::InvalidConfig, "growth and max_population are mutually exclusive");
  }

  std::vector<Pose> seed = load_skeletons(a.input, ctx.tree);
  if (seed.empty()) throw Error(ErrorCode::EmptyPopulation, "seed file holds no poses");
  if (growth > 0.0) cfg.max_population = static_cast<std::size_t>(std::ceil(growth * static_cast<double>(seed.size())));
  const ValidityModel model =
      a.validity.empty() ? ValidityModel::fit(seed, ctx.tree, grid) : load_validity(a.validity);
  if (model.bone_count() != ctx.tree.bone_count()) {
    throw Error(ErrorCode::ShapeMismatch, "validity model does not match the skeleton");
  }

  const fs::path prov_path = a.provenance.empty() ? fs::path(a.output + ".prov") : fs::path(a.provenance);
  StagedFile out(a.output);
  StagedFile prov(prov_path);
  StagedFile echo(config_echo_path(a.output));
  std::optional<StagedFile> grid_out;
  if (!a.save_validity.empty()) grid_out.emplace(a.save_validity);

  SkeletonWriter writer(out.path(), ctx.tree.joint_count());
  for (const Pose& p : seed) writer.append(p);
  EvolutionObserver observer;
  observer.on_survivor = [&](const Pose& p, const Provenance&) { writer.append(p); };
  observer.on_generation = [&](const GenerationStats& s) {
    if (ctx.info()) {
      ctx.out << "generation " << s.generation << ": candidates " << s.candidates << ", accepted " << s.accepted
              << ", rejected " << s.rejected << ", population " << s.population << "\n";
    }
  };
  const Population result = evolve(Population::from_seed(std::move(seed)), cfg, model, ctx.tree, observer);
  writer.close();
  if (writer.count() != result.size()) throw Error(ErrorCode::InvariantViolation, "streamed count mismatch");
  save_provenance(prov.path(), result.provenance);
  if (grid_out) save_validity(grid_out->path(), model);

  KeyValueConfig effective;
  write_config(effective, cfg);
  write_config(effective, grid);
  effective.set("growth", growth);
  effective.save(echo.path());

  out.commit();
  prov.commit();
  echo.commit();
  if (grid_out) grid_out->commit();
  if (ctx.info()) ctx.out << "wrote " << result.size() << " poses to " << a.output << "\n";
  return kExitOk;
}

struct ProjectArgs {
  KeyFlags flags;
  std::string input;
  std::string output;
  std::string camera;
};

int cmd_project(const Context& ctx, const Common& common, const ProjectArgs& a) {
  const KeyValueConfig kv = layered(common, a.flags, a.camera);
  const Intrinsics K = read_intrinsics(kv, Intrinsics{});
  const PairConfig cfg = read_pair_config(kv, PairConfig{});

  StagedFile out(a.output);
  StagedFile echo(config_echo_path(a.output));
  SkeletonReader reader(a.input, ctx.tree);
  PairWriter writer(out.path(), K, ctx.tree.joint_count());
  PairGenerator generator(K, cfg);
  Pose pose;
  while (reader.next(pose)) {
    if (auto pair = generator.place(pose)) writer.append(*pair);
  }
  writer.close();

  KeyValueConfig effective;
  write_config(effective, K);
  write_config(effective, cfg);
  effective.save(echo.path());
  out.commit();
  echo.commit();
  if (ctx.info()) {
    ctx.out << "wrote " << generator.emitted() << " pairs to " << a.output << " (" << generator.skipped()
            << " poses could not be placed)\n";
  }
  return kExitOk;
}

struct TrainArgs {
  KeyFlags flags;
  std::string input;
  std::string output;
};

int cmd_train(const Context& ctx, const Common& common, const TrainArgs& a) {
  const KeyValueConfig kv = layered(common, a.flags);
  const LearnerConfig lc = read_learner_config(kv, LearnerConfig{});
  const TrainConfig tc = read_train_config(kv, TrainConfig{});

  const PairFile data = load_pairs(a.input, ctx.tree);
  if (data.pairs.empty()) throw Error(ErrorCode::EmptyEval, "pair file holds no pairs");
  const Matrix X = pair_inputs(data.pairs);
  const Matrix Y = pair_targets(data.pairs);

  StagedFile out(a.output);
  StagedFile summary(a.output + ".train.txt");
  StagedFile echo(config_echo_path(a.output));

  TrainLog log;
  const EpochCallback on_epoch = [&](int stage, int epoch, double loss, double mpjpe) {
    if (ctx.debug()) {
      ctx.out << "stage " << stage + 1 << " epoch " << epoch << ": loss " << loss << ", train MPJPE " << mpjpe
              << " mm\n";
    }
  };
  const Cascade cascade = train_cascade(X, Y, lc, tc, &log, on_epoch);
  save_cascade(out.path(), cascade);

  KeyValueConfig report;
  report.set("pairs", static_cast<std::uint64_t>(data.pairs.size()));
  report.set("stages", static_cast<int>(log.stage_mpjpe.size()));
  for (std::size_t s = 0; s < log.stage_mpjpe.size(); ++s) {
    report.set("stage" + std::to_string(s + 1) + "_mpjpe_mm", log.stage_mpjpe[s]);
    report.set("stage" + std::to_string(s + 1) + "_best_epoch", log.best_epoch[s]);
    if (ctx.info()) {
      ctx.out << "stage " << s + 1 << ": train MPJPE " << log.stage_mpjpe[s] << " mm (best epoch "
              << log.best_epoch[s] << ")\n";
    }
  }
  report.set("final_mpjpe_mm", log.stage_mpjpe.back());
  report.save(summary.path());

  KeyValueConfig effective;
  write_config(effective, lc);
  write_config(effective, tc);
  effective.save(echo.path());
  out.commit();
  summary.commit();
  echo.commit();
  return kExitOk;
}

struct EvalArgs {
  KeyFlags flags;
  std::string input;
  std::string model;
  std::string predictions;
  std::string output;
};

std::vector<Joints> load_predictions(const fs::path& path, const KinematicTree& tree) {
  const std::vector<Pose> poses =
      path.extension() == ".npy" ? import_npy(path, tree, 1.0) : load_skeletons(path, tree);
  std::vector<Joints> out;
  out.reserve(poses.size());
  for (const Pose& p : poses) out.push_back(p.joints);
  return out;
}

int cmd_eval(const Context& ctx, const Common& common, const EvalArgs& a) {
  if (a.model.empty() == a.predictions.empty()) throw UsageError("exactly one of --model or --predictions is required");
  const KeyValueConfig kv = layered(common, a.flags);
  const std::string protocol_name = kv.get_string("protocol", "p1");
  Protocol protocol;
  if (protocol_name == "p1" || protocol_name == "P1") {
    protocol = Protocol::P1;
  } else if (protocol_name == "p2" || protocol_name == "P2") {
    protocol = Protocol::P2;
  } else {
    throw Error(ErrorCode::InvalidConfig, "protocol must be p1 or p2");
  }
  const std::string format = kv.get_string("format", "text");
  if (format != "text" && format != "kv" && format != "csv") {
    throw Error(ErrorCode::InvalidConfig, "format must be text, kv or csv");
  }
  const double threshold = kv.get_double("pck_threshold", kDefaultPckThreshold);
  if (!(threshold >= 0.0) || !std::isfinite(threshold)) throw Error(ErrorCode::InvalidConfig, "pck_threshold must be >= 0");

  const PairFile data = load_pairs(a.input, ctx.tree);
  std::vector<Joints> gts;
  gts.reserve(data.pairs.size());
  for (const Pair2D3D& p : data.pairs) gts.push_back(p.target.joints);

  std::vector<Joints> preds;
  if (!a.model.empty()) {
    const Cascade cascade = load_cascade(a.model);
    const Matrix P = cascade.predict(pair_inputs(data.pairs));
    if (P.rows() != 3 * ctx.tree.joint_count()) throw Error(ErrorCode::ShapeMismatch, "model output size differs");
    preds.reserve(static_cast<std::size_t>(P.cols()));
    for (Eigen::Index n = 0; n < P.cols(); ++n) preds.push_back(P.col(n).reshaped(3, ctx.tree.joint_count()));
  } else {
    preds = load_predictions(a.predictions, ctx.tree);
  }
  if (preds.size() != gts.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(preds.size()) + " predictions for " +
                                              std::to_string(gts.size()) + " pairs");
  }

  const EvalReport report = evaluate(preds, gts, ctx.tree, protocol, threshold);
  const std::string text = format == "kv" ? report.to_key_values()
                           : format == "csv" ? report.per_joint_csv()
                                             : report.to_text();
  ctx.out << text;
  if (!a.output.empty()) {
    StagedFile out(a.output);
    StagedFile echo(config_echo_path(a.output));
    write_file(out.path(), text);
    KeyValueConfig effective;
    effective.set("protocol", protocol == Protocol::P1 ? "p1" : "p2");
    effective.set("format", format);
    effective.set("pck_threshold", threshold);
    effective.save(echo.path());
    out.commit();
    echo.commit();
  }
  return kExitOk;
}

struct ServeArgs {
  KeyFlags flags;
  std::string dataset;
  std::string camera;
  std::string save_dir = ".";
  std::string static_dir;
};

int cmd_serve(const Context& ctx, const Common& common, const ServeArgs& a) {
  const KeyValueConfig kv = layered(common, a.flags, a.camera);
  ServiceOptions opts;
  opts.intrinsics = read_intrinsics(kv, Intrinsics{});
  opts.translation.z() = kv.get_double("root_depth", opts.translation.z());
  const int history = kv.get_int("history_limit", static_cast<int>(opts.history_limit));
  if (history < 1) throw Error(ErrorCode::InvalidConfig, "history_limit must be >= 1");
  opts.history_limit = static_cast<std::size_t>(history);
  opts.cors_origin = kv.get_string("cors_origin", opts.cors_origin);
  opts.save_dir = a.save_dir;
  opts.static_dir = a.static_dir;
  const std::string host = kv.get_string("host", "127.0.0.1");
  const int port = kv.get_int("port", 8080);
  if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidConfig, "port out of range");
  if (!fs::is_directory(opts.save_dir)) throw Error(ErrorCode::InvalidConfig, "save directory does not exist");

  std::vector<Pose> dataset;
  if (!a.dataset.empty()) dataset = load_skeletons(a.dataset, ctx.tree);
  AnnotationService service(ctx.tree, std::move(dataset), opts);
  if (ctx.info()) {
    ctx.out << "serving " << service.dataset_size() << " poses on http://" << host << ":" << port << "\n";
    ctx.out.flush();
  }
  serve(service, host, port);
  return kExitOk;
}

struct ImportArgs {
  KeyFlags flags;
  std::string input;
  std::string output;
};

int cmd_import(const Context& ctx, const Common& common, const ImportArgs& a) {
  const KeyValueConfig kv = layered(common, a.flags);
  const double scale = kv.get_double("scale", 1.0);
  if (!(scale > 0.0) || !std::isfinite(scale)) throw Error(ErrorCode::InvalidConfig, "scale must be positive");
  const std::vector<Pose> poses = import_npy(a.input, ctx.tree, scale);
  StagedFile out(a.output);
  StagedFile echo(config_echo_path(a.output));
  save_skeletons(out.path(), poses, ctx.tree);
  KeyValueConfig effective;
  effective.set("scale", scale);
  effective.save(echo.path());
  out.commit();
  echo.commit();
  if (ctx.info()) ctx.out << "imported " << poses.size() << " poses to " << a.output << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Evolutionary training-data synthesis for 2D-to-3D human pose lifting", "evopose");
  app.require_subcommand(1);
  app.set_version_flag("--version", "evopose 1.0");

  Common common;
  app.add_option("--config", common.config_path, "key = value config file; explicit flags take precedence")
      ->check(CLI::ExistingFile);
  app.add_option("--tree", common.tree_path, "skeleton tree file (default: 17-joint Human3.6M layout)")
      ->check(CLI::ExistingFile);
  app.add_flag("-q,--quiet", common.quiet, "suppress progress output");
  app.add_flag("-v,--verbose", common.verbose, "print per-epoch training progress");

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "sample poses from the synthetic posture family");
  synth_cmd->add_option("-o,--output", synth.output, "output SKEL1 file")->required();
  add_synth_flags(synth_cmd, synth.flags);

  EvolveArgs evolve_a;
  CLI::App* evolve_cmd = app.add_subcommand("evolve", "grow a seed population by crossover, mutation and selection");
  evolve_cmd->add_option("-i,--input", evolve_a.input, "seed SKEL1 file")->required()->check(CLI::ExistingFile);
  evolve_cmd->add_option("-o,--output", evolve_a.output, "evolved SKEL1 file")->required();
  evolve_cmd->add_option("--provenance", evolve_a.provenance, "PROV1 output (default: <output>.prov)");
  evolve_cmd->add_option("--validity", evolve_a.validity, "VGRID1 validity model (default: fit on the seed)")
      ->check(CLI::ExistingFile);
  evolve_cmd->add_option("--save-validity", evolve_a.save_validity, "write the validity model used");
  add_evolution_flags(evolve_cmd, evolve_a.flags);
  add_grid_flags(evolve_cmd, evolve_a.flags);

  ProjectArgs project_a;
  CLI::App* project_cmd = app.add_subcommand("project", "place poses before a camera and write 2D-3D pairs");
  project_cmd->add_option("-i,--input", project_a.input, "SKEL1 file")->required()->check(CLI::ExistingFile);
  project_cmd->add_option("-o,--output", project_a.output, "PAIR1 output")->required();
  project_cmd->add_option("--camera", project_a.camera, "camera intrinsics file")->check(CLI::ExistingFile);
  add_intrinsics_flags(project_cmd, project_a.flags);
  add_pair_flags(project_cmd, project_a.flags);

  TrainArgs train_a;
  CLI::App* train_cmd = app.add_subcommand("train", "train a cascaded 2D-to-3D regressor");
  train_cmd->add_option("-i,--input", train_a.input, "PAIR1 training file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("-o,--output", train_a.output, "CASC1 model output")->required();
  add_learner_flags(train_cmd, train_a.flags);
  add_train_flags(train_cmd, train_a.flags);

  EvalArgs eval_a;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a model or stored predictions against 2D-3D pairs");
  eval_cmd->add_option("-i,--input", eval_a.input, "PAIR1 evaluation file")->required()->check(CLI::ExistingFile);
  auto* model_opt = eval_cmd->add_option("--model", eval_a.model, "CASC1 model")->check(CLI::ExistingFile);
  eval_cmd->add_option("--predictions", eval_a.predictions, "predicted poses (SKEL1 or .npy)")
      ->check(CLI::ExistingFile)
      ->excludes(model_opt);
  eval_cmd->add_option("-o,--output", eval_a.output, "also write the report here");
  eval_a.flags.add(eval_cmd, "protocol", "p1 (no alignment) or p2 (Procrustes aligned)");
  eval_a.flags.add(eval_cmd, "format", "text, kv or csv");
  eval_a.flags.add(eval_cmd, "pck_threshold", "PCK threshold (mm)");

  ServeArgs serve_a;
  CLI::App* serve_cmd = app.add_subcommand("serve", "run the annotation HTTP service");
  serve_cmd->add_option("--dataset", serve_a.dataset, "SKEL1 poses sessions may start from")
      ->check(CLI::ExistingFile);
  serve_cmd->add_option("--camera", serve_a.camera, "camera intrinsics file")->check(CLI::ExistingFile);
  serve_cmd->add_option("--save-dir", serve_a.save_dir, "directory that receives saved poses");
  serve_cmd->add_option("--static", serve_a.static_dir, "directory served under /static")
      ->check(CLI::ExistingDirectory);
  serve_a.flags.add(serve_cmd, "host", "listen address");
  serve_a.flags.add(serve_cmd, "port", "listen port");
  serve_a.flags.add(serve_cmd, "history_limit", "undo steps kept per session");
  serve_a.flags.add(serve_cmd, "cors_origin", "allowed browser origin");
  serve_a.flags.add(serve_cmd, "root_depth", "root distance from the camera (mm)");
  add_intrinsics_flags(serve_cmd, serve_a.flags);

  ImportArgs import_a;
  CLI::App* import_cmd = app.add_subcommand("import", "convert a NumPy pose array to SKEL1");
  import_cmd->add_option("-i,--input", import_a.input, ".npy array (N,J,3) or (N,3J)")
      ->required()
      ->check(CLI::ExistingFile);
  import_cmd->add_option("-o,--output", import_a.output, "SKEL1 output")->required();
  import_a.flags.add(import_cmd, "scale", "multiplier to millimetres (1000 for metres)");

  std::vector<const char*> argv{"evopose"};
  for (const std::string& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    std::optional<KinematicTree> custom;
    if (!common.tree_path.empty()) custom.emplace(KinematicTree::load(common.tree_path));
    LogLevel level = env_log_level();
    if (common.verbose) level = LogLevel::Debug;
    if (common.quiet) level = LogLevel::Quiet;
    const Context ctx{out, err, level, custom ? *custom : KinematicTree::h36m()};

    if (synth_cmd->parsed()) return cmd_synth(ctx, common, synth);
    if (evolve_cmd->parsed()) return cmd_evolve(ctx, common, evolve_a);
    if (project_cmd->parsed()) return cmd_project(ctx, common, project_a);
    if (train_cmd->parsed()) return cmd_train(ctx, common, train_a);
    if (eval_cmd->parsed()) return cmd_eval(ctx, common, eval_a);
    if (serve_cmd->parsed()) return cmd_serve(ctx, common, serve_a);
    if (import_cmd->parsed()) return cmd_import(ctx, common, import_a);
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return e.code() == ErrorCode::InvalidConfig ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace evopose
