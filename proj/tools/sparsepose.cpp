// sparsepose command-line tool.
//
// Exit codes: 0 success, 1 runtime failure (unreadable or malformed input,
// invalid configuration), 2 usage error.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sparsepose/config.hpp"
#include "sparsepose/motiongen.hpp"
#include "sparsepose/online.hpp"
#include "sparsepose/pipeline.hpp"
#include "sparsepose/stream.hpp"
#include "sparsepose/tracker.hpp"

namespace sp = sparsepose;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SPARSEPOSE_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw sp::InvalidConfig(std::string("SPARSEPOSE_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return 0;
}

sp::LocationMask parse_mask(const std::string& s) {
  std::uint64_t v = 0;
  try {
    std::size_t used = 0;
    if (s.rfind("0b", 0) == 0) {
      v = std::stoull(s.substr(2), &used, 2);
      used += 2;
    } else {
      v = std::stoull(s, &used, 0);
    }
    if (used != s.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw sp::InvalidConfig("bad location mask '" + s + "' (use all, 0b10000, 16 or 0x10)");
  }
  if (v > 0x1F) throw sp::InvalidConfig("location mask '" + s + "' has bits beyond the five locations");
  const auto m = sp::LocationMask::from_id(static_cast<std::uint8_t>(v));
  if (!sp::is_canonical_location_set(m)) throw sp::InvalidConfig("location mask " + m.to_string() + " is not reachable by any device arrangement");
  return m;
}

int cmd_genmotion(const std::string& kind, double seconds, double fps, const std::optional<std::uint64_t>& seed,
                  const std::string& out) {
  const sp::MotionSequence m = sp::generate_motion(sp::parse_motion_kind(kind), seconds, resolve_seed(seed), fps);
  sp::save_motion(out, m);
  std::cout << "wrote " << m.size() << " frames (" << kind << ", " << m.fps << " fps) to " << out << "\n";
  return 0;
}

int cmd_synth(const std::string& motion_path, const std::string& out, const std::string& combos, double fps) {
  sp::MotionSequence m = sp::load_motion(motion_path);
  if (m.fps != fps) m = sp::resample(m, fps);
  const sp::Skeleton skel = sp::default_skeleton();
  const std::optional<sp::LocationMask> mask = combos == "all" ? std::nullopt : std::optional(parse_mask(combos));
  const sp::ImuDataset ds = sp::synthesize_dataset(m, skel, mask);
  sp::save_dataset(out, ds);
  std::cout << ds.sequences.size() << " streams x " << m.size() << " frames = " << ds.total_frames() << " samples\n";
  return 0;
}

int cmd_train(const std::string& data_path, const std::string& config_path, const std::string& out,
              const std::optional<std::uint64_t>& seed) {
  sp::net::ModelConfig model;
  sp::net::TrainConfig train;
  if (!config_path.empty()) {
    const auto cfg = sp::KeyValueConfig::load(config_path);
    sp::apply(cfg, model);
    sp::apply(cfg, train);
    for (const auto& k : cfg.unused()) std::cerr << "warning: unused config key '" << k << "'\n";
  }
  if (seed || std::getenv("SPARSEPOSE_SEED")) train.seed = resolve_seed(seed);
  const sp::ImuDataset ds = sp::load_dataset(data_path);
  const auto data = sp::training_sequences(ds);
  const sp::Skeleton skel = sp::default_skeleton();
  std::cout << "model " << model.embed_dim << "/" << model.hidden_dim << " x" << model.layers << ", "
            << sp::net::parameter_count(model) << " parameters; " << data.size() << " sequences\n";
  int shown_epoch = -1;
  double sum = 0.0;
  long count = 0;
  auto result = sp::net::train<float>(std::span<const sp::net::TrainingSequence>(data), model, train, skel,
                                      [&](long, int epoch, double loss) {
                                        if (epoch != shown_epoch && count > 0) {
                                          std::cout << "epoch " << shown_epoch + 1 << " loss " << sum / count << "\n";
                                          sum = 0.0;
                                          count = 0;
                                        }
                                        shown_epoch = epoch;
                                        sum += loss;
                                        ++count;
                                      });
  if (count > 0) std::cout << "epoch " << shown_epoch + 1 << " loss " << sum / count << "\n";
  sp::net::save_weights(out, result.weights);
  std::cout << result.steps << " steps; weights written to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& weights_path, const std::string& data_path, const std::string& gt_path, bool refine,
             const std::string& report_path) {
  const auto w = sp::net::load_weights<float>(weights_path);
  sp::ImuDataset ds = sp::load_dataset(data_path);
  if (!gt_path.empty()) {
    const sp::MotionSequence gt = sp::load_motion(gt_path);
    for (auto& s : ds.sequences) {
      if (s.frames.size() != gt.size()) throw sp::ShapeMismatch("ground-truth motion length differs from a data sequence");
      s.poses = gt.poses();
    }
  }
  if (!ds.has_poses()) throw sp::EmptyDataset("no ground truth: pass --gt or use a dataset with poses");
  const sp::Skeleton skel = sp::default_skeleton();
  const sp::SkinnedVertexSet mesh = sp::default_vertex_set(skel);
  sp::PredictOptions opt;
  opt.refine = refine;
  std::vector<sp::Pose> pred, gt;
  std::map<int, std::pair<double, int>> by_count;  // devices -> (sum mpjpe, n)
  for (const auto& s : ds.sequences) {
    const auto p = sp::predict_sequence(w, s, skel, opt);
    auto& slot = by_count[s.masks.front().count()];
    slot.first += sp::mpjpe(p, s.poses, skel);
    slot.second += 1;
    pred.insert(pred.end(), p.begin(), p.end());
    gt.insert(gt.end(), s.poses.begin(), s.poses.end());
  }
  // Jitter is computed per sequence; concatenation boundaries would add fake jerk.
  sp::EvalReport report = sp::evaluate(pred, gt, skel, mesh, ds.fps);
  double jitter = 0.0;
  for (const auto& s : ds.sequences) jitter += sp::jitter(sp::predict_sequence(w, s, skel, opt), skel, ds.fps);
  report.jitter = jitter / static_cast<double>(ds.sequences.size());
  std::cout << report.table(skel);
  std::cout << "\nlocations  MPJPE (cm)\n";
  for (const auto& [n, v] : by_count) std::cout << std::setw(9) << n << "  " << std::fixed << std::setprecision(2) << v.first / v.second << "\n";
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw sp::Error("cannot write " + report_path);
    out << report.key_values();
  }
  return 0;
}

int cmd_infer(const std::string& weights_path, const std::string& stream_path, const std::string& replay_path,
              const std::string& out, double speed, int smooth_window, bool refine) {
  const auto w = sp::net::load_weights<float>(weights_path);
  std::vector<sp::stream::Tick> ticks;
  if (!replay_path.empty()) {
    ticks = sp::stream::replay_dataset(sp::load_dataset(replay_path), speed);
  } else {
    sp::stream::Aggregator agg;
    agg.push_bytes(sp::binio::read_file(stream_path));
    agg.finish();
    ticks = agg.take_ticks();
    if (agg.rejected() > 0) std::cerr << agg.rejected() << " corrupt frames skipped\n";
  }
  const sp::Skeleton skel = sp::default_skeleton();
  sp::net::FastOnlineEstimator est(w);
  sp::TrailingSmoother smoother(smooth_window);
  sp::PoseStream ps;
  for (const auto& t : ticks) {
    const sp::ImuFrame f = smoother.push(t.frame);
    sp::Pose p = est.push(sp::scale_and_flatten(f, t.mask));
    if (refine) p = sp::refine(p, sp::measured_orientations(f), t.mask & f.present_mask(), skel).pose;
    ps.timestamps.push_back(t.frame.timestamp);
    ps.poses.push_back(p);
  }
  sp::save_pose_stream(out, ps);
  std::cout << ps.poses.size() << " poses written to " << out << "\n";
  return 0;
}

int cmd_track(const std::string& scenario_path, const std::string& config_path) {
  std::ifstream in(scenario_path);
  if (!in) throw sp::Error("cannot open scenario " + scenario_path);
  sp::tracking::TrackerConfig cfg;
  if (!config_path.empty()) sp::apply(sp::KeyValueConfig::load(config_path), cfg);
  const auto sc = sp::tracking::parse_scenario(in);
  for (const auto& t : sp::tracking::run_scenario(sc, cfg)) std::cout << t.to_string() << "\n";
  return 0;
}

int cmd_replay(const std::string& data_path, double speed, const std::string& out, const std::string& capture) {
  const sp::ImuDataset ds = sp::load_dataset(data_path);
  const auto script = sp::stream::make_replay_script(ds);
  if (!capture.empty()) {
    sp::binio::Bytes bytes;
    for (const auto& f : script.frames) {
      const auto b = sp::stream::encode(f);
      bytes.insert(bytes.end(), b.begin(), b.end());
    }
    sp::binio::write_file(capture, bytes);
  }
  sp::stream::ReplayStats stats;
  const auto ticks = sp::stream::replay_dataset(ds, speed, {}, &stats);
  std::map<std::uint8_t, std::size_t> masks;
  for (const auto& t : ticks) ++masks[t.mask.id()];
  std::cout << stats.frames_sent << " frames sent, " << ticks.size() << " ticks in " << std::fixed
            << std::setprecision(3) << stats.wall_seconds << " s\n";
  for (const auto& [id, n] : masks) {
    const auto m = sp::LocationMask::from_id(id);
    std::cout << "  " << m.binary() << " " << m.to_string() << ": " << n << "\n";
  }
  if (!out.empty()) {
    sp::ImuDataset agg;
    agg.fps = 25.0;
    agg.sequences.emplace_back();
    for (const auto& t : ticks) {
      agg.sequences.back().frames.push_back(t.frame);
      agg.sequences.back().masks.push_back(t.mask);
    }
    sp::save_dataset(out, agg);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Full-body pose from sparse consumer-device IMUs"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;

  std::string kind = "walk", out, motion, combos = "all", data, config, weights, gt, report, stream_file, replay_file,
              scenario, capture;
  double seconds = 10.0, fps = 25.0, speed = 1.0;
  bool refine = false;
  int smooth_window = 1;

  auto* gen = app.add_subcommand("genmotion", "Generate a procedural motion clip");
  gen->add_option("--kind", kind, "walk, armswing or jacks")->check(CLI::IsMember({"walk", "armswing", "jacks"}));
  gen->add_option("--seconds", seconds, "Clip length")->check(CLI::PositiveNumber);
  gen->add_option("--fps", fps, "Frame rate")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Random seed (default: SPARSEPOSE_SEED or 0)");
  gen->add_option("--out", out, "Motion file to write")->required();

  auto* synth = app.add_subcommand("synth", "Synthesize a masked IMU dataset from a motion file");
  synth->add_option("--motion", motion, "Motion file")->required();
  synth->add_option("--out", out, "Dataset file to write")->required();
  synth->add_option("--combos", combos, "all, or one location mask id such as 0b10000");
  synth->add_option("--fps", fps, "Output frame rate")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Train the pose network");
  train->add_option("--data", data, "Dataset with ground-truth poses")->required();
  train->add_option("--config", config, "key=value model/training config");
  train->add_option("--out", out, "Weight file to write")->required();
  train->add_option("--seed", seed, "Random seed (overrides the config)");

  auto* eval = app.add_subcommand("eval", "Evaluate weights on a dataset (online protocol)");
  eval->add_option("--weights", weights, "Weight file")->required();
  eval->add_option("--data", data, "Dataset file")->required();
  eval->add_option("--gt", gt, "Ground-truth motion file (default: poses stored in the dataset)");
  eval->add_flag("--refine", refine, "Apply IK refinement to every frame");
  eval->add_option("--report", report, "Also write the metrics as key=value lines");

  auto* infer = app.add_subcommand("infer", "Run online inference on a wire stream or a replayed dataset");
  infer->add_option("--weights", weights, "Weight file")->required();
  auto* in_stream = infer->add_option("--stream", stream_file, "Captured wire-frame byte stream");
  auto* in_replay = infer->add_option("--replay", replay_file, "Dataset to replay through the socket");
  in_stream->excludes(in_replay);
  infer->add_option("--out", out, "Pose stream file to write")->required();
  infer->add_option("--speed", speed, "Replay speed multiplier (0 = unpaced)")->check(CLI::NonNegativeNumber);
  infer->add_option("--smooth", smooth_window, "Trailing smoothing window applied to ticks (1 = none)");
  infer->add_flag("--refine", refine, "Apply IK refinement to every pose");

  auto* track = app.add_subcommand("track", "Run the device tracker on a scripted scenario");
  track->add_option("--scenario", scenario, "Scenario file")->required();
  track->add_option("--config", config, "key=value tracker thresholds");

  auto* replay = app.add_subcommand("replay", "Replay a dataset through the socket and aggregator");
  replay->add_option("--data", data, "Dataset file")->required();
  replay->add_option("--speed", speed, "Speed multiplier (0 = unpaced)")->check(CLI::NonNegativeNumber);
  replay->add_option("--out", out, "Write the aggregated ticks as a dataset");
  replay->add_option("--capture", capture, "Write the raw wire bytes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_genmotion(kind, seconds, fps, seed, out);
    if (*synth) return cmd_synth(motion, out, combos, fps);
    if (*train) return cmd_train(data, config, out, seed);
    if (*eval) return cmd_eval(weights, data, gt, refine, report);
    if (*infer) {
      if (stream_file.empty() == replay_file.empty()) {
        std::cerr << "infer: exactly one of --stream or --replay is required\n";
        return kExitUsage;
      }
      return cmd_infer(weights, stream_file, replay_file, out, speed, smooth_window, refine);
    }
    if (*track) return cmd_track(scenario, config);
    if (*replay) return cmd_replay(data, speed, out, capture);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
