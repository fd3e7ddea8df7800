#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "rgbid/calibration.hpp"
#include "rgbid/camera.hpp"
#include "rgbid/dataset.hpp"
#include "rgbid/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

rgbid::PipelineConfig load_pipeline_config(const std::string& path) {
  rgbid::PipelineConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json j = json::parse(in);
  cfg.keyframe_covisibility = j.value("keyframe_covisibility", cfg.keyframe_covisibility);
  cfg.reference_covisibility = j.value("reference_covisibility", cfg.reference_covisibility);
  cfg.queue_capacity = j.value("queue_capacity", cfg.queue_capacity);
  cfg.drop_oldest = j.value("drop_oldest", cfg.drop_oldest);
  cfg.buffer_capacity = j.value("buffer_capacity", cfg.buffer_capacity);
  cfg.compute_juts = j.value("compute_juts", cfg.compute_juts);
  cfg.max_loop_candidates = j.value("max_loop_candidates", cfg.max_loop_candidates);
  cfg.segmentation_k = j.value("segmentation_k", cfg.segmentation_k);
  cfg.alignment.levels = j.value("pyramid_levels", cfg.alignment.levels);
  if (j.contains("pyramid_iterations"))
    cfg.alignment.iterations = j.at("pyramid_iterations").get<std::vector<int>>();
  cfg.loop.score_threshold = j.value("loop_score_threshold", cfg.loop.score_threshold);
  cfg.loop.min_separation = j.value("loop_min_separation", cfg.loop.min_separation);
  cfg.loop.ransac_iterations = j.value("loop_ransac_iterations", cfg.loop.ransac_iterations);
  cfg.loop.inlier_radius = j.value("loop_inlier_radius", cfg.loop.inlier_radius);
  cfg.loop.min_inliers = j.value("loop_min_inliers", cfg.loop.min_inliers);
  cfg.loop.min_hull_fraction = j.value("loop_min_hull_fraction", cfg.loop.min_hull_fraction);
  cfg.optimize.max_iterations = j.value("posegraph_max_iterations", cfg.optimize.max_iterations);
  return cfg;
}

int cmd_run(const std::string& dataset_dir, const std::string& calib_path,
            const std::string& config_path, bool no_loop, bool deterministic,
            const std::string& trajectory_out, const std::string& map_out,
            const std::string& loop_log_out, double voxel, int max_frames, double depth_factor,
            bool dump_juts) {
  rgbid::CameraCalibration calib = rgbid::load_calibration(calib_path);
  rgbid::PipelineConfig cfg = load_pipeline_config(config_path);
  cfg.enable_loop = !no_loop;
  cfg.deterministic = deterministic;
  cfg.compute_juts = cfg.compute_juts || dump_juts;

  rgbid::DatasetConfig dcfg;
  dcfg.depth_factor = depth_factor;
  rgbid::AssociatedSequence seq = rgbid::load_and_associate(dataset_dir, dcfg);
  if (seq.pairs.empty()) throw std::runtime_error("no associated rgb-depth pairs in " + dataset_dir);

  const bool apply_depth_model =
      calib.depth.beta0 != 0.0 || calib.depth.beta1 != 1.0 ||
      calib.depth.q0 != std::array<double, 9>{} ||
      calib.depth.q1 != std::array<double, 9>{1, 0, 0, 0, 0, 0, 0, 0, 0};

  rgbid::Pipeline pipeline(calib.rgb, cfg);
  int n = 0;
  for (const auto& pair : seq.pairs) {
    if (max_frames > 0 && n >= max_frames) break;
    rgbid::FrameData frame = rgbid::load_frame(pair, dcfg);
    if (apply_depth_model)
      frame.inverse_depth =
          rgbid::correct_inverse_depth(frame.inverse_depth, calib.depth, calib.rgb, true);
    pipeline.process_frame(frame, pair.timestamp);
    ++n;
  }
  pipeline.finish();

  const rgbid::Trajectory traj = pipeline.trajectory();
  std::vector<rgbid::TimedPose> out;
  for (const auto& f : traj.frames) out.push_back({f.timestamp, f.T_W_k});
  rgbid::save_trajectory(trajectory_out, out);
  std::cout << "frames: " << n << ", keyframes: " << pipeline.keyframe_count() << "\n";

  if (!map_out.empty()) {
    rgbid::PointCloud cloud = rgbid::export_map(pipeline.keyframes(), calib.rgb, voxel);
    rgbid::save_ply(map_out, cloud);
    std::cout << "map: " << cloud.points.size() << " points -> " << map_out << "\n";
  }
  if (!loop_log_out.empty()) {
    std::ofstream log(loop_log_out);
    for (const auto& line : pipeline.loop_log()) log << line << "\n";
  }
  for (const auto& line : pipeline.loop_log()) std::cout << line << "\n";
  if (dump_juts) {
    int kf_id = 0;
    for (const auto& labeling : pipeline.jut_labelings()) {
      std::cout << "JUTS keyframe " << kf_id++ << ": " << labeling.juts.size() << " juts\n";
    }
  }
  std::cout << pipeline.timing().format();
  return 0;
}

int cmd_calibrate(const std::string& depth_dir, const std::string& poses_path,
                  const std::string& plane_path, const std::string& calib_path,
                  const std::string& out_path, double depth_scale) {
  rgbid::CameraCalibration calib = rgbid::load_calibration(calib_path);

  // Plane file: one line `nx ny nz d`.
  std::ifstream pf(plane_path);
  if (!pf) throw std::runtime_error("cannot open " + plane_path);
  rgbid::Vec3 n;
  double d;
  if (!(pf >> n.x() >> n.y() >> n.z() >> d))
    throw std::runtime_error(plane_path + ": expected `nx ny nz d`");
  n.normalize();

  // Poses file: `timestamp` + 16 row-major matrix entries per line.
  std::ifstream posef(poses_path);
  if (!posef) throw std::runtime_error("cannot open " + poses_path);
  struct TimedPose4 {
    double t;
    rgbid::Pose T;
  };
  std::vector<TimedPose4> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(posef, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    TimedPose4 tp;
    rgbid::Mat4 m;
    if (!(ls >> tp.t)) throw std::runtime_error(poses_path + ": bad line " + std::to_string(line_no));
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        if (!(ls >> m(r, c)))
          throw std::runtime_error(poses_path + ": bad line " + std::to_string(line_no));
    tp.T.R = m.topLeftCorner<3, 3>();
    tp.T.t = m.topRightCorner<3, 1>();
    poses.push_back(tp);
  }

  // Depth PNGs named `<timestamp>.png`, matched by nearest pose timestamp.
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(depth_dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<rgbid::CalibShot> shots;
  for (const auto& f : files) {
    double t;
    try {
      t = std::stod(f.stem().string());
    } catch (...) {
      continue;
    }
    const TimedPose4* best = nullptr;
    for (const auto& p : poses)
      if (!best || std::abs(p.t - t) < std::abs(best->t - t)) best = &p;
    if (!best || std::abs(best->t - t) > 0.02) continue;

    cv::Mat depth = cv::imread(f.string(), cv::IMREAD_UNCHANGED);
    if (depth.empty() || depth.type() != CV_16UC1)
      throw std::runtime_error("cannot read 16-bit depth " + f.string());
    rgbid::CalibShot shot;
    shot.W_m = rgbid::InverseDepthMap(depth.cols, depth.rows);
    for (int y = 0; y < depth.rows; ++y) {
      const uint16_t* row = depth.ptr<uint16_t>(y);
      for (int x = 0; x < depth.cols; ++x)
        shot.W_m(x, y) = row[x] == 0 ? rgbid::kHole : depth_scale / row[x];
    }
    shot.T_WC = best->T;
    shot.plane_normal = n;
    shot.plane_d = d;
    shot.timestamp = t;
    shots.push_back(std::move(shot));
  }
  if (shots.size() < 2) throw std::runtime_error("need at least 2 usable shots");

  std::vector<rgbid::InverseDepthMap> gt, raw;
  std::vector<double> timestamps;
  for (const auto& shot : shots) {
    auto g = rgbid::gt_inverse_depth(shot, calib.ir, calib.extrinsics);
    if (!g) {
      std::cerr << "shot " << shot.timestamp << ": degenerate plane geometry, skipped\n";
      continue;
    }
    gt.push_back(std::move(*g));
    raw.push_back(shot.W_m);
    timestamps.push_back(shot.timestamp);
  }
  if (gt.size() < 2) throw std::runtime_error("fewer than 2 non-degenerate shots");

  const rgbid::LinearDepthFit lin = rgbid::fit_linear(gt, raw, calib.depth.p0);
  calib.depth.beta0 = lin.beta0;
  calib.depth.beta1 = lin.beta1;

  std::vector<rgbid::InverseDepthMap> corrected;
  for (const auto& w : raw)
    corrected.push_back(rgbid::correct_inverse_depth(w, calib.depth, calib.ir, false));
  const rgbid::SpatialDepthFit sp = rgbid::fit_spatial(gt, corrected, calib.ir);
  calib.depth.q0 = sp.q0;
  calib.depth.q1 = sp.q1;

  rgbid::save_calibration(calib, out_path);
  std::cout << "beta0=" << lin.beta0 << " beta1=" << lin.beta1
            << " (condition " << sp.condition_number << ")\n";
  std::cout << "shot        bias[m]     sigma[m]   (linear)   bias[m]     sigma[m]   (full)\n";
  for (size_t i = 0; i < gt.size(); ++i) {
    const rgbid::ShotError e1 = rgbid::shot_error(corrected[i], gt[i]);
    const rgbid::InverseDepthMap full =
        rgbid::correct_inverse_depth(raw[i], calib.depth, calib.ir, true);
    const rgbid::ShotError e2 = rgbid::shot_error(full, gt[i]);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10.3f %10.5f %10.5f            %10.5f %10.5f\n",
                  timestamps[i], e1.bias, e1.stddev, e2.bias, e2.stddev);
    std::cout << buf;
  }
  return 0;
}

int cmd_evaluate(const std::string& est_path, const std::string& gt_path) {
  const auto est = rgbid::load_trajectory(est_path);
  const auto gt = rgbid::load_trajectory(gt_path);
  const rgbid::AteReport report = rgbid::evaluate_ate(est, gt);
  std::cout << "pairs:  " << report.errors.size() << "\n";
  std::cout << "rmse:   " << report.rmse << " m\n";
  std::cout << "median: " << report.median << " m\n";
  std::cout << "max:    " << report.max << " m\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense RGB-D SLAM with inverse-depth odometry and loop closure"};
  app.require_subcommand(1);

  // run
  std::string dataset_dir, calib_path, config_path;
  std::string trajectory_out = "trajectory.txt", map_out, loop_log_out;
  bool no_loop = false, deterministic = false, dump_juts = false;
  double voxel = 0.01, depth_factor = 1.0;
  int max_frames = 0;
  auto* run = app.add_subcommand("run", "Run SLAM on a TUM-format sequence");
  run->add_option("--dataset", dataset_dir, "Sequence directory")->required();
  run->add_option("--calib", calib_path, "Camera calibration file")->required();
  run->add_option("--config", config_path, "JSON pipeline configuration");
  run->add_option("--trajectory", trajectory_out, "Output trajectory (TUM format)");
  run->add_option("--map", map_out, "Output point cloud (binary PLY)");
  run->add_option("--loop-log", loop_log_out, "Output loop-closure log");
  run->add_option("--voxel", voxel, "Map voxel size [m], 0 disables filtering");
  run->add_option("--max-frames", max_frames, "Process at most N frames (0 = all)");
  run->add_option("--depth-factor", depth_factor, "Constant depth scale correction (fr2)");
  run->add_flag("--no-loop", no_loop, "Disable loop closure");
  run->add_flag("--deterministic", deterministic, "Single-thread bit-stable replay");
  run->add_flag("--dump-juts", dump_juts, "Print per-keyframe jut counts");

  // calibrate-depth
  std::string depth_dir, poses_path, plane_path, calib_in, calib_out = "calibration_out.txt";
  double depth_scale = 5000.0;
  auto* cal = app.add_subcommand("calibrate-depth", "Fit the depth-sensor intrinsics");
  cal->add_option("--depth-dir", depth_dir, "Directory of 16-bit depth PNGs")->required();
  cal->add_option("--poses", poses_path, "Per-shot camera poses (timestamp + 4x4)")->required();
  cal->add_option("--plane", plane_path, "Wall plane file: nx ny nz d")->required();
  cal->add_option("--calib", calib_in, "Input camera calibration")->required();
  cal->add_option("--out", calib_out, "Output calibration file");
  cal->add_option("--depth-scale", depth_scale, "PNG value per meter");

  // evaluate-ate
  std::string est_path, gt_path;
  auto* ate = app.add_subcommand("evaluate-ate", "Absolute trajectory error");
  ate->add_option("est", est_path, "Estimated trajectory (TUM format)")->required();
  ate->add_option("gt", gt_path, "Ground-truth trajectory (TUM format)")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed())
      return cmd_run(dataset_dir, calib_path, config_path, no_loop, deterministic, trajectory_out,
                     map_out, loop_log_out, voxel, max_frames, depth_factor, dump_juts);
    if (cal->parsed())
      return cmd_calibrate(depth_dir, poses_path, plane_path, calib_in, calib_out, depth_scale);
    if (ate->parsed()) return cmd_evaluate(est_path, gt_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
