#include "rgbid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Geometry>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "rgbid/loop.hpp"

namespace rgbid {

namespace {

struct TimedPath {
  double timestamp;
  std::string path;
};

std::vector<TimedPath> parse_file_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<TimedPath> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    TimedPath tp;
    if (!(ls >> tp.timestamp >> tp.path))
      throw std::runtime_error(path + ": unparsable line " + std::to_string(line_no));
    out.push_back(std::move(tp));
  }
  std::sort(out.begin(), out.end(),
            [](const TimedPath& a, const TimedPath& b) { return a.timestamp < b.timestamp; });
  return out;
}

bool file_exists(const std::string& path) { return std::ifstream(path).good(); }

}  // namespace

AssociatedSequence load_and_associate(const std::string& dir, const DatasetConfig& config) {
  const auto rgb = parse_file_list(dir + "/rgb.txt");
  const auto depth = parse_file_list(dir + "/depth.txt");

  // Standard greedy association: all pairs within the window, best |dt|
  // first, each timestamp consumed at most once.
  struct Cand {
    double dt;
    size_t r, d;
  };
  std::vector<Cand> cands;
  size_t lo = 0;
  for (size_t r = 0; r < rgb.size(); ++r) {
    while (lo < depth.size() && depth[lo].timestamp < rgb[r].timestamp - config.max_dt) ++lo;
    for (size_t d = lo; d < depth.size() && depth[d].timestamp <= rgb[r].timestamp + config.max_dt;
         ++d) {
      cands.push_back({std::abs(depth[d].timestamp - rgb[r].timestamp), r, d});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.dt != b.dt) return a.dt < b.dt;
    if (a.r != b.r) return a.r < b.r;
    return a.d < b.d;
  });
  std::vector<bool> used_r(rgb.size(), false), used_d(depth.size(), false);
  AssociatedSequence seq;
  for (const Cand& c : cands) {
    if (used_r[c.r] || used_d[c.d]) continue;
    used_r[c.r] = used_d[c.d] = true;
    seq.pairs.push_back(
        {rgb[c.r].timestamp, dir + "/" + rgb[c.r].path, dir + "/" + depth[c.d].path});
  }
  std::sort(seq.pairs.begin(), seq.pairs.end(),
            [](const AssociatedPair& a, const AssociatedPair& b) {
              return a.timestamp < b.timestamp;
            });

  if (file_exists(dir + "/groundtruth.txt"))
    seq.groundtruth = load_trajectory(dir + "/groundtruth.txt");
  return seq;
}

FrameData load_frame(const AssociatedPair& pair, const DatasetConfig& config) {
  cv::Mat rgb = cv::imread(pair.rgb_path, cv::IMREAD_COLOR);
  if (rgb.empty()) throw std::runtime_error("cannot decode " + pair.rgb_path);
  cv::Mat depth = cv::imread(pair.depth_path, cv::IMREAD_UNCHANGED);
  if (depth.empty()) throw std::runtime_error("cannot decode " + pair.depth_path);
  if (depth.type() != CV_16UC1)
    throw std::runtime_error(pair.depth_path + ": expected 16-bit single-channel depth");

  FrameData frame;
  frame.intensity = IntensityImage(rgb.cols, rgb.rows);
  for (int y = 0; y < rgb.rows; ++y) {
    const cv::Vec3b* row = rgb.ptr<cv::Vec3b>(y);  // BGR
    for (int x = 0; x < rgb.cols; ++x) {
      frame.intensity(x, y) =
          (0.299 * row[x][2] + 0.587 * row[x][1] + 0.114 * row[x][0]) / 255.0;
    }
  }
  frame.inverse_depth = InverseDepthMap(depth.cols, depth.rows);
  // depth_factor multiplies metric depth, so it divides inverse depth.
  const double scale = config.depth_scale / config.depth_factor;
  for (int y = 0; y < depth.rows; ++y) {
    const uint16_t* row = depth.ptr<uint16_t>(y);
    for (int x = 0; x < depth.cols; ++x) {
      frame.inverse_depth(x, y) =
          row[x] == 0 ? kHole : scale / static_cast<double>(row[x]);
    }
  }
  return frame;
}

std::vector<TimedPose> load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<TimedPose> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    TimedPose tp;
    double qx, qy, qz, qw;
    if (!(ls >> tp.timestamp >> tp.T_W_C.t.x() >> tp.T_W_C.t.y() >> tp.T_W_C.t.z() >> qx >> qy >>
          qz >> qw))
      throw std::runtime_error(path + ": unparsable line " + std::to_string(line_no));
    Eigen::Quaterniond q(qw, qx, qy, qz);
    if (q.norm() < 1e-12)
      throw std::runtime_error(path + ": zero quaternion at line " + std::to_string(line_no));
    tp.T_W_C.R = q.normalized().toRotationMatrix();
    out.push_back(tp);
  }
  std::sort(out.begin(), out.end(),
            [](const TimedPose& a, const TimedPose& b) { return a.timestamp < b.timestamp; });
  return out;
}

void save_trajectory(const std::string& path, const std::vector<TimedPose>& trajectory) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(9);
  out << std::fixed;
  for (const auto& tp : trajectory) {
    Eigen::Quaterniond q(tp.T_W_C.R);
    out << tp.timestamp << " " << tp.T_W_C.t.x() << " " << tp.T_W_C.t.y() << " "
        << tp.T_W_C.t.z() << " " << q.x() << " " << q.y() << " " << q.z() << " " << q.w() << "\n";
  }
}

AteReport evaluate_ate(const std::vector<TimedPose>& estimated,
                       const std::vector<TimedPose>& groundtruth, double max_dt) {
  std::vector<Vec3> P, Q;
  size_t lo = 0;
  for (const auto& est : estimated) {
    // Nearest ground-truth pose by timestamp (both lists are sorted).
    while (lo + 1 < groundtruth.size() &&
           std::abs(groundtruth[lo + 1].timestamp - est.timestamp) <=
               std::abs(groundtruth[lo].timestamp - est.timestamp))
      ++lo;
    if (groundtruth.empty()) break;
    if (std::abs(groundtruth[lo].timestamp - est.timestamp) > max_dt) continue;
    P.push_back(est.T_W_C.t);
    Q.push_back(groundtruth[lo].T_W_C.t);
  }
  if (P.size() < 3)
    throw std::runtime_error("evaluate_ate: fewer than 3 timestamp-matched pose pairs");

  auto T = horn_align(P, Q);
  AteReport report;
  double sq = 0.0;
  for (size_t i = 0; i < P.size(); ++i) {
    const Vec3 p = T ? (T->R * P[i] + T->t) : P[i];
    const double e = (Q[i] - p).norm();
    report.errors.push_back(e);
    sq += e * e;
    report.max = std::max(report.max, e);
  }
  report.rmse = std::sqrt(sq / static_cast<double>(report.errors.size()));
  std::vector<double> sorted = report.errors;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  report.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return report;
}

}  // namespace rgbid
