#pragma once

#include <string>
#include <vector>

#include "rgbid/alignment.hpp"
#include "rgbid/geometry.hpp"

namespace rgbid {

struct AssociatedPair {
  double timestamp = 0.0;  // rgb timestamp
  std::string rgb_path;
  std::string depth_path;
};

struct TimedPose {
  double timestamp = 0.0;
  Pose T_W_C;
};

struct AssociatedSequence {
  std::vector<AssociatedPair> pairs;       // sorted by timestamp
  std::vector<TimedPose> groundtruth;      // empty if absent
};

struct DatasetConfig {
  double max_dt = 0.02;        // association window [s]
  double depth_scale = 5000.0; // PNG value per meter
  double depth_factor = 1.0;   // Freiburg-2 constant depth correction
};

/// Parse `rgb.txt` / `depth.txt` / optional `groundtruth.txt` under `dir`
/// and greedily associate rgb-depth pairs by nearest timestamp.
/// Throws std::runtime_error with file name and line number on bad input.
AssociatedSequence load_and_associate(const std::string& dir, const DatasetConfig& config = {});

/// Decode one associated pair: grayscale intensity in [0,1] with
/// (0.299 R + 0.587 G + 0.114 B) / 255 and inverse depth in 1/m
/// (raw 0 -> hole).
FrameData load_frame(const AssociatedPair& pair, const DatasetConfig& config = {});

/// TUM trajectory text: `timestamp tx ty tz qx qy qz qw` per line.
std::vector<TimedPose> load_trajectory(const std::string& path);
void save_trajectory(const std::string& path, const std::vector<TimedPose>& trajectory);

struct AteReport {
  double rmse = 0.0;
  double median = 0.0;
  double max = 0.0;
  std::vector<double> errors;  // per matched pose pair
};

/// Absolute trajectory error after closed-form rigid alignment of the
/// estimated positions onto ground truth; pairs matched by nearest
/// timestamp within max_dt. Throws when fewer than 3 pairs match.
AteReport evaluate_ate(const std::vector<TimedPose>& estimated,
                       const std::vector<TimedPose>& groundtruth, double max_dt = 0.02);

}  // namespace rgbid
