#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rgbid/alignment.hpp"
#include "rgbid/camera.hpp"
#include "rgbid/dataset.hpp"
#include "rgbid/features.hpp"
#include "rgbid/fusion.hpp"
#include "rgbid/geometry.hpp"
#include "rgbid/loop.hpp"
#include "rgbid/posegraph.hpp"
#include "rgbid/segmentation.hpp"

namespace rgbid {

struct FrameEstimate {
  double timestamp = 0.0;
  Pose T_W_k;
  Mat6 cov = Mat6::Zero();  // left-referenced in the previous frame (chain step)
  bool lost = false;
  int keyframe_id = -1;  // >= 0 when this frame started a keyframe
};

struct Trajectory {
  std::vector<FrameEstimate> frames;
  std::vector<int> keyframe_frame_index;  // frame index per keyframe id
};

/// Bounded FIFO between the front-end (producer) and back-end (consumer).
class KeyframeQueue {
 public:
  explicit KeyframeQueue(size_t capacity, bool drop_oldest = false)
      : capacity_(capacity), drop_oldest_(drop_oldest) {}

  /// Blocks at capacity unless drop-oldest is configured.
  void push(Keyframe kf);
  /// Blocks until an item or close(); nullopt once closed and drained.
  std::optional<Keyframe> pop();
  void close();
  size_t size() const;

 private:
  size_t capacity_;
  bool drop_oldest_;
  mutable std::mutex mutex_;
  std::condition_variable not_full_, not_empty_;
  std::deque<Keyframe> queue_;
  bool closed_ = false;
};

struct StageStat {
  int count = 0;
  double total_ms = 0.0;
  double mean_ms() const { return count ? total_ms / count : 0.0; }
};

struct TimingReport {
  std::map<std::string, StageStat> frontend;
  std::map<std::string, StageStat> backend;
  std::string format() const;
};

struct PipelineConfig {
  AlignmentConfig alignment;
  FeatureConfig features;
  LoopConfig loop;
  OptimizeConfig optimize;
  double segmentation_k = 0.6;
  int segmentation_bins = 100;
  double keyframe_covisibility = 0.7;
  double reference_covisibility = 0.9;
  size_t queue_capacity = 8;
  bool drop_oldest = false;
  size_t buffer_capacity = 30;
  bool enable_loop = true;
  bool deterministic = false;  // run the back-end inline on the caller
  bool compute_juts = true;
  int max_loop_candidates = 3;
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<std::array<uint8_t, 3>> colors;
};

class Pipeline {
 public:
  Pipeline(const Intrinsics& K, const PipelineConfig& config);
  ~Pipeline();

  /// Front-end entry: track, fuse, maybe emit a keyframe to the back-end.
  void process_frame(const FrameData& frame, double timestamp);

  /// Flush: finalize the open keyframe, drain the back-end, run a final
  /// optimization over any pending loop clusters.
  void finish();

  Trajectory trajectory() const;
  std::vector<std::string> loop_log() const;
  TimingReport timing() const;
  std::vector<Keyframe> keyframes() const;  // optimized snapshots
  const std::vector<JutLabeling>& jut_labelings() const { return juts_; }
  size_t backend_queue_depth() const { return queue_.size(); }
  int keyframe_count() const { return next_keyframe_id_; }

 private:
  void track(const FrameData& frame, double timestamp);
  void fuse_and_maybe_switch(const FrameData& frame, double timestamp);
  void emit_keyframe();
  void start_keyframe(const FrameData& frame, double timestamp);
  void backend_loop();
  void step_backend(const Keyframe& kf);
  void run_optimization(const std::vector<std::vector<LoopConstraint>>& clusters);
  void record(std::map<std::string, StageStat>* table, const std::string& stage, double ms);

  Intrinsics K_;
  PipelineConfig config_;

  // Front-end state.
  std::optional<FrameData> reference_;
  Pose T_W_ref_;
  std::optional<Pose> T_ref_prev_;   // previous frame in reference coords
  Mat6 cov_ref_prev_ = Mat6::Zero();
  Pose velocity_;                    // last inter-frame motion
  double sigma_w_ = 0.01;
  std::optional<Keyframe> current_kf_;
  FrameData current_kf_source_;      // unfused snapshot for covisibility
  FrameBuffer buffer_;
  int next_keyframe_id_ = 0;

  // Back-end state.
  KeyframeQueue queue_;
  std::thread backend_thread_;
  Vocabulary vocabulary_;
  std::vector<KeyframeRecord> db_;
  BowHistogram prev_histogram_;
  LoopClusters clusters_;
  std::vector<JutLabeling> juts_;
  std::vector<Constraint> pending_loops_;  // accepted, not yet optimized

  // Shared (mutex-guarded) outputs.
  mutable std::mutex mutex_;
  Trajectory trajectory_;
  std::vector<std::string> loop_log_;
  TimingReport timing_;
  bool finished_ = false;
};

/// World point cloud from keyframes: pixels novel with respect to the
/// previous keyframe, voxel-grid downsampled (centroid per voxel);
/// voxel <= 0 bypasses the filter.
PointCloud export_map(const std::vector<Keyframe>& keyframes, const Intrinsics& K, double voxel);

/// Binary little-endian PLY with xyz float32 + rgb uint8.
void save_ply(const std::string& path, const PointCloud& cloud);

}  // namespace rgbid
