#pragma once

#include <optional>
#include <vector>

#include "rgbid/alignment.hpp"
#include "rgbid/features.hpp"
#include "rgbid/fusion.hpp"
#include "rgbid/geometry.hpp"

namespace rgbid {

struct LoopCandidate {
  int query_id = 0;
  int match_id = 0;
  double normalized_score = 0.0;
};

struct LoopConstraint {
  int i = 0, j = 0;     // keyframe ids (i = query, j = match)
  Pose T_ij;            // pose of j in i's frame
  Mat6 info = Mat6::Identity();
  int inliers = 0;
  double hull_fraction = 0.0;
  double score = 0.0;
};

/// Keyframe entry in the loop-closure database.
struct KeyframeRecord {
  int id = 0;
  FrameData frame;
  Pose T_W_kf;
  BowHistogram histogram;
  std::vector<Keypoint> keypoints;
  std::vector<BinaryDescriptor> descriptors;
};

struct LoopConfig {
  double score_threshold = 0.8;  // normalized similarity gate
  int min_separation = 20;       // keyframes
  int ransac_iterations = 200;
  double inlier_radius = 0.05;   // meters
  int min_inliers = 11;          // "more than 10 points agree"
  double min_hull_fraction = 0.05;
  double ratio_test = 0.8;
  double min_covisibility = 0.3;  // dense refinement acceptance gate
  uint64_t seed = 1234;
};

/// BoW retrieval with the previous-keyframe score normalization and the
/// minimum keyframe separation, sorted by descending normalized score.
std::vector<LoopCandidate> query_candidates(const KeyframeRecord& query,
                                            const std::vector<KeyframeRecord>& db,
                                            const BowHistogram& prev_histogram,
                                            const LoopConfig& config);

/// Closed-form least-squares rigid alignment Q ~= R P + t (SVD with
/// reflection guard); nullopt on degenerate (collinear/coincident) input.
std::optional<Pose> horn_align(const std::vector<Vec3>& P, const std::vector<Vec3>& Q);

/// Mutual-nearest descriptor matches passing the Hamming ratio test, both
/// endpoints with lifted 3D points.
struct PointMatch {
  Vec3 X_i, X_j;
  Vec2 pixel_i;
};
std::vector<PointMatch> match_keypoints(const KeyframeRecord& kf_i, const KeyframeRecord& kf_j,
                                        double ratio_test = 0.8);

struct GeometricVerification {
  Pose T_ij;
  int inliers = 0;
  double hull_fraction = 0.0;
};

/// 3-point RANSAC over matches with the inlier-count and convex-hull
/// acceptance gates; deterministic for a fixed config seed.
std::optional<GeometricVerification> geometric_verify(const std::vector<PointMatch>& matches,
                                                      int image_width, int image_height,
                                                      const LoopConfig& config);

/// Dense-refine a verified loop: alignment seeded with the RANSAC motion;
/// dropped (nullopt) when the refined covisibility falls below the gate.
std::optional<LoopConstraint> make_loop_constraint(const KeyframeRecord& kf_i,
                                                   const KeyframeRecord& kf_j,
                                                   const Pose& T_init, const Intrinsics& K,
                                                   const GeometricVerification& geom,
                                                   const LoopConfig& config,
                                                   const AlignmentConfig& align_config = {});

/// Temporal clusters of loop constraints (pairwise keyframe separation
/// <= 10); a cluster is released when the current keyframe id runs past
/// its newest member by more than 10.
class LoopClusters {
 public:
  explicit LoopClusters(int max_separation = 10) : max_separation_(max_separation) {}

  void add(const LoopConstraint& constraint);
  /// Collect clusters no longer accepting constraints at this keyframe.
  std::vector<std::vector<LoopConstraint>> release(int current_keyframe_id);
  size_t pending() const { return clusters_.size(); }
  /// Flush everything (end of sequence).
  std::vector<std::vector<LoopConstraint>> release_all();

 private:
  int max_separation_;
  std::vector<std::vector<LoopConstraint>> clusters_;
};

/// Area of the 2D convex hull of a point set (monotone chain).
double convex_hull_area(std::vector<Vec2> points);

}  // namespace rgbid
