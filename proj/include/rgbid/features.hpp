#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rgbid/camera.hpp"
#include "rgbid/geometry.hpp"
#include "rgbid/image.hpp"

namespace rgbid {

struct Keypoint {
  Vec2 pixel;          // level-0 coordinates
  int level = 0;
  double orientation = 0.0;
  double score = 0.0;
  std::optional<Vec3> point3d;  // lifted via inverse depth when available
};

/// 256-bit binary descriptor.
struct BinaryDescriptor {
  std::array<uint64_t, 4> bits{};

  void set(int i) { bits[i >> 6] |= uint64_t(1) << (i & 63); }
  bool test(int i) const { return (bits[i >> 6] >> (i & 63)) & 1; }
  bool operator==(const BinaryDescriptor&) const = default;
};

int hamming(const BinaryDescriptor& a, const BinaryDescriptor& b);

struct FeatureConfig {
  int levels = 8;
  double scale = 1.2;
  int grid_cells = 8;             // per image side
  int target_per_cell = 16;       // ~1000 keypoints over 8x8 cells
  double initial_threshold = 0.08;
  double floor_threshold = 0.01;
};

/// Multi-scale FAST-9 with per-cell adaptive thresholds and intensity
/// centroid orientation.
std::vector<Keypoint> extract_keypoints(const IntensityImage& image,
                                        const FeatureConfig& config = {});

/// Steered 256-pair binary descriptor on a 31x31 patch at the keypoint's
/// pyramid level; nullopt when the rotated patch leaves the image.
std::optional<BinaryDescriptor> describe(const IntensityImage& image, const Keypoint& kp);

/// Extract + describe + lift in one pass; keypoints without an in-bounds
/// patch are dropped.
struct DescribedKeypoints {
  std::vector<Keypoint> keypoints;
  std::vector<BinaryDescriptor> descriptors;
};
DescribedKeypoints extract_and_describe(const IntensityImage& image, const InverseDepthMap& W,
                                        const Intrinsics& K, const FeatureConfig& config = {});

/// Hierarchical binary vocabulary: k-majority tree of branching b and
/// depth d; leaves are word ids.
class Vocabulary {
 public:
  struct Node {
    BinaryDescriptor centroid;
    std::vector<uint32_t> children;  // empty for leaves
    int32_t word_id = -1;
  };

  Vocabulary() = default;

  uint32_t branching() const { return branching_; }
  uint32_t depth() const { return depth_; }
  uint32_t word_count() const { return word_count_; }
  bool empty() const { return nodes_.empty(); }
  bool shallow() const { return shallow_; }

  /// Quantize a descriptor to its leaf word.
  uint32_t quantize(const BinaryDescriptor& desc) const;

  static Vocabulary train(const std::vector<BinaryDescriptor>& descriptors, uint32_t branching = 10,
                          uint32_t depth = 3, uint64_t seed = 42);

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  uint32_t branching_ = 0;
  uint32_t depth_ = 0;
  uint32_t word_count_ = 0;
  bool shallow_ = false;  // fewer distinct descriptors than b^d
  std::vector<Node> nodes_;  // BFS order, root at 0
};

/// Sparse L1-normalized word-frequency histogram.
using BowHistogram = std::map<uint32_t, double>;

BowHistogram bow_histogram(const std::vector<BinaryDescriptor>& descriptors,
                           const Vocabulary& vocab);

/// s = 1 - 0.5 * ||h1 - h2||_1, in [0,1]; 0 against an empty histogram.
double similarity(const BowHistogram& h1, const BowHistogram& h2);

/// Bilinear image resize (used by the feature pyramid).
IntensityImage resize_bilinear(const IntensityImage& image, int width, int height);

}  // namespace rgbid
