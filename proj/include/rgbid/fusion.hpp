#pragma once

#include <cstdint>
#include <deque>
#include <optional>

#include "rgbid/alignment.hpp"
#include "rgbid/camera.hpp"
#include "rgbid/geometry.hpp"

namespace rgbid {

/// Keyframe with uncertainty-weighted fused inverse depth; the weight map
/// C is reset to 1 on initialisation.
struct Keyframe {
  IntensityImage intensity;
  InverseDepthMap inverse_depth;
  Image<double> weight;
  Pose T_W_kf;
  int id = 0;
  double timestamp = 0.0;
};

Keyframe make_keyframe(const FrameData& frame, const Pose& T_W_kf, int id, double timestamp);

struct CovisibilityResult {
  double ratio = 0.0;
  bool empty_frame = false;
};

/// Symmetric dense covisibility: the min over both transfer directions
/// of |visible| / |valid|, with the 3*sigma_W occlusion test.
CovisibilityResult covisibility_ratio(const FrameData& frame_a, const FrameData& frame_b,
                                      const Pose& T_BA, const Intrinsics& K, double sigma_w);

inline bool should_switch_keyframe(double ratio, double threshold = 0.7) {
  return ratio < threshold;
}
inline bool should_switch_reference(double ratio, double threshold = 0.9) {
  return ratio < threshold;
}

/// Fuse one frame into the keyframe; T_kf_frame maps frame coordinates
/// into the keyframe. Pixels failing the covisibility check or with holes
/// are left unchanged.
void integrate_frame(Keyframe* kf, const FrameData& frame, const Pose& T_kf_frame,
                     const Intrinsics& K, double sigma_w);

/// Bounded FIFO of frames waiting for integration into the next keyframe.
struct BufferedFrame {
  FrameData frame;
  Pose T_W_frame;
  double timestamp = 0.0;
};

class FrameBuffer {
 public:
  explicit FrameBuffer(size_t capacity = 30) : capacity_(capacity) {}

  void push(BufferedFrame frame) {
    if (frames_.size() >= capacity_) frames_.pop_front();
    frames_.push_back(std::move(frame));
  }
  bool empty() const { return frames_.empty(); }
  size_t size() const { return frames_.size(); }
  void clear() { frames_.clear(); }

  /// Pop the frame temporally closest to the given timestamp.
  std::optional<BufferedFrame> pop_closest(double timestamp);

 private:
  size_t capacity_;
  std::deque<BufferedFrame> frames_;
};

/// Integrate one buffered frame (the temporally closest remaining one)
/// into the keyframe; no-op on an empty buffer.
void drain_buffer_step(Keyframe* kf, FrameBuffer* buffer, const Intrinsics& K, double sigma_w);

}  // namespace rgbid
