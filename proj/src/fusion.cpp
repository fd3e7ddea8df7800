#include "rgbid/fusion.hpp"

#include <cmath>

namespace rgbid {

Keyframe make_keyframe(const FrameData& frame, const Pose& T_W_kf, int id, double timestamp) {
  Keyframe kf;
  kf.intensity = frame.intensity;
  kf.inverse_depth = frame.inverse_depth;
  kf.weight = Image<double>(frame.inverse_depth.width(), frame.inverse_depth.height(), 1.0);
  kf.T_W_kf = T_W_kf;
  kf.id = id;
  kf.timestamp = timestamp;
  return kf;
}

namespace {

struct DirectionalCount {
  size_t valid = 0;
  size_t visible = 0;
};

// transfer pixels of A into B with T_BA and count in-bounds, unoccluded ones
DirectionalCount count_visible(const FrameData& frame_a, const FrameData& frame_b,
                               const Pose& T_BA, const Intrinsics& K, double sigma_w) {
  DirectionalCount count;
  const Mat3 Km = K.K();
  const Mat3 Kinv = Km.inverse();
  const Mat3 Rt = Km * T_BA.R * Kinv;
  const Vec3 tt = Km * T_BA.t;
  const auto& W_A = frame_a.inverse_depth;
  for (int y = 0; y < W_A.height(); ++y) {
    for (int x = 0; x < W_A.width(); ++x) {
      const double w_a = W_A(x, y);
      if (!is_valid(w_a) || w_a <= 0.0) continue;
      ++count.valid;
      const Vec3 xb = Rt * (Vec3(x, y, 1.0) / w_a) + tt;
      if (xb.z() <= 1e-12) continue;
      const double w_b = 1.0 / xb.z();
      const double px = xb.x() / xb.z(), py = xb.y() / xb.z();
      if (!frame_b.inverse_depth.in_bounds(px, py)) continue;
      const double w_meas = bilinear(frame_b.inverse_depth, px, py);
      if (!is_valid(w_meas)) continue;
      if (std::abs(w_meas - w_b) < 3.0 * sigma_w) ++count.visible;
    }
  }
  return count;
}

}  // namespace

CovisibilityResult covisibility_ratio(const FrameData& frame_a, const FrameData& frame_b,
                                      const Pose& T_BA, const Intrinsics& K, double sigma_w) {
  const DirectionalCount ab = count_visible(frame_a, frame_b, T_BA, K, sigma_w);
  const DirectionalCount ba = count_visible(frame_b, frame_a, T_BA.inverse(), K, sigma_w);
  CovisibilityResult result;
  if (ab.valid == 0 || ba.valid == 0) {
    result.empty_frame = true;
    return result;
  }
  result.ratio = std::min(static_cast<double>(ab.visible) / ab.valid,
                          static_cast<double>(ba.visible) / ba.valid);
  return result;
}

void integrate_frame(Keyframe* kf, const FrameData& frame, const Pose& T_kf_frame,
                     const Intrinsics& K, double sigma_w) {
  const WarpedFrame warped = inverse_geometric_warp(frame.intensity, frame.inverse_depth,
                                                    kf->inverse_depth, T_kf_frame, K);
  const Pose T_BA = T_kf_frame.inverse();  // keyframe -> frame
  const Mat3 Km = K.K();
  const Mat3 Rt_BA = Km * T_BA.R * Km.inverse();
  const Vec3 tt_BA = Km * T_BA.t;
  for (int y = 0; y < kf->inverse_depth.height(); ++y) {
    for (int x = 0; x < kf->inverse_depth.width(); ++x) {
      const double w_kf = kf->inverse_depth(x, y);
      const double w_new = warped.inverse_depth(x, y);
      if (!is_valid(w_kf) || !is_valid(w_new)) continue;
      if (std::abs(w_new - w_kf) >= 3.0 * sigma_w) continue;  // occlusion / mismatch
      const double bx = warped.map_x(x, y), by = warped.map_y(x, y);
      const double w_b = bilinear(frame.inverse_depth, bx, by);
      if (!is_valid(w_b)) continue;
      // variance propagation of w through the registration equation
      const double num = 1.0 - w_b * tt_BA.z();
      const double den = (Rt_BA * Vec3(x, y, 1.0)).z();
      const double c_k = (num * num / den) * (num * num / den);
      if (!std::isfinite(c_k) || c_k <= 0.0) continue;
      const double c_kf = kf->weight(x, y);
      kf->inverse_depth(x, y) = (w_kf * c_kf + c_k * w_new) / (c_kf + c_k);
      kf->weight(x, y) = c_kf + c_k;
    }
  }
}

std::optional<BufferedFrame> FrameBuffer::pop_closest(double timestamp) {
  if (frames_.empty()) return std::nullopt;
  size_t best = 0;
  double best_dt = std::abs(frames_[0].timestamp - timestamp);
  for (size_t i = 1; i < frames_.size(); ++i) {
    const double dt = std::abs(frames_[i].timestamp - timestamp);
    if (dt < best_dt) {
      best = i;
      best_dt = dt;
    }
  }
  BufferedFrame out = std::move(frames_[best]);
  frames_.erase(frames_.begin() + best);
  return out;
}

void drain_buffer_step(Keyframe* kf, FrameBuffer* buffer, const Intrinsics& K, double sigma_w) {
  auto frame = buffer->pop_closest(kf->timestamp);
  if (!frame) return;
  const Pose T_kf_frame = kf->T_W_kf.inverse() * frame->T_W_frame;
  integrate_frame(kf, frame->frame, T_kf_frame, K, sigma_w);
}

}  // namespace rgbid
