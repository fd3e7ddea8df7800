#include "rgbid/warping.hpp"

#include <algorithm>
#include <cmath>

namespace rgbid {

Image<double> inverse_warp(const Image<double>& src,
                           const std::function<Vec2(const Vec2&)>& f_w, int out_width,
                           int out_height) {
  Image<double> out(out_width, out_height, kHole);
  for (int y = 0; y < out_height; ++y)
    for (int x = 0; x < out_width; ++x) {
      const Vec2 q = f_w(Vec2(x, y));
      out(x, y) = bilinear(src, q.x(), q.y());
    }
  return out;
}

InverseDepthMap forward_register(const InverseDepthMap& W_A, const Pose& T_BA,
                                 const Intrinsics& K_A, const Intrinsics& K_B) {
  const Pose T_AB = T_BA.inverse();
  const Mat3 Rt_BA = K_B.K() * T_BA.R * K_A.K().inverse();
  const Mat3 Rt_AB = Rt_BA.inverse();
  const Vec3 t_tilde = K_A.K() * T_AB.t;  // K_A * t_A^B

  // Step 1: translation-only splat into the intermediate frame B_t, which
  // keeps frame A's pixel scale.
  const int iw = std::max(W_A.width(), K_B.width);
  const int ih = std::max(W_A.height(), K_B.height);
  InverseDepthMap inter(iw, ih, kHole);
  for (int y = 0; y < W_A.height(); ++y) {
    for (int x = 0; x < W_A.width(); ++x) {
      const double w = W_A(x, y);
      if (!is_valid(w)) continue;
      const Vec3 p(x, y, 1.0);
      const double denom = 1.0 - w * t_tilde.z();
      if (denom <= 1e-12) continue;  // point behind the destination camera
      const double w_bt = w / denom;
      const Vec3 p_bt = (p - w * t_tilde) / denom;
      // map the whole pixel footprint: corners at +-0.5 scale by w_bt/w
      const double half = 0.5 * (w_bt / w);
      const int x0 = static_cast<int>(std::lround(p_bt.x() - half));
      const int x1 = static_cast<int>(std::lround(p_bt.x() + half));
      const int y0 = static_cast<int>(std::lround(p_bt.y() - half));
      const int y1 = static_cast<int>(std::lround(p_bt.y() + half));
      for (int ty = y0; ty <= y1; ++ty) {
        if (ty < 0 || ty >= ih) continue;
        for (int tx = x0; tx <= x1; ++tx) {
          if (tx < 0 || tx >= iw) continue;
          double& slot = inter(tx, ty);
          // z-buffer on inverse depth: strictly greater w replaces; the
          // first write wins ties (row-major source order)
          if (!is_valid(slot) || w_bt > slot) slot = w_bt;
        }
      }
    }
  }

  // Step 2: the remaining rotation is a homography; inverse-warp with
  // nearest-neighbour lookup and rescale the inverse depth along the ray.
  InverseDepthMap out(K_B.width, K_B.height, kHole);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const Vec3 rp = Rt_AB * Vec3(x, y, 1.0);
      if (rp.z() <= 1e-12) continue;
      const Vec3 p_bt = rp / rp.z();
      const double w_bt = nearest(inter, p_bt.x(), p_bt.y());
      if (!is_valid(w_bt)) continue;
      out(x, y) = w_bt * rp.z();
    }
  }
  return out;
}

WarpedFrame inverse_geometric_warp(const IntensityImage& I_B, const InverseDepthMap& W_B,
                                   const InverseDepthMap& W_A, const Pose& T_AB,
                                   const Intrinsics& K) {
  const Pose T_BA = T_AB.inverse();
  const Mat3 Km = K.K();
  const Mat3 Kinv = Km.inverse();
  const Mat3 Rt_BA = Km * T_BA.R * Kinv;
  const Vec3 tt_BA = Km * T_BA.t;
  const Mat3 Rt_AB = Km * T_AB.R * Kinv;
  const Vec3 tt_AB = Km * T_AB.t;

  const int w = W_A.width(), h = W_A.height();
  WarpedFrame out;
  out.intensity = IntensityImage(w, h, kHole);
  out.inverse_depth = InverseDepthMap(w, h, kHole);
  out.map_x = Image<double>(w, h, kHole);
  out.map_y = Image<double>(w, h, kHole);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double w_a = W_A(x, y);
      if (!is_valid(w_a) || w_a <= 0.0) continue;
      const Vec3 p(x, y, 1.0);
      const Vec3 xb = Rt_BA * (p / w_a) + tt_BA;  // K * X_B
      if (xb.z() <= 1e-12) continue;
      const Vec2 p_b(xb.x() / xb.z(), xb.y() / xb.z());
      out.map_x(x, y) = p_b.x();
      out.map_y(x, y) = p_b.y();
      out.intensity(x, y) = bilinear(I_B, p_b.x(), p_b.y());
      const double w_meas = bilinear(W_B, p_b.x(), p_b.y());
      if (!is_valid(w_meas) || w_meas <= 0.0) continue;
      // depth measured by B transferred to A's frame along B's ray
      const double za = (Rt_AB * Vec3(p_b.x(), p_b.y(), 1.0)).z() / w_meas + tt_AB.z();
      if (za <= 1e-12) continue;
      out.inverse_depth(x, y) = 1.0 / za;
    }
  }
  return out;
}

}  // namespace rgbid
