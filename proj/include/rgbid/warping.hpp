#pragma once

#include <functional>

#include "rgbid/camera.hpp"
#include "rgbid/geometry.hpp"
#include "rgbid/image.hpp"

namespace rgbid {

/// Generic inverse warp: out(p) = src(f_w(p)) by bilinear interpolation,
/// hole if any tap is invalid or out of bounds.
Image<double> inverse_warp(const Image<double>& src,
                           const std::function<Vec2(const Vec2&)>& f_w, int out_width,
                           int out_height);

/// Relief-texture-mapping forward registration of an inverse depth map
/// into frame B: translation-only splat with a z-buffer on inverse depth
/// (greater w wins, ties keep the earliest source pixel in row-major
/// order), then a homography inverse-warp for the rotation.
InverseDepthMap forward_register(const InverseDepthMap& W_A, const Pose& T_BA,
                                 const Intrinsics& K_A, const Intrinsics& K_B);

/// Inverse geometric warp: represent frame B's intensity and inverse depth
/// on frame A's pixel grid, using A's inverse depth to place each pixel.
/// No occlusion handling; intended for small motions.
struct WarpedFrame {
  IntensityImage intensity;
  InverseDepthMap inverse_depth;
  /// Pixel position in B sampled for each A pixel (hole when unmapped).
  Image<double> map_x, map_y;
};

WarpedFrame inverse_geometric_warp(const IntensityImage& I_B, const InverseDepthMap& W_B,
                                   const InverseDepthMap& W_A, const Pose& T_AB,
                                   const Intrinsics& K);

}  // namespace rgbid
