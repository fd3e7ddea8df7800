#pragma once

#include <vector>

#include "rgbid/camera.hpp"

namespace rgbid {

/// One wall shot used for depth-intrinsics fitting: the raw inverse depth
/// map, the externally computed RGB camera pose, and the wall plane
/// (n_W, d) with n_W^T X + d = 0.
struct CalibShot {
  InverseDepthMap W_m;
  Pose T_WC;
  Vec3 plane_normal = Vec3::UnitZ();
  double plane_d = 0.0;
  double timestamp = 0.0;
};

/// Plane-constrained ground-truth inverse depth for a shot; nullopt when
/// the camera center lies on the plane (degenerate denominator).
std::optional<InverseDepthMap> gt_inverse_depth(const CalibShot& shot, const Intrinsics& intr_D,
                                                const StereoExtrinsics& extr);

/// Closed-form two-parameter fit of the linear disparity-to-depth
/// correction over all valid (W_GT, W_m(p - p0)) pixel pairs.
struct LinearDepthFit {
  double beta0 = 0.0;
  double beta1 = 1.0;
};
LinearDepthFit fit_linear(const std::vector<InverseDepthMap>& gt_maps,
                          const std::vector<InverseDepthMap>& raw_maps, const Vec2& p0);

/// 18-coefficient least squares of the spatial polynomials (D1*W_d + D0 vs
/// W_GT); throws when the design matrix is ill-conditioned.
struct SpatialDepthFit {
  std::array<double, 9> q0{};
  std::array<double, 9> q1{};
  double condition_number = 0.0;
};
SpatialDepthFit fit_spatial(const std::vector<InverseDepthMap>& gt_maps,
                            const std::vector<InverseDepthMap>& corrected_maps,
                            const Intrinsics& intr);

/// Per-shot bias and stddev of (corrected - ground truth), for reporting.
struct ShotError {
  double bias = 0.0;
  double stddev = 0.0;
  size_t pixels = 0;
};
ShotError shot_error(const InverseDepthMap& corrected, const InverseDepthMap& gt);

}  // namespace rgbid
