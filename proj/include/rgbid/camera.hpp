#pragma once

#include <array>
#include <optional>
#include <string>

#include "rgbid/geometry.hpp"
#include "rgbid/image.hpp"

namespace rgbid {

using Vec2 = Eigen::Vector2d;

/// Pinhole intrinsics with Brown distortion (k1,k2 radial; k3,k4
/// tangential; k5 radial).
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::array<double, 5> k{0, 0, 0, 0, 0};
  int width = 0, height = 0;

  Mat3 K() const {
    Mat3 m;
    m << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return m;
  }
  bool has_distortion() const {
    for (double ki : k)
      if (ki != 0.0) return true;
    return false;
  }
  Intrinsics scaled(double s) const {
    Intrinsics out = *this;
    out.fx *= s;
    out.fy *= s;
    out.cx *= s;
    out.cy *= s;
    out.width = static_cast<int>(width * s);
    out.height = static_cast<int>(height * s);
    return out;
  }
};

/// Depth-sensor intrinsics: linear disparity-to-depth correction plus a
/// spatially varying polynomial undistortion of the inverse depth.
struct DepthIntrinsics {
  double beta0 = 0.0;
  double beta1 = 1.0;
  std::array<double, 9> q0{};           // offset polynomial D0
  std::array<double, 9> q1{1, 0, 0, 0, 0, 0, 0, 0, 0};  // factor polynomial D1
  Vec2 p0{4.0, 4.0};                    // correlation-window pixel shift
};

struct StereoExtrinsics {
  Pose T_DC;  // depth -> color
};

/// Distortion of a normalized point, full 3-component form; the returned
/// z stays 1 and callers use x,y.
Vec3 distort(const Intrinsics& intr, const Vec2& m_u);

/// Fixed-point iterative undistortion (10 iterations, tol 1e-10);
/// std::nullopt on non-convergence.
std::optional<Vec2> undistort(const Intrinsics& intr, const Vec2& m_d);

/// Pinhole projection p = K * distort(X/Z); nullopt for Z <= 0.
std::optional<Vec2> project(const Intrinsics& intr, const Vec3& X);

/// Lift pixel to the Z=1 ray through the inverse model; nullopt when the
/// iterative undistortion fails to converge.
std::optional<Vec3> unproject(const Intrinsics& intr, const Vec2& p);

/// Apply the depth-intrinsics correction: linear stage (with the p0 source
/// shift), optionally followed by the spatial polynomial stage.
InverseDepthMap correct_inverse_depth(const InverseDepthMap& W_m, const DepthIntrinsics& dintr,
                                      const Intrinsics& intr, bool spatial);

/// Evaluate the 9-term distortion polynomial D_i at pixel p.
double depth_poly(const std::array<double, 9>& q, const Intrinsics& intr, const Vec2& p);

/// Full RGB-D camera model as read from a calibration file.
struct CameraCalibration {
  Intrinsics rgb;
  Intrinsics ir;
  StereoExtrinsics extrinsics;
  DepthIntrinsics depth;
};

CameraCalibration load_calibration(const std::string& path);
void save_calibration(const CameraCalibration& calib, const std::string& path);

}  // namespace rgbid
