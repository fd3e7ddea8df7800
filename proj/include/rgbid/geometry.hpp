#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace rgbid {

using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Rigid transformation. A Pose T_AB maps coordinates of frame B into
/// frame A: X_A = R * X_B + t.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Pose() = default;
  Pose(const Mat3& R_, const Vec3& t_) : R(R_), t(t_) {}

  Vec3 operator*(const Vec3& x) const { return R * x + t; }
  Pose operator*(const Pose& o) const { return Pose(R * o.R, R * o.t + t); }
  Pose inverse() const { return Pose(R.transpose(), -(R.transpose() * t)); }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = R;
    m.topRightCorner<3, 1>() = t;
    return m;
  }
};

/// Screw motion (v, theta): translation part and axis-angle rotation part.
struct Twist {
  Vec3 v = Vec3::Zero();
  Vec3 theta = Vec3::Zero();

  Twist() = default;
  Twist(const Vec3& v_, const Vec3& th_) : v(v_), theta(th_) {}

  Vec6 vector() const {
    Vec6 x;
    x << v, theta;
    return x;
  }
  static Twist from_vector(const Vec6& x) { return Twist(x.head<3>(), x.tail<3>()); }
};

Mat3 so3_exp(const Vec3& theta);
Vec3 so3_log(const Mat3& R);

/// Decoupled SE(3) maps: rotation and translation treated independently,
/// R = exp(theta), t = v, with no Q(theta) coupling.
Pose se3_exp(const Twist& xi);
Twist se3_log(const Pose& T);

inline Pose se3_exp(const Vec6& xi) { return se3_exp(Twist::from_vector(xi)); }
inline Vec6 se3_log_vector(const Pose& T) { return se3_log(T).vector(); }

/// Left Jacobian of SO(3): Q = integral_0^1 exp(tau*theta) dtau.
Mat3 q_matrix(const Vec3& theta);

enum class PerturbationSide { Left, Right };

/// Pose with a 6x6 covariance ordered (translation, rotation) over
/// perturbations applied on the tagged side.
struct PoseWithCovariance {
  Pose pose;
  Mat6 cov = Mat6::Zero();
  PerturbationSide side = PerturbationSide::Left;
};

/// Relative pose T_AB = T_WA^-1 * T_WB with first-order covariance
/// propagation; inputs must carry left-referenced covariances in W, the
/// result is left-referenced in A. Throws on Right-side inputs.
PoseWithCovariance compose_relative_with_cov(const PoseWithCovariance& T_WA,
                                             const PoseWithCovariance& T_WB);

/// The two block Jacobians of the relative-pose composition above.
Mat6 relative_pose_jacobian_wrt_a(const Pose& T_WA, const Pose& T_WB);
Mat6 relative_pose_jacobian_wrt_b(const Pose& T_WA, const Pose& T_WB);

}  // namespace rgbid
