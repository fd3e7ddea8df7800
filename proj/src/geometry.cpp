#include "rgbid/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace rgbid {

namespace {
// Below this angle the closed forms lose precision to 1-cos cancellation;
// the truncated series are accurate to ~1e-17 relative there.
constexpr double kSmallAngle = 1e-4;   // exp/log series switch
constexpr double kSmallAngleQ = 1e-4;  // Q(theta) series switch
}  // namespace

Mat3 so3_exp(const Vec3& theta) {
  const double angle = theta.norm();
  const Mat3 K = skew(theta);
  double a, b;
  if (angle < kSmallAngle) {
    // 2nd-order series of sin(x)/x and (1-cos(x))/x^2
    a = 1.0 - angle * angle / 6.0;
    b = 0.5 - angle * angle / 24.0;
  } else {
    a = std::sin(angle) / angle;
    b = (1.0 - std::cos(angle)) / (angle * angle);
  }
  return Mat3::Identity() + a * K + b * K * K;
}

Vec3 so3_log(const Mat3& R) {
  const double tr = R.trace();
  const double c = std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0));
  const double angle = std::acos(c);
  if (angle < kSmallAngle) {
    // first-order skew extraction
    return Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1)) / 2.0;
  }
  if (M_PI - angle < 1e-6) {
    // near pi: axis from the largest diagonal of (R + I)/2 = a a^T + O(pi-angle)
    const Mat3 A = (R + Mat3::Identity()) / 2.0;
    int k = 0;
    A.diagonal().maxCoeff(&k);
    Vec3 axis = A.col(k) / std::sqrt(A(k, k));
    axis.normalize();
    // fix the sign from the off-diagonal antisymmetric part
    const Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    if (axis.dot(w) < 0) axis = -axis;
    return angle * axis;
  }
  // The antisymmetric part is 2 sin(angle) * axis; normalizing instead of
  // dividing by sin avoids the ill-conditioning of sin near pi.
  const Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  return angle * w.normalized();
}

Pose se3_exp(const Twist& xi) { return Pose(so3_exp(xi.theta), xi.v); }

Twist se3_log(const Pose& T) { return Twist(T.t, so3_log(T.R)); }

Mat3 q_matrix(const Vec3& theta) {
  const double angle = theta.norm();
  const Mat3 K = skew(theta);
  double a, b;
  if (angle < kSmallAngleQ) {
    a = 0.5 - angle * angle / 24.0;
    b = 1.0 / 6.0 - angle * angle / 120.0;
  } else {
    a = (1.0 - std::cos(angle)) / (angle * angle);
    b = (angle - std::sin(angle)) / (angle * angle * angle);
  }
  return Mat3::Identity() + a * K + b * K * K;
}

Mat6 relative_pose_jacobian_wrt_a(const Pose& T_WA, const Pose& T_WB) {
  const Mat3 R_AW = T_WA.R.transpose();
  Mat6 J = Mat6::Zero();
  J.topLeftCorner<3, 3>() = -R_AW;
  J.topRightCorner<3, 3>() = -R_AW * skew(T_WA.t - T_WB.t);
  J.bottomRightCorner<3, 3>() = -R_AW;
  return J;
}

Mat6 relative_pose_jacobian_wrt_b(const Pose& T_WA, const Pose&) {
  const Mat3 R_AW = T_WA.R.transpose();
  Mat6 J = Mat6::Zero();
  J.topLeftCorner<3, 3>() = R_AW;
  J.bottomRightCorner<3, 3>() = R_AW;
  return J;
}

PoseWithCovariance compose_relative_with_cov(const PoseWithCovariance& T_WA,
                                             const PoseWithCovariance& T_WB) {
  if (T_WA.side != PerturbationSide::Left || T_WB.side != PerturbationSide::Left)
    throw std::invalid_argument("compose_relative_with_cov requires left-referenced covariances");
  const Mat6 J_A = relative_pose_jacobian_wrt_a(T_WA.pose, T_WB.pose);
  const Mat6 J_B = relative_pose_jacobian_wrt_b(T_WA.pose, T_WB.pose);
  PoseWithCovariance out;
  out.pose = T_WA.pose.inverse() * T_WB.pose;
  out.cov = J_A * T_WA.cov * J_A.transpose() + J_B * T_WB.cov * J_B.transpose();
  out.cov = ((out.cov + out.cov.transpose()) / 2.0).eval();
  out.side = PerturbationSide::Left;
  return out;
}

}  // namespace rgbid
