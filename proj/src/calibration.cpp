#include "rgbid/calibration.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace rgbid {

std::optional<InverseDepthMap> gt_inverse_depth(const CalibShot& shot, const Intrinsics& intr_D,
                                                const StereoExtrinsics& extr) {
  // T_WD = T_WC * T_CD
  const Pose T_WD = shot.T_WC * extr.T_DC.inverse();
  const double denom = shot.plane_normal.dot(T_WD.t) + shot.plane_d;
  if (std::abs(denom) < 1e-9) return std::nullopt;
  InverseDepthMap gt(shot.W_m.width(), shot.W_m.height(), kHole);
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const auto ray = unproject(intr_D, Vec2(x, y));
      if (!ray) continue;
      const double w = -shot.plane_normal.dot(T_WD.R * (*ray)) / denom;
      if (w > 0.0) gt(x, y) = w;
    }
  }
  return gt;
}

LinearDepthFit fit_linear(const std::vector<InverseDepthMap>& gt_maps,
                          const std::vector<InverseDepthMap>& raw_maps, const Vec2& p0) {
  if (gt_maps.size() != raw_maps.size() || gt_maps.size() < 2)
    throw std::invalid_argument("fit_linear: need >= 2 shots with ground truth");
  // normal equations of argmin sum ||gt - (b1*raw(p-p0) + b0)||^2
  double s1 = 0, sx = 0, sxx = 0, sy = 0, sxy = 0;
  for (size_t i = 0; i < gt_maps.size(); ++i) {
    const auto& gt = gt_maps[i];
    const auto& raw = raw_maps[i];
    for (int y = 0; y < gt.height(); ++y)
      for (int x = 0; x < gt.width(); ++x) {
        const int sx_px = static_cast<int>(std::lround(x - p0.x()));
        const int sy_px = static_cast<int>(std::lround(y - p0.y()));
        if (!raw.in_bounds(sx_px, sy_px)) continue;
        const double g = gt(x, y);
        const double m = raw(sx_px, sy_px);
        if (!is_valid(g) || !is_valid(m)) continue;
        s1 += 1;
        sx += m;
        sxx += m * m;
        sy += g;
        sxy += m * g;
      }
  }
  const double det = s1 * sxx - sx * sx;
  if (s1 < 2 || std::abs(det) < 1e-12 * s1 * sxx)
    throw std::runtime_error("fit_linear: rank-deficient normal equations (shots at one depth?)");
  LinearDepthFit fit;
  fit.beta1 = (s1 * sxy - sx * sy) / det;
  fit.beta0 = (sy - fit.beta1 * sx) / s1;
  return fit;
}

namespace {

Eigen::Matrix<double, 9, 1> poly_basis(const Intrinsics& intr, double px, double py) {
  const double mx = (px - intr.cx) / intr.fx;
  const double my = (py - intr.cy) / intr.fy;
  const double r2 = mx * mx + my * my;
  Eigen::Matrix<double, 9, 1> b;
  b << 1.0, r2, r2 * r2, r2 * r2 * r2, mx, my, mx * my, mx * mx * my, mx * my * my;
  return b;
}

}  // namespace

SpatialDepthFit fit_spatial(const std::vector<InverseDepthMap>& gt_maps,
                            const std::vector<InverseDepthMap>& corrected_maps,
                            const Intrinsics& intr) {
  if (gt_maps.size() != corrected_maps.size() || gt_maps.empty())
    throw std::invalid_argument("fit_spatial: mismatched shot lists");
  Eigen::Matrix<double, 18, 18> AtA = Eigen::Matrix<double, 18, 18>::Zero();
  Eigen::Matrix<double, 18, 1> Atb = Eigen::Matrix<double, 18, 1>::Zero();
  for (size_t i = 0; i < gt_maps.size(); ++i) {
    const auto& gt = gt_maps[i];
    const auto& wd = corrected_maps[i];
    for (int y = 0; y < gt.height(); ++y)
      for (int x = 0; x < gt.width(); ++x) {
        const double g = gt(x, y);
        const double d = wd(x, y);
        if (!is_valid(g) || !is_valid(d)) continue;
        const auto basis = poly_basis(intr, x, y);
        Eigen::Matrix<double, 18, 1> row;
        row.head<9>() = basis;       // D0 coefficients
        row.tail<9>() = d * basis;   // D1 coefficients
        AtA.noalias() += row * row.transpose();
        Atb.noalias() += row * g;
      }
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 18, 18>> eig(AtA);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  const double cond = lmin > 0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  if (!(lmin > 0) || cond > 1e14)
    throw std::runtime_error("fit_spatial: ill-conditioned design matrix, condition number " +
                             std::to_string(cond));
  const Eigen::Matrix<double, 18, 1> sol = AtA.ldlt().solve(Atb);
  SpatialDepthFit fit;
  for (int i = 0; i < 9; ++i) {
    fit.q0[i] = sol(i);
    fit.q1[i] = sol(9 + i);
  }
  fit.condition_number = cond;
  return fit;
}

ShotError shot_error(const InverseDepthMap& corrected, const InverseDepthMap& gt) {
  ShotError err;
  double sum = 0, sum2 = 0;
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x) {
      const double g = gt(x, y), c = corrected(x, y);
      if (!is_valid(g) || !is_valid(c) || g <= 0.0 || c <= 0.0) continue;
      const double e = 1.0 / c - 1.0 / g;  // depth-unit error
      sum += e;
      sum2 += e * e;
      ++err.pixels;
    }
  if (err.pixels > 0) {
    err.bias = sum / err.pixels;
    err.stddev = std::sqrt(std::max(0.0, sum2 / err.pixels - err.bias * err.bias));
  }
  return err;
}

}  // namespace rgbid
