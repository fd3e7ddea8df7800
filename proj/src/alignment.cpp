#include "rgbid/alignment.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace rgbid {

Pyramid build_pyramid(const FrameData& frame, const Intrinsics& K, int levels) {
  Pyramid pyr;
  pyr.levels.push_back(frame);
  pyr.intrinsics.push_back(K);
  for (int l = 1; l < levels; ++l) {
    const auto& prev = pyr.levels.back();
    FrameData f;
    f.intensity = downsample2(prev.intensity);
    f.inverse_depth = downsample2(prev.inverse_depth);
    Intrinsics ki = pyr.intrinsics.back();
    // pixel centers at integers: new center x' maps to old 2x' + 0.5
    ki.fx /= 2.0;
    ki.fy /= 2.0;
    ki.cx = (ki.cx - 0.5) / 2.0;
    ki.cy = (ki.cy - 0.5) / 2.0;
    ki.width /= 2;
    ki.height /= 2;
    pyr.levels.push_back(std::move(f));
    pyr.intrinsics.push_back(ki);
  }
  return pyr;
}

double digamma(double x) {
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv -
            inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0));
  return result;
}

namespace {

constexpr size_t kMaxSample = 19200;
constexpr double kSigmaFloor = 1e-8;

std::vector<double> systematic_sample(const std::vector<double>& data) {
  if (data.size() <= kMaxSample) return data;
  const size_t stride = (data.size() + kMaxSample - 1) / kMaxSample;
  std::vector<double> out;
  out.reserve(data.size() / stride + 1);
  for (size_t i = 0; i < data.size(); i += stride) out.push_back(data[i]);
  return out;
}

}  // namespace

TDistParams estimate_location_scale(const std::vector<double>& residuals, double nu) {
  const std::vector<double> r = systematic_sample(residuals);
  TDistParams params;
  params.nu = nu;
  if (r.empty()) return params;
  double mu = 0.0;
  for (double v : r) mu += v;
  mu /= r.size();
  double var = 0.0;
  for (double v : r) var += (v - mu) * (v - mu);
  double sigma = std::sqrt(var / r.size());
  if (sigma < kSigmaFloor) {
    params.mu = mu;
    params.sigma = kSigmaFloor;
    return params;
  }
  for (int it = 0; it < 50; ++it) {
    double wsum = 0.0, wrsum = 0.0;
    for (double v : r) {
      const double x = (v - mu) / sigma;
      const double w = t_weight(x, nu);
      wsum += w;
      wrsum += w * v;
    }
    const double mu_new = wrsum / wsum;
    double s2 = 0.0;
    for (double v : r) {
      const double x = (v - mu_new) / sigma;
      const double w = t_weight(x, nu);
      s2 += w * (v - mu_new) * (v - mu_new);
    }
    const double sigma_new = std::max(kSigmaFloor, std::sqrt(s2 / r.size()));
    const double rel = std::abs(sigma_new - sigma) / sigma;
    mu = mu_new;
    sigma = sigma_new;
    if (rel < 1e-4) break;
  }
  params.mu = mu;
  params.sigma = std::max(sigma, kSigmaFloor);
  return params;
}

namespace {

double solve_nu(const std::vector<double>& r, double mu, double sigma);

}  // namespace

double estimate_nu(const std::vector<double>& residuals, double mu, double sigma) {
  const std::vector<double> r = systematic_sample(residuals);
  if (r.empty() || sigma <= 0.0) return 5.0;
  double nu = solve_nu(r, mu, sigma);
  // The caller estimates (mu, sigma) with nu fixed at 5, which inflates
  // sigma for heavy-tailed data and biases nu upward; re-fitting the scale
  // at the estimated nu and re-solving removes most of that bias.
  for (int it = 0; it < 2 && nu < 9.99; ++it) {
    const TDistParams refit = estimate_location_scale(residuals, nu);
    if (refit.sigma <= 0.0) break;
    const double nu_new = solve_nu(r, refit.mu, refit.sigma);
    if (std::abs(nu_new - nu) < 1e-3) {
      nu = nu_new;
      break;
    }
    nu = nu_new;
  }
  return nu;
}

namespace {

double solve_nu(const std::vector<double>& r, double mu, double sigma) {
  auto stationarity = [&](double nu) {
    double acc = 0.0;
    for (double v : r) {
      const double x = (v - mu) / sigma;
      const double w = t_weight(x, nu);
      acc += -digamma(nu / 2.0) + std::log(nu / 2.0) + digamma((nu + 1.0) / 2.0) -
             std::log((nu + 1.0) / 2.0) + 1.0 + std::log(w) - w;
    }
    return acc / r.size();
  };
  double lo = 2.0, hi = 10.0;
  double flo = stationarity(lo), fhi = stationarity(hi);
  if (flo * fhi > 0.0) return fhi > 0.0 ? hi : lo;
  for (int it = 0; it < 30; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fmid = stationarity(mid);
    if (flo * fmid <= 0.0) {
      hi = mid;
      fhi = fmid;
    } else {
      lo = mid;
      flo = fmid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

namespace {

// central differences, one-sided at hole borders; returns false when no
// valid neighbour pair exists
bool gradient_at(const Image<double>& img, int x, int y, double* gx, double* gy) {
  const auto sample = [&](int sx, int sy) -> double {
    if (!img.in_bounds(sx, sy)) return kHole;
    return img(sx, sy);
  };
  const double c = sample(x, y);
  if (!is_valid(c)) return false;
  const double l = sample(x - 1, y), r = sample(x + 1, y);
  if (is_valid(l) && is_valid(r))
    *gx = (r - l) / 2.0;
  else if (is_valid(r))
    *gx = r - c;
  else if (is_valid(l))
    *gx = c - l;
  else
    return false;
  const double u = sample(x, y - 1), d = sample(x, y + 1);
  if (is_valid(u) && is_valid(d))
    *gy = (d - u) / 2.0;
  else if (is_valid(d))
    *gy = d - c;
  else if (is_valid(u))
    *gy = c - u;
  else
    return false;
  return true;
}

}  // namespace

std::vector<PixelJet> residuals_and_jacobians(const FrameData& frame_a,
                                              const WarpedFrame& warped_b,
                                              const Intrinsics& K, double lambda_n_min) {
  std::vector<PixelJet> jets;
  const auto& I_A = frame_a.intensity;
  const auto& W_A = frame_a.inverse_depth;
  jets.reserve(static_cast<size_t>(I_A.width()) * I_A.height() / 2);
  const Mat3 Km = K.K();
  const Mat3 Kinv = Km.inverse();
  for (int y = 0; y < I_A.height(); ++y) {
    for (int x = 0; x < I_A.width(); ++x) {
      const double w_a = W_A(x, y);
      const double i_a = I_A(x, y);
      const double i_b = warped_b.intensity(x, y);
      if (!is_valid(w_a) || w_a <= 0.0 || !is_valid(i_a) || !is_valid(i_b)) continue;
      double gix, giy;
      if (!gradient_at(I_A, x, y, &gix, &giy)) continue;
      const Vec3 p(x, y, 1.0);
      Mat3 A_mat = Km;  // K - p e_z^T
      A_mat.col(2) -= p;
      const Vec3 X_A = Kinv * p / w_a;
      Eigen::Matrix<double, 3, 6> M;
      M.leftCols<3>() = Mat3::Identity();
      M.rightCols<3>() = -skew(X_A);
      PixelJet jet;
      jet.x = x;
      jet.y = y;
      jet.r_I = i_b - i_a;
      const Eigen::RowVector3d gI(gix, giy, 0.0);
      jet.J_I = (w_a * gI * A_mat * M).transpose();
      const double w_b = warped_b.inverse_depth(x, y);
      double gwx, gwy;
      if (is_valid(w_b) && w_b > 0.0 && gradient_at(W_A, x, y, &gwx, &gwy)) {
        jet.has_depth = true;
        jet.r_W = w_b - w_a;
        const Eigen::RowVector3d gW(gwx, gwy, 0.0);
        const Eigen::RowVector3d row = gW * A_mat + w_b * Eigen::RowVector3d(0, 0, 1);
        jet.J_W = (w_a * row * M).transpose();
        // normal-based down-weight of oblique surfaces
        Vec3 n = ((gW * A_mat).transpose() / w_a + Vec3(0, 0, 1));
        const double nn = n.norm();
        if (nn < 1e-12) {
          jet.lambda_n = 1.0;
        } else {
          n /= nn;
          if (n.z() < 0) n = -n;  // orient away from camera (+z)
          Vec3 ray = Kinv * p;
          ray.normalize();
          jet.lambda_n = std::max(lambda_n_min, n.dot(ray));
        }
      }
      jets.push_back(jet);
    }
  }
  return jets;
}

Image<double> bilateral_filter(const Image<double>& img, double sigma_space, double sigma_range) {
  Image<double> out(img.width(), img.height(), kHole);
  const int radius = 2;  // 5x5 window
  const double inv2ss = 1.0 / (2.0 * sigma_space * sigma_space);
  const double inv2sr = 1.0 / (2.0 * sigma_range * sigma_range);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double c = img(x, y);
      if (!is_valid(c)) continue;
      double wsum = 0.0, vsum = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int sx = x + dx, sy = y + dy;
          if (!img.in_bounds(sx, sy)) continue;
          const double v = img(sx, sy);
          if (!is_valid(v)) continue;
          const double w = std::exp(-(dx * dx + dy * dy) * inv2ss - (v - c) * (v - c) * inv2sr);
          wsum += w;
          vsum += w * v;
        }
      }
      out(x, y) = vsum / wsum;
    }
  }
  return out;
}

namespace {

struct WeightedSystem {
  Mat6 H = Mat6::Zero();
  Vec6 b = Vec6::Zero();
  double cost = 0.0;
  TDistParams tI, tW;
};

void refit_location_scale(const std::vector<double>& res, TDistParams* t) {
  if (t->nu >= 4.99) return;
  const TDistParams refit = estimate_location_scale(res, t->nu);
  if (refit.sigma <= 0.0) return;
  t->mu = refit.mu;
  t->sigma = std::max(refit.sigma, 1e-8);
}

WeightedSystem build_system(const std::vector<PixelJet>& jets) {
  WeightedSystem sys;
  std::vector<double> res_i, res_w;
  res_i.reserve(jets.size());
  res_w.reserve(jets.size());
  for (const auto& j : jets) {
    res_i.push_back(j.r_I);
    if (j.has_depth) res_w.push_back(j.r_W);
  }
  sys.tI = estimate_location_scale(res_i, 5.0);
  sys.tW = estimate_location_scale(res_w, 5.0);
  // On noiseless synthetic input the residuals can be numerically zero;
  // floor the scales so the weights stay finite.
  sys.tI.sigma = std::max(sys.tI.sigma, 1e-8);
  sys.tW.sigma = std::max(sys.tW.sigma, 1e-8);
  sys.tI.nu = estimate_nu(res_i, sys.tI.mu, sys.tI.sigma);
  sys.tW.nu = estimate_nu(res_w, sys.tW.mu, sys.tW.sigma);
  // Re-fit location/scale at the estimated dof: under heavy contamination the
  // initial fit at dof 5 latches onto a broad optimum covering the outliers,
  // while the heavier-tailed re-fit locks onto the inlier mode.
  refit_location_scale(res_i, &sys.tI);
  refit_location_scale(res_w, &sys.tW);
  // outliers live mostly in the depth residuals; avoid over-robust
  // intensity weights
  sys.tI.nu = std::max(sys.tI.nu, sys.tW.nu);
  const double s2i = sys.tI.sigma * sys.tI.sigma;
  const double s2w = sys.tW.sigma * sys.tW.sigma;
  for (const auto& j : jets) {
    const double wi = t_weight((j.r_I - sys.tI.mu) / sys.tI.sigma, sys.tI.nu) / s2i;
    sys.H.noalias() += wi * j.J_I * j.J_I.transpose();
    sys.b.noalias() -= wi * j.J_I * j.r_I;
    sys.cost += wi * j.r_I * j.r_I;
    if (j.has_depth) {
      const double ww =
          j.lambda_n * t_weight((j.r_W - sys.tW.mu) / sys.tW.sigma, sys.tW.nu) / s2w;
      sys.H.noalias() += ww * j.J_W * j.J_W.transpose();
      sys.b.noalias() -= ww * j.J_W * j.r_W;
      sys.cost += ww * j.r_W * j.r_W;
    }
  }
  return sys;
}

// Rank test insensitive to the relative scaling of the intensity and depth
// blocks: equilibrate H by its diagonal before looking at the spectrum, so a
// tight depth fit (tiny sigma, huge weights) cannot mask a well-posed system.
bool rank_deficient(const Mat6& H, Vec6* spectrum) {
  const Vec6 d = H.diagonal();
  if ((d.array() <= 0.0).any()) {
    if (spectrum) *spectrum = d;
    return true;
  }
  const Vec6 s = d.cwiseSqrt().cwiseInverse();
  const Mat6 Hn = s.asDiagonal() * H * s.asDiagonal();
  const Eigen::SelfAdjointEigenSolver<Mat6> eig(Hn);
  if (spectrum) *spectrum = eig.eigenvalues();
  return eig.eigenvalues().minCoeff() < 1e-9;
}

FrameData downsample_to_level(const WarpedFrame& warped, int level, FrameData* out) {
  out->intensity = warped.intensity;
  out->inverse_depth = warped.inverse_depth;
  for (int l = 0; l < level; ++l) {
    out->intensity = downsample2(out->intensity);
    out->inverse_depth = downsample2(out->inverse_depth);
  }
  return *out;
}

}  // namespace

AlignmentResult align(const FrameData& frame_a, const FrameData& frame_b, const Intrinsics& K,
                      const Pose& init, const AlignmentConfig& config) {
  const Pyramid pyr_a = build_pyramid(frame_a, K, config.levels);
  AlignmentResult result;
  result.T_AB = init;
  for (int level = config.levels - 1; level >= 0; --level) {
    const int iters =
        level < static_cast<int>(config.iterations.size()) ? config.iterations[level] : 5;
    LevelLog log;
    log.level = level;
    for (int it = 0; it < iters; ++it) {
      const WarpedFrame warped = inverse_geometric_warp(
          frame_b.intensity, frame_b.inverse_depth, frame_a.inverse_depth, result.T_AB, K);
      FrameData warped_level;
      downsample_to_level(warped, level, &warped_level);
      WarpedFrame wl;
      wl.intensity = warped_level.intensity;
      wl.inverse_depth = warped_level.inverse_depth;
      const auto jets = residuals_and_jacobians(pyr_a.levels[level], wl,
                                                pyr_a.intrinsics[level], config.lambda_n_min);
      if (jets.size() < 6) {
        throw DegenerateAlignmentError(Vec6::Zero());
      }
      const WeightedSystem sys = build_system(jets);
      Vec6 spectrum;
      if (rank_deficient(sys.H, &spectrum)) throw DegenerateAlignmentError(spectrum);
      const Vec6 xi = sys.H.ldlt().solve(sys.b);
      result.T_AB = se3_exp(Twist::from_vector(xi)).inverse() * result.T_AB;
      ++log.iterations;
      log.final_cost = sys.cost;
      if (level == 0) {
        result.tdist_intensity = sys.tI;
        result.tdist_depth = sys.tW;
      }
      if (xi.norm() < config.convergence_eps) break;
    }
    result.level_log.push_back(log);
  }
  result.converged = true;
  result.cov = filtered_hessian_covariance(frame_a, frame_b, K, result.T_AB, config,
                                           &result.cov_degenerate);
  return result;
}

Mat6 filtered_hessian_covariance(const FrameData& frame_a, const FrameData& frame_b,
                                 const Intrinsics& K, const Pose& T_AB,
                                 const AlignmentConfig& config, bool* degenerate) {
  FrameData filtered;
  filtered.intensity = bilateral_filter(frame_a.intensity, config.bilateral_sigma_space,
                                        config.bilateral_sigma_intensity);
  filtered.inverse_depth = bilateral_filter(frame_a.inverse_depth, config.bilateral_sigma_space,
                                            config.bilateral_sigma_depth);
  const WarpedFrame warped = inverse_geometric_warp(
      frame_b.intensity, frame_b.inverse_depth, filtered.inverse_depth, T_AB, K);
  const auto jets = residuals_and_jacobians(filtered, warped, K, config.lambda_n_min);
  if (degenerate) *degenerate = false;
  if (jets.size() < 6) {
    if (degenerate) *degenerate = true;
    return 1e6 * Mat6::Identity();
  }
  const WeightedSystem sys = build_system(jets);
  const Mat6 H = (sys.H + sys.H.transpose()) / 2.0;
  if (rank_deficient(H, nullptr)) {
    if (degenerate) *degenerate = true;
    return 1e6 * Mat6::Identity();
  }
  Mat6 cov = H.inverse();
  cov = ((cov + cov.transpose()) / 2.0).eval();
  return cov;
}

}  // namespace rgbid
