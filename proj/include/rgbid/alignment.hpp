#pragma once

#include <stdexcept>
#include <vector>

#include "rgbid/camera.hpp"
#include "rgbid/geometry.hpp"
#include "rgbid/image.hpp"
#include "rgbid/warping.hpp"

namespace rgbid {

/// Intensity + inverse depth pair of one RGB-D frame.
struct FrameData {
  IntensityImage intensity;
  InverseDepthMap inverse_depth;
};

/// Coarse-to-fine pyramid; level 0 is full resolution.
struct Pyramid {
  std::vector<FrameData> levels;
  std::vector<Intrinsics> intrinsics;
};

Pyramid build_pyramid(const FrameData& frame, const Intrinsics& K, int levels);

/// Student-t location/scale/dof triple for a residual population.
struct TDistParams {
  double mu = 0.0;
  double sigma = 1.0;
  double nu = 5.0;
};

/// Student-t IRLS weight omega(x, nu) = (nu+1)/(nu+x^2).
inline double t_weight(double x, double nu) { return (nu + 1.0) / (nu + x * x); }

double digamma(double x);

/// Location/scale MLE at fixed nu via the coupled weighted equations;
/// input is subsampled by systematic selection to at most 19200 points.
TDistParams estimate_location_scale(const std::vector<double>& residuals, double nu);

/// Degrees-of-freedom MLE by bisection of the digamma stationarity
/// condition on [2,10]; clamps to the boundary when no sign change.
double estimate_nu(const std::vector<double>& residuals, double mu, double sigma);

/// Per-pixel linearized residual rows at xi = 0.
struct PixelJet {
  double r_I = 0.0;
  double r_W = 0.0;
  Vec6 J_I = Vec6::Zero();
  Vec6 J_W = Vec6::Zero();
  double lambda_n = 1.0;
  bool has_depth = false;  // inverse depth residual available
  int x = 0, y = 0;
};

/// Residuals and Jacobians of the photometric and inverse-depth
/// constraints for frame A against the warped frame B at one pyramid
/// level.
std::vector<PixelJet> residuals_and_jacobians(const FrameData& frame_a,
                                              const WarpedFrame& warped_b,
                                              const Intrinsics& K,
                                              double lambda_n_min = 0.1);

struct LevelLog {
  int level = 0;
  int iterations = 0;
  double final_cost = 0.0;
};

struct AlignmentResult {
  Pose T_AB;
  Mat6 cov = Mat6::Zero();
  bool converged = false;
  bool cov_degenerate = false;
  std::vector<LevelLog> level_log;
  TDistParams tdist_intensity;
  TDistParams tdist_depth;  // full-resolution scale, used by covisibility
};

struct DegenerateAlignmentError : std::runtime_error {
  explicit DegenerateAlignmentError(const Vec6& spec)
      : std::runtime_error("degenerate alignment: under-constrained scene"), spectrum(spec) {}
  Vec6 spectrum;
};

struct AlignmentConfig {
  int levels = 3;
  std::vector<int> iterations{10, 5, 4};  // indexed by level, 0 = finest
  double convergence_eps = 1e-6;
  double lambda_n_min = 0.1;
  double bilateral_sigma_space = 2.0;
  double bilateral_sigma_intensity = 0.05;
  double bilateral_sigma_depth = 0.02;
};

/// Dense IRLS alignment of frame B against frame A; returns T_AB with its
/// filtered-Hessian covariance (left-referenced in A).
AlignmentResult align(const FrameData& frame_a, const FrameData& frame_b, const Intrinsics& K,
                      const Pose& init = Pose(), const AlignmentConfig& config = {});

/// Covariance from one extra no-update iteration on bilaterally filtered
/// images of A; sets degenerate=true and inflates when H is singular.
Mat6 filtered_hessian_covariance(const FrameData& frame_a, const FrameData& frame_b,
                                 const Intrinsics& K, const Pose& T_AB,
                                 const AlignmentConfig& config, bool* degenerate = nullptr);

/// 5x5 bilateral filter with hole skipping.
Image<double> bilateral_filter(const Image<double>& img, double sigma_space, double sigma_range);

}  // namespace rgbid
