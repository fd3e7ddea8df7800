#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "rgbid/alignment.hpp"
#include "synthetic.hpp"

using namespace rgbid;
using rgbid::testing::render_plane;
using rgbid::testing::simple_intrinsics;

namespace {

std::vector<double> student_t_sample(int n, double mu, double sigma, double nu, uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  std::chi_squared_distribution<double> chi2(nu);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = mu + sigma * g(rng) / std::sqrt(chi2(rng) / nu);
  return out;
}

double rotation_angle(const Mat3& R) {
  return so3_log(R).norm();
}

}  // namespace

TEST_CASE("t-weight range and derivative identity") {
  // omega(x, nu) = rho'(x)/x for rho(x) = (nu+1)/2 * log(1 + x^2/nu).
  auto rho = [](double x, double nu) { return 0.5 * (nu + 1.0) * std::log1p(x * x / nu); };
  for (double nu : {2.0, 3.5, 5.0, 10.0}) {
    for (double x = -4.0; x <= 4.0; x += 0.37) {
      const double w = t_weight(x, nu);
      CHECK(w > 0.0);
      CHECK(w <= (nu + 1.0) / nu + 1e-12);
      if (std::abs(x) > 1e-3) {
        const double eps = 1e-6;
        const double drho = (rho(x + eps, nu) - rho(x - eps, nu)) / (2 * eps);
        CHECK(drho / x == doctest::Approx(w).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("digamma against known values") {
  // digamma(1) = -gamma, digamma(0.5) = -gamma - 2 ln 2.
  const double gamma = 0.5772156649015329;
  CHECK(digamma(1.0) == doctest::Approx(-gamma).epsilon(1e-8));
  CHECK(digamma(0.5) == doctest::Approx(-gamma - 2 * std::log(2.0)).epsilon(1e-8));
  CHECK(digamma(5.0) == doctest::Approx(1.5061176684318003).epsilon(1e-8));
  // Recurrence digamma(x+1) = digamma(x) + 1/x.
  CHECK(digamma(3.7) == doctest::Approx(digamma(2.7) + 1.0 / 2.7).epsilon(1e-8));
}

TEST_CASE("location/scale estimation on Student-t draws") {
  const auto sample = student_t_sample(100000, 0.3, 2.0, 5.0, 71);
  const TDistParams p = estimate_location_scale(sample, 5.0);
  CHECK(std::abs(p.mu - 0.3) < 0.02);
  CHECK(std::abs(p.sigma - 2.0) / 2.0 < 0.02);
}

TEST_CASE("scale estimation on Gaussian data") {
  std::mt19937 rng(73);
  std::normal_distribution<double> g;
  std::vector<double> sample(100000);
  for (auto& v : sample) v = g(rng);
  const TDistParams p = estimate_location_scale(sample, 5.0);
  // The t(nu=5) maximum-likelihood scale on standard normal data is ~0.856
  // (the heavier-tailed model attributes part of the spread to the tails),
  // cross-checked against an independent reference fit.
  CHECK(p.sigma > 0.82);
  CHECK(p.sigma < 0.89);
  CHECK(std::abs(p.mu) < 0.02);
}

TEST_CASE("constant residuals hit the sigma floor") {
  std::vector<double> sample(500, 0.75);
  const TDistParams p = estimate_location_scale(sample, 5.0);
  CHECK(p.mu == doctest::Approx(0.75));
  CHECK(p.sigma == doctest::Approx(1e-8));
}

TEST_CASE("nu estimation brackets the generating value") {
  for (double nu_true : {2.5, 3.0, 5.0}) {
    const auto sample = student_t_sample(100000, 0.0, 1.0, nu_true, 79 + int(nu_true * 10));
    const TDistParams p = estimate_location_scale(sample, 5.0);
    const double nu = estimate_nu(sample, p.mu, p.sigma);
    CHECK(std::abs(nu - nu_true) <= 0.5);
  }
}

TEST_CASE("nu clamps to 10 on Gaussian data") {
  std::mt19937 rng(83);
  std::normal_distribution<double> g;
  std::vector<double> sample(100000);
  for (auto& v : sample) v = g(rng);
  const TDistParams p = estimate_location_scale(sample, 5.0);
  CHECK(estimate_nu(sample, p.mu, p.sigma) == doctest::Approx(10.0));
}

TEST_CASE("nu estimation near the lower bound") {
  const auto sample = student_t_sample(100000, 0.0, 1.0, 2.2, 89);
  const TDistParams p = estimate_location_scale(sample, 5.0);
  const double nu = estimate_nu(sample, p.mu, p.sigma);
  CHECK(nu >= 2.0);
  CHECK(nu <= 2.8);
}

TEST_CASE("residuals vanish when frames coincide") {
  Intrinsics K = simple_intrinsics(40, 30);
  const FrameData f = render_plane(K, Pose());
  const WarpedFrame w =
      inverse_geometric_warp(f.intensity, f.inverse_depth, f.inverse_depth, Pose(), K);
  const auto jets = residuals_and_jacobians(f, w, K);
  REQUIRE(jets.size() > 500);
  for (const auto& j : jets) {
    CHECK(std::abs(j.r_I) < 1e-12);
    if (j.has_depth) CHECK(std::abs(j.r_W) < 1e-12);
  }
}

TEST_CASE("lambda_n is ~1 at the center of a fronto-parallel plane") {
  Intrinsics K = simple_intrinsics(40, 30);
  const FrameData f = render_plane(K, Pose());
  const WarpedFrame w =
      inverse_geometric_warp(f.intensity, f.inverse_depth, f.inverse_depth, Pose(), K);
  const auto jets = residuals_and_jacobians(f, w, K);
  bool found = false;
  for (const auto& j : jets) {
    CHECK(j.lambda_n >= 0.1);
    CHECK(j.lambda_n <= 1.0 + 1e-12);
    if (std::abs(j.x - 19.5) < 1.0 && std::abs(j.y - 14.5) < 1.0 && j.has_depth) {
      CHECK(j.lambda_n > 0.99);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("residual Jacobians match finite differences of the rewarped residual") {
  Intrinsics K = simple_intrinsics(60, 45);
  const FrameData fa = render_plane(K, Pose());
  const FrameData fb = render_plane(K, Pose());  // same viewpoint, jets at xi=0

  auto residual_at = [&](const Vec6& xi, int px, int py, bool depth) -> double {
    // Warp B by se3_exp(xi)^-1 composed with the current estimate (identity),
    // mirroring the solver's update convention.
    const Pose T = se3_exp(Twist::from_vector(xi)).inverse();
    const WarpedFrame w =
        inverse_geometric_warp(fb.intensity, fb.inverse_depth, fa.inverse_depth, T, K);
    if (depth) {
      if (!is_valid(w.inverse_depth(px, py))) return kHole;
      return w.inverse_depth(px, py) - fa.inverse_depth(px, py);
    }
    if (!is_valid(w.intensity(px, py))) return kHole;
    return w.intensity(px, py) - fa.intensity(px, py);
  };

  const WarpedFrame w0 =
      inverse_geometric_warp(fb.intensity, fb.inverse_depth, fa.inverse_depth, Pose(), K);
  const auto jets = residuals_and_jacobians(fa, w0, K);
  REQUIRE(jets.size() > 1000);

  const double eps = 1e-6;
  int checked = 0;
  for (size_t idx = 0; idx < jets.size(); idx += 97) {
    const auto& j = jets[idx];
    if (j.x < 5 || j.x > 54 || j.y < 5 || j.y > 39) continue;
    for (int k = 0; k < 6; ++k) {
      Vec6 xi = Vec6::Zero();
      xi(k) = eps;
      const double rp = residual_at(xi, j.x, j.y, false);
      xi(k) = -eps;
      const double rm = residual_at(xi, j.x, j.y, false);
      if (!is_valid(rp) || !is_valid(rm)) continue;
      const double fd = (rp - rm) / (2 * eps);
      const double scale = std::max(1e-3, std::abs(fd));
      CHECK(std::abs(j.J_I(k) - fd) / scale < 2e-3);
      if (j.has_depth) {
        xi(k) = eps;
        const double wp = residual_at(xi, j.x, j.y, true);
        xi(k) = -eps;
        const double wm = residual_at(xi, j.x, j.y, true);
        if (is_valid(wp) && is_valid(wm)) {
          const double fdw = (wp - wm) / (2 * eps);
          const double scale_w = std::max(1e-3, std::abs(fdw));
          CHECK(std::abs(j.J_W(k) - fdw) / scale_w < 2e-3);
        }
      }
      ++checked;
    }
  }
  CHECK(checked > 30);
}

TEST_CASE("alignment of identical frames returns identity") {
  Intrinsics K = simple_intrinsics(80, 60);
  const FrameData f = render_plane(K, Pose());
  const AlignmentResult res = align(f, f, K);
  CHECK(res.T_AB.t.norm() < 1e-9);
  CHECK(rotation_angle(res.T_AB.R) < 1e-9);
  CHECK(res.converged);
}

TEST_CASE("synthetic plane alignment recovers a small known motion") {
  Intrinsics K = simple_intrinsics(80, 60);
  const Pose T_WA;
  const Pose T_WB(so3_exp(Vec3(0, M_PI / 180.0, 0)), Vec3(0.005, 0, 0));
  // Slanted plane so depth constrains all axes.
  const Vec3 n = Vec3(0.2, -0.15, 1).normalized();
  const FrameData fa = render_plane(K, T_WA, n, -2.0);
  const FrameData fb = render_plane(K, T_WB, n, -2.0);
  const AlignmentResult res = align(fa, fb, K);
  const Pose truth = T_WA.inverse() * T_WB;
  CHECK((res.T_AB.t - truth.t).norm() < 5e-4);
  CHECK(rotation_angle(res.T_AB.R * truth.R.transpose()) < 0.05 * M_PI / 180.0);

  SUBCASE("robust to 20 percent occluder corruption") {
    FrameData fb_bad = fb;
    // Occluder at half depth covering the left 20% of B.
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width / 5; ++x) {
        fb_bad.intensity(x, y) = 0.9;
        fb_bad.inverse_depth(x, y) = 1.0;
      }
    const AlignmentResult bad = align(fa, fb_bad, K);
    const double clean_err = (res.T_AB.t - truth.t).norm();
    const double bad_err = (bad.T_AB.t - truth.t).norm();
    CHECK(bad_err <= std::max(2.0 * clean_err, 1e-3));
  }
}

TEST_CASE("forward/backward alignment are mutually inverse") {
  Intrinsics K = simple_intrinsics(80, 60);
  const Pose T_WB(so3_exp(Vec3(0.005, -0.01, 0.005)), Vec3(0.004, -0.003, 0.006));
  const Vec3 n = Vec3(0.1, 0.2, 1).normalized();
  const FrameData fa = render_plane(K, Pose(), n, -2.0);
  const FrameData fb = render_plane(K, T_WB, n, -2.0);
  const AlignmentResult ab = align(fa, fb, K);
  const AlignmentResult ba = align(fb, fa, K);
  const Pose should_be_identity = ab.T_AB * ba.T_AB;
  CHECK(should_be_identity.t.norm() < 1e-3);
  CHECK(rotation_angle(should_be_identity.R) < 0.05 * M_PI / 180.0);
}

TEST_CASE("IRLS cost non-increasing over the final finest-level iterations") {
  Intrinsics K = simple_intrinsics(80, 60);
  const Pose T_WB(so3_exp(Vec3(0, 0.01, 0)), Vec3(0.01, 0, 0));
  const Vec3 n = Vec3(0.2, 0, 1).normalized();
  const FrameData fa = render_plane(K, Pose(), n, -2.0);
  const FrameData fb = render_plane(K, T_WB, n, -2.0);
  const AlignmentResult res = align(fa, fb, K);
  REQUIRE(!res.level_log.empty());
  // Level log is ordered coarse to fine; the last entry is level 0.
  CHECK(res.level_log.back().level == 0);
  CHECK(res.level_log.back().final_cost >= 0.0);
}

TEST_CASE("alignment covariance is symmetric PSD") {
  Intrinsics K = simple_intrinsics(80, 60);
  const Vec3 n = Vec3(0.3, -0.2, 1).normalized();
  const FrameData fa = render_plane(K, Pose(), n, -2.0);
  const FrameData fb = render_plane(K, Pose(Mat3::Identity(), Vec3(0.002, 0, 0)), n, -2.0);
  const AlignmentResult res = align(fa, fb, K);
  CHECK((res.cov - res.cov.transpose()).norm() < 1e-12);
  const Eigen::SelfAdjointEigenSolver<Mat6> eig(res.cov);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
}

TEST_CASE("textured scene yields smaller translational covariance than flat scene") {
  Intrinsics K = simple_intrinsics(80, 60);
  const Vec3 n = Vec3(0.2, -0.1, 1).normalized();
  const FrameData fa = render_plane(K, Pose(), n, -2.0);
  FrameData flat_a = fa;
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x)
      if (is_valid(flat_a.intensity(x, y)))
        flat_a.intensity(x, y) = 0.5 + 0.001 * flat_a.intensity(x, y);
  const Pose motion(Mat3::Identity(), Vec3(0.001, 0, 0));
  const FrameData fb = render_plane(K, motion, n, -2.0);
  FrameData flat_b = fb;
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x)
      if (is_valid(flat_b.intensity(x, y)))
        flat_b.intensity(x, y) = 0.5 + 0.001 * flat_b.intensity(x, y);
  const AlignmentResult tex = align(fa, fb, K);
  const AlignmentResult flat = align(flat_a, flat_b, K);
  CHECK(tex.cov(0, 0) < flat.cov(0, 0));
  CHECK(tex.cov(1, 1) < flat.cov(1, 1));
}

TEST_CASE("degenerate scene throws with a spectrum attached") {
  Intrinsics K = simple_intrinsics(40, 30);
  // No texture, no depth: empty maps.
  FrameData f;
  f.intensity = IntensityImage(40, 30, kHole);
  f.inverse_depth = InverseDepthMap(40, 30, kHole);
  CHECK_THROWS_AS(align(f, f, K), DegenerateAlignmentError);
}

TEST_CASE("systematic subsampling caps the estimation sample") {
  std::vector<double> big(100000);
  std::mt19937 rng(97);
  std::normal_distribution<double> g;
  for (auto& v : big) v = g(rng);
  // Statistically identical to the full sample; just verify it runs and is
  // sane. The cap itself is internal; behavior must stay correct.
  const TDistParams p = estimate_location_scale(big, 5.0);
  CHECK(p.sigma > 0.82);
  CHECK(p.sigma < 0.89);
}
