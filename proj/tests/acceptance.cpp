// End-to-end acceptance checks for the library: each numbered check prints
// one PASS/FAIL line. Checks 12 and 13 need a TUM fr1/desk download and are
// skipped unless RGBID_TUM_FR1_DESK points at the extracted sequence.

#include <Eigen/Dense>

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <random>
#include <tuple>

#include "rgbid/alignment.hpp"
#include "rgbid/calibration.hpp"
#include "rgbid/dataset.hpp"
#include "rgbid/fusion.hpp"
#include "rgbid/loop.hpp"
#include "rgbid/pipeline.hpp"
#include "rgbid/posegraph.hpp"
#include "rgbid/segmentation.hpp"
#include "rgbid/warping.hpp"
#include "synthetic.hpp"

using namespace rgbid;
using rgbid::testing::plane_texture;
using rgbid::testing::random_pose;
using rgbid::testing::render_plane;
using rgbid::testing::simple_intrinsics;

namespace {

int failures = 0;

void report(int index, const std::string& name, bool ok) {
  std::cout << (ok ? "PASS" : "FAIL") << "  " << index << ". " << name << "\n";
  if (!ok) ++failures;
}

void skip(int index, const std::string& name, const std::string& why) {
  std::cout << "SKIP  " << index << ". " << name << " (" << why << ")\n";
}

// --- 1: Lie group roundtrips -----------------------------------------------

bool check_lie_roundtrips() {
  std::mt19937 rng(11);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> mag(0.0, M_PI - 1e-3);
  for (int i = 0; i < 1000; ++i) {
    Vec3 axis(g(rng), g(rng), g(rng));
    if (axis.norm() < 1e-9) axis = Vec3::UnitZ();
    const Vec3 theta = axis.normalized() * mag(rng);
    if ((so3_log(so3_exp(theta)) - theta).norm() > 1e-9) return false;
    Twist xi(Vec3(g(rng), g(rng), g(rng)), theta);
    const Twist back = se3_log(se3_exp(xi));
    if ((back.v - xi.v).norm() > 1e-9 || (back.theta - xi.theta).norm() > 1e-9) return false;
  }
  return true;
}

// --- 2a: alignment residual Jacobians vs finite differences ----------------

bool check_alignment_jacobians() {
  const Intrinsics K = simple_intrinsics(64, 48, 50.0);
  const FrameData frame_a = render_plane(K, Pose{});
  Pose T_cam_b;
  T_cam_b.t = Vec3(0.01, -0.005, 0.003);
  T_cam_b.R = so3_exp(Vec3(0.004, 0.006, -0.003));
  const FrameData frame_b = render_plane(K, T_cam_b);
  const Pose T_AB = T_cam_b;  // frame a rendered at identity

  auto residual_maps = [&](const Pose& T) {
    const WarpedFrame warped =
        inverse_geometric_warp(frame_b.intensity, frame_b.inverse_depth, frame_a.inverse_depth,
                               T, K);
    std::map<std::pair<int, int>, std::pair<double, double>> out;
    for (const auto& jet : residuals_and_jacobians(frame_a, warped, K))
      out[{jet.x, jet.y}] = {jet.r_I, jet.r_W};
    return out;
  };

  const WarpedFrame warped0 = inverse_geometric_warp(
      frame_b.intensity, frame_b.inverse_depth, frame_a.inverse_depth, T_AB, K);
  const auto jets = residuals_and_jacobians(frame_a, warped0, K);

  const double h = 1e-6;
  int checked = 0, bad = 0;
  for (int k = 0; k < 6; ++k) {
    Vec6 d = Vec6::Zero();
    d[k] = h;
    const auto plus = residual_maps(se3_exp(d).inverse() * T_AB);
    const auto minus = residual_maps(se3_exp((-d).eval()).inverse() * T_AB);
    for (const auto& jet : jets) {
      const auto ip = plus.find({jet.x, jet.y});
      const auto im = minus.find({jet.x, jet.y});
      if (ip == plus.end() || im == minus.end()) continue;
      const double fd_I = (ip->second.first - im->second.first) / (2 * h);
      const double an_I = jet.J_I[k];
      const double scale_I = std::max({std::abs(fd_I), std::abs(an_I), 1.0});
      if (std::abs(fd_I - an_I) / scale_I > 1e-3) ++bad;
      ++checked;
      if (jet.has_depth) {
        const double fd_W = (ip->second.second - im->second.second) / (2 * h);
        const double an_W = jet.J_W[k];
        const double scale_W = std::max({std::abs(fd_W), std::abs(an_W), 1.0});
        if (std::abs(fd_W - an_W) / scale_W > 1e-3) ++bad;
        ++checked;
      }
    }
  }
  // Allow a sliver of pixels whose interpolation support changes across the
  // finite-difference step.
  return checked > 1000 && bad <= checked / 200;
}

// --- 2b: pose-graph Jacobians vs finite differences ------------------------

bool check_posegraph_jacobians() {
  std::mt19937 rng(13);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const Pose T_Wi = random_pose(rng, 1.0, 1.5);
    const Pose T_Wj = random_pose(rng, 1.0, 1.5);
    const Pose T_hat = (T_Wi.inverse() * T_Wj) * se3_exp((0.05 * Vec6::Random()).eval());
    const NodeJacobians J = node_jacobians(T_hat, T_Wi, T_Wj);
    for (int k = 0; k < 6; ++k) {
      Vec6 d = Vec6::Zero();
      d[k] = h;
      const Vec6 fd_i = (constraint_error(T_hat, T_Wi * se3_exp(d), T_Wj) -
                         constraint_error(T_hat, T_Wi * se3_exp((-d).eval()), T_Wj)) /
                        (2 * h);
      const Vec6 fd_j = (constraint_error(T_hat, T_Wi, T_Wj * se3_exp(d)) -
                         constraint_error(T_hat, T_Wi, T_Wj * se3_exp((-d).eval()))) /
                        (2 * h);
      if ((J.wrt_i.col(k) - fd_i).cwiseAbs().maxCoeff() > 1e-5) return false;
      if ((J.wrt_j.col(k) - fd_j).cwiseAbs().maxCoeff() > 1e-5) return false;
    }
  }
  return true;
}

// --- 3: covariance propagation vs Monte Carlo -------------------------------

bool check_covariance_propagation() {
  std::mt19937 rng(17);
  std::normal_distribution<double> g;
  const int samples = 100000;
  for (int trial = 0; trial < 20; ++trial) {
    PoseWithCovariance A, B;
    A.pose = random_pose(rng, 1.0, 1.0);
    B.pose = random_pose(rng, 1.0, 1.0);
    Mat6 half_a = 0.01 * Mat6::Random();
    Mat6 half_b = 0.01 * Mat6::Random();
    A.cov = half_a * half_a.transpose() + 1e-8 * Mat6::Identity();
    B.cov = half_b * half_b.transpose() + 1e-8 * Mat6::Identity();

    const PoseWithCovariance rel = compose_relative_with_cov(A, B);
    const Pose rel_hat = A.pose.inverse() * B.pose;

    const Eigen::LLT<Mat6> llt_a(A.cov), llt_b(B.cov);
    Mat6 mc = Mat6::Zero();
    for (int s = 0; s < samples; ++s) {
      Vec6 na, nb;
      for (int k = 0; k < 6; ++k) {
        na[k] = g(rng);
        nb[k] = g(rng);
      }
      // Decoupled left perturbation (left-composed rotation, additive
      // translation), matching the propagation Jacobians' convention.
      const Vec6 da = llt_a.matrixL() * na;
      const Vec6 db = llt_b.matrixL() * nb;
      const Pose Ta(so3_exp(da.tail<3>()) * A.pose.R, A.pose.t + da.head<3>());
      const Pose Tb(so3_exp(db.tail<3>()) * B.pose.R, B.pose.t + db.head<3>());
      const Pose rel_s = Ta.inverse() * Tb;
      Vec6 delta;
      delta.head<3>() = rel_s.t - rel_hat.t;
      delta.tail<3>() = so3_log(rel_s.R * rel_hat.R.transpose());
      mc += delta * delta.transpose();
    }
    mc /= samples;
    if ((mc - rel.cov).norm() / rel.cov.norm() > 0.05) return false;
  }
  return true;
}

// --- 4: warping oracles ------------------------------------------------------

bool check_warping() {
  const Intrinsics K = simple_intrinsics(64, 48, 50.0);
  const FrameData frame_a = render_plane(K, Pose{});
  Pose T_cam_b;
  T_cam_b.t = Vec3(0.03, 0.01, -0.02);
  T_cam_b.R = so3_exp(Vec3(0.01, -0.02, 0.015));
  const FrameData frame_b = render_plane(K, T_cam_b);
  const Pose T_AB = T_cam_b;

  const WarpedFrame warped = inverse_geometric_warp(
      frame_b.intensity, frame_b.inverse_depth, frame_a.inverse_depth, T_AB, K);
  const Mat3 Kinv = K.K().inverse();
  const Pose T_BA = T_AB.inverse();
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      if (!is_valid(warped.map_x(x, y))) continue;
      const double w = frame_a.inverse_depth(x, y);
      const Vec3 X_A = Kinv * Vec3(x, y, 1.0) / w;
      const Vec3 X_B = T_BA * X_A;
      if (X_B.z() <= 0) continue;
      const Vec3 p = K.K() * (X_B / X_B.z());
      if (std::abs(warped.map_x(x, y) - p.x()) > 1e-6) return false;
      if (std::abs(warped.map_y(x, y) - p.y()) > 1e-6) return false;
    }

  // Two-strip occlusion scene: a near plane occludes a far plane after a
  // sideways shift; the nearer surface must win every contested pixel.
  const int w = 64, h = 48;
  InverseDepthMap W_A(w, h, kHole);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) W_A(x, y) = (x < 32) ? 1.0 : 0.5;  // near strip on the left
  Pose T_BA2;
  T_BA2.t = Vec3(-0.2, 0.0, 0.0);  // shift pushes the near strip over the far one
  const InverseDepthMap reg = forward_register(W_A, T_BA2, K, K);
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x) {
      const double v = reg(x, y);
      if (!is_valid(v)) continue;
      // Every valid output must equal one of the two input surfaces, and in
      // the contested band the near surface (w = 1) must survive.
      if (std::abs(v - 1.0) > 0.05 && std::abs(v - 0.5) > 0.05) return false;
    }
  // Project both strip borders: pixels mapped from the near strip interior.
  int contested = 0, near_kept = 0;
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Near-strip source pixel x maps to x + fx*t_x*w = x - 10 (w=1);
      // far pixels map to x - 5 (w=0.5). Contested: both land on x' in
      // [22, 27): near source x'+10 < 32 and far source x'+5 >= 32.
      const double v = reg(x, y);
      if (!is_valid(v)) continue;
      if (x >= 22 && x < 27) {
        ++contested;
        if (std::abs(v - 1.0) < 0.05) ++near_kept;
      }
    }
  return contested > 0 && near_kept == contested;
}

// --- 5: synthetic alignment accuracy ----------------------------------------

bool check_alignment_accuracy() {
  const Intrinsics K = simple_intrinsics(80, 60, 60.0);
  const FrameData frame_a = render_plane(K, Pose{});
  Pose T_cam_b;
  T_cam_b.t = Vec3(0.003, -0.003, 0.002);  // ~5 mm
  T_cam_b.R = so3_exp(Vec3(0.0, M_PI / 180.0, 0.0));
  FrameData frame_b = render_plane(K, T_cam_b);

  const AlignmentResult clean = align(frame_a, frame_b, K);
  const double terr_clean = (clean.T_AB.t - T_cam_b.t).norm();
  const double rerr_clean = so3_log(clean.T_AB.R.transpose() * T_cam_b.R).norm();
  if (terr_clean > 5e-4 || rerr_clean > 0.05 * M_PI / 180.0) return false;

  // Corrupt 20% of frame B with a near occluder.
  FrameData occluded = frame_b;
  for (int y = 0; y < 27; ++y)
    for (int x = 0; x < 36; ++x) {
      occluded.intensity(x, y) = plane_texture(7.0 + 0.1 * x, 3.0 + 0.1 * y);
      occluded.inverse_depth(x, y) = 1.0;
    }
  const AlignmentResult robust = align(frame_a, occluded, K);
  const double terr = (robust.T_AB.t - T_cam_b.t).norm();
  const double rerr = so3_log(robust.T_AB.R.transpose() * T_cam_b.R).norm();
  return terr <= 1e-3 && rerr <= 0.1 * M_PI / 180.0;
}

// --- 6: Student-t parameter estimation ---------------------------------------

bool check_student_t() {
  std::mt19937 rng(23);
  std::normal_distribution<double> g;
  auto draw_t = [&](double mu, double sigma, double nu) {
    std::chi_squared_distribution<double> chi(nu);
    return mu + sigma * g(rng) / std::sqrt(chi(rng) / nu);
  };
  for (double nu_true : {2.5, 3.0, 5.0}) {
    std::vector<double> samples(100000);
    for (auto& s : samples) s = draw_t(0.1, 0.8, nu_true);
    const TDistParams p = estimate_location_scale(samples, nu_true);
    if (std::abs(p.mu - 0.1) > 0.02 * 0.8) return false;
    if (std::abs(p.sigma - 0.8) / 0.8 > 0.02) return false;
    const double nu_est = estimate_nu(samples, p.mu, p.sigma);
    if (std::abs(nu_est - nu_true) > 0.5) return false;
  }
  std::vector<double> gauss(100000);
  for (auto& s : gauss) s = 0.5 * g(rng);
  const TDistParams p = estimate_location_scale(gauss, 10.0);
  return estimate_nu(gauss, p.mu, p.sigma) >= 10.0 - 1e-9;
}

// --- 7: fusion variance reduction -------------------------------------------

bool check_fusion_variance() {
  const Intrinsics K = simple_intrinsics(64, 48, 50.0);
  std::mt19937 rng(29);
  std::normal_distribution<double> noise(0.0, 0.01);
  const FrameData truth = render_plane(K, Pose{});

  double ss = 0.0;
  size_t n = 0;
  const int reps = 20;
  for (int rep = 0; rep < reps; ++rep) {
    FrameData first = truth;
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x)
        if (is_valid(first.inverse_depth(x, y))) first.inverse_depth(x, y) += noise(rng);
    Keyframe kf = make_keyframe(first, Pose{}, 0, 0.0);
    for (int f = 1; f < 16; ++f) {
      FrameData frame = truth;
      for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x)
          if (is_valid(frame.inverse_depth(x, y))) frame.inverse_depth(x, y) += noise(rng);
      integrate_frame(&kf, frame, Pose{}, K, 0.01);
    }
    for (int y = 4; y < K.height - 4; ++y)
      for (int x = 4; x < K.width - 4; ++x) {
        if (!is_valid(kf.inverse_depth(x, y))) continue;
        const double e = kf.inverse_depth(x, y) - truth.inverse_depth(x, y);
        ss += e * e;
        ++n;
      }
  }
  const double fused_std = std::sqrt(ss / n);
  return fused_std <= 1.3 * 0.01 / 4.0;
}

// --- 8: segmentation ----------------------------------------------------------

std::vector<int> fh_reference(int n, std::vector<std::tuple<int, int, double>> edges, double k) {
  std::stable_sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) {
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<int> comp(n);
  for (int i = 0; i < n; ++i) comp[i] = i;
  std::vector<double> internal(n, 0.0);
  std::vector<int> size(n, 1);
  for (const auto& [a, b, w] : edges) {
    const int ca = comp[a], cb = comp[b];
    if (ca == cb) continue;
    if (w <= std::min(internal[ca] + k / size[ca], internal[cb] + k / size[cb])) {
      for (int i = 0; i < n; ++i)
        if (comp[i] == cb) comp[i] = ca;
      size[ca] += size[cb];
      internal[ca] = std::max({internal[ca], internal[cb], w});
    }
  }
  return comp;
}

bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<int, int> fwd, bwd;
  for (size_t i = 0; i < a.size(); ++i) {
    auto [it1, in1] = fwd.try_emplace(a[i], b[i]);
    if (!in1 && it1->second != b[i]) return false;
    auto [it2, in2] = bwd.try_emplace(b[i], a[i]);
    if (!in2 && it2->second != a[i]) return false;
  }
  return true;
}

bool check_segmentation() {
  Intrinsics K = simple_intrinsics(8, 8);
  std::mt19937 rng(31);
  std::normal_distribution<double> g;
  const Mat3 Kinv = K.K().inverse();
  for (int trial = 0; trial < 100; ++trial) {
    NormalMap normals(8, 8);
    InverseDepthMap W(8, 8, 0.5);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        Vec3 n(g(rng), g(rng), g(rng));
        if (n.norm() < 1e-6) n = Vec3(0, 0, -1);
        n.normalize();
        if (n.z() > 0) n = -n;
        normals.set(x, y, n);
      }
    const JutLabeling result = segment(normals, W, K, 0.6);
    auto point = [&](int x, int y) -> Vec3 { return Kinv * Vec3(x, y, 1.0) / W(x, y); };
    std::vector<std::tuple<int, int, double>> edges;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        if (x + 1 < 8)
          edges.emplace_back(y * 8 + x, y * 8 + x + 1,
                             edge_weight(normals.at(x, y), normals.at(x + 1, y), point(x, y),
                                         point(x + 1, y)));
        if (y + 1 < 8)
          edges.emplace_back(y * 8 + x, (y + 1) * 8 + x,
                             edge_weight(normals.at(x, y), normals.at(x, y + 1), point(x, y),
                                         point(x, y + 1)));
      }
    const std::vector<int> oracle = fh_reference(64, edges, 0.6);
    std::vector<int> got(64);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) got[y * 8 + x] = result.labels(x, y);
    if (!same_partition(got, oracle)) return false;
  }

  // Golden-spiral bin uniformity at M = 100 over 1e6 uniform normals.
  const auto centers = golden_spiral_points(100);
  std::vector<Vec3> normals_sphere;
  normals_sphere.reserve(1000000);
  for (int i = 0; i < 1000000; ++i) {
    Vec3 n(g(rng), g(rng), g(rng));
    while (n.norm() < 1e-9) n = Vec3(g(rng), g(rng), g(rng));
    normals_sphere.push_back(n.normalized());
  }
  const auto hist = normal_histogram(normals_sphere, centers);
  double lo = 1e9, hi = 0.0;
  for (double f : hist) {
    lo = std::min(lo, f);
    hi = std::max(hi, f);
  }
  if (lo <= 0.0 || hi / lo > 1.5) return false;

  // Floor + wall corner scene: exactly two juts of meaningful size.
  // Short focal length so the floor subtends enough rows to be visible.
  Intrinsics Kc = simple_intrinsics(40, 30, 20.0);
  InverseDepthMap Wc(40, 30, kHole);
  const Mat3 Kinv_c = Kc.K().inverse();
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) {
      const Vec3 ray = Kinv_c * Vec3(x, y, 1.0);
      // Wall z = 2 vs floor y = 1 (below the optical axis); take the nearer.
      const double z_wall = 2.0;
      const double z_floor = ray.y() > 1e-6 ? 1.0 / ray.y() : 1e9;
      const double z = std::min(z_wall, z_floor);
      Wc(x, y) = 1.0 / (z * 1.0);
    }
  const NormalMap nm = normal_map(Wc, Kc);
  const JutLabeling scene = segment(nm, Wc, Kc, 0.6);
  int big = 0;
  for (const auto& jut : scene.juts)
    if (jut.size > 50) ++big;
  return big == 2;
}

// --- 9: loop geometry ---------------------------------------------------------

bool check_loop_geometry() {
  std::mt19937 rng(37);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> P;
    for (int i = 0; i < 10; ++i) P.emplace_back(u(rng), u(rng), u(rng) + 3.0);
    const Pose T = random_pose(rng, 0.5, 0.8);
    std::vector<Vec3> Q;
    for (const auto& p : P) Q.push_back(T * p);
    const auto est = horn_align(P, Q);
    if (!est) return false;
    if ((est->t - T.t).norm() > 1e-10) return false;
    if (so3_log(est->R.transpose() * T.R).norm() > 1e-10) return false;
  }

  std::uniform_real_distribution<double> pix(0.0, 640.0), piy(0.0, 480.0);
  int ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Pose T = random_pose(rng, 0.5, 0.5);
    std::vector<PointMatch> matches;
    for (int i = 0; i < 30; ++i) {
      PointMatch m;
      m.X_j = Vec3(u(rng), u(rng), u(rng) + 3.0);
      m.X_i = T * m.X_j;
      m.pixel_i = Vec2(pix(rng), piy(rng));
      matches.push_back(m);
    }
    for (int i = 0; i < 30; ++i) {
      PointMatch m;
      m.X_j = Vec3(u(rng), u(rng), u(rng) + 3.0);
      m.X_i = Vec3(u(rng), u(rng), u(rng) + 3.0);
      m.pixel_i = Vec2(pix(rng), piy(rng));
      matches.push_back(m);
    }
    LoopConfig config;
    config.seed = 9000 + trial;
    const auto res = geometric_verify(matches, 640, 480, config);
    if (res && (res->T_ij.t - T.t).norm() < 0.01 &&
        so3_log(res->T_ij.R.transpose() * T.R).norm() < M_PI / 180.0)
      ++ok;
  }
  return ok >= 99;
}

// --- 10: pose graph -----------------------------------------------------------

PoseGraph drift_circle(int n, std::mt19937& rng, double t_noise, double r_noise) {
  PoseGraph g;
  std::normal_distribution<double> gt(0.0, t_noise), gr(0.0, r_noise);
  std::vector<Pose> truth(n);
  const double step = 2.0 * M_PI / n;
  for (int i = 0; i < n; ++i) {
    truth[i].t = Vec3(std::cos(i * step), std::sin(i * step), 0.0);
    truth[i].R = so3_exp(Vec3(0, 0, i * step));
  }
  Pose acc = truth[0];
  g.nodes[0] = acc;
  for (int i = 1; i < n; ++i) {
    Constraint c;
    c.i = i - 1;
    c.j = i;
    Vec6 xi;
    xi << gt(rng), gt(rng), gt(rng), gr(rng), gr(rng), gr(rng);
    c.T_ij = (truth[i - 1].inverse() * truth[i]) * se3_exp(xi);
    g.odometry.push_back(c);
    acc = acc * c.T_ij;
    g.nodes[i] = acc;
  }
  Constraint loop;
  loop.i = n - 1;
  loop.j = 0;
  loop.T_ij = truth[n - 1].inverse() * truth[0];
  loop.info = Mat6::Identity() * 100.0;
  g.loops.push_back(loop);
  return g;
}

bool check_pose_graph() {
  std::mt19937 rng(41);
  PoseGraph g = drift_circle(100, rng, 0.005, 0.002);
  const auto& loop = g.loops[0];
  const double gap_before =
      constraint_error(loop.T_ij, g.nodes.at(loop.i), g.nodes.at(loop.j)).norm();
  const OptimizeResult res = optimize(g);
  const double gap_after =
      constraint_error(loop.T_ij, g.nodes.at(loop.i), g.nodes.at(loop.j)).norm();
  if (gap_after > 0.1 * gap_before) return false;
  if (res.final_cost > res.initial_cost) return false;

  // Gauge invariance: a rigidly displaced initial guess converges to the
  // same relative solution.
  OptimizeConfig tight;
  tight.max_iterations = 200;
  tight.rel_cost_tol = 1e-14;
  PoseGraph g1 = drift_circle(12, rng, 0.01, 0.005);
  PoseGraph g2 = g1;
  const Pose gauge = random_pose(rng);
  for (auto& [id, T] : g2.nodes) T = gauge * T;
  optimize(g1, tight);
  optimize(g2, tight);
  for (const auto& [id, T1] : g1.nodes) {
    const Pose rel1 = g1.nodes.at(0).inverse() * T1;
    const Pose rel2 = g2.nodes.at(0).inverse() * g2.nodes.at(id);
    if ((rel1.t - rel2.t).norm() > 1e-9) return false;
    if (so3_log(rel1.R.transpose() * rel2.R).norm() > 1e-9) return false;
  }
  return true;
}

// --- 11: calibration ----------------------------------------------------------

bool check_calibration() {
  const Intrinsics K = simple_intrinsics(40, 30, 35.0);
  StereoExtrinsics extr;
  std::array<double, 9> q0_true{0.002, 0.001, -0.0005, 0, 0.0008, 0, 0, 0, 0};
  std::array<double, 9> q1_true{1.01, -0.004, 0.002, 0.001, 0, 0, 0, 0, 0};
  const double beta0 = -0.01, beta1 = 1.02;
  std::mt19937 rng(43);
  std::uniform_real_distribution<double> tilt(-0.2, 0.2), dd(1.0, 3.5);

  std::vector<InverseDepthMap> gts, raws;
  for (int s = 0; s < 12; ++s) {
    CalibShot shot;
    shot.W_m = InverseDepthMap(K.width, K.height, kHole);
    shot.plane_normal = Vec3(tilt(rng), tilt(rng), 1).normalized();
    shot.plane_d = -shot.plane_normal.z() * dd(rng);
    const auto gt = gt_inverse_depth(shot, K, extr);
    if (!gt) return false;
    InverseDepthMap raw(K.width, K.height, kHole);
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) {
        const Vec2 p(x, y);
        const double spatial =
            ((*gt)(x, y) - depth_poly(q0_true, K, p)) / depth_poly(q1_true, K, p);
        raw(x, y) = (spatial - beta0) / beta1;  // p0 = 0 for the synthesis
      }
    gts.push_back(*gt);
    raws.push_back(raw);
  }

  const LinearDepthFit lin = fit_linear(gts, raws, Vec2(0, 0));
  DepthIntrinsics dintr;
  dintr.beta0 = lin.beta0;
  dintr.beta1 = lin.beta1;
  dintr.p0 = Vec2(0, 0);
  std::vector<InverseDepthMap> stage1;
  for (const auto& r : raws) stage1.push_back(correct_inverse_depth(r, dintr, K, false));
  const SpatialDepthFit spa = fit_spatial(gts, stage1, K);
  dintr.q0 = spa.q0;
  dintr.q1 = spa.q1;

  for (size_t s = 0; s < raws.size(); ++s) {
    const InverseDepthMap corrected = correct_inverse_depth(raws[s], dintr, K, true);
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) {
        if (!is_valid(corrected(x, y))) continue;
        if (std::abs(corrected(x, y) - gts[s](x, y)) > 1e-9) return false;
      }
  }

  // Odd/even holdout with noise.
  std::normal_distribution<double> noise(0.0, 0.001);
  for (auto& r : raws)
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) r(x, y) += noise(rng);
  std::vector<InverseDepthMap> train_gt, train_raw;
  for (size_t s = 0; s < raws.size(); s += 2) {
    train_gt.push_back(gts[s]);
    train_raw.push_back(raws[s]);
  }
  const LinearDepthFit lin2 = fit_linear(train_gt, train_raw, Vec2(0, 0));
  DepthIntrinsics d2;
  d2.beta0 = lin2.beta0;
  d2.beta1 = lin2.beta1;
  d2.p0 = Vec2(0, 0);
  std::vector<InverseDepthMap> t1;
  for (const auto& r : train_raw) t1.push_back(correct_inverse_depth(r, d2, K, false));
  const SpatialDepthFit spa2 = fit_spatial(train_gt, t1, K);
  d2.q0 = spa2.q0;
  d2.q1 = spa2.q1;
  auto rms = [&](size_t start) {
    double ss = 0.0;
    size_t n = 0;
    for (size_t s = start; s < raws.size(); s += 2) {
      const InverseDepthMap corrected = correct_inverse_depth(raws[s], d2, K, true);
      for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x) {
          if (!is_valid(corrected(x, y))) continue;
          ss += std::pow(corrected(x, y) - gts[s](x, y), 2);
          ++n;
        }
    }
    return std::sqrt(ss / n);
  };
  return rms(1) <= 1.2 * rms(0);
}

// --- 12/13: TUM fr1/desk -----------------------------------------------------

Intrinsics fr1_intrinsics() {
  Intrinsics K;
  K.fx = 517.3;
  K.fy = 516.5;
  K.cx = 318.6;
  K.cy = 255.3;
  K.width = 640;
  K.height = 480;
  return K;
}

double run_fr1_desk(const std::string& dir, bool with_loop, bool* accepted_loop) {
  const AssociatedSequence seq = load_and_associate(dir);
  PipelineConfig config;
  config.enable_loop = with_loop;
  config.deterministic = true;
  config.compute_juts = false;
  Pipeline pipeline(fr1_intrinsics(), config);
  for (const auto& pair : seq.pairs)
    pipeline.process_frame(load_frame(pair), pair.timestamp);
  pipeline.finish();
  if (accepted_loop) {
    *accepted_loop = false;
    for (const auto& line : pipeline.loop_log())
      if (line.rfind("LOOP", 0) == 0) *accepted_loop = true;
  }
  std::vector<TimedPose> est;
  for (const auto& f : pipeline.trajectory().frames)
    est.push_back({f.timestamp, f.T_W_k});
  return evaluate_ate(est, seq.groundtruth).rmse;
}

// --- 14: timing report structure ---------------------------------------------

bool check_timing_report() {
  const Intrinsics K = simple_intrinsics(80, 60, 60.0);
  PipelineConfig config;
  config.deterministic = true;
  config.compute_juts = false;
  Pipeline pipeline(K, config);
  Pose T;
  for (int i = 0; i < 5; ++i) {
    T.t = Vec3(0.01 * i, 0, 0);
    pipeline.process_frame(render_plane(K, T), 0.1 * i);
  }
  pipeline.finish();
  const std::string text = pipeline.timing().format();
  if (text.find("front-end") == std::string::npos) return false;
  if (text.find("back-end") == std::string::npos) return false;
  if (text.find("mean ms") == std::string::npos) return false;
  // At least one front-end stage with a nonzero call count.
  bool any = false;
  for (const auto& [name, stat] : pipeline.timing().frontend)
    if (stat.count > 0) any = true;
  return any;
}

}  // namespace

int main() {
  report(1, "Lie exp/log roundtrips within 1e-9", check_lie_roundtrips());
  report(2, "residual and pose-graph Jacobians match finite differences",
         check_alignment_jacobians() && check_posegraph_jacobians());
  report(3, "relative-pose covariance matches Monte Carlo within 5%",
         check_covariance_propagation());
  report(4, "warping matches the lift-transform-project oracle; occlusion keeps near surface",
         check_warping());
  report(5, "5 mm / 1 deg motion recovered; robust to a 20% occluder",
         check_alignment_accuracy());
  report(6, "Student-t mu/sigma within 2%, nu within 0.5; Gaussian clamps to 10",
         check_student_t());
  report(7, "fused inverse-depth noise <= 1.3/sqrt(16) of single frame",
         check_fusion_variance());
  report(8, "segmentation matches brute-force reference; spiral bins uniform; corner = 2 juts",
         check_segmentation());
  report(9, "closed-form alignment exact; RANSAC >= 99/100 at 50% outliers",
         check_loop_geometry());
  report(10, "100-node circle endpoint gap reduced >= 90%; gauge invariant",
         check_pose_graph());
  report(11, "depth calibration recovers the synthesis; holdout <= 1.2x training",
         check_calibration());

  const char* tum = std::getenv("RGBID_TUM_FR1_DESK");
  if (tum) {
    try {
      const double rmse_odom = run_fr1_desk(tum, false, nullptr);
      report(12, "fr1/desk odometry ATE RMSE <= 0.07 m", rmse_odom <= 0.07);
      bool accepted = false;
      const double rmse_loop = run_fr1_desk(tum, true, &accepted);
      report(13, "fr1/desk with loops ATE RMSE <= 0.04 m and a loop accepted",
             rmse_loop <= 0.04 && accepted);
    } catch (const std::exception& e) {
      std::cout << "FAIL  12/13. fr1/desk evaluation: " << e.what() << "\n";
      ++failures;
    }
  } else {
    skip(12, "fr1/desk odometry ATE", "set RGBID_TUM_FR1_DESK to run");
    skip(13, "fr1/desk loop-closure ATE", "set RGBID_TUM_FR1_DESK to run");
  }

  // CPU-only build: per-stage wall-clock times are reported for structure,
  // not compared against any GPU figures.
  report(14, "per-run timing report covers front-end and back-end stages",
         check_timing_report());

  std::cout << (failures == 0 ? "ALL ACCEPTANCE CHECKS PASSED\n"
                              : "ACCEPTANCE FAILURES: " + std::to_string(failures) + "\n");
  return failures == 0 ? 0 : 1;
}
