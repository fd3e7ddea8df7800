#include "rgbid/loop.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/SVD>

namespace rgbid {

std::vector<LoopCandidate> query_candidates(const KeyframeRecord& query,
                                            const std::vector<KeyframeRecord>& db,
                                            const BowHistogram& prev_histogram,
                                            const LoopConfig& config) {
  std::vector<LoopCandidate> out;
  const double norm = similarity(query.histogram, prev_histogram);
  if (norm <= 0.0) return out;
  for (const auto& rec : db) {
    if (std::abs(rec.id - query.id) < config.min_separation) continue;
    const double s = similarity(query.histogram, rec.histogram) / norm;
    if (s >= config.score_threshold) out.push_back({query.id, rec.id, s});
  }
  std::sort(out.begin(), out.end(), [](const LoopCandidate& a, const LoopCandidate& b) {
    return a.normalized_score > b.normalized_score;
  });
  return out;
}

std::optional<Pose> horn_align(const std::vector<Vec3>& P, const std::vector<Vec3>& Q) {
  if (P.size() < 3 || P.size() != Q.size()) return std::nullopt;
  const double n = static_cast<double>(P.size());
  Vec3 cp = Vec3::Zero(), cq = Vec3::Zero();
  for (size_t i = 0; i < P.size(); ++i) {
    cp += P[i];
    cq += Q[i];
  }
  cp /= n;
  cq /= n;
  Mat3 H = Mat3::Zero();
  for (size_t i = 0; i < P.size(); ++i) H += (Q[i] - cq) * (P[i] - cp).transpose();
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // Rank < 2 cross-covariance: rotation not determined (collinear or
  // coincident points).
  if (sv(1) < 1e-12 * std::max(1.0, sv(0))) return std::nullopt;
  Mat3 D = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) D(2, 2) = -1.0;
  Pose T;
  T.R = svd.matrixU() * D * svd.matrixV().transpose();
  T.t = cq - T.R * cp;
  return T;
}

std::vector<PointMatch> match_keypoints(const KeyframeRecord& kf_i, const KeyframeRecord& kf_j,
                                        double ratio_test) {
  // For each descriptor the best and second-best counterpart by Hamming
  // distance; keep mutual nearest pairs passing the ratio test.
  const auto& di = kf_i.descriptors;
  const auto& dj = kf_j.descriptors;
  std::vector<PointMatch> matches;
  if (di.empty() || dj.empty()) return matches;

  std::vector<int> best_ij(di.size(), -1);
  std::vector<int> best_ji(dj.size(), -1);
  std::vector<int> best_dist_ji(dj.size(), 257);
  for (size_t b = 0; b < dj.size(); ++b) {
    for (size_t a = 0; a < di.size(); ++a) {
      const int d = hamming(di[a], dj[b]);
      if (d < best_dist_ji[b]) {
        best_dist_ji[b] = d;
        best_ji[b] = static_cast<int>(a);
      }
    }
  }
  for (size_t a = 0; a < di.size(); ++a) {
    int d1 = 257, d2 = 257, arg = -1;
    for (size_t b = 0; b < dj.size(); ++b) {
      const int d = hamming(di[a], dj[b]);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        arg = static_cast<int>(b);
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (arg < 0) continue;
    if (best_ji[arg] != static_cast<int>(a)) continue;  // not mutual
    if (d2 < 257 && d1 >= ratio_test * d2) continue;    // ratio test
    if (!kf_i.keypoints[a].point3d || !kf_j.keypoints[arg].point3d) continue;
    matches.push_back({*kf_i.keypoints[a].point3d, *kf_j.keypoints[arg].point3d,
                       kf_i.keypoints[a].pixel});
  }
  return matches;
}

double convex_hull_area(std::vector<Vec2> points) {
  if (points.size() < 3) return 0.0;
  std::sort(points.begin(), points.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * points.size());
  size_t k = 0;
  for (size_t i = 0; i < points.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], points[i]) <= 0) --k;
    hull[k++] = points[i];
  }
  const size_t lower = k + 1;
  for (size_t i = points.size(); i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], points[i]) <= 0) --k;
    hull[k++] = points[i];
  }
  hull.resize(k - 1);
  double area = 0.0;
  for (size_t i = 0; i < hull.size(); ++i) {
    const Vec2& a = hull[i];
    const Vec2& b = hull[(i + 1) % hull.size()];
    area += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * std::abs(area);
}

std::optional<GeometricVerification> geometric_verify(const std::vector<PointMatch>& matches,
                                                      int image_width, int image_height,
                                                      const LoopConfig& config) {
  if (matches.size() < 3) return std::nullopt;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<size_t> pick(0, matches.size() - 1);
  const double r2 = config.inlier_radius * config.inlier_radius;

  int best_count = 0;
  std::vector<int> best_inliers;
  for (int it = 0; it < config.ransac_iterations; ++it) {
    size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || a == c || b == c) continue;
    std::vector<Vec3> P = {matches[a].X_j, matches[b].X_j, matches[c].X_j};
    std::vector<Vec3> Q = {matches[a].X_i, matches[b].X_i, matches[c].X_i};
    auto T = horn_align(P, Q);
    if (!T) continue;
    std::vector<int> inliers;
    for (size_t m = 0; m < matches.size(); ++m) {
      const Vec3 e = matches[m].X_i - (T->R * matches[m].X_j + T->t);
      if (e.squaredNorm() < r2) inliers.push_back(static_cast<int>(m));
    }
    if (static_cast<int>(inliers.size()) > best_count) {
      best_count = static_cast<int>(inliers.size());
      best_inliers = std::move(inliers);
    }
  }
  if (best_count < config.min_inliers) return std::nullopt;

  // Refit on the consensus set.
  std::vector<Vec3> P, Q;
  std::vector<Vec2> pixels;
  P.reserve(best_inliers.size());
  Q.reserve(best_inliers.size());
  for (int m : best_inliers) {
    P.push_back(matches[m].X_j);
    Q.push_back(matches[m].X_i);
    pixels.push_back(matches[m].pixel_i);
  }
  auto T = horn_align(P, Q);
  if (!T) return std::nullopt;

  const double hull = convex_hull_area(pixels) /
                      (static_cast<double>(image_width) * static_cast<double>(image_height));
  if (hull <= config.min_hull_fraction) return std::nullopt;
  return GeometricVerification{*T, best_count, hull};
}

std::optional<LoopConstraint> make_loop_constraint(const KeyframeRecord& kf_i,
                                                   const KeyframeRecord& kf_j,
                                                   const Pose& T_init, const Intrinsics& K,
                                                   const GeometricVerification& geom,
                                                   const LoopConfig& config,
                                                   const AlignmentConfig& align_config) {
  AlignmentResult res;
  try {
    res = align(kf_i.frame, kf_j.frame, K, T_init, align_config);
  } catch (const DegenerateAlignmentError&) {
    return std::nullopt;
  }

  // Refined-overlap gate: drop the constraint when the dense estimate left
  // the keyframes barely covisible.
  const double sigma_w = res.tdist_depth.sigma;
  CovisibilityResult cov =
      covisibility_ratio(kf_i.frame, kf_j.frame, res.T_AB.inverse(), K, sigma_w);
  if (cov.empty_frame || cov.ratio < config.min_covisibility) return std::nullopt;

  LoopConstraint out;
  out.i = kf_i.id;
  out.j = kf_j.id;
  out.T_ij = res.T_AB;
  out.info = res.cov.inverse();
  out.info = 0.5 * (out.info + out.info.transpose()).eval();
  out.inliers = geom.inliers;
  out.hull_fraction = geom.hull_fraction;
  return out;
}

void LoopClusters::add(const LoopConstraint& constraint) {
  for (auto& cluster : clusters_) {
    bool fits = true;
    for (const auto& c : cluster) {
      if (std::abs(c.i - constraint.i) > max_separation_) {
        fits = false;
        break;
      }
    }
    if (fits) {
      cluster.push_back(constraint);
      return;
    }
  }
  clusters_.push_back({constraint});
}

std::vector<std::vector<LoopConstraint>> LoopClusters::release(int current_keyframe_id) {
  std::vector<std::vector<LoopConstraint>> ready;
  for (auto it = clusters_.begin(); it != clusters_.end();) {
    int newest = 0;
    for (const auto& c : *it) newest = std::max(newest, c.i);
    if (current_keyframe_id - newest > max_separation_) {
      ready.push_back(std::move(*it));
      it = clusters_.erase(it);
    } else {
      ++it;
    }
  }
  return ready;
}

std::vector<std::vector<LoopConstraint>> LoopClusters::release_all() {
  std::vector<std::vector<LoopConstraint>> ready = std::move(clusters_);
  clusters_.clear();
  return ready;
}

}  // namespace rgbid
