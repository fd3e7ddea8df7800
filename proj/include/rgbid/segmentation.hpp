#pragma once

#include <vector>

#include "rgbid/camera.hpp"
#include "rgbid/geometry.hpp"
#include "rgbid/image.hpp"

namespace rgbid {

/// Per-pixel unit normals in the camera frame; holes propagate.
struct NormalMap {
  Image<double> nx, ny, nz;

  NormalMap() = default;
  NormalMap(int w, int h) : nx(w, h, kHole), ny(w, h, kHole), nz(w, h, kHole) {}
  bool valid(int x, int y) const { return is_valid(nx(x, y)); }
  Vec3 at(int x, int y) const { return Vec3(nx(x, y), ny(x, y), nz(x, y)); }
  void set(int x, int y, const Vec3& n) {
    nx(x, y) = n.x();
    ny(x, y) = n.y();
    nz(x, y) = n.z();
  }
};

/// Surface normals from the inverse depth gradient; degenerate pixels get
/// n = -e_z. Normals are oriented toward the camera (n_z < 0).
NormalMap normal_map(const InverseDepthMap& W, const Intrinsics& K);

/// Convexity-aware edge weight: (1 - n_i.n_j) squared on convex edges.
double edge_weight(const Vec3& n_i, const Vec3& n_j, const Vec3& X_i, const Vec3& X_j);

/// Superjut labeling of a keyframe: per-pixel jut id (-1 on holes) plus
/// per-jut statistics.
struct JutStats {
  int size = 0;
  std::vector<double> histogram;  // normalized over M golden-spiral bins
  double entropy = 0.0;
};

struct JutLabeling {
  Image<int> labels;  // -1 for invalid pixels
  std::vector<JutStats> juts;
};

/// Felzenszwalb-Huttenlocher segmentation over the 4-connected grid of
/// valid pixels with convexity-weighted edges; k defaults to 0.6.
JutLabeling segment(const NormalMap& normals, const InverseDepthMap& W, const Intrinsics& K,
                    double k = 0.6, int histogram_bins = 100);

/// M approximately area-uniform bin centers on the unit sphere.
std::vector<Vec3> golden_spiral_points(int m);

/// Histogram of normals over the Voronoi cells of the golden-spiral
/// centers, L1-normalized.
std::vector<double> normal_histogram(const std::vector<Vec3>& normals,
                                     const std::vector<Vec3>& bin_centers);

/// Shannon entropy -sum F log F with 0 log 0 = 0.
double entropy(const std::vector<double>& histogram);

}  // namespace rgbid
