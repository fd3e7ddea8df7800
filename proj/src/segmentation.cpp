#include "rgbid/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace rgbid {

NormalMap normal_map(const InverseDepthMap& W, const Intrinsics& K) {
  NormalMap normals(W.width(), W.height());
  const Mat3 Km = K.K();
  for (int y = 0; y < W.height(); ++y) {
    for (int x = 0; x < W.width(); ++x) {
      const double w = W(x, y);
      if (!is_valid(w) || w <= 0.0) continue;
      auto sample = [&](int sx, int sy) -> double {
        return W.in_bounds(sx, sy) ? W(sx, sy) : kHole;
      };
      const double l = sample(x - 1, y), r = sample(x + 1, y);
      const double u = sample(x, y - 1), d = sample(x, y + 1);
      double gx, gy;
      if (is_valid(l) && is_valid(r))
        gx = (r - l) / 2.0;
      else if (is_valid(r))
        gx = r - w;
      else if (is_valid(l))
        gx = w - l;
      else {
        normals.set(x, y, -Vec3::UnitZ());
        continue;
      }
      if (is_valid(u) && is_valid(d))
        gy = (d - u) / 2.0;
      else if (is_valid(d))
        gy = d - w;
      else if (is_valid(u))
        gy = w - u;
      else {
        normals.set(x, y, -Vec3::UnitZ());
        continue;
      }
      Mat3 A = Km;  // K - p e_z^T
      A.col(2) -= Vec3(x, y, 1.0);
      Vec3 n = (Eigen::RowVector3d(gx, gy, 0.0) * A).transpose() / w + Vec3(0, 0, 1);
      const double nn = n.norm();
      if (nn < 1e-12) {
        normals.set(x, y, -Vec3::UnitZ());
        continue;
      }
      n /= nn;
      if (n.z() > 0) n = -n;  // orient toward the camera
      normals.set(x, y, n);
    }
  }
  return normals;
}

double edge_weight(const Vec3& n_i, const Vec3& n_j, const Vec3& X_i, const Vec3& X_j) {
  const double base = 1.0 - n_i.dot(n_j);
  const bool convex = n_j.dot(X_j - X_i) > 0.0;
  return convex ? base * base : base;
}

namespace {

struct UnionFind {
  std::vector<int> parent, rank_, size_;
  std::vector<double> internal;  // Int(C): max weight of an MST edge in C

  explicit UnionFind(int n) : parent(n), rank_(n, 0), size_(n, 1), internal(n, 0.0) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  int merge(int a, int b, double w) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent[b] = a;
    size_[a] += size_[b];
    internal[a] = w;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return a;
  }
};

struct GridEdge {
  int a, b;
  double w;
};

}  // namespace

std::vector<Vec3> golden_spiral_points(int m) {
  std::vector<Vec3> points;
  points.reserve(m);
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  for (int i = 0; i < m; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / m;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double az = 2.0 * M_PI * i / (phi * phi);
    points.emplace_back(r * std::cos(az), r * std::sin(az), z);
  }
  return points;
}

std::vector<double> normal_histogram(const std::vector<Vec3>& normals,
                                     const std::vector<Vec3>& bin_centers) {
  std::vector<double> hist(bin_centers.size(), 0.0);
  if (normals.empty() || bin_centers.empty()) return hist;
  for (const Vec3& n : normals) {
    size_t best = 0;
    double best_dot = -2.0;
    for (size_t i = 0; i < bin_centers.size(); ++i) {
      const double d = n.dot(bin_centers[i]);
      if (d > best_dot) {
        best_dot = d;
        best = i;
      }
    }
    hist[best] += 1.0;
  }
  for (double& h : hist) h /= normals.size();
  return hist;
}

double entropy(const std::vector<double>& histogram) {
  double ent = 0.0;
  for (double f : histogram)
    if (f > 0.0) ent -= f * std::log(f);
  return ent;
}

JutLabeling segment(const NormalMap& normals, const InverseDepthMap& W, const Intrinsics& K,
                    double k, int histogram_bins) {
  const int width = W.width(), height = W.height();
  const Mat3 Kinv = K.K().inverse();
  const int n = width * height;
  auto idx = [&](int x, int y) { return y * width + x; };
  auto point = [&](int x, int y) -> Vec3 { return Kinv * Vec3(x, y, 1.0) / W(x, y); };
  auto usable = [&](int x, int y) {
    return is_valid(W(x, y)) && W(x, y) > 0.0 && normals.valid(x, y);
  };

  std::vector<GridEdge> edges;
  edges.reserve(static_cast<size_t>(n) * 2);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!usable(x, y)) continue;
      const Vec3 ni = normals.at(x, y);
      const Vec3 Xi = point(x, y);
      if (x + 1 < width && usable(x + 1, y))
        edges.push_back({idx(x, y), idx(x + 1, y),
                         edge_weight(ni, normals.at(x + 1, y), Xi, point(x + 1, y))});
      if (y + 1 < height && usable(x, y + 1))
        edges.push_back({idx(x, y), idx(x, y + 1),
                         edge_weight(ni, normals.at(x, y + 1), Xi, point(x, y + 1))});
    }
  std::stable_sort(edges.begin(), edges.end(),
                   [](const GridEdge& a, const GridEdge& b) { return a.w < b.w; });

  UnionFind uf(n);
  for (const auto& e : edges) {
    const int ca = uf.find(e.a);
    const int cb = uf.find(e.b);
    if (ca == cb) continue;
    const double ta = uf.internal[ca] + k / uf.size_[ca];
    const double tb = uf.internal[cb] + k / uf.size_[cb];
    if (e.w <= std::min(ta, tb)) uf.merge(ca, cb, e.w);
  }

  JutLabeling out;
  out.labels = Image<int>(width, height, -1);
  std::unordered_map<int, int> root_to_label;
  std::vector<std::vector<Vec3>> jut_normals;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!usable(x, y)) continue;
      const int root = uf.find(idx(x, y));
      auto [it, inserted] = root_to_label.try_emplace(root, static_cast<int>(jut_normals.size()));
      if (inserted) jut_normals.emplace_back();
      out.labels(x, y) = it->second;
      jut_normals[it->second].push_back(normals.at(x, y));
    }

  const auto centers = golden_spiral_points(histogram_bins);
  out.juts.resize(jut_normals.size());
  for (size_t j = 0; j < jut_normals.size(); ++j) {
    out.juts[j].size = static_cast<int>(jut_normals[j].size());
    out.juts[j].histogram = normal_histogram(jut_normals[j], centers);
    out.juts[j].entropy = entropy(out.juts[j].histogram);
  }
  return out;
}

}  // namespace rgbid
