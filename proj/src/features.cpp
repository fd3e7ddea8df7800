#include "rgbid/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

namespace rgbid {

int hamming(const BinaryDescriptor& a, const BinaryDescriptor& b) {
  int d = 0;
  for (int i = 0; i < 4; ++i) d += std::popcount(a.bits[i] ^ b.bits[i]);
  return d;
}

IntensityImage resize_bilinear(const IntensityImage& image, int width, int height) {
  IntensityImage out(width, height);
  const double sx = static_cast<double>(image.width()) / width;
  const double sy = static_cast<double>(image.height()) / height;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = std::min((x + 0.5) * sx - 0.5, image.width() - 1.0);
      const double v = std::min((y + 0.5) * sy - 0.5, image.height() - 1.0);
      out(x, y) = bilinear(image, std::max(0.0, u), std::max(0.0, v));
    }
  return out;
}

namespace {

// Bresenham circle of radius 3 used by FAST
constexpr std::array<std::array<int, 2>, 16> kCircle = {{{0, -3},
                                                         {1, -3},
                                                         {2, -2},
                                                         {3, -1},
                                                         {3, 0},
                                                         {3, 1},
                                                         {2, 2},
                                                         {1, 3},
                                                         {0, 3},
                                                         {-1, 3},
                                                         {-2, 2},
                                                         {-3, 1},
                                                         {-3, 0},
                                                         {-3, -1},
                                                         {-2, -2},
                                                         {-1, -3}}};

bool fast9_corner(const IntensityImage& img, int x, int y, double t, double* score) {
  const double c = img(x, y);
  std::array<int, 16> state;  // 1 brighter, -1 darker, 0 similar
  for (int i = 0; i < 16; ++i) {
    const double v = img(x + kCircle[i][0], y + kCircle[i][1]);
    state[i] = v > c + t ? 1 : (v < c - t ? -1 : 0);
  }
  for (int sign : {1, -1}) {
    int run = 0, best_run = 0;
    for (int i = 0; i < 32; ++i) {  // wrap around
      if (state[i & 15] == sign) {
        ++run;
        best_run = std::max(best_run, run);
      } else {
        run = 0;
      }
    }
    if (best_run >= 9) {
      double s = 0.0;
      for (int i = 0; i < 16; ++i) {
        const double v = img(x + kCircle[i][0], y + kCircle[i][1]);
        const double d = std::abs(v - c) - t;
        if (d > 0) s += d;
      }
      *score = s;
      return true;
    }
  }
  return false;
}

struct RawCorner {
  int x, y;
  double score;
};

std::vector<RawCorner> fast9_detect(const IntensityImage& img, double t) {
  std::vector<RawCorner> corners;
  Image<double> scores(img.width(), img.height(), 0.0);
  for (int y = 3; y < img.height() - 3; ++y)
    for (int x = 3; x < img.width() - 3; ++x) {
      double s;
      if (fast9_corner(img, x, y, t, &s)) scores(x, y) = s;
    }
  // 3x3 non-maximum suppression
  for (int y = 3; y < img.height() - 3; ++y)
    for (int x = 3; x < img.width() - 3; ++x) {
      const double s = scores(x, y);
      if (s <= 0.0) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          if (scores(x + dx, y + dy) > s ||
              (scores(x + dx, y + dy) == s && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      if (is_max) corners.push_back({x, y, s});
    }
  return corners;
}

double intensity_centroid_angle(const IntensityImage& img, int x, int y) {
  constexpr int radius = 15;
  double m10 = 0.0, m01 = 0.0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy > radius * radius) continue;
      const int sx = x + dx, sy = y + dy;
      if (!img.in_bounds(sx, sy)) continue;
      const double v = img(sx, sy);
      m10 += dx * v;
      m01 += dy * v;
    }
  return std::atan2(m01, m10);
}

// fixed 256 point-pair sampling pattern on the 31x31 patch
struct PatternPair {
  int x1, y1, x2, y2;
};

const std::array<PatternPair, 256>& sampling_pattern() {
  static const std::array<PatternPair, 256> pattern = [] {
    std::array<PatternPair, 256> p{};
    std::mt19937 rng(0x0b5e551e);
    std::normal_distribution<double> gauss(0.0, 31.0 / 5.0);
    auto draw = [&] {
      const int v = static_cast<int>(std::lround(gauss(rng)));
      return std::clamp(v, -15, 15);
    };
    for (auto& pair : p) {
      pair.x1 = draw();
      pair.y1 = draw();
      pair.x2 = draw();
      pair.y2 = draw();
    }
    return p;
  }();
  return pattern;
}

}  // namespace

std::vector<Keypoint> extract_keypoints(const IntensityImage& image, const FeatureConfig& config) {
  std::vector<Keypoint> keypoints;
  IntensityImage level_img = image;
  double level_scale = 1.0;
  for (int level = 0; level < config.levels; ++level) {
    if (level > 0) {
      const int w = static_cast<int>(std::lround(image.width() / std::pow(config.scale, level)));
      const int h = static_cast<int>(std::lround(image.height() / std::pow(config.scale, level)));
      if (w < 32 || h < 32) break;
      level_img = resize_bilinear(image, w, h);
      level_scale = std::pow(config.scale, level);
    }
    const int cw = (level_img.width() + config.grid_cells - 1) / config.grid_cells;
    const int ch = (level_img.height() + config.grid_cells - 1) / config.grid_cells;
    // one detection sweep per threshold step; cells that reached their
    // quota keep the corners found at the highest threshold
    std::vector<std::vector<RawCorner>> cells(config.grid_cells * config.grid_cells);
    double t = config.initial_threshold;
    while (true) {
      const auto corners = fast9_detect(level_img, t);
      std::vector<std::vector<RawCorner>> current(cells.size());
      for (const auto& c : corners) {
        const int cell = (c.y / ch) * config.grid_cells + (c.x / cw);
        current[cell].push_back(c);
      }
      for (size_t i = 0; i < cells.size(); ++i)
        if (cells[i].size() < static_cast<size_t>(config.target_per_cell))
          cells[i] = std::move(current[i]);
      bool all_full = true;
      for (const auto& cell : cells)
        if (cell.size() < static_cast<size_t>(config.target_per_cell)) all_full = false;
      if (all_full || t <= config.floor_threshold) break;
      t = std::max(config.floor_threshold, t / 2.0);
    }
    for (auto& cell : cells) {
      std::sort(cell.begin(), cell.end(),
                [](const RawCorner& a, const RawCorner& b) { return a.score > b.score; });
      if (cell.size() > static_cast<size_t>(config.target_per_cell))
        cell.resize(config.target_per_cell);
      for (const auto& c : cell) {
        Keypoint kp;
        kp.pixel = Vec2(c.x * level_scale, c.y * level_scale);
        kp.level = level;
        kp.score = c.score;
        kp.orientation = intensity_centroid_angle(level_img, c.x, c.y);
        keypoints.push_back(kp);
      }
    }
  }
  return keypoints;
}

namespace {

std::optional<BinaryDescriptor> describe_at(const IntensityImage& img, double cx, double cy,
                                            double orientation) {
  const double ca = std::cos(orientation);
  const double sa = std::sin(orientation);
  const double margin = 15.0 * std::numbers::sqrt2 + 1.0;
  if (cx < margin || cy < margin || cx > img.width() - 1 - margin ||
      cy > img.height() - 1 - margin)
    return std::nullopt;
  BinaryDescriptor desc;
  const auto& pattern = sampling_pattern();
  for (int i = 0; i < 256; ++i) {
    const auto& p = pattern[i];
    const double x1 = cx + ca * p.x1 - sa * p.y1;
    const double y1 = cy + sa * p.x1 + ca * p.y1;
    const double x2 = cx + ca * p.x2 - sa * p.y2;
    const double y2 = cy + sa * p.x2 + ca * p.y2;
    if (bilinear(img, x1, y1) < bilinear(img, x2, y2)) desc.set(i);
  }
  return desc;
}

}  // namespace

std::optional<BinaryDescriptor> describe(const IntensityImage& image, const Keypoint& kp) {
  // sample at the keypoint's level resolution
  const double scale = std::pow(1.2, kp.level);
  IntensityImage level_img;
  const IntensityImage* img = &image;
  if (kp.level > 0) {
    const int w = static_cast<int>(std::lround(image.width() / scale));
    const int h = static_cast<int>(std::lround(image.height() / scale));
    level_img = resize_bilinear(image, w, h);
    img = &level_img;
  }
  return describe_at(*img, kp.pixel.x() / scale, kp.pixel.y() / scale, kp.orientation);
}

DescribedKeypoints extract_and_describe(const IntensityImage& image, const InverseDepthMap& W,
                                        const Intrinsics& K, const FeatureConfig& config) {
  DescribedKeypoints out;
  // build the resized levels once; describe() would redo them per keypoint
  std::vector<IntensityImage> levels(config.levels);
  for (Keypoint& kp : extract_keypoints(image, config)) {
    const double scale = std::pow(config.scale, kp.level);
    const IntensityImage* img = &image;
    if (kp.level > 0) {
      if (levels[kp.level].empty()) {
        const int w = static_cast<int>(std::lround(image.width() / scale));
        const int h = static_cast<int>(std::lround(image.height() / scale));
        levels[kp.level] = resize_bilinear(image, w, h);
      }
      img = &levels[kp.level];
    }
    const auto desc =
        describe_at(*img, kp.pixel.x() / scale, kp.pixel.y() / scale, kp.orientation);
    if (!desc) continue;
    const int px = static_cast<int>(std::lround(kp.pixel.x()));
    const int py = static_cast<int>(std::lround(kp.pixel.y()));
    if (W.in_bounds(px, py) && is_valid(W(px, py)) && W(px, py) > 0.0) {
      const auto ray = unproject(K, kp.pixel);
      if (ray) kp.point3d = *ray / W(px, py);
    }
    out.keypoints.push_back(kp);
    out.descriptors.push_back(*desc);
  }
  return out;
}

namespace {

BinaryDescriptor majority_centroid(const std::vector<BinaryDescriptor>& descs,
                                   const std::vector<uint32_t>& members) {
  std::array<int, 256> votes{};
  for (uint32_t m : members)
    for (int b = 0; b < 256; ++b)
      if (descs[m].test(b)) ++votes[b];
  BinaryDescriptor c;
  const int half = static_cast<int>(members.size()) / 2;
  for (int b = 0; b < 256; ++b)
    if (votes[b] > half) c.set(b);
  return c;
}

}  // namespace

Vocabulary Vocabulary::train(const std::vector<BinaryDescriptor>& descriptors, uint32_t branching,
                             uint32_t depth, uint64_t seed) {
  Vocabulary vocab;
  vocab.branching_ = branching;
  vocab.depth_ = depth;
  if (descriptors.empty()) return vocab;
  std::mt19937_64 rng(seed);

  // Fewer distinct descriptors than leaves: the effective tree is shallower
  // than requested no matter how the clustering goes.
  double leaves = 1.0;
  for (uint32_t l = 0; l < depth; ++l) leaves *= branching;
  {
    std::set<std::array<uint64_t, 4>> distinct;
    for (const auto& d : descriptors) {
      distinct.insert({d.bits[0], d.bits[1], d.bits[2], d.bits[3]});
      if (static_cast<double>(distinct.size()) >= leaves) break;
    }
    if (static_cast<double>(distinct.size()) < leaves) vocab.shallow_ = true;
  }

  struct BuildItem {
    uint32_t node;
    std::vector<uint32_t> members;
    uint32_t level;
  };

  vocab.nodes_.emplace_back();  // root
  std::vector<uint32_t> all(descriptors.size());
  for (uint32_t i = 0; i < all.size(); ++i) all[i] = i;
  vocab.nodes_[0].centroid = majority_centroid(descriptors, all);

  std::vector<BuildItem> queue{{0, std::move(all), 0}};
  // BFS build so the node array is already in BFS order for serialization
  for (size_t qi = 0; qi < queue.size(); ++qi) {
    auto item = std::move(queue[qi]);
    if (item.level == depth || item.members.size() <= 1) {
      continue;  // leaf
    }
    // k-majority clustering of this node's members
    std::vector<BinaryDescriptor> centroids;
    {
      // distinct seeds drawn from the members
      std::vector<uint32_t> shuffled = item.members;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      for (uint32_t m : shuffled) {
        bool dup = false;
        for (const auto& c : centroids)
          if (c == descriptors[m]) dup = true;
        if (!dup) centroids.push_back(descriptors[m]);
        if (centroids.size() == branching) break;
      }
    }
    if (centroids.size() < 2) {
      vocab.shallow_ = true;
      continue;  // all members identical: leaf
    }
    std::vector<std::vector<uint32_t>> clusters(centroids.size());
    for (int it = 0; it < 10; ++it) {
      for (auto& c : clusters) c.clear();
      for (uint32_t m : item.members) {
        size_t best = 0;
        int best_d = 257;
        for (size_t c = 0; c < centroids.size(); ++c) {
          const int d = hamming(descriptors[m], centroids[c]);
          if (d < best_d) {
            best_d = d;
            best = c;
          }
        }
        clusters[best].push_back(m);
      }
      bool changed = false;
      for (size_t c = 0; c < centroids.size(); ++c) {
        if (clusters[c].empty()) continue;
        const BinaryDescriptor nc = majority_centroid(descriptors, clusters[c]);
        if (!(nc == centroids[c])) {
          centroids[c] = nc;
          changed = true;
        }
      }
      if (!changed) break;
    }
    for (size_t c = 0; c < centroids.size(); ++c) {
      if (clusters[c].empty()) continue;
      const uint32_t child = static_cast<uint32_t>(vocab.nodes_.size());
      vocab.nodes_.emplace_back();
      vocab.nodes_[child].centroid = centroids[c];
      vocab.nodes_[item.node].children.push_back(child);
      queue.push_back({child, std::move(clusters[c]), item.level + 1});
    }
  }
  // assign word ids to leaves in BFS order
  uint32_t next_word = 0;
  for (auto& node : vocab.nodes_)
    if (node.children.empty()) node.word_id = static_cast<int32_t>(next_word++);
  vocab.word_count_ = next_word;
  return vocab;
}

uint32_t Vocabulary::quantize(const BinaryDescriptor& desc) const {
  if (nodes_.empty()) return 0;
  uint32_t node = 0;
  while (!nodes_[node].children.empty()) {
    uint32_t best = nodes_[node].children.front();
    int best_d = 257;
    for (uint32_t child : nodes_[node].children) {
      const int d = hamming(desc, nodes_[child].centroid);
      if (d < best_d) {
        best_d = d;
        best = child;
      }
    }
    node = best;
  }
  return static_cast<uint32_t>(nodes_[node].word_id);
}

namespace {
template <typename T>
void write_le(std::ostream& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
template <typename T>
T read_le(std::istream& in) {
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw std::runtime_error("vocabulary file truncated");
    v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}
}  // namespace

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  out.write("BVOC1", 5);
  write_le<uint32_t>(out, branching_);
  write_le<uint32_t>(out, depth_);
  write_le<uint32_t>(out, static_cast<uint32_t>(nodes_.size()));
  for (const auto& node : nodes_) {
    for (uint64_t word : node.centroid.bits) write_le<uint64_t>(out, word);
    write_le<uint32_t>(out, static_cast<uint32_t>(node.children.size()));
    for (uint32_t c : node.children) write_le<uint32_t>(out, c);
    write_le<int32_t>(out, node.word_id);
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path);
  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5 || std::string(magic, 5) != "BVOC1")
    throw std::runtime_error("bad vocabulary magic in " + path);
  Vocabulary vocab;
  vocab.branching_ = read_le<uint32_t>(in);
  vocab.depth_ = read_le<uint32_t>(in);
  const uint32_t count = read_le<uint32_t>(in);
  vocab.nodes_.resize(count);
  uint32_t words = 0;
  for (auto& node : vocab.nodes_) {
    for (auto& word : node.centroid.bits) word = read_le<uint64_t>(in);
    const uint32_t nc = read_le<uint32_t>(in);
    node.children.resize(nc);
    for (auto& c : node.children) c = read_le<uint32_t>(in);
    node.word_id = read_le<int32_t>(in);
    if (node.word_id >= 0) ++words;
  }
  vocab.word_count_ = words;
  return vocab;
}

BowHistogram bow_histogram(const std::vector<BinaryDescriptor>& descriptors,
                           const Vocabulary& vocab) {
  BowHistogram hist;
  if (descriptors.empty() || vocab.empty()) return hist;
  for (const auto& d : descriptors) hist[vocab.quantize(d)] += 1.0;
  for (auto& [word, freq] : hist) freq /= descriptors.size();
  return hist;
}

double similarity(const BowHistogram& h1, const BowHistogram& h2) {
  if (h1.empty() || h2.empty()) return 0.0;
  double l1 = 0.0;
  auto it1 = h1.begin();
  auto it2 = h2.begin();
  while (it1 != h1.end() || it2 != h2.end()) {
    if (it2 == h2.end() || (it1 != h1.end() && it1->first < it2->first)) {
      l1 += it1->second;
      ++it1;
    } else if (it1 == h1.end() || it2->first < it1->first) {
      l1 += it2->second;
      ++it2;
    } else {
      l1 += std::abs(it1->second - it2->second);
      ++it1;
      ++it2;
    }
  }
  return std::clamp(1.0 - 0.5 * l1, 0.0, 1.0);
}

}  // namespace rgbid
