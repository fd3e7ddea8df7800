#include "rgbid/camera.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace rgbid {

Vec3 distort(const Intrinsics& intr, const Vec2& m_u) {
  const double x = m_u.x(), y = m_u.y();
  const double r2 = x * x + y * y;
  const double r4 = r2 * r2;
  const double r6 = r4 * r2;
  const double radial = intr.k[0] * r2 + intr.k[1] * r4 + intr.k[4] * r6;
  Vec3 m_d = (1.0 + radial) * Vec3(x, y, 1.0);
  m_d.x() += 2.0 * intr.k[2] * x * y + intr.k[3] * (r2 + 2.0 * x * x);
  m_d.y() += 2.0 * intr.k[3] * x * y + intr.k[2] * (r2 + 2.0 * y * y);
  m_d.z() += -radial;
  return m_d;
}

std::optional<Vec2> undistort(const Intrinsics& intr, const Vec2& m_d) {
  if (!intr.has_distortion()) return m_d;
  Vec2 m_u = m_d;
  // linear convergence degrades as |k| grows; 50 iterations keeps the
  // projection roundtrip under 1e-6 px for |k| up to 0.3, with the early
  // exit making the common weak-distortion case cheap
  for (int i = 0; i < 50; ++i) {
    const Vec3 d = distort(intr, m_u);
    const Vec2 err(d.x() - m_d.x(), d.y() - m_d.y());
    m_u -= err;
    if (err.cwiseAbs().maxCoeff() < 1e-10) return m_u;
  }
  const Vec3 d = distort(intr, m_u);
  if ((Vec2(d.x(), d.y()) - m_d).cwiseAbs().maxCoeff() < 1e-10) return m_u;
  return std::nullopt;
}

std::optional<Vec2> project(const Intrinsics& intr, const Vec3& X) {
  if (X.z() <= 0.0) return std::nullopt;
  const Vec3 m_d = distort(intr, Vec2(X.x() / X.z(), X.y() / X.z()));
  return Vec2(intr.fx * m_d.x() + intr.cx, intr.fy * m_d.y() + intr.cy);
}

std::optional<Vec3> unproject(const Intrinsics& intr, const Vec2& p) {
  const Vec2 m_d((p.x() - intr.cx) / intr.fx, (p.y() - intr.cy) / intr.fy);
  const auto m_u = undistort(intr, m_d);
  if (!m_u) return std::nullopt;
  return Vec3(m_u->x(), m_u->y(), 1.0);
}

double depth_poly(const std::array<double, 9>& q, const Intrinsics& intr, const Vec2& p) {
  const double mx = (p.x() - intr.cx) / intr.fx;
  const double my = (p.y() - intr.cy) / intr.fy;
  const double r2 = mx * mx + my * my;
  return q[0] + q[1] * r2 + q[2] * r2 * r2 + q[3] * r2 * r2 * r2 + q[4] * mx + q[5] * my +
         q[6] * mx * my + q[7] * mx * mx * my + q[8] * mx * my * my;
}

InverseDepthMap correct_inverse_depth(const InverseDepthMap& W_m, const DepthIntrinsics& dintr,
                                      const Intrinsics& intr, bool spatial) {
  InverseDepthMap out(W_m.width(), W_m.height(), kHole);
  for (int y = 0; y < W_m.height(); ++y) {
    for (int x = 0; x < W_m.width(); ++x) {
      const int sx = static_cast<int>(std::lround(x - dintr.p0.x()));
      const int sy = static_cast<int>(std::lround(y - dintr.p0.y()));
      if (!W_m.in_bounds(sx, sy)) continue;
      const double w_m = W_m(sx, sy);
      if (!is_valid(w_m)) continue;
      double w = dintr.beta1 * w_m + dintr.beta0;
      if (spatial) {
        const Vec2 p(x, y);
        w = depth_poly(dintr.q1, intr, p) * w + depth_poly(dintr.q0, intr, p);
      }
      out(x, y) = w;
    }
  }
  return out;
}

namespace {

std::map<std::string, std::map<std::string, std::string>> parse_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open calibration file: " + path);
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto h = line.find('#');
    if (h != std::string::npos) line = line.substr(0, h);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    val.erase(0, val.find_first_not_of(" \t"));
    // every value is numeric (possibly a whitespace-separated list); fail
    // here so the error can name the offending line
    std::istringstream check(val);
    std::string token;
    while (check >> token) {
      size_t used = 0;
      try {
        std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size())
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": invalid number '" +
                                 token + "'");
    }
    sections[section][key] = val;
  }
  return sections;
}

double get_num(const std::map<std::string, std::string>& sec, const std::string& key, double dflt) {
  const auto it = sec.find(key);
  return it == sec.end() ? dflt : std::stod(it->second);
}

Intrinsics parse_intrinsics(const std::map<std::string, std::string>& sec) {
  Intrinsics intr;
  intr.fx = get_num(sec, "fx", 525.0);
  intr.fy = get_num(sec, "fy", 525.0);
  intr.cx = get_num(sec, "cx", 319.5);
  intr.cy = get_num(sec, "cy", 239.5);
  for (int i = 0; i < 5; ++i) intr.k[i] = get_num(sec, "k" + std::to_string(i + 1), 0.0);
  intr.width = static_cast<int>(get_num(sec, "width", 640));
  intr.height = static_cast<int>(get_num(sec, "height", 480));
  return intr;
}

}  // namespace

CameraCalibration load_calibration(const std::string& path) {
  const auto sections = parse_ini(path);
  CameraCalibration calib;
  if (auto it = sections.find("rgb"); it != sections.end()) calib.rgb = parse_intrinsics(it->second);
  if (auto it = sections.find("ir"); it != sections.end())
    calib.ir = parse_intrinsics(it->second);
  else
    calib.ir = calib.rgb;
  if (auto it = sections.find("depth"); it != sections.end()) {
    const auto& sec = it->second;
    calib.depth.beta0 = get_num(sec, "beta0", 0.0);
    calib.depth.beta1 = get_num(sec, "beta1", 1.0);
    calib.depth.p0.x() = get_num(sec, "p0_x", 4.0);
    calib.depth.p0.y() = get_num(sec, "p0_y", 4.0);
    for (int i = 0; i < 9; ++i) {
      calib.depth.q0[i] = get_num(sec, "q0_" + std::to_string(i), i == 0 ? 0.0 : 0.0);
      calib.depth.q1[i] = get_num(sec, "q1_" + std::to_string(i), i == 0 ? 1.0 : 0.0);
    }
  }
  if (auto it = sections.find("extrinsics"); it != sections.end()) {
    const auto& sec = it->second;
    const auto t = sec.find("T_DC");
    if (t != sec.end()) {
      std::istringstream ss(t->second);
      Mat4 m;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
          if (!(ss >> m(r, c))) throw std::runtime_error("T_DC: expected 16 numbers");
      calib.extrinsics.T_DC = Pose(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
    }
  }
  return calib;
}

void save_calibration(const CameraCalibration& calib, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write calibration file: " + path);
  out.precision(12);
  auto dump_intr = [&](const char* name, const Intrinsics& intr) {
    out << "[" << name << "]\n";
    out << "fx=" << intr.fx << "\nfy=" << intr.fy << "\ncx=" << intr.cx << "\ncy=" << intr.cy
        << "\n";
    for (int i = 0; i < 5; ++i) out << "k" << i + 1 << "=" << intr.k[i] << "\n";
    out << "width=" << intr.width << "\nheight=" << intr.height << "\n\n";
  };
  dump_intr("rgb", calib.rgb);
  dump_intr("ir", calib.ir);
  out << "[extrinsics]\nT_DC=";
  const Mat4 m = calib.extrinsics.T_DC.matrix();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out << m(r, c) << (r == 3 && c == 3 ? "\n\n" : " ");
  out << "[depth]\n";
  out << "beta0=" << calib.depth.beta0 << "\nbeta1=" << calib.depth.beta1 << "\n";
  out << "p0_x=" << calib.depth.p0.x() << "\np0_y=" << calib.depth.p0.y() << "\n";
  for (int i = 0; i < 9; ++i) out << "q0_" << i << "=" << calib.depth.q0[i] << "\n";
  for (int i = 0; i < 9; ++i) out << "q1_" << i << "=" << calib.depth.q1[i] << "\n";
}

}  // namespace rgbid
