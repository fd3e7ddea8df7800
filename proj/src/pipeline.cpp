#include "rgbid/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace rgbid {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Adjoint of a pose for left-referenced (t, theta) twists.
Mat6 adjoint(const Pose& T) {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = T.R;
  ad.topRightCorner<3, 3>() = skew(T.t) * T.R;
  ad.bottomRightCorner<3, 3>() = T.R;
  return ad;
}

}  // namespace

// ---------------------------------------------------------------------------
// KeyframeQueue

void KeyframeQueue::push(Keyframe kf) {
  std::unique_lock lock(mutex_);
  if (drop_oldest_) {
    if (queue_.size() >= capacity_) queue_.pop_front();
  } else {
    not_full_.wait(lock, [&] { return queue_.size() < capacity_ || closed_; });
    if (closed_) return;
  }
  queue_.push_back(std::move(kf));
  not_empty_.notify_one();
}

std::optional<Keyframe> KeyframeQueue::pop() {
  std::unique_lock lock(mutex_);
  not_empty_.wait(lock, [&] { return !queue_.empty() || closed_; });
  if (queue_.empty()) return std::nullopt;
  Keyframe kf = std::move(queue_.front());
  queue_.pop_front();
  not_full_.notify_one();
  return kf;
}

void KeyframeQueue::close() {
  std::lock_guard lock(mutex_);
  closed_ = true;
  not_empty_.notify_all();
  not_full_.notify_all();
}

size_t KeyframeQueue::size() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

// ---------------------------------------------------------------------------
// TimingReport

std::string TimingReport::format() const {
  std::ostringstream os;
  auto table = [&os](const char* title, const std::map<std::string, StageStat>& stats) {
    os << title << "\n";
    os << "  stage                          calls   mean ms  total ms\n";
    for (const auto& [name, s] : stats) {
      os << "  " << name;
      for (size_t i = name.size(); i < 30; ++i) os << ' ';
      char buf[64];
      std::snprintf(buf, sizeof buf, "%6d  %8.3f  %8.1f\n", s.count, s.mean_ms(), s.total_ms);
      os << buf;
    }
  };
  table("front-end", frontend);
  table("back-end", backend);
  return os.str();
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(const Intrinsics& K, const PipelineConfig& config)
    : K_(K),
      config_(config),
      buffer_(config.buffer_capacity),
      queue_(config.queue_capacity, config.drop_oldest),
      clusters_() {
  if (!config_.deterministic) backend_thread_ = std::thread([this] { backend_loop(); });
}

Pipeline::~Pipeline() {
  if (!finished_) {
    try {
      finish();
    } catch (...) {
    }
  }
}

void Pipeline::record(std::map<std::string, StageStat>* table, const std::string& stage,
                      double ms) {
  std::lock_guard lock(mutex_);
  auto& s = (*table)[stage];
  ++s.count;
  s.total_ms += ms;
}

void Pipeline::process_frame(const FrameData& frame, double timestamp) {
  if (finished_) throw std::logic_error("process_frame after finish()");
  if (!reference_) {
    // Bootstrap: the first frame anchors the world frame.
    reference_ = frame;
    T_W_ref_ = Pose();
    T_ref_prev_ = Pose();
    cov_ref_prev_ = Mat6::Zero();
    {
      std::lock_guard lock(mutex_);
      trajectory_.frames.push_back({timestamp, Pose(), Mat6::Zero(), false, 0});
      trajectory_.keyframe_frame_index.push_back(0);
    }
    start_keyframe(frame, timestamp);
    return;
  }
  track(frame, timestamp);
  fuse_and_maybe_switch(frame, timestamp);
}

void Pipeline::track(const FrameData& frame, double timestamp) {
  const auto t0 = Clock::now();
  // Constant-velocity initial guess in reference coordinates.
  const Pose init = *T_ref_prev_ * velocity_;
  bool lost = false;
  AlignmentResult res;
  try {
    res = align(*reference_, frame, K_, init, config_.alignment);
  } catch (const DegenerateAlignmentError&) {
    lost = true;
  }

  Pose T_ref_k;
  Mat6 step_cov = Mat6::Zero();
  if (lost) {
    // Hold pose: keep the previous estimate, forget the velocity.
    T_ref_k = *T_ref_prev_;
    velocity_ = Pose();
    step_cov = 1e6 * Mat6::Identity();
  } else {
    T_ref_k = res.T_AB;
    sigma_w_ = std::max(res.tdist_depth.sigma, 1e-6);
    // Sequential constraint k-1 -> k with two-term covariance composition
    // through the shared reference frame.
    PoseWithCovariance a{*T_ref_prev_, cov_ref_prev_, PerturbationSide::Left};
    PoseWithCovariance b{T_ref_k, res.cov, PerturbationSide::Left};
    const PoseWithCovariance rel = compose_relative_with_cov(a, b);
    velocity_ = rel.pose;
    step_cov = rel.cov;
    cov_ref_prev_ = res.cov;
  }

  const Pose T_W_k = T_W_ref_ * T_ref_k;
  {
    std::lock_guard lock(mutex_);
    trajectory_.frames.push_back({timestamp, T_W_k, step_cov, lost, -1});
  }
  T_ref_prev_ = T_ref_k;

  // Reference switching keeps the photometric baseline short.
  if (!lost) {
    const Pose T_k_ref = T_ref_k.inverse();
    const CovisibilityResult cov = covisibility_ratio(*reference_, frame, T_k_ref, K_, sigma_w_);
    if (should_switch_reference(cov.ratio, config_.reference_covisibility)) {
      reference_ = frame;
      T_W_ref_ = T_W_k;
      T_ref_prev_ = Pose();
      cov_ref_prev_ = Mat6::Zero();
    }
  }
  record(&timing_.frontend, "tracking", ms_since(t0));
}

void Pipeline::fuse_and_maybe_switch(const FrameData& frame, double timestamp) {
  const auto t0 = Clock::now();
  const FrameEstimate last = [&] {
    std::lock_guard lock(mutex_);
    return trajectory_.frames.back();
  }();

  buffer_.push({frame, last.T_W_k, timestamp});
  drain_buffer_step(&*current_kf_, &buffer_, K_, sigma_w_);
  record(&timing_.frontend, "fusion", ms_since(t0));

  const auto t1 = Clock::now();
  const Pose T_frame_kf = last.T_W_k.inverse() * current_kf_->T_W_kf;
  const CovisibilityResult cov =
      covisibility_ratio(current_kf_source_, frame, T_frame_kf.inverse(), K_, sigma_w_);
  record(&timing_.frontend, "covisibility", ms_since(t1));

  if (!last.lost && should_switch_keyframe(cov.ratio, config_.keyframe_covisibility)) {
    emit_keyframe();
    start_keyframe(frame, timestamp);
    {
      std::lock_guard lock(mutex_);
      trajectory_.frames.back().keyframe_id = next_keyframe_id_ - 1;
      trajectory_.keyframe_frame_index.push_back(
          static_cast<int>(trajectory_.frames.size()) - 1);
    }
    // Restart tracking from the new keyframe.
    reference_ = frame;
    T_W_ref_ = last.T_W_k;
    T_ref_prev_ = Pose();
    cov_ref_prev_ = Mat6::Zero();
  }
}

void Pipeline::start_keyframe(const FrameData& frame, double timestamp) {
  const Pose T_W_k = [&] {
    std::lock_guard lock(mutex_);
    return trajectory_.frames.back().T_W_k;
  }();
  current_kf_ = make_keyframe(frame, T_W_k, next_keyframe_id_++, timestamp);
  current_kf_source_ = frame;
  buffer_.clear();
}

void Pipeline::emit_keyframe() {
  if (!current_kf_) return;
  // Finish absorbing whatever is still buffered for this keyframe.
  while (!buffer_.empty()) drain_buffer_step(&*current_kf_, &buffer_, K_, sigma_w_);
  Keyframe snapshot = *current_kf_;
  if (config_.deterministic) {
    step_backend(snapshot);
  } else {
    queue_.push(std::move(snapshot));
  }
}

void Pipeline::finish() {
  if (finished_) return;
  if (current_kf_) emit_keyframe();
  queue_.close();
  if (backend_thread_.joinable()) backend_thread_.join();
  run_optimization(clusters_.release_all());
  finished_ = true;
}

void Pipeline::backend_loop() {
  while (auto kf = queue_.pop()) {
    try {
      step_backend(*kf);
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex_);
      loop_log_.push_back(std::string("BACKEND_ERROR ") + e.what());
    }
  }
}

void Pipeline::step_backend(const Keyframe& kf) {
  FrameData frame{kf.intensity, kf.inverse_depth};

  if (config_.compute_juts) {
    const auto t0 = Clock::now();
    const NormalMap normals = normal_map(frame.inverse_depth, K_);
    JutLabeling labeling =
        segment(normals, frame.inverse_depth, K_, config_.segmentation_k,
                config_.segmentation_bins);
    {
      std::lock_guard lock(mutex_);
      juts_.push_back(std::move(labeling));
    }
    record(&timing_.backend, "segmentation", ms_since(t0));
  }

  const auto t1 = Clock::now();
  DescribedKeypoints described = extract_and_describe(frame.intensity, frame.inverse_depth, K_,
                                                      config_.features);
  if (vocabulary_.empty() && !described.descriptors.empty())
    vocabulary_ = Vocabulary::train(described.descriptors);
  KeyframeRecord rec;
  rec.id = kf.id;
  rec.frame = frame;
  rec.T_W_kf = kf.T_W_kf;
  rec.keypoints = std::move(described.keypoints);
  rec.descriptors = std::move(described.descriptors);
  rec.histogram = bow_histogram(rec.descriptors, vocabulary_);
  record(&timing_.backend, "features+bow", ms_since(t1));

  if (config_.enable_loop && !db_.empty()) {
    const auto t2 = Clock::now();
    auto candidates = query_candidates(rec, db_, prev_histogram_, config_.loop);
    int tried = 0;
    for (const auto& cand : candidates) {
      if (tried++ >= config_.max_loop_candidates) break;
      const KeyframeRecord* other = nullptr;
      for (const auto& d : db_)
        if (d.id == cand.match_id) other = &d;
      if (!other) continue;
      auto matches = match_keypoints(rec, *other, config_.loop.ratio_test);
      auto geom = geometric_verify(matches, frame.intensity.width(), frame.intensity.height(),
                                   config_.loop);
      if (!geom) continue;
      auto constraint =
          make_loop_constraint(rec, *other, geom->T_ij, K_, *geom, config_.loop,
                               config_.alignment);
      if (!constraint) continue;
      constraint->score = cand.normalized_score;
      {
        std::ostringstream line;
        line << "LOOP " << constraint->i << " " << constraint->j << " " << constraint->inliers
             << " " << constraint->hull_fraction << " " << cand.normalized_score;
        std::lock_guard lock(mutex_);
        loop_log_.push_back(line.str());
      }
      clusters_.add(*constraint);
    }
    record(&timing_.backend, "loop closure", ms_since(t2));
  }

  prev_histogram_ = rec.histogram;
  db_.push_back(std::move(rec));

  auto ready = clusters_.release(kf.id);
  if (!ready.empty()) {
    const auto t3 = Clock::now();
    run_optimization(ready);
    record(&timing_.backend, "pose-graph", ms_since(t3));
  }
}

void Pipeline::run_optimization(const std::vector<std::vector<LoopConstraint>>& clusters) {
  for (const auto& cluster : clusters) {
    for (const auto& c : cluster) {
      Constraint pc;
      pc.i = c.i;
      pc.j = c.j;
      pc.T_ij = c.T_ij;
      pc.info = c.info;
      pending_loops_.push_back(pc);
    }
  }
  if (pending_loops_.empty()) return;

  // Snapshot trajectory state under the lock, optimize outside it.
  Trajectory snap;
  {
    std::lock_guard lock(mutex_);
    snap = trajectory_;
  }
  const auto& kfi = snap.keyframe_frame_index;
  if (kfi.size() < 2) return;

  // Layer 1: keyframe nodes with chain-composed odometry constraints.
  PoseGraph graph;
  for (size_t k = 0; k < kfi.size(); ++k)
    graph.nodes[static_cast<int>(k)] = snap.frames[kfi[k]].T_W_k;
  for (size_t k = 0; k + 1 < kfi.size(); ++k) {
    Constraint c;
    c.i = static_cast<int>(k);
    c.j = static_cast<int>(k + 1);
    const Pose T_W_a = snap.frames[kfi[k]].T_W_k;
    Pose acc;  // identity: pose of current chain frame in keyframe k
    Mat6 cov = Mat6::Zero();
    for (int f = kfi[k] + 1; f <= kfi[k + 1]; ++f) {
      const Pose step = snap.frames[f - 1].T_W_k.inverse() * snap.frames[f].T_W_k;
      const Mat6 ad = adjoint(acc);
      cov += ad * snap.frames[f].cov * ad.transpose();
      acc = acc * step;
    }
    c.T_ij = T_W_a.inverse() * snap.frames[kfi[k + 1]].T_W_k;
    cov += 1e-10 * Mat6::Identity();
    c.info = cov.inverse();
    c.info = 0.5 * (c.info + c.info.transpose()).eval();
    graph.odometry.push_back(c);
  }
  // Keep only loops whose endpoints exist as keyframe nodes.
  for (const auto& c : pending_loops_) {
    if (c.i < static_cast<int>(kfi.size()) && c.j < static_cast<int>(kfi.size()))
      graph.loops.push_back(c);
  }
  if (graph.loops.empty()) return;

  optimize(graph, config_.optimize);

  // Layer 2: redistribute intermediate frames along each keyframe chain,
  // then rewrite the shared trajectory and database poses atomically.
  std::vector<Pose> new_frames(snap.frames.size());
  for (size_t f = 0; f < snap.frames.size(); ++f) new_frames[f] = snap.frames[f].T_W_k;
  for (size_t k = 0; k + 1 < kfi.size(); ++k) {
    std::vector<Constraint> chain;
    for (int f = kfi[k] + 1; f <= kfi[k + 1]; ++f) {
      Constraint c;
      c.T_ij = snap.frames[f - 1].T_W_k.inverse() * snap.frames[f].T_W_k;
      Mat6 cov = snap.frames[f].cov + 1e-10 * Mat6::Identity();
      c.info = cov.inverse();
      chain.push_back(c);
    }
    std::vector<Pose> poses;
    distribute_chain(graph.nodes.at(static_cast<int>(k)),
                     graph.nodes.at(static_cast<int>(k + 1)), chain, poses);
    for (int f = kfi[k]; f <= kfi[k + 1]; ++f) new_frames[f] = poses[f - kfi[k]];
  }
  // Frames after the last keyframe: carry the last keyframe's correction.
  const int last_kf_frame = kfi.back();
  const Pose corr =
      graph.nodes.at(static_cast<int>(kfi.size()) - 1) * snap.frames[last_kf_frame].T_W_k.inverse();
  for (size_t f = last_kf_frame + 1; f < snap.frames.size(); ++f)
    new_frames[f] = corr * snap.frames[f].T_W_k;

  {
    std::lock_guard lock(mutex_);
    for (size_t f = 0; f < new_frames.size() && f < trajectory_.frames.size(); ++f)
      trajectory_.frames[f].T_W_k = new_frames[f];
  }
  for (auto& rec : db_) {
    if (rec.id < static_cast<int>(kfi.size())) rec.T_W_kf = graph.nodes.at(rec.id);
  }
  // Keep the front-end's world anchoring consistent with the rewrite.
  pending_loops_.clear();
}

Trajectory Pipeline::trajectory() const {
  std::lock_guard lock(mutex_);
  return trajectory_;
}

std::vector<std::string> Pipeline::loop_log() const {
  std::lock_guard lock(mutex_);
  return loop_log_;
}

TimingReport Pipeline::timing() const {
  std::lock_guard lock(mutex_);
  return timing_;
}

std::vector<Keyframe> Pipeline::keyframes() const {
  std::vector<Keyframe> out;
  for (const auto& rec : db_) {
    Keyframe kf;
    kf.intensity = rec.frame.intensity;
    kf.inverse_depth = rec.frame.inverse_depth;
    kf.T_W_kf = rec.T_W_kf;
    kf.id = rec.id;
    out.push_back(std::move(kf));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Map export

PointCloud export_map(const std::vector<Keyframe>& keyframes, const Intrinsics& K, double voxel) {
  PointCloud cloud;
  const Mat3 Km = K.K();
  const Mat3 Kinv = Km.inverse();
  for (size_t k = 0; k < keyframes.size(); ++k) {
    const Keyframe& kf = keyframes[k];
    const Keyframe* prev = k > 0 ? &keyframes[k - 1] : nullptr;
    Mat3 Rt;
    Vec3 tt;
    if (prev) {
      const Pose T_prev_kf = prev->T_W_kf.inverse() * kf.T_W_kf;
      Rt = Km * T_prev_kf.R * Kinv;
      tt = Km * T_prev_kf.t;
    }
    for (int y = 0; y < kf.inverse_depth.height(); ++y) {
      for (int x = 0; x < kf.inverse_depth.width(); ++x) {
        const double w = kf.inverse_depth(x, y);
        if (!is_valid(w) || w <= 0.0) continue;
        if (prev) {
          // Transfer into the previous keyframe; pixels it already sees
          // are not novel.
          const Vec3 p(x, y, 1.0);
          const Vec3 q = Rt * p + w * tt;
          if (q.z() > 0.0) {
            const double u = q.x() / q.z(), v = q.y() / q.z();
            if (prev->inverse_depth.in_bounds(u, v)) {
              const double w_prev = bilinear(prev->inverse_depth, u, v);
              const double w_pred = w / q.z();
              if (is_valid(w_prev) && std::abs(w_prev - w_pred) < 3.0 * 0.02) continue;
            }
          }
        }
        const Vec3 X_kf = Kinv * Vec3(x, y, 1.0) / w;
        const Vec3 X_W = kf.T_W_kf * X_kf;
        const double g = kf.intensity.in_bounds(x, y) ? kf.intensity(x, y) : 0.5;
        const uint8_t c = static_cast<uint8_t>(std::clamp(g, 0.0, 1.0) * 255.0);
        cloud.points.push_back(X_W);
        cloud.colors.push_back({c, c, c});
      }
    }
  }
  if (voxel <= 0.0 || cloud.points.empty()) return cloud;

  struct Accum {
    Vec3 sum = Vec3::Zero();
    Vec3 color = Vec3::Zero();
    int n = 0;
  };
  std::unordered_map<int64_t, Accum> grid;
  auto key = [voxel](const Vec3& p) {
    const int64_t ix = static_cast<int64_t>(std::floor(p.x() / voxel));
    const int64_t iy = static_cast<int64_t>(std::floor(p.y() / voxel));
    const int64_t iz = static_cast<int64_t>(std::floor(p.z() / voxel));
    return (ix * 73856093) ^ (iy * 19349663) ^ (iz * 83492791);
  };
  std::vector<int64_t> order;
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const int64_t k = key(cloud.points[i]);
    auto [it, inserted] = grid.try_emplace(k);
    if (inserted) order.push_back(k);
    it->second.sum += cloud.points[i];
    it->second.color += Vec3(cloud.colors[i][0], cloud.colors[i][1], cloud.colors[i][2]);
    ++it->second.n;
  }
  PointCloud filtered;
  for (int64_t k : order) {
    const Accum& a = grid.at(k);
    filtered.points.push_back(a.sum / a.n);
    const Vec3 c = a.color / a.n;
    filtered.colors.push_back({static_cast<uint8_t>(c.x()), static_cast<uint8_t>(c.y()),
                               static_cast<uint8_t>(c.z())});
  }
  return filtered;
}

void save_ply(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << cloud.points.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const float xyz[3] = {static_cast<float>(cloud.points[i].x()),
                          static_cast<float>(cloud.points[i].y()),
                          static_cast<float>(cloud.points[i].z())};
    out.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
    out.write(reinterpret_cast<const char*>(cloud.colors[i].data()), 3);
  }
}

}  // namespace rgbid
