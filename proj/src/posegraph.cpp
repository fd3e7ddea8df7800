#include "rgbid/posegraph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace rgbid {

Vec6 constraint_error(const Pose& T_hat_ij, const Pose& T_Wi, const Pose& T_Wj) {
  return se3_log(T_hat_ij * T_Wj.inverse() * T_Wi).vector();
}

namespace {

struct ErrorBlocks {
  Mat3 dR;       // error rotation
  Vec3 dt;       // error translation
  Mat3 dQ_inv;   // inverse of the integrated-exponential matrix at log(dR)
};

ErrorBlocks error_blocks(const Pose& E) {
  ErrorBlocks b;
  b.dR = E.R;
  b.dt = E.t;
  b.dQ_inv = q_matrix(so3_log(E.R)).inverse();
  return b;
}

}  // namespace

Mat6 information_from_covariance(const Pose& T_hat_ij, const Pose& T_Wi, const Pose& T_Wj,
                                 const Mat6& sigma, bool* regularized) {
  const ErrorBlocks b = error_blocks(T_hat_ij * T_Wj.inverse() * T_Wi);
  Mat6 J = Mat6::Zero();
  J.topLeftCorner<3, 3>() = Mat3::Identity();
  J.topRightCorner<3, 3>() = -skew(b.dt);
  J.bottomRightCorner<3, 3>() = b.dQ_inv;
  Mat6 JSJ = J * sigma * J.transpose();
  JSJ = 0.5 * (JSJ + JSJ.transpose()).eval();
  Eigen::FullPivLU<Mat6> lu(JSJ);
  bool singular = !lu.isInvertible();
  if (regularized) *regularized = singular;
  if (singular) JSJ += 1e-9 * Mat6::Identity();
  Mat6 omega = JSJ.inverse();
  return 0.5 * (omega + omega.transpose()).eval();
}

NodeJacobians node_jacobians(const Pose& T_hat_ij, const Pose& T_Wi, const Pose& T_Wj) {
  const ErrorBlocks b = error_blocks(T_hat_ij * T_Wj.inverse() * T_Wi);
  NodeJacobians out;
  out.wrt_i = Mat6::Zero();
  out.wrt_i.topLeftCorner<3, 3>() = b.dR;
  out.wrt_i.bottomRightCorner<3, 3>() = b.dQ_inv * b.dR;

  out.wrt_j = Mat6::Zero();
  out.wrt_j.topLeftCorner<3, 3>() = -T_hat_ij.R;
  out.wrt_j.topRightCorner<3, 3>() = skew(b.dt - T_hat_ij.t) * T_hat_ij.R;
  out.wrt_j.bottomRightCorner<3, 3>() = -b.dQ_inv * T_hat_ij.R;
  return out;
}

double graph_cost(const PoseGraph& graph) {
  double cost = 0.0;
  auto add = [&](const Constraint& c) {
    const Vec6 e = constraint_error(c.T_ij, graph.nodes.at(c.i), graph.nodes.at(c.j));
    cost += e.dot(c.info * e);
  };
  for (const auto& c : graph.odometry) add(c);
  for (const auto& c : graph.loops) add(c);
  return cost;
}

OptimizeResult optimize(PoseGraph& graph, const OptimizeConfig& config) {
  OptimizeResult result;
  if (graph.nodes.empty()) return result;

  // Dense index for every node except the anchor (smallest id).
  const int anchor = graph.nodes.begin()->first;
  std::map<int, int> index;
  for (const auto& [id, pose] : graph.nodes) {
    if (id != anchor) index[id] = static_cast<int>(index.size());
  }
  const int n = static_cast<int>(index.size());
  result.initial_cost = graph_cost(graph);
  result.final_cost = result.initial_cost;
  if (n == 0) {
    result.converged = true;
    return result;
  }

  std::vector<const Constraint*> constraints;
  for (const auto& c : graph.odometry) constraints.push_back(&c);
  for (const auto& c : graph.loops) constraints.push_back(&c);

  double lambda = config.initial_lambda;
  double cost = result.initial_cost;
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(6 * n, 6 * n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(6 * n);
    for (const Constraint* c : constraints) {
      const Pose& Ti = graph.nodes.at(c->i);
      const Pose& Tj = graph.nodes.at(c->j);
      const Vec6 e = constraint_error(c->T_ij, Ti, Tj);
      const NodeJacobians J = node_jacobians(c->T_ij, Ti, Tj);
      const bool use_i = c->i != anchor;
      const bool use_j = c->j != anchor;
      if (use_i) {
        const int a = 6 * index.at(c->i);
        H.block<6, 6>(a, a) += J.wrt_i.transpose() * c->info * J.wrt_i;
        b.segment<6>(a) += J.wrt_i.transpose() * c->info * e;
      }
      if (use_j) {
        const int a = 6 * index.at(c->j);
        H.block<6, 6>(a, a) += J.wrt_j.transpose() * c->info * J.wrt_j;
        b.segment<6>(a) += J.wrt_j.transpose() * c->info * e;
      }
      if (use_i && use_j) {
        const int a = 6 * index.at(c->i);
        const int d = 6 * index.at(c->j);
        const Eigen::Matrix<double, 6, 6> cross = J.wrt_i.transpose() * c->info * J.wrt_j;
        H.block<6, 6>(a, d) += cross;
        H.block<6, 6>(d, a) += cross.transpose();
      }
    }

    Eigen::MatrixXd Hd = H;
    Hd.diagonal() += lambda * H.diagonal().cwiseMax(1e-12);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Hd);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      std::ostringstream msg;
      msg << "pose-graph normal matrix not positive definite after damping (lambda=" << lambda
          << ", nodes=" << n << ", constraints=" << constraints.size() << ")";
      throw std::runtime_error(msg.str());
    }
    const Eigen::VectorXd delta = ldlt.solve(-b);

    // Trial right-multiplicative update.
    std::map<int, Pose> trial = graph.nodes;
    for (const auto& [id, k] : index) {
      trial[id] = trial[id] * se3_exp(Twist::from_vector(delta.segment<6>(6 * k)));
    }
    std::swap(graph.nodes, trial);
    const double new_cost = graph_cost(graph);
    ++result.iterations;
    if (new_cost <= cost) {
      lambda = std::max(lambda / 10.0, 1e-12);
      const double rel = (cost - new_cost) / std::max(cost, 1e-300);
      cost = new_cost;
      if (rel < config.rel_cost_tol) {
        result.converged = true;
        break;
      }
    } else {
      std::swap(graph.nodes, trial);  // reject
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  result.final_cost = cost;
  return result;
}

void distribute_chain(const Pose& T_W_start, const Pose& T_W_end,
                      const std::vector<Constraint>& chain, std::vector<Pose>& poses) {
  const size_t n = chain.size();
  poses.assign(n + 1, T_W_start);
  std::vector<double> weight(n + 1, 0.0);
  for (size_t k = 0; k < n; ++k) {
    poses[k + 1] = poses[k] * chain[k].T_ij;
    // Accumulated uncertainty along the chain governs how much of the
    // endpoint discrepancy each frame absorbs.
    const double w = chain[k].info.inverse().trace();
    weight[k + 1] = weight[k] + std::max(w, 1e-12);
  }
  const Twist disc = se3_log(poses[n].inverse() * T_W_end);
  const double total = weight[n];
  if (total <= 0.0) return;
  for (size_t k = 1; k <= n; ++k) {
    const double alpha = weight[k] / total;
    poses[k] = poses[k] * se3_exp(Twist::from_vector(alpha * disc.vector()));
  }
}

std::string dump_graph(const PoseGraph& graph) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& [id, pose] : graph.nodes) {
    const Vec3 theta = so3_log(pose.R);
    os << "VERTEX_SE3 " << id << " " << pose.t.x() << " " << pose.t.y() << " " << pose.t.z()
       << " " << theta.x() << " " << theta.y() << " " << theta.z() << "\n";
  }
  auto edge = [&](const Constraint& c) {
    const Vec3 theta = so3_log(c.T_ij.R);
    os << "EDGE_SE3 " << c.i << " " << c.j << " " << c.T_ij.t.x() << " " << c.T_ij.t.y() << " "
       << c.T_ij.t.z() << " " << theta.x() << " " << theta.y() << " " << theta.z();
    for (int r = 0; r < 6; ++r)
      for (int col = r; col < 6; ++col) os << " " << c.info(r, col);
    os << "\n";
  };
  for (const auto& c : graph.odometry) edge(c);
  for (const auto& c : graph.loops) edge(c);
  return os.str();
}

PoseGraph load_graph(const std::string& text) {
  PoseGraph graph;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag.empty() || tag[0] == '#') continue;
    if (tag == "VERTEX_SE3") {
      int id;
      Vec3 t, theta;
      if (!(ls >> id >> t.x() >> t.y() >> t.z() >> theta.x() >> theta.y() >> theta.z()))
        throw std::runtime_error("bad VERTEX_SE3 at line " + std::to_string(line_no));
      graph.nodes[id] = Pose{so3_exp(theta), t};
    } else if (tag == "EDGE_SE3") {
      Constraint c;
      Vec3 t, theta;
      if (!(ls >> c.i >> c.j >> t.x() >> t.y() >> t.z() >> theta.x() >> theta.y() >> theta.z()))
        throw std::runtime_error("bad EDGE_SE3 at line " + std::to_string(line_no));
      c.T_ij = Pose{so3_exp(theta), t};
      for (int r = 0; r < 6; ++r) {
        for (int col = r; col < 6; ++col) {
          double v;
          if (!(ls >> v))
            throw std::runtime_error("bad EDGE_SE3 information at line " + std::to_string(line_no));
          c.info(r, col) = v;
          c.info(col, r) = v;
        }
      }
      // Sequential edges form the odometry chain, the rest are loops.
      if (c.j == c.i + 1 || c.i == c.j + 1)
        graph.odometry.push_back(c);
      else
        graph.loops.push_back(c);
    } else {
      throw std::runtime_error("unknown tag '" + tag + "' at line " + std::to_string(line_no));
    }
  }
  return graph;
}

}  // namespace rgbid
