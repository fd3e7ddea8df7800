#pragma once

#include <map>
#include <string>
#include <vector>

#include "rgbid/geometry.hpp"

namespace rgbid {

struct Constraint {
  int i = 0, j = 0;
  Pose T_ij;                     // measured pose of j in i's frame
  Mat6 info = Mat6::Identity();  // symmetric PSD
};

struct PoseGraph {
  std::map<int, Pose> nodes;            // id -> T_W_i
  std::vector<Constraint> odometry;     // sequential chain
  std::vector<Constraint> loops;
};

/// Minimal-parametrisation constraint error
/// e_ij = log( T_ij_measured * T_Wj^-1 * T_Wi ) (decoupled log, (t, theta)).
Vec6 constraint_error(const Pose& T_hat_ij, const Pose& T_Wi, const Pose& T_Wj);

/// Maps a covariance left-referenced on the measurement into constraint
/// information Omega = (J Sigma J^T)^-1, evaluated at the current error
/// linearization; regularized with 1e-9 I when singular (flag set).
Mat6 information_from_covariance(const Pose& T_hat_ij, const Pose& T_Wi, const Pose& T_Wj,
                                 const Mat6& sigma, bool* regularized = nullptr);

/// Analytic error Jacobians with respect to right-multiplicative
/// perturbations of the two node poses.
struct NodeJacobians {
  Mat6 wrt_i;
  Mat6 wrt_j;
};
NodeJacobians node_jacobians(const Pose& T_hat_ij, const Pose& T_Wi, const Pose& T_Wj);

struct OptimizeResult {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
};

struct OptimizeConfig {
  int max_iterations = 50;
  double initial_lambda = 1e-4;
  double rel_cost_tol = 1e-8;
};

double graph_cost(const PoseGraph& graph);

/// Levenberg-Marquardt over all node poses with node 1 (the smallest id)
/// anchored; right-multiplicative updates on block-6x6 normal equations.
/// Throws std::runtime_error when the damped normal matrix is not PSD.
OptimizeResult optimize(PoseGraph& graph, const OptimizeConfig& config = {});

/// Second layer: keyframe poses fixed, each inter-keyframe chain of
/// intermediate frames re-distributed so chain composition matches the
/// optimized keyframe endpoints, discrepancy spread along the chain.
/// `chain` holds odometry constraints frame[k-1]->frame[k] covering
/// start..end; poses are absolute T_W_frame, endpoints fixed.
void distribute_chain(const Pose& T_W_start, const Pose& T_W_end,
                      const std::vector<Constraint>& chain, std::vector<Pose>& poses);

/// g2o-style text serialization: VERTEX_SE3 id tx ty tz wx wy wz and
/// EDGE_SE3 i j tx ty tz wx wy wz + 21 upper-triangular information terms.
std::string dump_graph(const PoseGraph& graph);
PoseGraph load_graph(const std::string& text);

}  // namespace rgbid
