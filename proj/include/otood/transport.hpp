#ifndef OTOOD_TRANSPORT_HPP_
#define OTOOD_TRANSPORT_HPP_

#include <Eigen/Core>
#include <utility>
#include <vector>

namespace otood::transport {

// Which head produced a logit matrix: the cluster head feeds transport, the
// class head feeds OOD scoring. Rows index clusters/classes, columns samples.
enum class LogitKind { cluster, id_class };

struct LogitMatrix {
  Eigen::MatrixXd values;  // K x N
  LogitKind kind = LogitKind::cluster;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index samples() const { return values.cols(); }
};

// Per-sample energies. `raw` is the log-sum-exp over cluster logits; `shifted`
// is an order-preserving strictly positive version usable as a distribution
// weight and as a multiplicative cost factor.
struct EnergyVector {
  Eigen::VectorXd raw;
  Eigen::VectorXd shifted;
};

struct TransportProblem {
  Eigen::MatrixXd cost;   // K x N, strictly positive; larger entry = cheaper move
  Eigen::VectorXd alpha;  // cluster marginal, sums to 1
  Eigen::VectorXd beta;   // sample marginal, strictly positive, sums to 1
  double epsilon = 0.05;  // entropy weight
};

// Exponent applied to the cost when building the scaling kernel.
// `inverse_epsilon` (cost^(1/eps)) is the default: smaller eps sharpens the
// coupling. `literal_epsilon` (cost^eps) is kept as an escape hatch.
enum class KernelExponent { inverse_epsilon, literal_epsilon };

struct SinkhornOptions {
  double tol = 1e-6;   // L1 marginal error required on both sides
  int max_iter = 1000;
  bool log_domain = false;  // stabilized evaluation, needed for very small eps
  KernelExponent exponent = KernelExponent::inverse_epsilon;
};

struct AssignmentMatrix {
  Eigen::MatrixXd q;            // K x N coupling, nonnegative
  Eigen::VectorXd row_scaling;  // u
  Eigen::VectorXd col_scaling;  // v
  double row_marginal_error = 0.0;  // ||q 1 - alpha||_1
  double col_marginal_error = 0.0;  // ||q^T 1 - beta||_1
  int iterations_used = 0;
  bool converged = false;
};

// Column-wise softmax of cluster logits (max-subtracted for stability).
Eigen::MatrixXd cluster_probabilities(const LogitMatrix& logits);

// Per-sample log-sum-exp energy plus the positive shift
//   shifted[i] = raw[i] - min(raw) + 1e-3 * max(range(raw), 1).
EnergyVector energy_scores(const LogitMatrix& logits);

// Uniform cluster marginal and energy-proportional sample marginal.
std::pair<Eigen::VectorXd, Eigen::VectorXd> transport_marginals(
    const EnergyVector& energy, Eigen::Index clusters);

// Energy-weighted cost: each column of `probabilities` scaled by that
// sample's shifted energy.
Eigen::MatrixXd energy_cost(const Eigen::MatrixXd& probabilities,
                            const EnergyVector& energy);

// Full chain from cluster logits to a ready-to-solve problem.
TransportProblem build_problem(const LogitMatrix& logits, double epsilon);

// Scaling iterations u <- alpha / (M v), v <- beta / (M^T u) on the kernel
// M = exp(log(cost) * exponent), starting from u = v = 1.
AssignmentMatrix sinkhorn_solve(const TransportProblem& problem,
                                const SinkhornOptions& opts = {});

// Column argmax with ties broken toward the lowest row index.
std::vector<int> harden(const AssignmentMatrix& assignment);

// <Q, log cost> - eps * sum Q log Q, with 0 log 0 = 0.
double entropic_objective(const Eigen::MatrixXd& q, const Eigen::MatrixXd& cost,
                          double epsilon);

}  // namespace otood::transport

#endif  // OTOOD_TRANSPORT_HPP_
