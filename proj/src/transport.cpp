#include "otood/transport.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "otood/errors.hpp"

namespace otood::transport {

namespace {

void require_finite(const LogitMatrix& logits) {
  if (logits.rows() < 1 || logits.samples() < 1)
    throw ValidationError("logit matrix must be at least 1x1");
  for (Eigen::Index i = 0; i < logits.samples(); ++i)
    for (Eigen::Index j = 0; j < logits.rows(); ++j)
      if (!std::isfinite(logits.values(j, i)))
        throw ValidationError("non-finite logit for sample " + std::to_string(i) +
                              " (row " + std::to_string(j) + ")");
}

void require_problem(const TransportProblem& p) {
  const Eigen::Index k = p.cost.rows(), n = p.cost.cols();
  if (k < 1 || n < 1) throw ValidationError("cost matrix must be at least 1x1");
  if (p.alpha.size() != k || p.beta.size() != n)
    throw ValidationError("marginal lengths do not match the cost matrix");
  if ((p.cost.array() <= 0.0).any())
    throw ValidationError("cost entries must be strictly positive");
  if (!p.cost.allFinite()) throw ValidationError("cost entries must be finite");
  if ((p.alpha.array() < 0.0).any())
    throw ValidationError("alpha entries must be nonnegative");
  if ((p.beta.array() <= 0.0).any())
    throw ValidationError("beta entries must be strictly positive");
  if (std::abs(p.alpha.sum() - 1.0) > 1e-9)
    throw ValidationError("alpha must sum to 1");
  if (std::abs(p.beta.sum() - 1.0) > 1e-9)
    throw ValidationError("beta must sum to 1");
  if (!(p.epsilon > 0.0)) throw ValidationError("epsilon must be positive");
}

double kernel_exponent_value(const TransportProblem& p, const SinkhornOptions& o) {
  return o.exponent == KernelExponent::inverse_epsilon ? 1.0 / p.epsilon
                                                       : p.epsilon;
}

// log(sum_j exp(x_j + add_j)) over a kernel row/column, max-guarded.
double log_sum_exp(const Eigen::ArrayXd& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf stays -inf
  return m + std::log((x - m).exp().sum());
}

AssignmentMatrix solve_dense(const TransportProblem& p, const SinkhornOptions& o) {
  const Eigen::Index k = p.cost.rows(), n = p.cost.cols();
  const double expo = kernel_exponent_value(p, o);
  Eigen::MatrixXd kernel = (p.cost.array().log() * expo).exp();
  if (!kernel.allFinite())
    throw NumericalError("kernel overflow; rerun with the log-domain option");

  AssignmentMatrix out;
  Eigen::VectorXd u = Eigen::VectorXd::Ones(k);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd kv = kernel * v;  // K
  for (int it = 1; it <= o.max_iter; ++it) {
    if ((kv.array() <= 0.0).any())
      throw NumericalError("kernel column sums underflowed to zero; rerun with "
                           "the log-domain option");
    u = p.alpha.array() / kv.array();
    Eigen::VectorXd ktu = kernel.transpose() * u;  // N
    if ((ktu.array() <= 0.0).any())
      throw NumericalError("kernel row sums underflowed to zero; rerun with "
                           "the log-domain option");
    v = p.beta.array() / ktu.array();
    kv = kernel * v;
    out.iterations_used = it;
    out.row_marginal_error = ((u.array() * kv.array()) - p.alpha.array()).abs().sum();
    out.col_marginal_error = ((v.array() * ktu.array()) - p.beta.array()).abs().sum();
    if (out.row_marginal_error <= o.tol && out.col_marginal_error <= o.tol) {
      out.converged = true;
      break;
    }
  }
  out.q = u.asDiagonal() * kernel * v.asDiagonal();
  out.row_scaling = u;
  out.col_scaling = v;
  return out;
}

AssignmentMatrix solve_log_domain(const TransportProblem& p,
                                  const SinkhornOptions& o) {
  const Eigen::Index k = p.cost.rows(), n = p.cost.cols();
  const double expo = kernel_exponent_value(p, o);
  Eigen::MatrixXd log_kernel = p.cost.array().log() * expo;
  const Eigen::ArrayXd log_alpha = p.alpha.array().log();  // -inf allowed
  const Eigen::ArrayXd log_beta = p.beta.array().log();

  Eigen::VectorXd f = Eigen::VectorXd::Zero(k);  // log u
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);  // log v

  auto coupling = [&]() {
    Eigen::MatrixXd q(k, n);
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        q(j, i) = std::exp(f(j) + log_kernel(j, i) + g(i));
    return q;
  };

  AssignmentMatrix out;
  for (int it = 1; it <= o.max_iter; ++it) {
    for (Eigen::Index j = 0; j < k; ++j)
      f(j) = log_alpha(j) - log_sum_exp(log_kernel.row(j).transpose().array() + g.array());
    for (Eigen::Index i = 0; i < n; ++i)
      g(i) = log_beta(i) - log_sum_exp(log_kernel.col(i).array() + f.array());
    Eigen::MatrixXd q = coupling();
    out.iterations_used = it;
    out.row_marginal_error = (q.rowwise().sum() - p.alpha).array().abs().sum();
    out.col_marginal_error = (q.colwise().sum().transpose() - p.beta).array().abs().sum();
    if (out.row_marginal_error <= o.tol && out.col_marginal_error <= o.tol) {
      out.converged = true;
      break;
    }
  }
  out.q = coupling();
  out.row_scaling = f.array().exp();
  out.col_scaling = g.array().exp();
  return out;
}

}  // namespace

Eigen::MatrixXd cluster_probabilities(const LogitMatrix& logits) {
  require_finite(logits);
  Eigen::MatrixXd p(logits.rows(), logits.samples());
  for (Eigen::Index i = 0; i < logits.samples(); ++i) {
    Eigen::ArrayXd col = logits.values.col(i).array();
    col -= col.maxCoeff();
    Eigen::ArrayXd e = col.exp();
    p.col(i) = e / e.sum();
  }
  return p;
}

EnergyVector energy_scores(const LogitMatrix& logits) {
  require_finite(logits);
  const Eigen::Index n = logits.samples();
  EnergyVector out;
  out.raw.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::ArrayXd col = logits.values.col(i).array();
    const double m = col.maxCoeff();
    out.raw(i) = m + std::log((col - m).exp().sum());
  }
  const double lo = out.raw.minCoeff();
  const double range = out.raw.maxCoeff() - lo;
  const double delta = 1e-3 * std::max(range, 1.0);
  out.shifted = out.raw.array() - lo + delta;
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> transport_marginals(
    const EnergyVector& energy, Eigen::Index clusters) {
  if (clusters < 1) throw ValidationError("cluster count must be positive");
  if (energy.shifted.size() < 1)
    throw ValidationError("energy vector must be nonempty");
  if ((energy.shifted.array() <= 0.0).any())
    throw ValidationError("shifted energies must be strictly positive");
  Eigen::VectorXd alpha =
      Eigen::VectorXd::Constant(clusters, 1.0 / static_cast<double>(clusters));
  Eigen::VectorXd beta = energy.shifted / energy.shifted.sum();
  return {alpha, beta};
}

Eigen::MatrixXd energy_cost(const Eigen::MatrixXd& probabilities,
                            const EnergyVector& energy) {
  if (probabilities.cols() != energy.shifted.size())
    throw ValidationError("probability columns and energy length differ");
  if ((energy.shifted.array() <= 0.0).any())
    throw ValidationError("shifted energies must be strictly positive");
  return probabilities * energy.shifted.asDiagonal();
}

TransportProblem build_problem(const LogitMatrix& logits, double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  EnergyVector energy = energy_scores(logits);
  auto [alpha, beta] = transport_marginals(energy, logits.rows());
  TransportProblem p;
  p.cost = energy_cost(cluster_probabilities(logits), energy);
  p.alpha = std::move(alpha);
  p.beta = std::move(beta);
  p.epsilon = epsilon;
  return p;
}

AssignmentMatrix sinkhorn_solve(const TransportProblem& problem,
                                const SinkhornOptions& opts) {
  require_problem(problem);
  if (!(opts.tol > 0.0)) throw ValidationError("tolerance must be positive");
  if (opts.max_iter < 1) throw ValidationError("max_iter must be at least 1");
  return opts.log_domain ? solve_log_domain(problem, opts)
                         : solve_dense(problem, opts);
}

std::vector<int> harden(const AssignmentMatrix& assignment) {
  const Eigen::Index k = assignment.q.rows(), n = assignment.q.cols();
  if (k < 1 || n < 1) throw ValidationError("assignment matrix must be at least 1x1");
  std::vector<int> idx(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_val = assignment.q(0, i);
    for (Eigen::Index j = 1; j < k; ++j) {
      if (assignment.q(j, i) > best_val) {
        best_val = assignment.q(j, i);
        best = static_cast<int>(j);
      }
    }
    idx[static_cast<size_t>(i)] = best;
  }
  return idx;
}

double entropic_objective(const Eigen::MatrixXd& q, const Eigen::MatrixXd& cost,
                          double epsilon) {
  if (q.rows() != cost.rows() || q.cols() != cost.cols())
    throw ValidationError("coupling and cost shapes differ");
  double linear = 0.0, neg_entropy = 0.0;
  for (Eigen::Index j = 0; j < q.rows(); ++j) {
    for (Eigen::Index i = 0; i < q.cols(); ++i) {
      const double qi = q(j, i);
      if (qi > 0.0) {
        linear += qi * std::log(cost(j, i));
        neg_entropy += qi * std::log(qi);
      }
    }
  }
  return linear - epsilon * neg_entropy;
}

}  // namespace otood::transport
