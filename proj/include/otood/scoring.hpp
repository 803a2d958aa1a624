#ifndef OTOOD_SCORING_HPP_
#define OTOOD_SCORING_HPP_

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "otood/transport.hpp"

namespace otood::scoring {

enum class ScoreMethod { msp, energy, t_energy };

ScoreMethod parse_method(const std::string& name);

// Detection quality summary. Convention throughout: higher score = more ID,
// and a sample with score >= threshold is declared ID (ties count as ID).
struct ScoreReport {
  double fpr_at_tpr95 = 0.0;
  double auroc = 0.0;
  double aupr_in = 0.0;
  double aupr_out = 0.0;
  double acc = 0.0;
  std::map<double, double> ccr_at_fpr;
  // Levels finer than the OOD sample resolution (count < 1/level) collapse
  // to an effective FPR of 0 and are flagged here.
  std::map<double, bool> ccr_unreachable;
};

// Per-sample OOD scores from class logits (M rows x N samples).
//   msp      max softmax probability
//   energy   log-sum-exp of logits
//   t_energy temperature * log-sum-exp(logits / temperature)
// Temperature is only consulted for t_energy.
Eigen::VectorXd ood_score(const transport::LogitMatrix& logits, ScoreMethod method,
                          double temperature = 1000.0);

std::vector<double> default_fpr_levels();

ScoreReport detection_metrics(const Eigen::VectorXd& id_scores,
                              const Eigen::VectorXd& ood_scores,
                              const std::vector<int>& id_predictions,
                              const std::vector<int>& id_truth,
                              const std::vector<double>& fpr_levels =
                                  default_fpr_levels());

// Shared-range histogram of both score sets; each row is
// (bin_lo, bin_hi, id_count, ood_count).
Eigen::MatrixXd score_histogram(const Eigen::VectorXd& id_scores,
                                const Eigen::VectorXd& ood_scores, int bins = 50);

}  // namespace otood::scoring

#endif  // OTOOD_SCORING_HPP_
