#include "otood/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "otood/errors.hpp"

namespace otood::scoring {

namespace {

// Average precision by exact step summation over descending unique
// thresholds: sum of (delta recall) * precision, no interpolation.
double average_precision(const Eigen::VectorXd& pos, const Eigen::VectorXd& neg) {
  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(static_cast<size_t>(pos.size() + neg.size()));
  for (Eigen::Index i = 0; i < pos.size(); ++i) all.push_back({pos(i), true});
  for (Eigen::Index i = 0; i < neg.size(); ++i) all.push_back({neg(i), false});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score > b.score; });

  const double n_pos = static_cast<double>(pos.size());
  double tp = 0.0, fp = 0.0, ap = 0.0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    double d_tp = 0.0, d_fp = 0.0;
    while (j < all.size() && all[j].score == all[i].score) {
      if (all[j].positive)
        d_tp += 1.0;
      else
        d_fp += 1.0;
      ++j;
    }
    tp += d_tp;
    fp += d_fp;
    if (d_tp > 0.0) ap += (d_tp / n_pos) * (tp / (tp + fp));
    i = j;
  }
  return ap;
}

// Mann-Whitney AUROC via midranks; ties contribute 0.5 per pair.
double rank_auroc(const Eigen::VectorXd& id_scores, const Eigen::VectorXd& ood_scores) {
  struct Entry {
    double score;
    bool id;
  };
  std::vector<Entry> all;
  all.reserve(static_cast<size_t>(id_scores.size() + ood_scores.size()));
  for (Eigen::Index i = 0; i < id_scores.size(); ++i) all.push_back({id_scores(i), true});
  for (Eigen::Index i = 0; i < ood_scores.size(); ++i) all.push_back({ood_scores(i), false});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });

  double rank_sum_id = 0.0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    // ranks i+1 .. j (1-based); everyone in the tie group gets the midrank
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t t = i; t < j; ++t)
      if (all[t].id) rank_sum_id += midrank;
    i = j;
  }
  const double n1 = static_cast<double>(id_scores.size());
  const double n0 = static_cast<double>(ood_scores.size());
  return (rank_sum_id - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

}  // namespace

ScoreMethod parse_method(const std::string& name) {
  if (name == "msp") return ScoreMethod::msp;
  if (name == "energy") return ScoreMethod::energy;
  if (name == "tenergy" || name == "t_energy" || name == "t-energy")
    return ScoreMethod::t_energy;
  throw ValidationError("unknown score method '" + name +
                        "' (expected msp, energy, or tenergy)");
}

std::vector<double> default_fpr_levels() { return {1e-4, 1e-3, 1e-2, 1e-1}; }

Eigen::VectorXd ood_score(const transport::LogitMatrix& logits, ScoreMethod method,
                          double temperature) {
  if (logits.kind != transport::LogitKind::id_class)
    throw ValidationError("ood_score expects class-head logits");
  if (logits.rows() < 2) throw ValidationError("need at least 2 ID classes");
  if (!logits.values.allFinite()) throw ValidationError("non-finite logits");
  if (method == ScoreMethod::t_energy && !(temperature > 0.0))
    throw ValidationError("temperature must be positive");

  const Eigen::Index n = logits.samples();
  Eigen::VectorXd scores(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::ArrayXd col = logits.values.col(i).array();
    const double m = col.maxCoeff();
    switch (method) {
      case ScoreMethod::msp:
        scores(i) = 1.0 / (col - m).exp().sum();
        break;
      case ScoreMethod::energy:
        scores(i) = m + std::log((col - m).exp().sum());
        break;
      case ScoreMethod::t_energy:
        // max-anchored form keeps max(l) <= score <= max(l) + T log M exact
        scores(i) = m + temperature * std::log(((col - m) / temperature).exp().sum());
        break;
    }
  }
  return scores;
}

ScoreReport detection_metrics(const Eigen::VectorXd& id_scores,
                              const Eigen::VectorXd& ood_scores,
                              const std::vector<int>& id_predictions,
                              const std::vector<int>& id_truth,
                              const std::vector<double>& fpr_levels) {
  const Eigen::Index n_id = id_scores.size();
  const Eigen::Index n_ood = ood_scores.size();
  if (n_id == 0 || n_ood == 0)
    throw ValidationError("both ID and OOD score sets must be nonempty");
  if (static_cast<Eigen::Index>(id_predictions.size()) != n_id ||
      static_cast<Eigen::Index>(id_truth.size()) != n_id)
    throw ValidationError("predictions/truth must align with ID scores");
  if (!id_scores.allFinite() || !ood_scores.allFinite())
    throw ValidationError("scores must be finite");

  ScoreReport r;
  r.auroc = rank_auroc(id_scores, ood_scores);
  r.aupr_in = average_precision(id_scores, ood_scores);
  r.aupr_out = average_precision(-ood_scores, -id_scores);

  std::vector<double> id_desc(id_scores.data(), id_scores.data() + n_id);
  std::vector<double> ood_desc(ood_scores.data(), ood_scores.data() + n_ood);
  std::sort(id_desc.begin(), id_desc.end(), std::greater<>());
  std::sort(ood_desc.begin(), ood_desc.end(), std::greater<>());

  // FPR at the largest threshold keeping TPR >= 0.95: that threshold is the
  // ceil(0.95 n)-th largest ID score.
  const long need = (19 * static_cast<long>(n_id) + 19) / 20;
  const double theta95 = id_desc[static_cast<size_t>(need - 1)];
  long fp95 = 0;
  for (double s : ood_desc) {
    if (s >= theta95)
      ++fp95;
    else
      break;
  }
  r.fpr_at_tpr95 = static_cast<double>(fp95) / static_cast<double>(n_ood);

  long correct = 0;
  for (Eigen::Index i = 0; i < n_id; ++i)
    if (id_predictions[static_cast<size_t>(i)] == id_truth[static_cast<size_t>(i)])
      ++correct;
  r.acc = static_cast<double>(correct) / static_cast<double>(n_id);

  for (double level : fpr_levels) {
    if (!(level > 0.0 && level <= 1.0))
      throw ValidationError("FPR levels must lie in (0, 1]");
    const long allowed =
        static_cast<long>(std::floor(level * static_cast<double>(n_ood) + 1e-12));
    // fewer OOD samples than 1/level: the level collapses to an effective
    // FPR of 0 (threshold above every OOD score); flagged for the caller
    r.ccr_unreachable[level] = allowed < 1;
    long hits = 0;
    if (allowed >= n_ood) {
      hits = correct;  // threshold below every score
    } else {
      const double bound = ood_desc[static_cast<size_t>(allowed)];
      for (Eigen::Index i = 0; i < n_id; ++i)
        if (id_scores(i) > bound &&
            id_predictions[static_cast<size_t>(i)] == id_truth[static_cast<size_t>(i)])
          ++hits;
    }
    r.ccr_at_fpr[level] = static_cast<double>(hits) / static_cast<double>(n_id);
  }
  return r;
}

Eigen::MatrixXd score_histogram(const Eigen::VectorXd& id_scores,
                                const Eigen::VectorXd& ood_scores, int bins) {
  if (bins < 1) throw ValidationError("histogram needs at least one bin");
  if (id_scores.size() == 0 || ood_scores.size() == 0)
    throw ValidationError("both score sets must be nonempty");
  const double lo = std::min(id_scores.minCoeff(), ood_scores.minCoeff());
  const double hi = std::max(id_scores.maxCoeff(), ood_scores.maxCoeff());
  const double width = (hi > lo) ? (hi - lo) / bins : 1.0;

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(bins, 4);
  for (int b = 0; b < bins; ++b) {
    h(b, 0) = lo + b * width;
    h(b, 1) = lo + (b + 1) * width;
  }
  auto bin_of = [&](double s) {
    int b = static_cast<int>((s - lo) / width);
    return std::clamp(b, 0, bins - 1);
  };
  for (Eigen::Index i = 0; i < id_scores.size(); ++i) h(bin_of(id_scores(i)), 2) += 1.0;
  for (Eigen::Index i = 0; i < ood_scores.size(); ++i) h(bin_of(ood_scores(i)), 3) += 1.0;
  return h;
}

}  // namespace otood::scoring
