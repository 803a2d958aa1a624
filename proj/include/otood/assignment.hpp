#ifndef OTOOD_ASSIGNMENT_HPP_
#define OTOOD_ASSIGNMENT_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace otood::assignment {

// What an unlabeled sample truly is. Only the accuracy auditor may look at
// this; the transport/promotion path never reads it.
enum class TruthKind { id, ood, unknown };

struct HiddenTruth {
  TruthKind kind = TruthKind::unknown;
  int label = -1;  // valid when kind == id

  static HiddenTruth id_class(int label) { return {TruthKind::id, label}; }
  static HiddenTruth ood() { return {TruthKind::ood, -1}; }
  static HiddenTruth unknown() { return {TruthKind::unknown, -1}; }
};

struct LabeledSample {
  int id = 0;
  Eigen::VectorXd features;
  int label = 0;
};

struct UnlabeledSample {
  int id = 0;
  Eigen::VectorXd features;
  HiddenTruth truth;
};

struct Promotion {
  int sample_id = 0;
  int pseudo_label = 0;
  int source_cluster = 0;
};

// The evolving train-set state: an immutable base labeled set, an unlabeled
// pool with hidden truth, and per-epoch promotions that are recomputed from
// scratch each epoch (they never accumulate across epochs).
//
// Flat sample order everywhere: base labeled samples first (in stored order),
// then unlabeled samples.
class DatasetState {
 public:
  DatasetState() = default;
  DatasetState(std::vector<LabeledSample> base, std::vector<UnlabeledSample> unlabeled,
               int class_count);

  int class_count() const { return class_count_; }
  int epoch() const { return epoch_; }
  Eigen::Index sample_count() const {
    return static_cast<Eigen::Index>(base_.size() + unlabeled_.size());
  }
  const std::vector<LabeledSample>& base_labeled() const { return base_; }
  const std::vector<UnlabeledSample>& unlabeled() const { return unlabeled_; }
  const std::vector<Promotion>& epoch_promotions() const { return promotions_; }

  // All training features stacked N x d in flat order.
  Eigen::MatrixXd all_features() const;

  int sample_id(Eigen::Index flat_index) const;
  bool is_base_index(Eigen::Index flat_index) const {
    return flat_index < static_cast<Eigen::Index>(base_.size());
  }
  bool is_base_id(int id) const { return base_ids_.count(id) > 0; }
  bool is_promoted(int id) const { return promoted_ids_.count(id) > 0; }

  // Label in effect for Eq.-style rate counting: base label, or this epoch's
  // pseudo-label, or -1 when the sample is (still) unlabeled.
  int effective_label(Eigen::Index flat_index) const;

  const UnlabeledSample& unlabeled_by_id(int id) const;

  // Starts a new epoch: promotions are wiped so they can be recomputed from
  // the base labeled set.
  void begin_epoch(int epoch);
  void clear_promotions();
  void add_promotion(const Promotion& p);

 private:
  std::vector<LabeledSample> base_;
  std::vector<UnlabeledSample> unlabeled_;
  std::vector<Promotion> promotions_;
  std::unordered_set<int> base_ids_;
  std::unordered_map<int, size_t> unlabeled_index_;
  std::unordered_map<int, size_t> promoted_ids_;  // id -> promotion index
  int class_count_ = 0;
  int epoch_ = 0;
};

struct ClusterReport {
  int cluster = 0;
  std::vector<int> member_ids;       // flat-order sample ids in this cluster
  Eigen::VectorXd class_rates;       // length M, sums to <= 1
  int dominant_class = -1;           // -1 when no member carries a label
  double dominant_rate = 0.0;
  bool promoted = false;             // set by promote(): dominant_rate > tau
};

// Per-cluster label proportions. `clusters[i]` is the cluster of flat sample
// index i; empty clusters yield no report. Unlabeled members only enlarge the
// denominator.
std::vector<ClusterReport> cluster_class_rates(const std::vector<int>& clusters,
                                               const DatasetState& state);

// Promotes every non-base member of each cluster whose dominant class rate
// strictly exceeds tau, tagging the report. tau must lie in [0.5, 1) so the
// qualifying class is unique. Already-promoted ids are left untouched, which
// makes the call idempotent within an epoch.
DatasetState promote(std::vector<ClusterReport>& reports, double tau,
                     const DatasetState& state);

struct AccuracySummary {
  long correct = 0;
  long total = 0;
  double accuracy = 1.0;  // 0/0 reported as 1.0
};

// Audits this epoch's promotions against hidden truth. A promoted OOD sample
// counts as incorrect.
AccuracySummary assignment_accuracy(const DatasetState& state);

// Lloyd iterations with kmeans++ seeding; empty clusters are reseeded from the
// point farthest from its centroid. Deterministic under the seed.
std::vector<int> kmeans_baseline(const Eigen::MatrixXd& features, int clusters,
                                 int iters, std::uint64_t seed);

}  // namespace otood::assignment

#endif  // OTOOD_ASSIGNMENT_HPP_
