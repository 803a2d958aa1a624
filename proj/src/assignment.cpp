#include "otood/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "otood/errors.hpp"

namespace otood::assignment {

DatasetState::DatasetState(std::vector<LabeledSample> base,
                           std::vector<UnlabeledSample> unlabeled, int class_count)
    : base_(std::move(base)), unlabeled_(std::move(unlabeled)), class_count_(class_count) {
  if (class_count_ < 1) throw ValidationError("class count must be positive");
  for (const auto& s : base_) {
    if (s.label < 0 || s.label >= class_count_)
      throw ValidationError("base label out of range for sample " + std::to_string(s.id));
    if (!base_ids_.insert(s.id).second)
      throw ValidationError("duplicate base sample id " + std::to_string(s.id));
  }
  for (size_t i = 0; i < unlabeled_.size(); ++i) {
    const auto& s = unlabeled_[i];
    if (base_ids_.count(s.id))
      throw ValidationError("sample id " + std::to_string(s.id) +
                            " appears in both labeled and unlabeled sets");
    if (!unlabeled_index_.emplace(s.id, i).second)
      throw ValidationError("duplicate unlabeled sample id " + std::to_string(s.id));
  }
}

Eigen::MatrixXd DatasetState::all_features() const {
  const Eigen::Index n = sample_count();
  if (n == 0) return {};
  const Eigen::Index d = !base_.empty() ? base_[0].features.size()
                                        : unlabeled_[0].features.size();
  Eigen::MatrixXd m(n, d);
  Eigen::Index r = 0;
  for (const auto& s : base_) {
    if (s.features.size() != d) throw ValidationError("inconsistent feature dimension");
    m.row(r++) = s.features.transpose();
  }
  for (const auto& s : unlabeled_) {
    if (s.features.size() != d) throw ValidationError("inconsistent feature dimension");
    m.row(r++) = s.features.transpose();
  }
  return m;
}

int DatasetState::sample_id(Eigen::Index flat_index) const {
  if (flat_index < 0 || flat_index >= sample_count())
    throw ValidationError("sample index out of range");
  const auto nb = static_cast<Eigen::Index>(base_.size());
  return flat_index < nb ? base_[static_cast<size_t>(flat_index)].id
                         : unlabeled_[static_cast<size_t>(flat_index - nb)].id;
}

int DatasetState::effective_label(Eigen::Index flat_index) const {
  const auto nb = static_cast<Eigen::Index>(base_.size());
  if (flat_index < 0 || flat_index >= sample_count())
    throw ValidationError("sample index out of range");
  if (flat_index < nb) return base_[static_cast<size_t>(flat_index)].label;
  const int id = unlabeled_[static_cast<size_t>(flat_index - nb)].id;
  auto it = promoted_ids_.find(id);
  return it == promoted_ids_.end() ? -1 : promotions_[it->second].pseudo_label;
}

const UnlabeledSample& DatasetState::unlabeled_by_id(int id) const {
  auto it = unlabeled_index_.find(id);
  if (it == unlabeled_index_.end())
    throw ValidationError("unknown unlabeled sample id " + std::to_string(id));
  return unlabeled_[it->second];
}

void DatasetState::begin_epoch(int epoch) {
  epoch_ = epoch;
  clear_promotions();
}

void DatasetState::clear_promotions() {
  promotions_.clear();
  promoted_ids_.clear();
}

void DatasetState::add_promotion(const Promotion& p) {
  if (base_ids_.count(p.sample_id))
    throw ValidationError("cannot promote base sample " + std::to_string(p.sample_id));
  if (!unlabeled_index_.count(p.sample_id))
    throw ValidationError("unknown sample id " + std::to_string(p.sample_id));
  if (promoted_ids_.count(p.sample_id))
    throw ValidationError("sample " + std::to_string(p.sample_id) +
                          " already promoted this epoch");
  if (p.pseudo_label < 0 || p.pseudo_label >= class_count_)
    throw ValidationError("pseudo-label out of range");
  promoted_ids_.emplace(p.sample_id, promotions_.size());
  promotions_.push_back(p);
}

std::vector<ClusterReport> cluster_class_rates(const std::vector<int>& clusters,
                                               const DatasetState& state) {
  if (static_cast<Eigen::Index>(clusters.size()) != state.sample_count())
    throw ValidationError("cluster vector length does not match sample count");
  int max_cluster = -1;
  for (int c : clusters) {
    if (c < 0) throw ValidationError("cluster indices must be nonnegative");
    max_cluster = std::max(max_cluster, c);
  }
  const int m = state.class_count();

  std::vector<ClusterReport> reports;
  std::vector<int> order(static_cast<size_t>(max_cluster) + 1, -1);
  for (Eigen::Index i = 0; i < state.sample_count(); ++i) {
    const int k = clusters[static_cast<size_t>(i)];
    if (order[static_cast<size_t>(k)] < 0) {
      order[static_cast<size_t>(k)] = static_cast<int>(reports.size());
      ClusterReport r;
      r.cluster = k;
      r.class_rates = Eigen::VectorXd::Zero(m);
      reports.push_back(std::move(r));
    }
    ClusterReport& r = reports[static_cast<size_t>(order[static_cast<size_t>(k)])];
    r.member_ids.push_back(state.sample_id(i));
    const int label = state.effective_label(i);
    if (label >= 0) r.class_rates(label) += 1.0;
  }

  for (auto& r : reports) {
    r.class_rates /= static_cast<double>(r.member_ids.size());
    for (int y = 0; y < m; ++y) {
      if (r.class_rates(y) > r.dominant_rate) {
        r.dominant_rate = r.class_rates(y);
        r.dominant_class = y;
      }
    }
  }
  std::sort(reports.begin(), reports.end(),
            [](const ClusterReport& a, const ClusterReport& b) {
              return a.cluster < b.cluster;
            });
  return reports;
}

DatasetState promote(std::vector<ClusterReport>& reports, double tau,
                     const DatasetState& state) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0, 1)");
  if (tau < 0.5)
    throw ValidationError("tau below 0.5 would allow ambiguous dominant classes");
  DatasetState next = state;
  for (auto& r : reports) {
    r.promoted = r.dominant_rate > tau;
    if (!r.promoted) continue;
    for (int id : r.member_ids) {
      if (next.is_base_id(id) || next.is_promoted(id)) continue;
      next.add_promotion({id, r.dominant_class, r.cluster});
    }
  }
  return next;
}

AccuracySummary assignment_accuracy(const DatasetState& state) {
  AccuracySummary s;
  for (const auto& p : state.epoch_promotions()) {
    const auto& sample = state.unlabeled_by_id(p.sample_id);
    if (sample.truth.kind == TruthKind::unknown)
      throw ValidationError("hidden truth unavailable for promoted sample " +
                            std::to_string(p.sample_id));
    ++s.total;
    if (sample.truth.kind == TruthKind::id && sample.truth.label == p.pseudo_label)
      ++s.correct;
  }
  s.accuracy = s.total == 0 ? 1.0
                            : static_cast<double>(s.correct) / static_cast<double>(s.total);
  return s;
}

std::vector<int> kmeans_baseline(const Eigen::MatrixXd& features, int clusters,
                                 int iters, std::uint64_t seed) {
  const Eigen::Index n = features.rows();
  if (clusters < 1) throw ValidationError("cluster count must be positive");
  if (n < clusters)
    throw ValidationError("need at least as many points as clusters");
  if (iters < 0) throw ValidationError("iteration count must be nonnegative");

  std::mt19937_64 rng(seed);
  auto uniform = [&rng]() {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  };

  // kmeans++ seeding
  Eigen::MatrixXd centroids(clusters, features.cols());
  std::vector<Eigen::Index> chosen;
  {
    Eigen::Index first = static_cast<Eigen::Index>(uniform() * static_cast<double>(n));
    first = std::min(first, n - 1);
    centroids.row(0) = features.row(first);
    chosen.push_back(first);
    Eigen::VectorXd d2 =
        (features.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < clusters; ++c) {
      const double total = d2.sum();
      Eigen::Index pick;
      if (total <= 0.0) {
        // all remaining mass zero (duplicate points): fall back to uniform
        pick = static_cast<Eigen::Index>(uniform() * static_cast<double>(n));
        pick = std::min(pick, n - 1);
      } else {
        double target = uniform() * total, acc = 0.0;
        pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
          acc += d2(i);
          if (acc >= target) {
            pick = i;
            break;
          }
        }
      }
      centroids.row(c) = features.row(pick);
      d2 = d2.cwiseMin(
          (features.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    }
  }

  std::vector<int> assign(static_cast<size_t>(n), -1);
  Eigen::VectorXd dist_to_own = Eigen::VectorXd::Zero(n);
  for (int round = 0; round <= iters; ++round) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (features.row(i) - centroids.row(0)).squaredNorm();
      for (int c = 1; c < clusters; ++c) {
        const double d = (features.row(i) - centroids.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      dist_to_own(i) = best_d;
      if (assign[static_cast<size_t>(i)] != best) {
        assign[static_cast<size_t>(i)] = best;
        changed = true;
      }
    }
    if (round == iters || !changed) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(clusters, features.cols());
    std::vector<long> counts(static_cast<size_t>(clusters), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<size_t>(i)]) += features.row(i);
      ++counts[static_cast<size_t>(assign[static_cast<size_t>(i)])];
    }
    for (int c = 0; c < clusters; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
      } else {
        // reseed an empty cluster from the farthest point
        Eigen::Index far;
        dist_to_own.maxCoeff(&far);
        centroids.row(c) = features.row(far);
        dist_to_own(far) = 0.0;
      }
    }
  }
  return assign;
}

}  // namespace otood::assignment
